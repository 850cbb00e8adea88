//! Eye box: the range of pupil positions that keep every field visible.

use serde::Serialize;

use crate::designer::ar_path::{ArSystem, EYE_PUPIL_DIAMETER_MM, S_PUPIL};
use crate::materials::WAVELENGTH_D_UM;
use crate::par::{self, Execution};
use crate::surfaces::Aperture;
use crate::tracer::{trace_with, Aimer, PupilGrid, TraceOptions};
use crate::{OpticsError, Result};

pub const GRID_STEP_MM: f64 = 0.5;
/// Minimum unvignetted fraction per field point.
pub const VISIBLE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EyeBoxOptions {
    /// Largest pupil decenter examined in x and y.
    pub max_decenter_mm: [f64; 2],
    pub grid: PupilGrid,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for EyeBoxOptions {
    fn default() -> Self {
        Self {
            max_decenter_mm: [6.0, 5.0],
            grid: PupilGrid::Hexapolar { rings: 4 },
            exec: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EyeBox {
    pub width_mm: f64,
    pub height_mm: f64,
    /// Decenters `[x, y]` that passed, within the on-axis reach.
    pub passing_mm: Vec<[f64; 2]>,
}

/// Center, half-edge and quarter-diagonal display points that reach the eye.
pub fn default_fields(ar: &ArSystem) -> Vec<[f64; 2]> {
    let d = &ar.params.display;
    let (hx, hy) = (0.25 * d.width_mm, 0.25 * d.height_mm);
    [[0.0, 0.0], [hx, 0.0], [-hx, 0.0], [0.0, hy], [0.0, -hy], [hx, hy], [-hx, -hy]]
        .into_iter()
        .filter(|p| ar.trace_display_chief(*p).is_ok_and(|path| path.complete))
        .collect()
}

/// Largest centered rectangle of a pass/fail lattice, as half-sizes in
/// lattice steps; `ok(i, j)` is queried for `|i| <= nx`, `|j| <= ny`.
/// Ties in lattice area go to the wider rectangle. `None` when the center
/// fails.
fn largest_centered_rectangle(nx: i32, ny: i32, ok: impl Fn(i32, i32) -> bool) -> Option<(i32, i32)> {
    if !ok(0, 0) {
        return None;
    }
    // symmetric vertical reach of the columns ±i
    let reach = |i: i32| {
        if !(ok(i, 0) && ok(-i, 0)) {
            return None;
        }
        let mut b = 0;
        while b < ny && [i, -i].iter().all(|&c| ok(c, b + 1) && ok(c, -b - 1)) {
            b += 1;
        }
        Some(b)
    };
    let mut best = (0, 0);
    let mut best_area = 0;
    let mut b = ny;
    for a in 0..=nx {
        match reach(a) {
            Some(r) => b = b.min(r),
            None => break,
        }
        let area = (2 * a + 1) * (2 * b + 1);
        if area >= best_area {
            best = (a, b);
            best_area = area;
        }
    }
    Some(best)
}

/// Sweeps the eye pupil over a lattice of decenters and reports the largest
/// centered rectangle of positions where each of `fields` keeps at least
/// [`VISIBLE_FRACTION`] of its rays.
pub fn eyebox(ar: &ArSystem, fields: &[[f64; 2]], opts: &EyeBoxOptions) -> Result<EyeBox> {
    if fields.is_empty() {
        return Err(OpticsError::InvalidInput("eye box needs at least one field point".into()));
    }
    let mut open = ar.clone();
    open.system.surfaces[S_PUPIL].aperture = Aperture::unbounded();
    let aimers: Vec<Aimer<'_>> = fields
        .iter()
        .map(|f| open.aimer(*f, WAVELENGTH_D_UM))
        .collect::<Result<_>>()?;
    let r = 0.5 * EYE_PUPIL_DIAMETER_MM;
    let pupil = open.system.surfaces[S_PUPIL].pose;
    let pts = opts.grid.points();
    let nx = (opts.max_decenter_mm[0] / GRID_STEP_MM).round() as i32;
    let ny = (opts.max_decenter_mm[1] / GRID_STEP_MM).round() as i32;
    let trace = TraceOptions::default();
    let needed = (VISIBLE_FRACTION * pts.len() as f64).ceil() as usize;
    let passes = |&(i, j): &(i32, i32)| {
        let c = [i as f64 * GRID_STEP_MM, j as f64 * GRID_STEP_MM];
        aimers.iter().all(|aimer| {
            let (mut seen, mut lost) = (0, 0);
            for p in &pts {
                let target = [c[0] + r * p[0], c[1] + r * p[1]];
                let path = trace_with(&open.system, &aimer.aim(target, true), &trace);
                let hit = path.terminal().is_some_and(|t| {
                    let l = pupil.to_local_point(&t);
                    (l.x - c[0]).hypot(l.y - c[1]) <= r * (1.0 + 1e-9)
                });
                if hit {
                    seen += 1;
                } else {
                    lost += 1;
                }
                if seen >= needed || lost > pts.len() - needed {
                    break;
                }
            }
            seen >= needed
        })
    };
    // a centered rectangle cannot reach past the first failure on either axis
    let axes: Vec<(i32, i32)> = (-nx..=nx)
        .map(|i| (i, 0))
        .chain((-ny..=ny).filter(|&j| j != 0).map(|j| (0, j)))
        .collect();
    let axis_pass = par::map(opts.exec, &axes, passes);
    let on_axis = |c: (i32, i32)| axes.iter().position(|a| *a == c).is_some_and(|k| axis_pass[k]);
    let reach = |n: i32, cell: &dyn Fn(i32) -> (i32, i32)| (0..=n).take_while(|&k| on_axis(cell(k)) && on_axis(cell(-k))).last();
    let (ax, ay) = match (reach(nx, &|k| (k, 0)), reach(ny, &|k| (0, k))) {
        (Some(ax), Some(ay)) => (ax, ay),
        _ => (0, 0),
    };
    let cells: Vec<(i32, i32)> = (-ax..=ax).flat_map(|i| (-ay..=ay).map(move |j| (i, j))).collect();
    let inner: Vec<(i32, i32)> = cells.iter().copied().filter(|&(i, j)| i != 0 && j != 0).collect();
    let inner_pass = par::map(opts.exec, &inner, passes);
    let pass: Vec<bool> = cells
        .iter()
        .map(|&c| {
            if c.0 == 0 || c.1 == 0 {
                on_axis(c)
            } else {
                inner_pass[inner.iter().position(|x| *x == c).expect("inner cell")]
            }
        })
        .collect();
    let idx = |i: i32, j: i32| ((i + ax) * (2 * ay + 1) + (j + ay)) as usize;
    let ok = |i: i32, j: i32| i.abs() <= ax && j.abs() <= ay && pass[idx(i, j)];
    let (a, b) = largest_centered_rectangle(ax, ay, ok).unwrap_or((0, 0));
    let passing_mm = cells
        .iter()
        .zip(&pass)
        .filter(|(_, p)| **p)
        .map(|(&(i, j), _)| [i as f64 * GRID_STEP_MM, j as f64 * GRID_STEP_MM])
        .collect();
    Ok(EyeBox {
        width_mm: 2.0 * a as f64 * GRID_STEP_MM,
        height_mm: 2.0 * b as f64 * GRID_STEP_MM,
        passing_mm,
    })
}
