//! Field of view from display-edge chief rays.

use serde::Serialize;

use crate::designer::ar_path::ArSystem;
use crate::tracer::RayPath;

/// Display sampling step along each center line.
const STEP_MM: f64 = 0.25;
const EDGE_BISECTIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fov {
    pub horizontal_deg: f64,
    pub vertical_deg: f64,
    /// Display half-width and half-height that actually reach the eye.
    pub usable_half_width_mm: f64,
    pub usable_half_height_mm: f64,
}

fn field_angles(path: &RayPath) -> Option<[f64; 2]> {
    if !path.complete {
        return None;
    }
    let d = path.final_direction()?;
    Some([d.x.atan2(d.z).to_degrees(), d.y.atan2(d.z).to_degrees()])
}

fn chief_angles(ar: &ArSystem, local: [f64; 2]) -> Option<[f64; 2]> {
    field_angles(&ar.trace_display_chief(local).ok()?)
}

/// Field angles along one half of a display center line, out to `half` mm
/// or to where the chief ray stops reaching the pupil. Returns the angles
/// and the reach.
fn half_line(ar: &ArSystem, axis: usize, sign: f64, half: f64) -> (Vec<[f64; 2]>, f64) {
    let at = |s: f64| {
        let mut p = [0.0, 0.0];
        p[axis] = sign * s;
        chief_angles(ar, p)
    };
    let mut out = Vec::new();
    let mut reach = 0.0;
    let mut s = 0.0;
    loop {
        let next = (s + STEP_MM).min(half);
        if next <= s {
            break;
        }
        match at(next) {
            Some(a) => {
                out.push(a);
                reach = next;
                s = next;
            }
            None => {
                let (mut ok, mut bad) = (s, next);
                for _ in 0..EDGE_BISECTIONS {
                    let mid = 0.5 * (ok + bad);
                    match at(mid) {
                        Some(a) => {
                            out.push(a);
                            ok = mid;
                        }
                        None => bad = mid,
                    }
                }
                reach = ok;
                break;
            }
        }
    }
    (out, reach)
}

/// Angular extent at the eye of chief rays from the display center lines.
/// Display regions whose chief rays are vignetted or miss the eye do not
/// count.
pub fn fov(ar: &ArSystem) -> Fov {
    let Some(center) = chief_angles(ar, [0.0, 0.0]) else {
        return Fov {
            horizontal_deg: 0.0,
            vertical_deg: 0.0,
            usable_half_width_mm: 0.0,
            usable_half_height_mm: 0.0,
        };
    };
    let display = &ar.params.display;
    let mut extent = [0.0; 2];
    let mut reach = [0.0; 2];
    for (axis, half) in [(0, 0.5 * display.width_mm), (1, 0.5 * display.height_mm)] {
        let (neg, rn) = half_line(ar, axis, -1.0, half);
        let (pos, rp) = half_line(ar, axis, 1.0, half);
        let (mut lo, mut hi) = (center[axis], center[axis]);
        for a in neg.iter().chain(&pos) {
            lo = lo.min(a[axis]);
            hi = hi.max(a[axis]);
        }
        extent[axis] = hi - lo;
        reach[axis] = rn.min(rp);
    }
    Fov {
        horizontal_deg: extent[0],
        vertical_deg: extent[1],
        usable_half_width_mm: reach[0],
        usable_half_height_mm: reach[1],
    }
}
