//! Physical constraints on the display path.
//!
//! [`validate_design`] is the independent post-hoc check. [`penalties`]
//! turns the same limits into exterior quadratic penalty residuals with a
//! small inner margin, so the optimizer settles strictly inside the bounds.

use serde::Serialize;

use super::ar_path::{ArSystem, S_BSL_BACK, S_BSL_FRONT, S_CYLINDER, S_PRISM, S_TIR_FRONT, S_TIR_REAR, S_WAVEGUIDE};
use super::params::{DesignParams, Param};
use crate::surfaces::{intersect, ApertureShape, Surface};
use crate::tracer::{trace_with, Interaction, RayPath, TraceOptions};
use crate::Vec3;

pub const MIN_THICKNESS_MM: f64 = 1.0;
pub const MIN_GAP_MM: f64 = 0.2;
pub const MAX_STACK_MM: f64 = 8.5;
pub const MIN_EDGE_MM: f64 = 1.0;
/// Inner margin used by the penalties.
pub const PENALTY_MARGIN_MM: f64 = 1e-3;

/// One violated limit; `amount` is how far past the limit, in the limit's units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub name: String,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ConstraintReport {
    pub violations: Vec<Violation>,
}

impl ConstraintReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_violation(&self) -> f64 {
        self.violations.iter().map(|v| v.amount).fold(0.0, f64::max)
    }

    fn check(&mut self, name: impl Into<String>, amount: f64) {
        if amount > 0.0 || amount.is_nan() {
            self.violations.push(Violation {
                name: name.into(),
                amount: if amount.is_nan() { f64::INFINITY } else { amount },
            });
        }
    }
}

/// `(name, amount)` pairs, positive when a distance limit is violated.
pub fn distance_excess(p: &DesignParams, margin: f64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (param, floor) in [
        (Param::TBsl, MIN_THICKNESS_MM),
        (Param::Tc, MIN_THICKNESS_MM),
        (Param::Tw, MIN_THICKNESS_MM),
        (Param::A, MIN_GAP_MM),
        (Param::Dp, MIN_GAP_MM),
    ] {
        out.push((param.to_string(), floor + margin - p.get(param)));
    }
    out.push(("stack_mm".into(), p.stack_mm() - (MAX_STACK_MM - margin)));
    out
}

/// Glass thickness between `a` and `b` measured along `a`'s axis from
/// points on `a`'s clear-aperture boundary and at its vertex. Negative when
/// the surfaces cross.
pub fn min_thickness_between(a: &Surface, b: &Surface) -> f64 {
    let axis = a.pose.axis();
    let toward = if (b.pose.origin() - a.pose.origin()).dot(&axis) >= 0.0 { axis } else { -axis };
    let ap = &a.aperture;
    let mut samples = vec![[0.0, 0.0]];
    for k in 0..16 {
        let t = std::f64::consts::TAU * k as f64 / 16.0;
        let (c, s) = (t.cos(), t.sin());
        let (x, y) = match ap.shape {
            ApertureShape::Elliptical => (ap.half_x_mm * c, ap.half_y_mm * s),
            ApertureShape::Rectangular => {
                let m = (c.abs() / ap.half_x_mm).max(s.abs() / ap.half_y_mm);
                (c / m, s / m)
            }
        };
        if x.is_finite() && y.is_finite() {
            samples.push([ap.center_mm[0] + x, ap.center_mm[1] + y]);
        }
    }
    samples
        .iter()
        .map(|&[x, y]| {
            let Ok(z) = a.profile.sag(x, y) else { return f64::NEG_INFINITY };
            let p = a.pose.to_global_point(&Vec3::new(x, y, z));
            // start a little behind so crossed surfaces report negative thickness
            let back = 50.0;
            match intersect(b, &(p - toward * back), &toward) {
                Ok(h) => h.distance - back,
                Err(_) => f64::NEG_INFINITY,
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Minimum glass thickness for each element of the display module over
/// its beam footprint.
pub fn element_thicknesses(ar: &ArSystem) -> Vec<(String, f64)> {
    let s: Vec<Surface> = ar.system.surfaces[..=S_WAVEGUIDE]
        .iter()
        .zip(&ar.footprint)
        .map(|(s, a)| Surface {
            aperture: *a,
            ..s.clone()
        })
        .collect();
    vec![
        ("bsl_edge_mm".into(), min_thickness_between(&s[S_BSL_FRONT], &s[S_BSL_BACK])),
        ("prism_edge_mm".into(), min_thickness_between(&s[S_PRISM], &s[S_CYLINDER])),
        ("waveguide_edge_mm".into(), min_thickness_between(&s[S_CYLINDER], &s[S_WAVEGUIDE])),
    ]
}

/// Chief ray from a display point, apertures ignored; `None` if aiming fails.
pub fn chief_path(ar: &ArSystem, display_local: [f64; 2]) -> Option<RayPath> {
    let aimer = ar.aimer(display_local, crate::materials::WAVELENGTH_D_UM).ok()?;
    let opts = TraceOptions {
        ignore_apertures: true,
        ..Default::default()
    };
    Some(trace_with(&ar.system, &aimer.chief_ray(), &opts))
}

/// `n·sin(incidence) − 1` at a waveguide wall facing air: positive when guided.
pub fn tir_margin(path: &RayPath, surface: usize) -> Option<f64> {
    let r = path.records.iter().find(|r| r.surface == surface)?;
    let cos_i = r.direction_in.dot(&r.normal).abs().min(1.0);
    Some(r.n_in * (1.0 - cos_i * cos_i).sqrt() - 1.0)
}

/// Whether a path was guided by TIR at both walls.
pub fn guided(path: &RayPath) -> bool {
    [S_TIR_FRONT, S_TIR_REAR].iter().all(|&i| {
        path.records
            .iter()
            .any(|r| r.surface == i && r.interaction == Interaction::TirReflected)
    })
}

/// Independent check of every physical limit. `display_points` are the
/// display-local field points whose chief rays must stay guided.
pub fn validate_design(ar: &ArSystem, display_points: &[[f64; 2]]) -> ConstraintReport {
    let mut rep = ConstraintReport::default();
    let p = &ar.params;
    for (name, v) in [("t_bsl_mm", p.t_bsl_mm), ("t_c_mm", p.t_c_mm), ("t_w_mm", p.t_w_mm)] {
        rep.check(name, MIN_THICKNESS_MM - v);
    }
    for (name, v) in [("a_mm", p.a_mm), ("d_p_mm", p.d_p_mm)] {
        rep.check(name, MIN_GAP_MM - v);
    }
    rep.check("stack_mm", p.stack_mm() - MAX_STACK_MM);
    for (name, t) in element_thicknesses(ar) {
        rep.check(name, MIN_EDGE_MM - t);
    }
    rep.check("lens_edge_mm", MIN_EDGE_MM - ar.lens.min_edge_thickness_mm(super::lens::LENS_SEMI_DIAMETER_MM));
    for d in display_points {
        let ok = chief_path(ar, *d).is_some_and(|path| guided(&path));
        if !ok {
            rep.check(format!("tir_at_display_{:.3}_{:.3}", d[0], d[1]), 1.0);
        }
    }
    rep
}

/// Distance and edge penalties as `(name, excess)`; the excess is positive
/// inside the margin band or beyond the limit.
pub fn penalties(ar: Option<&ArSystem>, params: &DesignParams) -> Vec<(String, f64)> {
    let mut out = distance_excess(params, PENALTY_MARGIN_MM);
    if let Some(ar) = ar {
        for (name, t) in element_thicknesses(ar) {
            let t = if t.is_finite() { t } else { -10.0 };
            out.push((name, MIN_EDGE_MM + PENALTY_MARGIN_MM - t));
        }
    }
    out
}

/// Moves the distance parameters onto the feasible set: raises values below
/// their floors, then shrinks the excess above the floors proportionally
/// until the stack fits.
pub fn project_distances(p: &DesignParams) -> DesignParams {
    let mut q = p.clone();
    let floors = [
        (Param::A, MIN_GAP_MM),
        (Param::Dp, MIN_GAP_MM),
        (Param::TBsl, MIN_THICKNESS_MM),
        (Param::Tc, MIN_THICKNESS_MM),
        (Param::Tw, MIN_THICKNESS_MM),
    ];
    for (param, floor) in floors {
        if q.get(param) < floor {
            q.set(param, floor);
        }
    }
    let base: f64 = floors.iter().map(|f| f.1).sum();
    let slack: f64 = floors.iter().map(|&(param, f)| q.get(param) - f).sum();
    let room = MAX_STACK_MM - base;
    if slack > room && slack > 0.0 {
        let s = room / slack * (1.0 - 1e-12);
        for (param, f) in floors {
            q.set(param, f + s * (q.get(param) - f));
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designer::ar_path::build_ar_system;
    use crate::eye::Prescription;

    #[test]
    fn prototype_over_stack_limit_only() {
        let p = DesignParams::prototype();
        let ex: Vec<_> = distance_excess(&p, 0.0).into_iter().filter(|(_, v)| *v > 0.0).collect();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].0, "stack_mm");
        assert!((ex[0].1 - 0.05).abs() < 1e-9);
    }

    #[test]
    fn thin_bsl_flagged() {
        let p = DesignParams::prototype().with(Param::TBsl, 0.5);
        assert!(distance_excess(&p, 0.0).iter().any(|(n, v)| n == "t_bsl_mm" && *v > 0.0));
    }

    #[test]
    fn projection_is_feasible_and_idempotent() {
        let mut p = DesignParams::prototype();
        p.d_p_mm = 0.1;
        p.t_w_mm = 4.0;
        let q = project_distances(&p);
        assert!(distance_excess(&q, 0.0).iter().all(|(_, v)| *v <= 0.0));
        assert!(q.d_p_mm >= MIN_GAP_MM);
        assert_eq!(project_distances(&q), q);
    }

    #[test]
    fn prototype_elements_have_positive_thickness() {
        let ar = build_ar_system(&DesignParams::prototype(), &Prescription::sphere(-1.0)).unwrap();
        for (name, t) in element_thicknesses(&ar) {
            assert!(t > 0.0, "{name}: {t}");
        }
    }

    #[test]
    fn validator_flags_stack_of_prototype() {
        let ar = build_ar_system(&DesignParams::prototype(), &Prescription::sphere(-1.0)).unwrap();
        let rep = validate_design(&ar, &[[0.0, 0.0]]);
        assert!(rep.violations.iter().any(|v| v.name == "stack_mm"));
        let fixed = build_ar_system(&project_distances(&DesignParams::prototype()), &Prescription::sphere(-1.0)).unwrap();
        let rep = validate_design(&fixed, &[[0.0, 0.0]]);
        assert!(rep.violations.iter().all(|v| v.name != "stack_mm"), "{rep:?}");
    }
}
