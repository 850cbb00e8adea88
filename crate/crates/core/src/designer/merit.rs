//! Foveated multi-configuration merit for the display path.

use serde::{Deserialize, Serialize};

use super::ar_path::{build_ar_system_with_lens, ideal_eye_points, ArSystem, EYE_RELIEF_RANGE_MM, S_TIR_FRONT, S_TIR_REAR};
use super::constraints::{penalties, tir_margin};
use super::lens::{PrescriptionLensDesign, EYE_RELIEFS_MM, UNTRACEABLE_RESIDUAL_MM};
use super::params::DesignParams;
use crate::eye::{rms_radius, Prescription};
use crate::materials::WAVELENGTH_D_UM;
use crate::par::{self, Execution};
use crate::tracer::{BundleOptions, Interaction, PupilGrid, TraceOptions};
use crate::{OpticsError, Result};

/// Eccentricity at which acuity halves.
pub const ACUITY_E2_DEG: f64 = 2.3;
/// Weights are held at their 5° value inside this eccentricity.
pub const PLATEAU_DEG: f64 = 5.0;
/// Minimum `n·sin(i) − 1` kept at the waveguide walls.
pub const TIR_MARGIN: f64 = 0.01;

fn acuity(e: f64) -> f64 {
    1.0 / (1.0 + e / ACUITY_E2_DEG)
}

/// Acuity-shaped weights `1/(1 + e/2.3°)`, floored at the 5° value for
/// `e ≤ 5°` and normalized to a maximum of 1.
pub fn foveated_weights(eccentricities: &[f64]) -> Vec<f64> {
    let floor = acuity(PLATEAU_DEG);
    let raw: Vec<f64> = eccentricities
        .iter()
        .map(|&e| {
            let w = acuity(e.max(0.0));
            if e <= PLATEAU_DEG {
                w.max(floor)
            } else {
                w
            }
        })
        .collect();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        raw.iter().map(|w| w / max).collect()
    } else {
        raw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeritSpec {
    /// Field angles at the eye, `[x, y]` in degrees.
    pub fields_deg: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub eye_reliefs_mm: Vec<f64>,
    pub wavelengths_um: Vec<f64>,
    pub grid: PupilGrid,
    /// Weight on squared constraint excess (mm²).
    pub penalty_weight: f64,
    #[serde(skip)]
    pub exec: Execution,
}

impl MeritSpec {
    /// Foveated weights over `fields_deg`.
    pub fn new(fields_deg: Vec<[f64; 2]>, eye_reliefs_mm: Vec<f64>) -> Self {
        let ecc: Vec<f64> = fields_deg.iter().map(|f| f[0].hypot(f[1])).collect();
        Self {
            weights: foveated_weights(&ecc),
            fields_deg,
            eye_reliefs_mm,
            wavelengths_um: vec![WAVELENGTH_D_UM],
            grid: PupilGrid::Hexapolar { rings: 2 },
            penalty_weight: 1e4,
            exec: Execution::Parallel,
        }
    }

    /// 5×5 grid over the half field `x ∈ [0, hx]`, `y ∈ [−hy, hy]`.
    pub fn half_field_grid(hx_deg: f64, hy_deg: f64, eye_reliefs_mm: Vec<f64>) -> Self {
        let mut f = Vec::new();
        for j in 0..5 {
            for i in 0..5 {
                f.push([hx_deg * i as f64 / 4.0, hy_deg * (j as f64 / 2.0 - 1.0)]);
            }
        }
        Self::new(f, eye_reliefs_mm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields_deg.is_empty() || self.fields_deg.len() != self.weights.len() {
            return Err(OpticsError::InvalidInput("one weight per field is required".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || !self.weights.iter().any(|w| *w > 0.0) {
            return Err(OpticsError::InvalidInput("weights must be >= 0 with at least one positive".into()));
        }
        let (lo, hi) = EYE_RELIEF_RANGE_MM;
        if self.eye_reliefs_mm.is_empty() || self.eye_reliefs_mm.iter().any(|d| !(lo..=hi).contains(d)) {
            return Err(OpticsError::InvalidInput(format!("eye reliefs must lie in [{lo}, {hi}] mm")));
        }
        if self.wavelengths_um.is_empty() {
            return Err(OpticsError::InvalidInput("at least one wavelength is required".into()));
        }
        if !(self.penalty_weight >= 0.0) {
            return Err(OpticsError::InvalidInput("penalty weight must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for MeritSpec {
    /// Half of a 40° × 20° field at the five eye reliefs.
    fn default() -> Self {
        Self::half_field_grid(18.0, 9.0, EYE_RELIEFS_MM.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeritValue {
    pub merit: f64,
    /// Spot residuals first (config-major, then field, then wavelength),
    /// followed by penalty residuals.
    pub residuals: Vec<f64>,
    pub spot_terms: usize,
    pub penalty_names: Vec<String>,
}

impl MeritValue {
    pub fn spot_merit(&self) -> f64 {
        self.residuals[..self.spot_terms].iter().map(|r| r * r).sum()
    }

    pub fn penalty_merit(&self) -> f64 {
        self.merit - self.spot_merit()
    }
}

/// RMS (mm) of ideal-eye retinal points at the system's target vergence,
/// plus the escaped fraction and worst TIR margin of the bundle.
pub fn field_quality(ar: &ArSystem, field_deg: [f64; 2], wavelength_um: f64, grid: &PupilGrid) -> Option<(f64, f64, f64)> {
    let d = ar.display_point_for_field(field_deg).ok()?;
    let opts = BundleOptions {
        refine_aim: false,
        exec: Execution::Sequential,
        trace: TraceOptions {
            ignore_apertures: true,
            ..Default::default()
        },
        ..Default::default()
    };
    let b = ar.bundle(d, grid, wavelength_um, &opts).ok()?;
    let escaped = b
        .paths
        .iter()
        .filter(|p| p.records.last().is_some_and(|r| r.interaction == Interaction::Escaped))
        .count() as f64
        / b.paths.len() as f64;
    let margin = b
        .complete()
        .flat_map(|p| [tir_margin(p, S_TIR_FRONT), tir_margin(p, S_TIR_REAR)])
        .flatten()
        .fold(f64::INFINITY, f64::min);
    let pts = ideal_eye_points(b.complete(), ar.target_vergence());
    if pts.len() * 2 < b.paths.len() {
        return None;
    }
    Some((rms_radius(&pts), escaped, margin))
}

/// Merit over systems that share parameters and differ only in eye relief.
/// A `None` entry stands for a configuration that failed to build.
pub fn merit(systems: &[Option<ArSystem>], params: &DesignParams, spec: &MeritSpec) -> MeritValue {
    let nf = spec.fields_deg.len();
    let nw = spec.wavelengths_um.len();
    let jobs: Vec<(usize, usize, usize)> = (0..systems.len())
        .flat_map(|c| (0..nf).flat_map(move |f| (0..nw).map(move |w| (c, f, w))))
        .collect();
    let results = par::map(spec.exec, &jobs, |&(c, f, w)| {
        systems[c]
            .as_ref()
            .and_then(|ar| field_quality(ar, spec.fields_deg[f], spec.wavelengths_um[w], &spec.grid))
    });
    let mut residuals = Vec::with_capacity(jobs.len() + 16);
    let mut escaped = 0.0f64;
    let mut margin = f64::INFINITY;
    for (&(_, f, _), r) in jobs.iter().zip(&results) {
        let rms = r.map_or(UNTRACEABLE_RESIDUAL_MM, |q| q.0);
        residuals.push((spec.weights[f] / nw as f64).sqrt() * rms);
        if let Some((_, e, m)) = r {
            escaped = escaped.max(*e);
            margin = margin.min(*m);
        }
    }
    let spot_terms = residuals.len();
    let first = systems.iter().flatten().next();
    let mut named = penalties(first, params);
    named.push(("escaped_fraction".into(), escaped));
    if margin.is_finite() {
        named.push(("tir_margin".into(), TIR_MARGIN - margin));
    }
    let sw = spec.penalty_weight.sqrt();
    let mut penalty_names = Vec::new();
    for (name, excess) in named {
        residuals.push(sw * excess.max(0.0));
        penalty_names.push(name);
    }
    let merit = residuals.iter().map(|r| r * r).sum();
    MeritValue {
        merit,
        residuals,
        spot_terms,
        penalty_names,
    }
}

/// Builds one system per eye relief in `spec`.
pub fn build_configs(params: &DesignParams, lens: &PrescriptionLensDesign, rx: &Prescription, spec: &MeritSpec) -> Vec<Option<ArSystem>> {
    spec.eye_reliefs_mm
        .iter()
        .map(|&d| {
            let mut p = params.clone();
            p.eye_relief_mm = d;
            build_ar_system_with_lens(&p, lens, rx).ok()
        })
        .collect()
}

/// Builds the configurations and evaluates [`merit`].
pub fn evaluate(params: &DesignParams, lens: &PrescriptionLensDesign, rx: &Prescription, spec: &MeritSpec) -> MeritValue {
    let systems = build_configs(params, lens, rx, spec);
    merit(&systems, params, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designer::lens::direct_lens_profiles;
    use crate::designer::params::Param;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weight_anchors() {
        let w = foveated_weights(&[0.0, 2.3, 10.0]);
        assert_eq!(w[0], 1.0);
        assert_abs_diff_eq!(acuity(2.3), 0.5, epsilon = 1e-15);
        // the 5° floor never binds below 5° since the falloff is monotone
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
        assert!(w[1] >= acuity(5.0));
        assert_abs_diff_eq!(w[2], acuity(10.0), epsilon = 1e-15);
    }

    #[test]
    fn weights_without_center_normalize_to_one() {
        let w = foveated_weights(&[6.0, 12.0]);
        assert_eq!(w[0], 1.0);
        assert!(w[1] < 1.0);
    }

    #[test]
    fn spec_validation() {
        assert!(MeritSpec::default().validate().is_ok());
        let mut s = MeritSpec::default();
        s.eye_reliefs_mm = vec![25.0];
        assert!(s.validate().is_err());
        let mut s = MeritSpec::default();
        s.weights.iter_mut().for_each(|w| *w = 0.0);
        assert!(s.validate().is_err());
    }

    fn small_spec() -> MeritSpec {
        MeritSpec::new(vec![[0.0, 0.0], [10.0, 5.0]], vec![20.0])
    }

    #[test]
    fn thin_bsl_raises_penalty() {
        let rx = Prescription::sphere(-1.0);
        let p = DesignParams::prototype();
        let lens = direct_lens_profiles(&rx, p.lens_thickness_mm, &p.n3).unwrap();
        let spec = small_spec();
        let base = evaluate(&p, &lens, &rx, &spec);
        let thin = evaluate(&p.with(Param::TBsl, 0.5), &lens, &rx, &spec);
        let i = thin.penalty_names.iter().position(|n| n == "t_bsl_mm").unwrap();
        assert!(thin.residuals[thin.spot_terms + i] > 0.0);
        assert_eq!(base.residuals[base.spot_terms + i], 0.0);
        assert!(base.merit.is_finite() && thin.merit.is_finite());
    }

    #[test]
    fn long_stack_raises_penalty() {
        let rx = Prescription::sphere(-1.0);
        let p = DesignParams::prototype().with(Param::Tw, 2.72);
        assert_abs_diff_eq!(p.stack_mm(), 9.0, epsilon = 1e-12);
        let lens = direct_lens_profiles(&rx, p.lens_thickness_mm, &p.n3).unwrap();
        let m = evaluate(&p, &lens, &rx, &small_spec());
        let i = m.penalty_names.iter().position(|n| n == "stack_mm").unwrap();
        assert!(m.residuals[m.spot_terms + i] > 0.0);
    }

    #[test]
    fn failed_configuration_is_finite() {
        let p = DesignParams::prototype();
        let m = merit(&[None], &p, &small_spec());
        assert!(m.merit.is_finite());
        assert_abs_diff_eq!(m.residuals[0], UNTRACEABLE_RESIDUAL_MM, epsilon = 1e-9);
    }
}
