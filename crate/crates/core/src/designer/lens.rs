//! Prescription-lens design: closed-form thick-lens profiles and the
//! eye-model optimization that refines them.

use serde::{Deserialize, Serialize};

use super::lm::{self, IterationRecord, LmOptions};
use super::merit::foveated_weights;
use crate::eye::{self, build_eye, rms_radius, EyeModel, Prescription};
use crate::materials::{Material, WAVELENGTH_D_UM};
use crate::par::{self, Execution};
use crate::surfaces::{Aperture, InteractionMode, Surface, SurfacePose, SurfaceProfile};
use crate::tracer::{trace_bundle_with, BundleOptions, FieldSpec, LaunchAxis, OpticalSystem, PupilGrid};
use crate::{OpticsError, Result, Vec3};

/// Eye reliefs the lens must serve.
pub const EYE_RELIEFS_MM: [f64; 5] = [12.0, 14.0, 16.0, 18.0, 20.0];
/// Radial extent over which edge thickness is checked.
pub const LENS_SEMI_DIAMETER_MM: f64 = 20.0;
/// Near zone for presbyopia starts this far below the optical axis.
pub const NEAR_ZONE_BOUNDARY_MM: f64 = -4.0;
pub const UNTRACEABLE_RESIDUAL_MM: f64 = 1.0e3;

/// Spherical front surface plus rotated toric (biconic) rear surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrescriptionLensDesign {
    pub front_curvature_per_mm: f64,
    /// Rear curvature along the rotated x meridian.
    pub rear_curvature_x_per_mm: f64,
    pub rear_curvature_y_per_mm: f64,
    /// Rotation of the rear meridians about the lens axis.
    pub rear_rotation_deg: f64,
    pub thickness_mm: f64,
    pub material: Material,
    #[serde(default)]
    pub add_d: f64,
}

fn radius(c: f64) -> f64 {
    if c == 0.0 {
        f64::INFINITY
    } else {
        1.0 / c
    }
}

impl PrescriptionLensDesign {
    pub fn front_radius_mm(&self) -> f64 {
        radius(self.front_curvature_per_mm)
    }

    /// Rear radii `(r_ro, r_re)` along the rotated x and y meridians.
    pub fn rear_radii_mm(&self) -> (f64, f64) {
        (radius(self.rear_curvature_x_per_mm), radius(self.rear_curvature_y_per_mm))
    }

    fn index(&self) -> f64 {
        self.material.index_at(WAVELENGTH_D_UM).unwrap_or(1.5)
    }

    /// Paraxial back-vertex power (D) of the meridian with rear curvature `c_r`.
    pub fn back_vertex_power_for(&self, c_r: f64) -> f64 {
        let n = self.index();
        let f1 = (n - 1.0) * self.front_curvature_per_mm * 1e3;
        let f2 = (1.0 - n) * c_r * 1e3;
        f1 / (1.0 - self.thickness_mm * 1e-3 / n * f1) + f2
    }

    /// Back-vertex powers along the rotated x and y meridians.
    pub fn back_vertex_powers(&self) -> (f64, f64) {
        (
            self.back_vertex_power_for(self.rear_curvature_x_per_mm),
            self.back_vertex_power_for(self.rear_curvature_y_per_mm),
        )
    }

    pub fn front_profile(&self) -> SurfaceProfile {
        SurfaceProfile::Standard {
            curvature_per_mm: self.front_curvature_per_mm,
            conic: 0.0,
        }
    }

    pub fn rear_profile(&self) -> SurfaceProfile {
        SurfaceProfile::Biconic {
            curvature_x_per_mm: self.rear_curvature_x_per_mm,
            curvature_y_per_mm: self.rear_curvature_y_per_mm,
            conic_x: 0.0,
            conic_y: 0.0,
        }
    }

    pub fn front_pose(&self, rear_vertex_z: f64) -> SurfacePose {
        SurfacePose::at_z(rear_vertex_z - self.thickness_mm)
    }

    pub fn rear_pose(&self, rear_vertex_z: f64) -> SurfacePose {
        SurfacePose {
            decenter_mm: [0.0, 0.0, rear_vertex_z],
            tilt_deg: [0.0, 0.0, self.rear_rotation_deg],
        }
    }

    /// Smallest axial thickness over the lens semi-diameter.
    pub fn min_edge_thickness_mm(&self, semi_diameter: f64) -> f64 {
        let front = self.front_profile();
        let rear = self.rear_profile();
        let mut min = f64::INFINITY;
        for k in 0..=36 {
            let a = std::f64::consts::TAU * k as f64 / 36.0;
            let (x, y) = (semi_diameter * a.cos(), semi_diameter * a.sin());
            let (Ok(sf), Ok(sr)) = (front.sag(x, y), rear.sag(x, y)) else {
                return f64::NEG_INFINITY;
            };
            min = min.min(self.thickness_mm - sf + sr);
        }
        min
    }

    pub fn validate(&self) -> Result<()> {
        if self.thickness_mm < 1.0 {
            return Err(OpticsError::InfeasibleConstraints(format!(
                "lens thickness {} mm below 1 mm",
                self.thickness_mm
            )));
        }
        let edge = self.min_edge_thickness_mm(LENS_SEMI_DIAMETER_MM);
        if edge < 1.0 {
            return Err(OpticsError::InfeasibleConstraints(format!("edge thickness {edge:.3} mm below 1 mm")));
        }
        Ok(())
    }

    /// The lower near-vision zone: rear surface steepened by `add_d`.
    pub fn near_zone(&self) -> Self {
        let n = self.index();
        let dc = -self.add_d / ((n - 1.0) * 1e3);
        Self {
            rear_curvature_x_per_mm: self.rear_curvature_x_per_mm + dc,
            rear_curvature_y_per_mm: self.rear_curvature_y_per_mm + dc,
            ..self.clone()
        }
    }
}

/// Options for [`direct_lens_profiles`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DirectOptions {
    /// Front curvature; defaults to the base-curve rule `max(0, SE/2 + 4) D`.
    pub front_curvature_per_mm: Option<f64>,
}

/// Closed-form thick-lens profiles with back-vertex power SPH in the
/// rotated y meridian and the cylinder carried by the rotated x meridian.
pub fn direct_lens_profiles(rx: &Prescription, t_l: f64, material: &Material) -> Result<PrescriptionLensDesign> {
    direct_lens_profiles_with(rx, t_l, material, &DirectOptions::default())
}

pub fn direct_lens_profiles_with(
    rx: &Prescription,
    t_l: f64,
    material: &Material,
    opts: &DirectOptions,
) -> Result<PrescriptionLensDesign> {
    rx.validate()?;
    if !(t_l > 0.0) {
        return Err(OpticsError::InvalidInput("lens thickness must be > 0".into()));
    }
    let n = material.index_at(WAVELENGTH_D_UM)?;
    let c_f = opts
        .front_curvature_per_mm
        .unwrap_or_else(|| (0.5 * rx.spherical_equivalent() + 4.0).max(0.0) / ((n - 1.0) * 1e3));
    let f1 = (n - 1.0) * c_f * 1e3;
    let effective_front = f1 / (1.0 - t_l * 1e-3 / n * f1);
    let rear_c = |power: f64| (power - effective_front) / ((1.0 - n) * 1e3);
    // the eye's rotated x meridian is weaker by |CYL|, so the lens carries SPH − CYL there
    let p_y = rx.sph_d;
    let p_x = rx.sph_d - rx.cyl_d;
    Ok(PrescriptionLensDesign {
        front_curvature_per_mm: c_f,
        rear_curvature_x_per_mm: rear_c(p_x),
        rear_curvature_y_per_mm: rear_c(p_y),
        rear_rotation_deg: if rx.cyl_d != 0.0 { rx.meridian_rotation_deg() } else { 0.0 },
        thickness_mm: t_l,
        material: material.clone(),
        add_d: rx.add_d,
    })
}

/// Lens in front of the eye with the rear vertex `d_e` before the iris.
pub fn lens_eye_system(lens: &PrescriptionLensDesign, eye: &EyeModel, d_e: f64) -> Result<OpticalSystem> {
    let rear_z = eye::STOP_Z_MM - d_e;
    let mut surfaces = vec![
        Surface::new(
            "lens_front",
            lens.front_profile(),
            lens.front_pose(rear_z),
            InteractionMode::Refract,
            Aperture::unbounded(),
            lens.material.clone(),
        )?,
        Surface::new(
            "lens_rear",
            lens.rear_profile(),
            lens.rear_pose(rear_z),
            InteractionMode::Refract,
            Aperture::unbounded(),
            Material::air(),
        )?,
    ];
    surfaces.extend(eye.system.surfaces.iter().cloned());
    OpticalSystem::new(
        format!("{} + lens at {d_e} mm", eye.system.name),
        Material::air(),
        surfaces,
        eye::STOP_INDEX + 2,
        eye.system.pupil_diameter_mm,
        LaunchAxis::new(Vec3::new(0.0, 0.0, rear_z - lens.thickness_mm - 10.0), Vec3::z()),
    )
}

/// Field grid and weights for the lens-design merit.
#[derive(Debug, Clone, PartialEq)]
pub struct LensMeritSpec {
    pub fields_deg: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub eye_reliefs_mm: Vec<f64>,
    pub grid: PupilGrid,
}

impl Default for LensMeritSpec {
    /// 3×3 fields across 26° × 18°, foveated weights, five eye reliefs.
    fn default() -> Self {
        let mut fields = Vec::new();
        for y in [-9.0, 0.0, 9.0] {
            for x in [-13.0, 0.0, 13.0] {
                fields.push([x, y]);
            }
        }
        let ecc: Vec<f64> = fields.iter().map(|f: &[f64; 2]| f[0].hypot(f[1])).collect();
        Self {
            weights: foveated_weights(&ecc),
            fields_deg: fields,
            eye_reliefs_mm: EYE_RELIEFS_MM.to_vec(),
            grid: PupilGrid::Hexapolar { rings: 3 },
        }
    }
}

/// RMS retinal spot (mm) of a collimated field.
pub fn field_rms_mm(system: &OpticalSystem, field_deg: [f64; 2], grid: &PupilGrid, exec: Execution) -> Option<f64> {
    let opts = BundleOptions {
        exec,
        ..Default::default()
    };
    let b = trace_bundle_with(system, &FieldSpec::angle(field_deg[0], field_deg[1]), grid, WAVELENGTH_D_UM, &opts).ok()?;
    let retina = system.image_surface();
    let pts: Vec<[f64; 2]> = b
        .complete()
        .filter_map(|p| p.terminal())
        .map(|p| {
            let l = retina.pose.to_local_point(&p);
            [l.x, l.y]
        })
        .collect();
    (pts.len() * 2 >= b.paths.len()).then(|| rms_radius(&pts))
}

/// Weighted residuals `sqrt(w)·RMS` over eye reliefs and fields.
pub fn lens_residuals(lens: &PrescriptionLensDesign, eye: &EyeModel, spec: &LensMeritSpec, exec: Execution) -> Vec<f64> {
    let jobs: Vec<(f64, usize)> = spec
        .eye_reliefs_mm
        .iter()
        .flat_map(|&d| (0..spec.fields_deg.len()).map(move |i| (d, i)))
        .collect();
    let systems: Vec<Option<OpticalSystem>> =
        spec.eye_reliefs_mm.iter().map(|&d| lens_eye_system(lens, eye, d).ok()).collect();
    par::map(exec, &jobs, |&(d, i)| {
        let k = spec.eye_reliefs_mm.iter().position(|&v| v == d).unwrap_or(0);
        let rms = systems[k]
            .as_ref()
            .and_then(|s| field_rms_mm(s, spec.fields_deg[i], &spec.grid, Execution::Sequential))
            .unwrap_or(UNTRACEABLE_RESIDUAL_MM);
        spec.weights[i].sqrt() * rms
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LensDesignResult {
    pub design: PrescriptionLensDesign,
    pub seed: PrescriptionLensDesign,
    pub seed_merit: f64,
    pub merit: f64,
    pub log: Vec<IterationRecord>,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LensDesignOptions {
    pub spec: LensMeritSpec,
    pub lm: LmOptions,
}

impl Default for LensDesignOptions {
    fn default() -> Self {
        Self {
            spec: LensMeritSpec::default(),
            lm: LmOptions {
                max_iters: 100,
                tol: 1e-4,
                ..Default::default()
            },
        }
    }
}

fn unpack(seed: &PrescriptionLensDesign, toric: bool, x: &[f64]) -> PrescriptionLensDesign {
    let mut d = seed.clone();
    d.front_curvature_per_mm = x[0];
    if toric {
        d.rear_curvature_x_per_mm = x[1];
        d.rear_curvature_y_per_mm = x[2];
        d.rear_rotation_deg = x[3];
    } else {
        let shift = x[1] - seed.rear_curvature_y_per_mm;
        d.rear_curvature_x_per_mm = seed.rear_curvature_x_per_mm + shift;
        d.rear_curvature_y_per_mm = x[1];
    }
    d
}

/// Optimizes the lens surfaces against the prescription's eye model, seeded
/// by [`direct_lens_profiles`].
pub fn design_prescription_lens(rx: &Prescription, t_l: f64, material: &Material) -> Result<LensDesignResult> {
    design_prescription_lens_with(rx, t_l, material, &LensDesignOptions::default())
}

pub fn design_prescription_lens_with(
    rx: &Prescription,
    t_l: f64,
    material: &Material,
    opts: &LensDesignOptions,
) -> Result<LensDesignResult> {
    let eye = build_eye(rx)?;
    let seed = direct_lens_profiles(rx, t_l, material)?;
    let toric = rx.cyl_d != 0.0;
    let mut x0 = vec![seed.front_curvature_per_mm];
    let mut steps = vec![1e-5];
    if toric {
        x0.extend([seed.rear_curvature_x_per_mm, seed.rear_curvature_y_per_mm, seed.rear_rotation_deg]);
        steps.extend([1e-5, 1e-5, 1e-3]);
    } else {
        x0.push(seed.rear_curvature_y_per_mm);
        steps.push(1e-5);
    }
    let exec = opts.lm.exec;
    let f = |x: &[f64]| lens_residuals(&unpack(&seed, toric, x), &eye, &opts.spec, exec);
    let violation = |x: &[f64]| {
        let d = unpack(&seed, toric, x);
        (1.0 - d.min_edge_thickness_mm(LENS_SEMI_DIAMETER_MM)).max(0.0)
    };
    let seed_merit = lm::sum_squares(&f(&x0));
    let res = lm::minimize(&f, &x0, &steps, &violation, &LmOptions {
        exec: Execution::Sequential,
        ..opts.lm
    });
    if !res.converged {
        return Err(OpticsError::NotConverged(format!(
            "lens design stopped after {} iterations at merit {:.3e}",
            res.iterations, res.merit
        )));
    }
    let design = unpack(&seed, toric, &res.x);
    Ok(LensDesignResult {
        design,
        seed,
        seed_merit,
        merit: res.merit,
        log: res.log,
        extrapolated: eye.extrapolated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::lookup;
    use approx::assert_abs_diff_eq;

    fn cop() -> Material {
        lookup("COP").unwrap()
    }

    #[test]
    fn plano_front_minus_one() {
        let d = direct_lens_profiles_with(&Prescription::sphere(-1.0), 5.0, &cop(), &DirectOptions {
            front_curvature_per_mm: Some(0.0),
        })
        .unwrap();
        let (px, py) = d.back_vertex_powers();
        assert_abs_diff_eq!(py, -1.0, epsilon = 0.01);
        assert_abs_diff_eq!(px, -1.0, epsilon = 0.01);
        assert!(d.front_radius_mm().is_infinite());
    }

    #[test]
    fn plus_one_hyperopia() {
        let d = direct_lens_profiles(&Prescription::sphere(1.0), 5.0, &cop()).unwrap();
        assert_abs_diff_eq!(d.back_vertex_powers().1, 1.0, epsilon = 0.01);
    }

    #[test]
    fn plano_is_zero_power_meniscus() {
        let d = direct_lens_profiles(&Prescription::sphere(0.0), 5.0, &cop()).unwrap();
        assert_abs_diff_eq!(d.back_vertex_powers().1, 0.0, epsilon = 1e-12);
        let rel = (d.rear_curvature_y_per_mm - d.front_curvature_per_mm) / d.front_curvature_per_mm;
        assert!(rel.abs() < 0.03, "{rel}");
    }

    #[test]
    fn astigmatic_direct_profile() {
        let rx = Prescription::new(-2.0, -2.0, 30.0, 0.0).unwrap();
        let d = direct_lens_profiles(&rx, 5.0, &cop()).unwrap();
        assert_abs_diff_eq!(d.rear_rotation_deg, 60.0, epsilon = 1e-12);
        let (px, py) = d.back_vertex_powers();
        assert_abs_diff_eq!(px - py, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn near_zone_adds_power() {
        let rx = Prescription::new(-1.0, 0.0, 0.0, 2.0).unwrap();
        let d = direct_lens_profiles(&rx, 5.0, &cop()).unwrap();
        let near = d.near_zone();
        assert_abs_diff_eq!(near.back_vertex_powers().1 - d.back_vertex_powers().1, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn edge_thickness_validation() {
        let d = direct_lens_profiles(&Prescription::sphere(-1.0), 5.0, &cop()).unwrap();
        assert!(d.validate().is_ok());
        let thin = direct_lens_profiles(&Prescription::sphere(6.0), 1.5, &cop()).unwrap();
        assert!(thin.validate().is_err());
    }

    #[test]
    fn lens_sits_at_eye_relief() {
        let eye = build_eye(&Prescription::sphere(-1.0)).unwrap();
        let d = direct_lens_profiles(&Prescription::sphere(-1.0), 5.0, &cop()).unwrap();
        let s = lens_eye_system(&d, &eye, 16.0).unwrap();
        assert_abs_diff_eq!(s.surfaces[s.stop_index].pose.decenter_mm[2] - s.surfaces[1].pose.decenter_mm[2], 16.0, epsilon = 1e-12);
        assert_eq!(s.surfaces[s.stop_index].name, "iris");
    }
}
