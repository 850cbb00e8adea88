//! Prescription-driven schematic eye.
//!
//! The myopic eye follows Atchison's SR-parameterized model with corneal
//! astigmatism added through the horizontal cornea radius. The eye frame has
//! the corneal vertex at the origin and light travelling along +z.

use serde::{Deserialize, Serialize};

use crate::materials::{self, GrinMedium, Material, WAVELENGTH_D_UM};
use crate::surfaces::{Aperture, InteractionMode, Surface, SurfacePose, SurfaceProfile};
use crate::tracer::{trace_bundle_with, BundleOptions, FieldSpec, LaunchAxis, OpticalSystem, PupilGrid};
use crate::{OpticsError, Result, Vec3};

/// Eyeglasses prescription in minus-cylinder notation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prescription {
    #[serde(alias = "sph")]
    pub sph_d: f64,
    #[serde(default, alias = "cyl")]
    pub cyl_d: f64,
    #[serde(default, alias = "axis")]
    pub axis_deg: f64,
    #[serde(default, alias = "add")]
    pub add_d: f64,
}

impl Prescription {
    pub fn new(sph_d: f64, cyl_d: f64, axis_deg: f64, add_d: f64) -> Result<Self> {
        let rx = Self {
            sph_d,
            cyl_d,
            axis_deg,
            add_d,
        };
        rx.validate()?;
        Ok(rx)
    }

    pub fn sphere(sph_d: f64) -> Self {
        Self {
            sph_d,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OpticsError::InvalidPrescription(m));
        if ![self.sph_d, self.cyl_d, self.axis_deg, self.add_d].iter().all(|v| v.is_finite()) {
            return bad("non-finite prescription value".into());
        }
        if self.sph_d.abs() > 20.0 {
            return bad(format!("SPH {} D outside ±20 D", self.sph_d));
        }
        if self.cyl_d > 0.0 || self.cyl_d < -8.0 {
            return bad(format!("CYL {} D must be in [-8, 0] (minus-cylinder form)", self.cyl_d));
        }
        if !(0.0..=180.0).contains(&self.axis_deg) {
            return bad(format!("AXIS {}° outside [0, 180]", self.axis_deg));
        }
        if !(0.0..=4.0).contains(&self.add_d) {
            return bad(format!("ADD {} D outside [0, 4]", self.add_d));
        }
        Ok(())
    }

    /// Spectacle refraction driving the SR-dependent eye parameters.
    pub fn spectacle_refraction(&self) -> f64 {
        self.sph_d
    }

    pub fn spherical_equivalent(&self) -> f64 {
        self.sph_d + 0.5 * self.cyl_d
    }

    /// Rotation of the astigmatic meridians about the optical axis.
    pub fn meridian_rotation_deg(&self) -> f64 {
        90.0 - self.axis_deg
    }

    pub fn is_hyperopic(&self) -> bool {
        self.sph_d > 0.0
    }
}

/// Horizontal cornea radius that adds `cyl_d` diopters to the vertical
/// meridian's power: `D_x = D_y + CYL`, `D = (n-1)/r[m]`.
pub fn cornea_radius_from_cyl(r_y_mm: f64, n_d: f64, cyl_d: f64) -> Result<f64> {
    if !(r_y_mm > 0.0) {
        return Err(OpticsError::Degenerate(format!("cornea radius {r_y_mm} mm must be > 0")));
    }
    let denom = (n_d - 1.0) + cyl_d * r_y_mm * 1e-3;
    if denom <= 0.0 {
        return Err(OpticsError::Degenerate(format!(
            "CYL {cyl_d} D leaves no positive horizontal corneal power"
        )));
    }
    Ok(r_y_mm * (n_d - 1.0) / denom)
}

/// Iris stop diameter.
pub const PUPIL_DIAMETER_MM: f64 = 4.0;
/// Axial position of the iris stop in the eye frame.
pub const STOP_Z_MM: f64 = 0.55 + 3.05;
pub const STOP_INDEX: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EyeModel {
    pub prescription: Prescription,
    pub cornea_rx_mm: f64,
    pub cornea_ry_mm: f64,
    pub vitreous_thickness_mm: f64,
    pub retina_rx_mm: f64,
    pub retina_ry_mm: f64,
    /// Hyperopic builds evaluate the myopia regressions outside their data.
    pub extrapolated: bool,
    pub system: OpticalSystem,
}

impl EyeModel {
    /// Eye surfaces translated so the iris stop sits at global `stop_z`.
    pub fn surfaces_with_stop_at(&self, stop_z: f64) -> Vec<Surface> {
        let dz = stop_z - STOP_Z_MM;
        self.system
            .surfaces
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.pose.decenter_mm[2] += dz;
                if let Material::Grin(g) = &mut s.material_after {
                    g.frame.decenter_mm[2] += dz;
                }
                s
            })
            .collect()
    }

    pub fn retina(&self) -> &Surface {
        self.system.image_surface()
    }
}

fn mat(name: &str) -> Material {
    materials::lookup(name).expect("eye media are in the catalog")
}

/// Builds the eye for a prescription.
pub fn build_eye(rx: &Prescription) -> Result<EyeModel> {
    rx.validate()?;
    let sr = rx.spectacle_refraction();
    let n_cornea = materials::CORNEA.0;
    let r_y = 7.77 + 0.022 * sr;
    let r_x = cornea_radius_from_cyl(r_y, n_cornea, rx.cyl_d)?;
    let vitreous = 16.28 - 0.299 * sr;
    let retina_rx = -12.91 - 0.094 * sr;
    let retina_ry = -12.72 + 0.004 * sr;
    if vitreous <= 0.0 {
        return Err(OpticsError::InvalidPrescription(format!("SR {sr} D gives a non-positive vitreous depth")));
    }

    let open = Aperture::unbounded();
    let mut z = 0.0;
    let mut surfaces = Vec::with_capacity(7);
    surfaces.push(Surface::new(
        "cornea",
        SurfaceProfile::Biconic {
            curvature_x_per_mm: 1.0 / r_x,
            curvature_y_per_mm: 1.0 / r_y,
            conic_x: -0.15,
            conic_y: -0.15,
        },
        SurfacePose {
            decenter_mm: [0.0, 0.0, z],
            tilt_deg: [0.0, 0.0, rx.meridian_rotation_deg()],
        },
        InteractionMode::Refract,
        open,
        mat("CORNEA"),
    )?);
    z += 0.55;
    surfaces.push(Surface::new(
        "cornea_posterior",
        SurfaceProfile::standard_radius(6.40, -0.275),
        SurfacePose::at_z(z),
        InteractionMode::Refract,
        open,
        mat("AQUEOUS"),
    )?);
    z += 3.05;
    surfaces.push(Surface::new(
        "iris",
        SurfaceProfile::Plane,
        SurfacePose::at_z(z),
        InteractionMode::Refract,
        Aperture::circular(0.5 * PUPIL_DIAMETER_MM * (1.0 + 1e-9)),
        mat("AQUEOUS_STOP"),
    )?);
    z += 0.1;
    surfaces.push(Surface::new(
        "lens_anterior",
        SurfaceProfile::standard_radius(11.48, -5.0),
        SurfacePose::at_z(z),
        InteractionMode::Refract,
        open,
        Material::Grin(GrinMedium::anterior_lens().with_frame(SurfacePose::at_z(z))),
    )?);
    z += 1.44;
    surfaces.push(Surface::new(
        "lens_internal",
        SurfaceProfile::Plane,
        SurfacePose::at_z(z),
        InteractionMode::Refract,
        open,
        Material::Grin(GrinMedium::posterior_lens().with_frame(SurfacePose::at_z(z))),
    )?);
    z += 2.16;
    surfaces.push(Surface::new(
        "lens_posterior",
        SurfaceProfile::standard_radius(-5.90, -2.0),
        SurfacePose::at_z(z),
        InteractionMode::Refract,
        open,
        mat("VITREOUS"),
    )?);
    z += vitreous;
    surfaces.push(Surface::new(
        "retina",
        SurfaceProfile::Biconic {
            curvature_x_per_mm: 1.0 / retina_rx,
            curvature_y_per_mm: 1.0 / retina_ry,
            conic_x: 0.7 + 0.026 * sr,
            conic_y: 0.225 + 0.017 * sr,
        },
        SurfacePose::at_z(z),
        InteractionMode::Refract,
        open,
        mat("VITREOUS"),
    )?);

    let system = OpticalSystem::new(
        format!("eye SPH {:+.2} CYL {:+.2} AXIS {:.0}", rx.sph_d, rx.cyl_d, rx.axis_deg),
        Material::air(),
        surfaces,
        STOP_INDEX,
        PUPIL_DIAMETER_MM,
        LaunchAxis::new(Vec3::new(0.0, 0.0, -10.0), Vec3::z()),
    )?;
    Ok(EyeModel {
        prescription: *rx,
        cornea_rx_mm: r_x,
        cornea_ry_mm: r_y,
        vitreous_thickness_mm: vitreous,
        retina_rx_mm: retina_rx,
        retina_ry_mm: retina_ry,
        extrapolated: rx.is_hyperopic(),
        system,
    })
}

/// Retina-local spot coordinates (mm) for an on-axis object at `vergence_d`
/// referenced to the corneal vertex.
pub fn retinal_spot(system: &OpticalSystem, vergence_d: f64, grid: &PupilGrid, opts: &BundleOptions) -> Result<Vec<[f64; 2]>> {
    let field = FieldSpec::vergence(vergence_d, 0.0, 0.0, Vec3::zeros());
    let bundle = trace_bundle_with(system, &field, grid, WAVELENGTH_D_UM, opts)?;
    let retina = system.image_surface();
    Ok(bundle
        .complete()
        .filter_map(|p| p.terminal())
        .map(|p| {
            let l = retina.pose.to_local_point(&p);
            [l.x, l.y]
        })
        .collect())
}

/// RMS radius about the centroid, in the input's units.
pub fn rms_radius(points: &[[f64; 2]]) -> f64 {
    if points.is_empty() {
        return f64::INFINITY;
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    (points.iter().map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sum::<f64>() / n).sqrt()
}

/// RMS spread of `points` projected on the unit direction `(cos a, sin a)`.
pub fn rms_along(points: &[[f64; 2]], angle_deg: f64) -> f64 {
    if points.is_empty() {
        return f64::INFINITY;
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    let proj: Vec<f64> = points.iter().map(|p| p[0] * c + p[1] * s).collect();
    let n = proj.len() as f64;
    let m = proj.iter().sum::<f64>() / n;
    (proj.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

const SCAN_MIN_D: f64 = -1.0;
const SCAN_MAX_D: f64 = 8.0;
const SCAN_STEP_D: f64 = 0.25;

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Scans object vergence and refines the minimum of `metric`.
fn vergence_minimum(metric: &dyn Fn(f64) -> f64) -> Result<f64> {
    let n = ((SCAN_MAX_D - SCAN_MIN_D) / SCAN_STEP_D).round() as usize + 1;
    let values: Vec<f64> = (0..n).map(|i| metric(SCAN_MIN_D + i as f64 * SCAN_STEP_D)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if best == 0 || best == n - 1 || !values[best].is_finite() {
        return Err(OpticsError::NotConverged(format!(
            "retinal spot minimum at the scan boundary ({:+.2} D)",
            SCAN_MIN_D + best as f64 * SCAN_STEP_D
        )));
    }
    let v = SCAN_MIN_D + best as f64 * SCAN_STEP_D;
    Ok(golden_min(metric, v - SCAN_STEP_D, v + SCAN_STEP_D, 0.01))
}

fn spot_opts() -> BundleOptions {
    BundleOptions::default()
}

/// Object vergence (D, positive for a real near object) that the relaxed eye
/// images sharpest on-axis.
pub fn far_point(eye: &EyeModel) -> Result<f64> {
    far_point_of(&eye.system)
}

/// [`far_point`] for any system whose image surface is the retina.
pub fn far_point_of(system: &OpticalSystem) -> Result<f64> {
    let grid = PupilGrid::Hexapolar { rings: 6 };
    let opts = spot_opts();
    let metric = |v: f64| {
        retinal_spot(system, v, &grid, &opts)
            .map(|p| rms_radius(&p))
            .unwrap_or(f64::INFINITY)
    };
    vergence_minimum(&metric)
}

/// Object vergences of the two line foci, along the rotated x and y
/// meridians of the cornea respectively.
pub fn line_focus_vergences(eye: &EyeModel) -> Result<(f64, f64)> {
    let grid = PupilGrid::Hexapolar { rings: 6 };
    let opts = spot_opts();
    let theta = eye.prescription.meridian_rotation_deg();
    let spread = |angle: f64| {
        move |v: f64| {
            retinal_spot(&eye.system, v, &grid, &opts)
                .map(|p| rms_along(&p, angle))
                .unwrap_or(f64::INFINITY)
        }
    };
    // a line focus along one direction is where the spread across it vanishes
    let along_x = vergence_minimum(&spread(theta + 90.0))?;
    let along_y = vergence_minimum(&spread(theta))?;
    Ok((along_x, along_y))
}

/// Retinal distance per degree of field near the axis, from chief rays.
pub fn mm_per_degree(system: &OpticalSystem) -> Result<f64> {
    let grid = PupilGrid::Hexapolar { rings: 1 };
    let opts = BundleOptions {
        exec: crate::par::Execution::Sequential,
        ..Default::default()
    };
    let centroid = |deg: f64| -> Result<Vec3> {
        let b = trace_bundle_with(system, &FieldSpec::angle(0.0, deg), &grid, WAVELENGTH_D_UM, &opts)?;
        b.paths[0]
            .terminal()
            .ok_or_else(|| OpticsError::Geometry("chief ray did not reach the retina".into()))
    };
    let h = 1.0;
    let a = centroid(h)?;
    let b = centroid(-h)?;
    Ok((a - b).norm() / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_cyl_keeps_radius() {
        assert_abs_diff_eq!(cornea_radius_from_cyl(7.77, 1.376, 0.0).unwrap(), 7.77, epsilon = 1e-12);
    }

    #[test]
    fn cyl_minus_two_by_diopters() {
        let d_y = 0.376 / 0.00777;
        let d_x = d_y - 2.0;
        let expected = 0.376 / d_x * 1000.0;
        assert_abs_diff_eq!(d_y, 48.391, epsilon = 1e-3);
        let r = cornea_radius_from_cyl(7.77, 1.376, -2.0).unwrap();
        assert_abs_diff_eq!(r, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 8.105, epsilon = 1e-3);
    }

    #[test]
    fn excessive_cyl_is_degenerate() {
        assert!(matches!(cornea_radius_from_cyl(7.77, 1.376, -60.0), Err(OpticsError::Degenerate(_))));
        assert!(cornea_radius_from_cyl(0.0, 1.376, 0.0).is_err());
    }

    #[test]
    fn sr_formulas() {
        let e = build_eye(&Prescription::sphere(0.0)).unwrap();
        assert_abs_diff_eq!(e.vitreous_thickness_mm, 16.28, epsilon = 1e-12);
        assert_abs_diff_eq!(e.retina_rx_mm, -12.91, epsilon = 1e-12);
        let e = build_eye(&Prescription::sphere(-1.0)).unwrap();
        assert_abs_diff_eq!(e.vitreous_thickness_mm, 16.579, epsilon = 1e-12);
        let e = build_eye(&Prescription::sphere(-2.0)).unwrap();
        assert_abs_diff_eq!(e.cornea_ry_mm, 7.726, epsilon = 1e-12);
    }

    #[test]
    fn axis_rotates_cornea() {
        let e = build_eye(&Prescription::new(-2.0, -2.0, 30.0, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(e.system.surfaces[0].pose.tilt_deg[2], 60.0, epsilon = 1e-12);
    }

    #[test]
    fn hyperopia_is_flagged() {
        assert!(build_eye(&Prescription::sphere(1.5)).unwrap().extrapolated);
        assert!(!build_eye(&Prescription::sphere(-1.5)).unwrap().extrapolated);
    }

    #[test]
    fn invalid_prescriptions() {
        assert!(Prescription::new(-2.0, 1.0, 0.0, 0.0).is_err());
        assert!(Prescription::new(-2.0, 0.0, 200.0, 0.0).is_err());
        assert!(Prescription::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn stop_shift_moves_grin_frames() {
        let e = build_eye(&Prescription::sphere(0.0)).unwrap();
        let s = e.surfaces_with_stop_at(0.0);
        assert_abs_diff_eq!(s[STOP_INDEX].pose.decenter_mm[2], 0.0, epsilon = 1e-12);
        let Material::Grin(g) = &s[3].material_after else { panic!() };
        assert_abs_diff_eq!(g.frame.decenter_mm[2], s[3].pose.decenter_mm[2], epsilon = 1e-12);
    }

    #[test]
    fn rms_helpers() {
        let pts = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        assert_abs_diff_eq!(rms_radius(&pts), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rms_along(&pts, 0.0), (0.5f64).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = golden_min(&|v| (v - 1.234).powi(2), 0.0, 3.0, 1e-6);
        assert_abs_diff_eq!(x, 1.234, epsilon = 1e-5);
    }
}
