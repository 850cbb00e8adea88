//! Spot diagrams on the retina, an offset plane, or an ideal eye behind the
//! display path.

use serde::Serialize;

use crate::designer::ar_path::{fit_vergence, ideal_eye_points, ArSystem};
use crate::eye::rms_radius;
use crate::materials::WAVELENGTH_D_UM;
use crate::tracer::{trace_bundle_aimed, Aimer, BundleOptions, FieldSpec, OpticalSystem, PupilGrid, RayPath};
use crate::{OpticsError, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpotDiagram {
    pub field: FieldSpec,
    /// Offset of the evaluation plane along the image surface axis.
    pub plane_offset_mm: f64,
    pub points_mm: Vec<[f64; 2]>,
    pub rms_um: f64,
    pub centroid_mm: [f64; 2],
}

impl SpotDiagram {
    pub fn from_points(field: FieldSpec, plane_offset_mm: f64, points_mm: Vec<[f64; 2]>) -> Self {
        let n = points_mm.len().max(1) as f64;
        let centroid_mm = [
            points_mm.iter().map(|p| p[0]).sum::<f64>() / n,
            points_mm.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        Self {
            field,
            plane_offset_mm,
            rms_um: rms_radius(&points_mm) * 1e3,
            centroid_mm,
            points_mm,
        }
    }

    pub fn recompute_rms_um(&self) -> f64 {
        rms_radius(&self.points_mm) * 1e3
    }
}

/// Where the points of `path` cross the plane `z_local = offset` of the
/// image surface; at zero offset the image surface itself is used.
fn image_point(system: &OpticalSystem, path: &RayPath, offset: f64) -> Option<[f64; 2]> {
    let image = system.image_surface();
    let p = image.pose.to_local_point(&path.terminal()?);
    if offset == 0.0 {
        return Some([p.x, p.y]);
    }
    let d = image.pose.to_local_dir(&path.final_direction()?);
    if d.z.abs() < 1e-12 {
        return None;
    }
    let t = (offset - p.z) / d.z;
    let q: Vec3 = p + d * t;
    Some([q.x, q.y])
}

/// Spot of `field` on the image surface of `system` shifted by
/// `plane_offset_mm`. Vignetted rays are excluded.
pub fn spot(system: &OpticalSystem, field: &FieldSpec, plane_offset_mm: f64, grid: &PupilGrid) -> Result<SpotDiagram> {
    let aimer = Aimer::new(system, *field, WAVELENGTH_D_UM)?;
    let bundle = trace_bundle_aimed(&aimer, grid, &BundleOptions::default());
    let pts: Vec<[f64; 2]> = bundle
        .complete()
        .filter_map(|p| image_point(system, p, plane_offset_mm))
        .collect();
    if pts.is_empty() {
        return Err(OpticsError::Geometry("every ray of the bundle was vignetted".into()));
    }
    Ok(SpotDiagram::from_points(*field, plane_offset_mm, pts))
}

/// Accommodation of the ideal eye placed behind a display path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EyeFocus {
    /// Minimum RMS spot.
    Best,
    /// Fixed vergence in 1/mm, positive for a virtual object in front.
    Vergence(f64),
}

/// Vergence (1/mm) that minimizes the ideal-eye RMS spot. The spot is
/// linear in the accommodation, so this is a closed-form least-squares fit.
pub fn best_focus_vergence<'a>(paths: impl IntoIterator<Item = &'a RayPath>) -> Option<f64> {
    let samples: Vec<(Vec3, Vec3)> = paths
        .into_iter()
        .filter_map(|p| Some((p.terminal()?, p.final_direction()?)))
        .collect();
    if samples.len() < 3 {
        return None;
    }
    let n = samples.len() as f64;
    let mean = |f: &dyn Fn(&(Vec3, Vec3)) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let (px, py) = (mean(&|s| s.0.x), mean(&|s| s.0.y));
    let (tx, ty) = (mean(&|s| s.1.x / s.1.z), mean(&|s| s.1.y / s.1.z));
    let (mut num, mut den) = (0.0, 0.0);
    for (p, d) in &samples {
        let (dx, dy) = (p.x - px, p.y - py);
        num += (d.x / d.z - tx) * dx + (d.y / d.z - ty) * dy;
        den += dx * dx + dy * dy;
    }
    (den > 0.0).then(|| num / den)
}

/// Spot of a display point on the retina of an ideal eye behind `ar`.
pub fn ar_spot(ar: &ArSystem, display_local: [f64; 2], grid: &PupilGrid, focus: EyeFocus) -> Result<SpotDiagram> {
    let bundle = ar.bundle(display_local, grid, WAVELENGTH_D_UM, &BundleOptions::default())?;
    let v = match focus {
        EyeFocus::Vergence(v) => v,
        EyeFocus::Best => best_focus_vergence(bundle.complete())
            .ok_or_else(|| OpticsError::Geometry("too few rays reach the eye to focus".into()))?,
    };
    let pts = ideal_eye_points(bundle.complete(), v);
    if pts.is_empty() {
        return Err(OpticsError::Geometry("every ray of the bundle was vignetted".into()));
    }
    Ok(SpotDiagram::from_points(ar.field_spec(display_local), 0.0, pts))
}

/// Mean of the two principal vergences (1/mm) of the display image at the
/// pupil, from a bundle filling `pupil_scale` of the pupil.
pub fn image_vergence(ar: &ArSystem, display_local: [f64; 2], pupil_scale: f64) -> Result<f64> {
    let opts = BundleOptions {
        pupil_scale,
        ..Default::default()
    };
    let bundle = ar.bundle(display_local, &PupilGrid::Hexapolar { rings: 3 }, WAVELENGTH_D_UM, &opts)?;
    let (vx, vy) = fit_vergence(bundle.complete())
        .ok_or_else(|| OpticsError::Geometry("too few rays reach the eye to fit a vergence".into()))?;
    Ok(0.5 * (vx + vy))
}
