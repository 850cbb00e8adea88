//! Angular resolution across the field.

use serde::Serialize;

use super::mtf::mtf50;
use super::spot::{ar_spot, EyeFocus};
use crate::designer::ar_path::{eye_focal_length_mm, ArSystem};
use crate::par::{self, Execution};
use crate::tracer::PupilGrid;
use crate::{OpticsError, Result};

/// Hexapolar grid with 547 rays, above the MTF ray floor.
pub const RESOLUTION_GRID: PupilGrid = PupilGrid::Hexapolar { rings: 13 };
const FIELD_STEP_DEG: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolutionSample {
    pub eccentricity_deg: f64,
    pub mtf50_cpd: f64,
    /// Nyquist limit of the display pixel pitch seen through the optics.
    pub nyquist_cpd: f64,
    /// `min(mtf50_cpd, nyquist_cpd)`.
    pub cpd: f64,
}

/// Retinal millimetres per degree of the emmetropic schematic eye.
pub fn eye_mm_per_degree() -> f64 {
    eye_focal_length_mm() * std::f64::consts::PI / 180.0
}

/// Nyquist frequency (cycles/degree) of the pixel grid at the display point
/// seen at `field_deg`: half the inverse of the larger angular pixel size.
pub fn pixel_nyquist_cpd(ar: &ArSystem, field_deg: [f64; 2]) -> Result<f64> {
    let h = FIELD_STEP_DEG;
    let mut j = nalgebra::Matrix2::zeros();
    for k in 0..2 {
        let (mut a, mut b) = (field_deg, field_deg);
        a[k] += h;
        b[k] -= h;
        let (pa, pb) = (ar.display_point_for_field(a)?, ar.display_point_for_field(b)?);
        j[(0, k)] = (pa[0] - pb[0]) / (2.0 * h);
        j[(1, k)] = (pa[1] - pb[1]) / (2.0 * h);
    }
    // columns of the inverse: degrees per mm of display travel along x and y
    let inv = j
        .try_inverse()
        .ok_or_else(|| OpticsError::Geometry(format!("display mapping is singular at field {field_deg:?}")))?;
    let pitch_mm = ar.params.display.pixel_pitch_um * 1e-3;
    let deg_per_pixel = inv.column(0).norm().max(inv.column(1).norm()) * pitch_mm;
    Ok(0.5 / deg_per_pixel)
}

/// MTF50 (both azimuths) of the ideal-eye spot at the given field,
/// accommodated to best focus.
pub fn field_mtf50(ar: &ArSystem, field_deg: [f64; 2]) -> Result<f64> {
    let display = ar.display_point_for_field(field_deg)?;
    let spot = ar_spot(ar, display, &RESOLUTION_GRID, EyeFocus::Best)?;
    let azimuth = if field_deg[0] == 0.0 && field_deg[1] == 0.0 {
        90.0
    } else {
        field_deg[1].atan2(field_deg[0]).to_degrees()
    };
    mtf50(&spot.points_mm, eye_mm_per_degree(), azimuth)
}

/// Resolution at horizontal eccentricities, capped by the pixel grid.
pub fn resolution_profile(ar: &ArSystem, eccentricities_deg: &[f64], exec: Execution) -> Result<Vec<ResolutionSample>> {
    par::map(exec, eccentricities_deg, |&e| {
        let field = [e, 0.0];
        let mtf50_cpd = field_mtf50(ar, field)?;
        let nyquist_cpd = pixel_nyquist_cpd(ar, field)?;
        Ok(ResolutionSample {
            eccentricity_deg: e,
            mtf50_cpd,
            nyquist_cpd,
            cpd: mtf50_cpd.min(nyquist_cpd),
        })
    })
    .into_iter()
    .collect()
}
