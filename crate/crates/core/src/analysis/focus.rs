//! Virtual-image depth as a function of display travel.

use serde::Serialize;

use super::spot::image_vergence;
use crate::designer::ar_path::ArSystem;
use crate::eye::Prescription;
use crate::par::{self, Execution};
use crate::{OpticsError, Result};

/// Fraction of the eye pupil filled by the bundle used to measure vergence.
pub const VERGENCE_PUPIL_SCALE: f64 = 0.25;
/// Display travel searched when solving for a target depth.
pub const TRAVEL_LIMIT_MM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FocusPoint {
    pub delta_a_mm: f64,
    /// Image vergence in the real scene, diopters.
    pub real_d: f64,
    /// The same depth in the vision-corrected scene.
    pub corrected_d: f64,
}

/// Converts real-scene diopters to the vision-corrected scene.
pub fn corrected_diopters(real_d: f64, rx: &Prescription) -> f64 {
    real_d + rx.sph_d
}

fn focus_point(ar: &ArSystem, delta_a_mm: f64) -> Result<FocusPoint> {
    let moved = ar.with_display_shift(delta_a_mm)?;
    let real_d = image_vergence(&moved, [0.0, 0.0], VERGENCE_PUPIL_SCALE)? * 1e3;
    Ok(FocusPoint {
        delta_a_mm,
        real_d,
        corrected_d: corrected_diopters(real_d, &ar.prescription),
    })
}

/// Image depth for each display offset `delta_a_mm` (positive away from the
/// beam-shaping lens).
pub fn focus_mapping(ar: &ArSystem, deltas_mm: &[f64], exec: Execution) -> Result<Vec<FocusPoint>> {
    par::map(exec, deltas_mm, |&d| focus_point(ar, d)).into_iter().collect()
}

/// Display offset that places the image at `corrected_d` diopters. When
/// several offsets do, the one closest to zero travel is returned.
pub fn delta_a_for(ar: &ArSystem, corrected_d: f64) -> Result<f64> {
    let g = |d: f64| focus_point(ar, d).ok().map(|p| p.corrected_d - corrected_d);
    let n = 16;
    let samples: Vec<(f64, f64)> = (0..=n)
        .filter_map(|k| {
            let d = -TRAVEL_LIMIT_MM + 2.0 * TRAVEL_LIMIT_MM * k as f64 / n as f64;
            g(d).map(|v| (d, v))
        })
        .collect();
    let bracket = samples
        .windows(2)
        .filter(|w| w[0].1 == 0.0 || w[0].1.signum() != w[1].1.signum())
        .min_by(|x, y| x[0].0.abs().min(x[1].0.abs()).total_cmp(&y[0].0.abs().min(y[1].0.abs())))
        .ok_or_else(|| OpticsError::Geometry(format!("no display travel within ±{TRAVEL_LIMIT_MM} mm reaches {corrected_d} D")))?;
    let ((mut a, mut fa), (mut b, _)) = (bracket[0], bracket[1]);
    while (b - a).abs() > 1e-9 && fa != 0.0 {
        let m = 0.5 * (a + b);
        let fm = g(m).ok_or_else(|| OpticsError::Geometry(format!("image depth undefined at display travel {m} mm")))?;
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(if fa == 0.0 { a } else { 0.5 * (a + b) })
}

/// Display travel needed to sweep the image from `from_d` to `to_d`
/// (corrected-scene diopters).
pub fn travel_span(ar: &ArSystem, from_d: f64, to_d: f64) -> Result<f64> {
    Ok((delta_a_for(ar, to_d)? - delta_a_for(ar, from_d)?).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrected_scene_subtracts_myopia() {
        assert_eq!(corrected_diopters(2.0, &Prescription::sphere(-1.0)), 1.0);
        assert_eq!(corrected_diopters(2.0, &Prescription::sphere(0.0)), 2.0);
    }
}
