//! Geometric MTF from ray spots.
//!
//! The line-spread function along an azimuth is the ray density of the spot
//! projected onto that direction. Its Fourier transform is evaluated exactly
//! over the ray samples, so no binning is involved.

use serde::Serialize;

use crate::{OpticsError, Result};

pub const MIN_MTF_RAYS: usize = 500;
/// Upper end of the MTF50 search.
pub const MTF50_SEARCH_MAX_CPD: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MtfCurve {
    pub frequencies_cpd: Vec<f64>,
    pub tangential: Vec<f64>,
    pub sagittal: Vec<f64>,
    /// Direction of the tangential line-spread axis in the spot plane.
    pub tangential_azimuth_deg: f64,
}

fn projections_deg(points_mm: &[[f64; 2]], mm_per_deg: f64, azimuth_deg: f64) -> Vec<f64> {
    let (s, c) = azimuth_deg.to_radians().sin_cos();
    points_mm.iter().map(|p| (p[0] * c + p[1] * s) / mm_per_deg).collect()
}

/// Modulus of the normalized Fourier transform of the projected ray density.
pub fn mtf_from_projection(u_deg: &[f64], f_cpd: f64) -> f64 {
    let w = std::f64::consts::TAU * f_cpd;
    let (re, im) = u_deg
        .iter()
        .fold((0.0, 0.0), |(re, im), u| (re + (w * u).cos(), im + (w * u).sin()));
    (re * re + im * im).sqrt() / u_deg.len() as f64
}

fn check_rays(points_mm: &[[f64; 2]]) -> Result<()> {
    if points_mm.len() < MIN_MTF_RAYS {
        return Err(OpticsError::InsufficientRays {
            got: points_mm.len(),
            need: MIN_MTF_RAYS,
        });
    }
    Ok(())
}

/// Tangential and sagittal MTF at `frequencies_cpd` of a spot given in mm,
/// with `mm_per_deg` converting spot coordinates to visual angle.
pub fn geometric_mtf(
    points_mm: &[[f64; 2]],
    mm_per_deg: f64,
    frequencies_cpd: &[f64],
    tangential_azimuth_deg: f64,
) -> Result<MtfCurve> {
    check_rays(points_mm)?;
    let t = projections_deg(points_mm, mm_per_deg, tangential_azimuth_deg);
    let s = projections_deg(points_mm, mm_per_deg, tangential_azimuth_deg + 90.0);
    Ok(MtfCurve {
        frequencies_cpd: frequencies_cpd.to_vec(),
        tangential: frequencies_cpd.iter().map(|&f| mtf_from_projection(&t, f)).collect(),
        sagittal: frequencies_cpd.iter().map(|&f| mtf_from_projection(&s, f)).collect(),
        tangential_azimuth_deg,
    })
}

/// First frequency where the MTF along `azimuth_deg` falls to 0.5, or
/// [`MTF50_SEARCH_MAX_CPD`] when it never does.
pub fn mtf50_along(points_mm: &[[f64; 2]], mm_per_deg: f64, azimuth_deg: f64) -> Result<f64> {
    check_rays(points_mm)?;
    let u = projections_deg(points_mm, mm_per_deg, azimuth_deg);
    let m = |f: f64| mtf_from_projection(&u, f) - 0.5;
    let step = 0.25;
    let mut lo = 0.0;
    while lo < MTF50_SEARCH_MAX_CPD {
        let hi = lo + step;
        if m(hi) <= 0.0 {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..50 {
                let mid = 0.5 * (a + b);
                if m(mid) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Ok(0.5 * (a + b));
        }
        lo = hi;
    }
    Ok(MTF50_SEARCH_MAX_CPD)
}

/// The lower of the tangential and sagittal MTF50.
pub fn mtf50(points_mm: &[[f64; 2]], mm_per_deg: f64, tangential_azimuth_deg: f64) -> Result<f64> {
    Ok(mtf50_along(points_mm, mm_per_deg, tangential_azimuth_deg)?
        .min(mtf50_along(points_mm, mm_per_deg, tangential_azimuth_deg + 90.0)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_spot_has_unit_mtf() {
        let pts = vec![[0.01, -0.02]; 600];
        let c = geometric_mtf(&pts, 0.291, &[0.0, 10.0, 60.0], 90.0).unwrap();
        for v in c.tangential.iter().chain(&c.sagittal) {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(mtf50(&pts, 0.291, 0.0).unwrap(), MTF50_SEARCH_MAX_CPD);
    }

    #[test]
    fn too_few_rays_rejected() {
        let pts = vec![[0.0, 0.0]; 499];
        assert!(matches!(
            geometric_mtf(&pts, 0.291, &[1.0], 0.0),
            Err(OpticsError::InsufficientRays { got: 499, need: 500 })
        ));
    }

    #[test]
    fn symmetric_pair_is_a_cosine() {
        let mut pts = vec![[0.0291, 0.0]; 300];
        pts.extend(vec![[-0.0291, 0.0]; 300]);
        // ±0.1° lines: MTF = |cos(2π f 0.1)|
        for f in [0.5, 1.0, 2.0] {
            let c = geometric_mtf(&pts, 0.291, &[f], 0.0).unwrap();
            assert!((c.tangential[0] - (std::f64::consts::TAU * f * 0.1).cos().abs()).abs() < 1e-12);
            assert!((c.sagittal[0] - 1.0).abs() < 1e-12);
        }
    }

    /// J1 from its integral representation, by Simpson's rule.
    fn bessel_j1(x: f64) -> f64 {
        let n = 2000;
        let h = std::f64::consts::PI / n as f64;
        let f = |t: f64| (t - x * t.sin()).cos();
        let mut acc = f(0.0) + f(std::f64::consts::PI);
        for k in 1..n {
            acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0 / std::f64::consts::PI
    }

    #[test]
    fn uniform_disk_matches_bessel_form() {
        // dense lattice clipped to a disk of radius 0.01 mm
        let r = 0.01;
        let n = 161;
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let x = r * (2.0 * i as f64 / (n - 1) as f64 - 1.0);
                let y = r * (2.0 * j as f64 / (n - 1) as f64 - 1.0);
                if x.hypot(y) <= r {
                    pts.push([x, y]);
                }
            }
        }
        let mm_per_deg = 0.291;
        let rho_deg = r / mm_per_deg;
        let freqs: Vec<f64> = (1..=12).map(|k| k as f64 * 2.5).collect();
        let c = geometric_mtf(&pts, mm_per_deg, &freqs, 30.0).unwrap();
        for (k, f) in freqs.iter().enumerate() {
            let x = std::f64::consts::TAU * f * rho_deg;
            let expect = (2.0 * bessel_j1(x) / x).abs();
            assert!((c.tangential[k] - expect).abs() < 0.02, "f={f} got {} want {expect}", c.tangential[k]);
            assert!((c.sagittal[k] - expect).abs() < 0.02, "f={f} got {} want {expect}", c.sagittal[k]);
        }
    }

    #[test]
    fn emmetropic_eye_out_resolves_display() {
        use crate::eye::{build_eye, far_point, mm_per_degree, retinal_spot, Prescription};
        use crate::tracer::{BundleOptions, PupilGrid};
        let eye = build_eye(&Prescription::default()).unwrap();
        let v = far_point(&eye).unwrap();
        let pts = retinal_spot(&eye.system, v, &PupilGrid::Hexapolar { rings: 13 }, &BundleOptions::default()).unwrap();
        let k = mm_per_degree(&eye.system).unwrap();
        let c = geometric_mtf(&pts, k, &[30.0], 90.0).unwrap();
        assert!(c.tangential[0] > 0.5 && c.sagittal[0] > 0.5, "{c:?}");
    }
}
