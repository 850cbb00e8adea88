//! The AR display-path parameter vector.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::materials::{self, Material};
use crate::surfaces::{ExtendedPolynomial, MAX_POLY_TERMS, POLY_EXPONENTS, POLY_LABELS};
use crate::{OpticsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisplaySpec {
    pub width_mm: f64,
    pub height_mm: f64,
    pub pixels_x: u32,
    pub pixels_y: u32,
    pub pixel_pitch_um: f64,
}

impl DisplaySpec {
    /// 0.6-inch micro display of the 1 D prototype.
    pub fn prototype() -> Self {
        Self {
            width_mm: 10.08,
            height_mm: 7.56,
            pixels_x: 1600,
            pixels_y: 1200,
            pixel_pitch_um: 6.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_mm >= 0.0 && self.height_mm >= 0.0 && self.pixel_pitch_um > 0.0) {
            return Err(OpticsError::InvalidInput("display dimensions must be non-negative and pitch > 0".into()));
        }
        Ok(())
    }

    /// Spatial Nyquist frequency of the pixel grid, cycles/mm.
    pub fn nyquist_per_mm(&self) -> f64 {
        1.0 / (2.0 * self.pixel_pitch_um * 1e-3)
    }
}

/// Geometry of the folded display path. Lengths in mm, angles in degrees
/// measured from the vertical (y) axis to each surface normal in the y-z
/// fold plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignParams {
    /// Display to beam-shaping lens gap.
    pub a_mm: f64,
    /// Beam-shaping lens to prism gap.
    pub d_p_mm: f64,
    pub t_bsl_mm: f64,
    /// Prism entry to internal cylinder depth.
    pub t_c_mm: f64,
    /// Cylinder to waveguide entry depth.
    pub t_w_mm: f64,
    pub r_l1_mm: f64,
    pub r_l2_mm: f64,
    pub r_cy_mm: f64,
    pub theta_d_deg: f64,
    pub theta_l_deg: f64,
    pub theta_p_deg: f64,
    pub theta_c_deg: f64,
    pub theta_w_deg: f64,
    pub theta_f_deg: f64,
    pub freeform: ExtendedPolynomial,
    pub n1: Material,
    pub n2: Material,
    pub n3: Material,
    pub display: DisplaySpec,
    pub eye_relief_mm: f64,
    /// Virtual image distance in the real scene.
    pub image_distance_mm: f64,
    pub lens_thickness_mm: f64,
    /// Path length inside the waveguide from the second TIR bounce (traced
    /// backwards) to the waveguide entry. Solved for focus when absent.
    #[serde(default)]
    pub guide_length_mm: Option<f64>,
    /// Depth of the combiner vertex inside the lens as a fraction of `t_l`.
    #[serde(default = "half")]
    pub mirror_depth_fraction: f64,
    /// Keeps θ_l equal to θ_d.
    #[serde(default = "yes")]
    pub symmetric_magnification: bool,
}

fn half() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

/// Prototype freeform combiner coefficients, in [`POLY_EXPONENTS`] order.
pub const PROTOTYPE_FREEFORM_COEFFS: [f64; MAX_POLY_TERMS] =
    [0.0, 0.798, 10.65, 0.0, 11.235, 0.0, 0.0, 0.0, -1.275, -0.695, 0.0, 0.0, 0.0, 2.34];

impl DesignParams {
    /// The 1 D myopia prototype.
    pub fn prototype() -> Self {
        Self {
            a_mm: 0.97,
            d_p_mm: 0.42,
            t_bsl_mm: 3.25,
            t_c_mm: 1.64,
            t_w_mm: 2.27,
            r_l1_mm: -37.32,
            r_l2_mm: 13.94,
            r_cy_mm: -8.86,
            theta_d_deg: 66.67,
            theta_l_deg: 66.67,
            theta_p_deg: 53.17,
            theta_c_deg: 61.92,
            theta_w_deg: 62.0,
            theta_f_deg: 60.92,
            freeform: ExtendedPolynomial::from_base_radius(-276.28, 0.0, 27.391, PROTOTYPE_FREEFORM_COEFFS.to_vec())
                .expect("valid tabulated freeform"),
            n1: materials::lookup("N-LASF31A").expect("catalog"),
            n2: materials::lookup("N-BK7").expect("catalog"),
            n3: materials::lookup("COP").expect("catalog"),
            display: DisplaySpec::prototype(),
            eye_relief_mm: 20.0,
            image_distance_mm: 485.0,
            lens_thickness_mm: 5.0,
            guide_length_mm: None,
            mirror_depth_fraction: 0.5,
            symmetric_magnification: true,
        }
    }

    pub fn stack_mm(&self) -> f64 {
        self.a_mm + self.d_p_mm + self.t_bsl_mm + self.t_c_mm + self.t_w_mm
    }

    pub fn effective_theta_l(&self) -> f64 {
        if self.symmetric_magnification {
            self.theta_d_deg
        } else {
            self.theta_l_deg
        }
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::A => self.a_mm,
            Param::Dp => self.d_p_mm,
            Param::TBsl => self.t_bsl_mm,
            Param::Tc => self.t_c_mm,
            Param::Tw => self.t_w_mm,
            Param::Rl1 => self.r_l1_mm,
            Param::Rl2 => self.r_l2_mm,
            Param::Rcy => self.r_cy_mm,
            Param::ThetaD => self.theta_d_deg,
            Param::ThetaL => self.theta_l_deg,
            Param::ThetaP => self.theta_p_deg,
            Param::ThetaC => self.theta_c_deg,
            Param::ThetaW => self.theta_w_deg,
            Param::ThetaF => self.theta_f_deg,
            Param::GuideLength => self.guide_length_mm.unwrap_or(f64::NAN),
            Param::FreeformCurvature => self.freeform.curvature_per_mm,
            Param::FreeformConic => self.freeform.conic,
            Param::FreeformCoeff(i) => self.freeform.coeffs_mm.get(i).copied().unwrap_or(0.0),
        }
    }

    pub fn set(&mut self, p: Param, v: f64) {
        match p {
            Param::A => self.a_mm = v,
            Param::Dp => self.d_p_mm = v,
            Param::TBsl => self.t_bsl_mm = v,
            Param::Tc => self.t_c_mm = v,
            Param::Tw => self.t_w_mm = v,
            Param::Rl1 => self.r_l1_mm = v,
            Param::Rl2 => self.r_l2_mm = v,
            Param::Rcy => self.r_cy_mm = v,
            Param::ThetaD => self.theta_d_deg = v,
            Param::ThetaL => self.theta_l_deg = v,
            Param::ThetaP => self.theta_p_deg = v,
            Param::ThetaC => self.theta_c_deg = v,
            Param::ThetaW => self.theta_w_deg = v,
            Param::ThetaF => self.theta_f_deg = v,
            Param::GuideLength => self.guide_length_mm = Some(v),
            Param::FreeformCurvature => self.freeform.curvature_per_mm = v,
            Param::FreeformConic => self.freeform.conic = v,
            Param::FreeformCoeff(i) => {
                if self.freeform.coeffs_mm.len() <= i {
                    self.freeform.coeffs_mm.resize(i + 1, 0.0);
                }
                self.freeform.coeffs_mm[i] = v;
            }
        }
    }

    pub fn with(&self, p: Param, v: f64) -> Self {
        let mut out = self.clone();
        out.set(p, v);
        out
    }
}

/// One optimizable entry of [`DesignParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    A,
    Dp,
    TBsl,
    Tc,
    Tw,
    Rl1,
    Rl2,
    Rcy,
    ThetaD,
    ThetaL,
    ThetaP,
    ThetaC,
    ThetaW,
    ThetaF,
    GuideLength,
    FreeformCurvature,
    FreeformConic,
    FreeformCoeff(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Length,
    Angle,
    Curvature,
    Unitless,
}

impl Param {
    pub fn kind(self) -> ParamKind {
        match self {
            Param::ThetaD | Param::ThetaL | Param::ThetaP | Param::ThetaC | Param::ThetaW | Param::ThetaF => {
                ParamKind::Angle
            }
            Param::FreeformCurvature => ParamKind::Curvature,
            Param::FreeformConic => ParamKind::Unitless,
            _ => ParamKind::Length,
        }
    }

    /// Central-difference step for the numeric Jacobian.
    pub fn fd_step(self) -> f64 {
        match self.kind() {
            ParamKind::Length => 1e-3,
            ParamKind::Angle => 1e-3,
            ParamKind::Curvature => 1e-5,
            ParamKind::Unitless => 1e-3,
        }
    }

    /// Every scalar parameter, with all freeform slots.
    pub fn all() -> Vec<Param> {
        let mut v = vec![
            Param::A,
            Param::Dp,
            Param::TBsl,
            Param::Tc,
            Param::Tw,
            Param::Rl1,
            Param::Rl2,
            Param::Rcy,
            Param::ThetaD,
            Param::ThetaL,
            Param::ThetaP,
            Param::ThetaC,
            Param::ThetaW,
            Param::ThetaF,
            Param::GuideLength,
            Param::FreeformCurvature,
            Param::FreeformConic,
        ];
        v.extend((0..MAX_POLY_TERMS).map(Param::FreeformCoeff));
        v
    }

    /// Base curvature, conic and the nonzero prototype polynomial slots.
    pub fn freeform_stage_one() -> Vec<Param> {
        let mut v = vec![Param::FreeformCurvature, Param::FreeformConic];
        v.extend(
            PROTOTYPE_FREEFORM_COEFFS
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(i, _)| Param::FreeformCoeff(i)),
        );
        v
    }

    /// Remaining polynomial slots that keep the surface even in x.
    pub fn freeform_stage_two() -> Vec<Param> {
        (0..MAX_POLY_TERMS)
            .filter(|&i| POLY_EXPONENTS[i].0 % 2 == 0 && PROTOTYPE_FREEFORM_COEFFS[i] == 0.0)
            .map(Param::FreeformCoeff)
            .collect()
    }

    /// Distances of the display module stack.
    pub fn distances() -> Vec<Param> {
        vec![Param::A, Param::Dp, Param::TBsl, Param::Tc, Param::Tw]
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Param::A => "a_mm",
            Param::Dp => "d_p_mm",
            Param::TBsl => "t_bsl_mm",
            Param::Tc => "t_c_mm",
            Param::Tw => "t_w_mm",
            Param::Rl1 => "r_l1_mm",
            Param::Rl2 => "r_l2_mm",
            Param::Rcy => "r_cy_mm",
            Param::ThetaD => "theta_d_deg",
            Param::ThetaL => "theta_l_deg",
            Param::ThetaP => "theta_p_deg",
            Param::ThetaC => "theta_c_deg",
            Param::ThetaW => "theta_w_deg",
            Param::ThetaF => "theta_f_deg",
            Param::GuideLength => "guide_length_mm",
            Param::FreeformCurvature => "freeform_curvature_per_mm",
            Param::FreeformConic => "freeform_conic",
            Param::FreeformCoeff(i) => return write!(f, "freeform_{}", POLY_LABELS[*i]),
        };
        f.write_str(s)
    }
}

impl FromStr for Param {
    type Err = OpticsError;

    fn from_str(s: &str) -> Result<Self> {
        Param::all()
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| OpticsError::InvalidInput(format!("unknown design parameter `{s}`")))
    }
}
