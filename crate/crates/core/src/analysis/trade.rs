//! Trade-space sweeps over lens thickness and eye relief.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::eyebox::{default_fields, eyebox, EyeBoxOptions};
use super::fov::fov;
use crate::designer::ar_path::build_ar_system_with_lens;
use crate::designer::lens::direct_lens_profiles;
use crate::designer::optimize::{optimize, OptimizeOptions};
use crate::designer::{DesignParams, MeritSpec, Param};
use crate::eye::Prescription;
use crate::par::{self, Execution};
use crate::{OpticsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeVariable {
    LensThickness,
    EyeRelief,
}

impl fmt::Display for TradeVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TradeVariable::LensThickness => "t_l_mm",
            TradeVariable::EyeRelief => "d_e_mm",
        })
    }
}

impl std::str::FromStr for TradeVariable {
    type Err = OpticsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t_l" | "t_l_mm" => Ok(TradeVariable::LensThickness),
            "d_e" | "d_e_mm" => Ok(TradeVariable::EyeRelief),
            _ => Err(OpticsError::InvalidInput(format!("unknown sweep variable `{s}`; expected t_l or d_e"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeCurve {
    pub variable: TradeVariable,
    pub values: Vec<f64>,
    pub fov_h_deg: Vec<f64>,
    pub fov_v_deg: Vec<f64>,
    pub eyebox_w_mm: Vec<f64>,
    pub eyebox_h_mm: Vec<f64>,
}

/// How each sweep point is prepared before it is measured.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeOptions {
    /// Re-optimize the freeform and distances at each value; `None`
    /// measures the base geometry as built.
    pub reoptimize: Option<(MeritSpec, OptimizeOptions)>,
    pub eyebox: EyeBoxOptions,
    pub exec: Execution,
}

impl Default for TradeOptions {
    fn default() -> Self {
        Self {
            reoptimize: None,
            eyebox: EyeBoxOptions::default(),
            exec: Execution::Parallel,
        }
    }
}

/// Parameters released when a sweep point is re-optimized.
pub fn geometry_coupled_params() -> Vec<Param> {
    let mut v = Param::freeform_stage_one();
    v.extend(Param::freeform_stage_two());
    v.extend(Param::distances());
    v
}

fn sweep_point(base: &DesignParams, rx: &Prescription, variable: TradeVariable, value: f64, opts: &TradeOptions) -> Result<[f64; 4]> {
    let mut p = base.clone();
    match variable {
        TradeVariable::LensThickness => p.lens_thickness_mm = value,
        TradeVariable::EyeRelief => p.eye_relief_mm = value,
    }
    let lens = direct_lens_profiles(rx, p.lens_thickness_mm, &p.n3)?;
    if let Some((spec, o)) = &opts.reoptimize {
        let mut spec = spec.clone();
        if variable == TradeVariable::EyeRelief {
            spec.eye_reliefs_mm = vec![value];
        }
        p = optimize(&p, &lens, rx, &geometry_coupled_params(), &spec, o)?.params;
    }
    let ar = build_ar_system_with_lens(&p, &lens, rx)?;
    let f = fov(&ar);
    let fields = default_fields(&ar);
    let b = eyebox(&ar, &fields, &opts.eyebox)?;
    Ok([f.horizontal_deg, f.vertical_deg, b.width_mm, b.height_mm])
}

/// FOV and eye box at each value of `variable`. Values must be strictly
/// increasing.
pub fn trade_sweep(
    base: &DesignParams,
    rx: &Prescription,
    variable: TradeVariable,
    values: &[f64],
    opts: &TradeOptions,
) -> Result<TradeCurve> {
    if values.is_empty() || values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OpticsError::InvalidInput("sweep values must be non-empty and strictly increasing".into()));
    }
    let rows: Vec<[f64; 4]> = par::map(opts.exec, values, |&v| sweep_point(base, rx, variable, v, opts))
        .into_iter()
        .collect::<Result<_>>()?;
    let col = |k: usize| rows.iter().map(|r| r[k]).collect();
    Ok(TradeCurve {
        variable,
        values: values.to_vec(),
        fov_h_deg: col(0),
        fov_v_deg: col(1),
        eyebox_w_mm: col(2),
        eyebox_h_mm: col(3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted_values() {
        let r = trade_sweep(
            &DesignParams::prototype(),
            &Prescription::sphere(-1.0),
            TradeVariable::EyeRelief,
            &[20.0, 12.0],
            &TradeOptions::default(),
        );
        assert!(matches!(r, Err(OpticsError::InvalidInput(_))));
    }

    #[test]
    fn variable_names_parse() {
        assert_eq!("t_l".parse::<TradeVariable>().unwrap(), TradeVariable::LensThickness);
        assert_eq!("d_e_mm".parse::<TradeVariable>().unwrap(), TradeVariable::EyeRelief);
        assert!("x".parse::<TradeVariable>().is_err());
    }
}
