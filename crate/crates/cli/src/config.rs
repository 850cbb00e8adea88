//! Design configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use prescription_ar::designer::lens::EYE_RELIEFS_MM;
use prescription_ar::designer::{DesignParams, DisplaySpec, Param};
use prescription_ar::eye::Prescription;
use prescription_ar::materials::{self, Material};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Lens material given by catalog name or spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialChoice {
    Catalog(String),
    Custom(Material),
}

impl MaterialChoice {
    pub fn resolve(&self) -> Result<Material, CliError> {
        match self {
            MaterialChoice::Catalog(name) => Ok(materials::lookup(name)?),
            MaterialChoice::Custom(m) => Ok(m.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensBlock {
    pub thickness_mm: Option<f64>,
    pub material: Option<MaterialChoice>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerBlock {
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    /// Parameter names held fixed, or `"all"`.
    #[serde(default)]
    pub frozen: Vec<String>,
    /// Accept a result that breaks a manufacturing constraint.
    #[serde(default)]
    pub allow_infeasible: bool,
}

/// Either the built-in prototype parameters or explicit ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedChoice {
    Named(String),
    Params(Box<DesignParams>),
}

impl SeedChoice {
    /// `prototype` names the built-in design; any other string is a JSON file path
    /// taken relative to `base`.
    pub fn from_flag(s: &str) -> Self {
        SeedChoice::Named(s.to_string())
    }

    pub fn resolve(&self, base: &Path) -> Result<DesignParams, CliError> {
        match self {
            SeedChoice::Params(p) => Ok((**p).clone()),
            SeedChoice::Named(s) if s.eq_ignore_ascii_case("prototype") => Ok(DesignParams::prototype()),
            SeedChoice::Named(s) => {
                let path = base.join(s);
                let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub prescription: Prescription,
    pub lens: Option<LensBlock>,
    pub display: Option<DisplaySpec>,
    #[serde(default = "default_eye_reliefs")]
    pub eye_relief_mm: Vec<f64>,
    #[serde(default)]
    pub optimizer: OptimizerBlock,
    pub seed: Option<SeedChoice>,
    /// Directory of the file the config came from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_eye_reliefs() -> Vec<f64> {
    EYE_RELIEFS_MM.to_vec()
}

impl DesignConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: DesignConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without tracing.
    pub fn validate(&self) -> Result<(), CliError> {
        self.prescription.validate()?;
        if let Some(lens) = &self.lens {
            if let Some(t) = lens.thickness_mm {
                if !(t > 0.0) {
                    return Err(CliError::Config(format!("lens.thickness_mm must be positive, got {t}")));
                }
            }
            if let Some(m) = &lens.material {
                m.resolve()?;
            }
        }
        if let Some(d) = &self.display {
            d.validate()?;
        }
        if self.eye_relief_mm.is_empty() || self.eye_relief_mm.iter().any(|d| !(*d > 0.0)) {
            return Err(CliError::Config("eye_relief_mm must list positive distances".into()));
        }
        if self.optimizer.max_iters == Some(0) {
            return Err(CliError::Config("optimizer.max_iters must be at least 1".into()));
        }
        if let Some(t) = self.optimizer.tol {
            if !(t > 0.0) {
                return Err(CliError::Config(format!("optimizer.tol must be positive, got {t}")));
            }
        }
        self.frozen()?;
        Ok(())
    }

    /// Parsed frozen set; `None` when everything is frozen.
    pub fn frozen(&self) -> Result<Option<Vec<Param>>, CliError> {
        if self.optimizer.frozen.iter().any(|s| s.eq_ignore_ascii_case("all")) {
            return Ok(None);
        }
        let v = self
            .optimizer
            .frozen
            .iter()
            .map(|s| s.parse::<Param>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(v))
    }

    pub fn lens_thickness_mm(&self, fallback: f64) -> f64 {
        self.lens.as_ref().and_then(|l| l.thickness_mm).unwrap_or(fallback)
    }

    pub fn lens_material(&self, fallback: &Material) -> Result<Material, CliError> {
        match self.lens.as_ref().and_then(|l| l.material.as_ref()) {
            Some(m) => m.resolve(),
            None => Ok(fallback.clone()),
        }
    }

    /// The seed parameters with the config's lens and display blocks
    /// applied. `flag` overrides the config's own seed.
    pub fn seed_params(&self, flag: Option<&str>) -> Result<DesignParams, CliError> {
        let mut p = match (flag, &self.seed) {
            (Some(s), _) => SeedChoice::from_flag(s).resolve(Path::new(""))?,
            (None, Some(seed)) => seed.resolve(&self.base_dir)?,
            (None, None) => DesignParams::prototype(),
        };
        p.lens_thickness_mm = self.lens_thickness_mm(p.lens_thickness_mm);
        p.n3 = self.lens_material(&p.n3)?;
        if let Some(d) = self.display {
            p.display = d;
        }
        Ok(p)
    }
}
