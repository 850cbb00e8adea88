//! One function per subcommand. Each writes its files into `out` and
//! returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use prescription_ar::analysis::eyebox::{default_fields, EyeBoxOptions};
use prescription_ar::analysis::resolution::{eye_mm_per_degree, RESOLUTION_GRID};
use prescription_ar::analysis::{
    ar_spot, eyebox, focus_mapping, fov, geometric_mtf, resolution_profile, spot, trade_sweep, EyeFocus,
    TradeOptions, TradeVariable,
};
use prescription_ar::designer::lens::{
    design_prescription_lens_with, direct_lens_profiles, lens_eye_system, LensDesignOptions,
};
use prescription_ar::designer::optimize::write_log_csv;
use prescription_ar::analysis::trade::geometry_coupled_params;
use prescription_ar::designer::{
    build_ar_system_with_lens, optimize, ArSystem, DesignParams, MeritSpec, OptimizeOptions, Param,
    PrescriptionLensDesign,
};
use prescription_ar::eye::build_eye;
use prescription_ar::par::Execution;
use prescription_ar::report::{self, AssessmentReport, Series};
use prescription_ar::tracer::{FieldSpec, OpticalSystem, PupilGrid};
use serde::Serialize;

use crate::config::DesignConfig;
use crate::error::CliError;

/// Image-plane offsets of the through-focus table, mm.
const THROUGH_FOCUS_MM: [f64; 9] = [-0.2, -0.15, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15, 0.2];
const THROUGH_FOCUS_GRID: PupilGrid = PupilGrid::Hexapolar { rings: 6 };
const MTF_FREQUENCIES_CPD: usize = 31;
const MTF_STEP_CPD: f64 = 2.0;
/// Display travel of the focus table, near image first.
const FOCUS_TRAVEL_MM: [f64; 2] = [-0.8, 0.3];
const FOCUS_SAMPLES: usize = 23;
const PROFILE_ECCENTRICITIES_DEG: [f64; 7] = [0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Fov,
    EyeBox,
    Mtf,
    Spots,
    Focus,
    ResolutionProfile,
}

impl std::str::FromStr for Metric {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s.trim() {
            "fov" => Metric::Fov,
            "eyebox" => Metric::EyeBox,
            "mtf" => Metric::Mtf,
            "spots" => Metric::Spots,
            "focus" => Metric::Focus,
            "resolution-profile" => Metric::ResolutionProfile,
            other => {
                return Err(CliError::Config(format!(
                    "unknown metric `{other}`; expected fov, eyebox, mtf, spots, focus or resolution-profile"
                )))
            }
        })
    }
}

/// Parses a comma-separated metric list, rejecting an empty one.
pub fn parse_metrics(list: &[String]) -> Result<Vec<Metric>, CliError> {
    let mut out: Vec<Metric> = Vec::new();
    for s in list.iter().flat_map(|s| s.split(',')).filter(|s| !s.trim().is_empty()) {
        let m: Metric = s.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("--metrics needs at least one metric".into()));
    }
    Ok(out)
}

fn write(path: PathBuf, bytes: impl AsRef<[u8]>, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(buf)
}

fn fixed(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

/// Reads a lens design written by `design-lens`.
pub fn load_lens(path: &Path) -> Result<PrescriptionLensDesign, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let lens: PrescriptionLensDesign =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    lens.validate()?;
    Ok(lens)
}

fn lens_for(cfg: &DesignConfig, p: &DesignParams, lens: Option<&Path>) -> Result<PrescriptionLensDesign, CliError> {
    match lens {
        Some(path) => load_lens(path),
        None => Ok(direct_lens_profiles(&cfg.prescription, p.lens_thickness_mm, &p.n3)?),
    }
}

struct FocusRow {
    configuration: String,
    eye_relief_mm: Option<f64>,
    offset_mm: f64,
    rms_um: f64,
    centroid_mm: [f64; 2],
}

fn through_focus(system: &OpticalSystem, configuration: String, eye_relief_mm: Option<f64>) -> Result<Vec<FocusRow>, CliError> {
    let field = FieldSpec::angle(0.0, 0.0);
    THROUGH_FOCUS_MM
        .iter()
        .map(|&z| {
            let s = spot(system, &field, z, &THROUGH_FOCUS_GRID)?;
            Ok(FocusRow {
                configuration: configuration.clone(),
                eye_relief_mm,
                offset_mm: z,
                rms_um: s.rms_um,
                centroid_mm: s.centroid_mm,
            })
        })
        .collect()
}

fn write_through_focus(rows: &[FocusRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Config(e.to_string());
    w.write_record(["configuration", "eye_relief_mm", "plane_offset_mm", "rms_um", "centroid_x_mm", "centroid_y_mm"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.configuration.clone(),
            r.eye_relief_mm.map(fixed).unwrap_or_default(),
            fixed(r.offset_mm),
            fixed(r.rms_um),
            format!("{:.9}", r.centroid_mm[0]),
            format!("{:.9}", r.centroid_mm[1]),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

/// Optimizes the prescription lens and reports its through-focus spots
/// against the naked eye.
pub fn design_lens(cfg: &DesignConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let prototype = DesignParams::prototype();
    let t_l = cfg.lens_thickness_mm(prototype.lens_thickness_mm);
    let material = cfg.lens_material(&prototype.n3)?;
    let mut opts = LensDesignOptions::default();
    opts.spec.eye_reliefs_mm = cfg.eye_relief_mm.clone();
    if let Some(n) = cfg.optimizer.max_iters {
        opts.lm.max_iters = n;
    }
    if let Some(t) = cfg.optimizer.tol {
        opts.lm.tol = t;
    }
    let result = design_prescription_lens_with(&cfg.prescription, t_l, &material, &opts)?;
    let eye = build_eye(&cfg.prescription)?;

    let mut rows = through_focus(&eye.system, "naked".into(), None)?;
    for &d_e in &cfg.eye_relief_mm {
        let system = lens_eye_system(&result.design, &eye, d_e)?;
        rows.extend(through_focus(&system, "corrected".into(), Some(d_e))?);
    }

    let mut written = Vec::new();
    write(out.join("lens.json"), json(&result.design)?, &mut written)?;
    write(out.join("lens_log.csv"), csv_bytes(|w| write_log_csv(&result.log, w))?, &mut written)?;
    write(out.join("through_focus.csv"), write_through_focus(&rows)?, &mut written)?;
    if result.extrapolated {
        eprintln!("warning: eye model extrapolated beyond its measured refraction range");
    }
    Ok(written)
}

/// Free parameters after removing the frozen ones.
fn free_params(cfg: &DesignConfig) -> Result<Vec<Param>, CliError> {
    Ok(match cfg.frozen()? {
        None => Vec::new(),
        Some(frozen) => geometry_coupled_params().into_iter().filter(|p| !frozen.contains(p)).collect(),
    })
}

/// Optimizes the display path over the configured eye reliefs.
pub fn design_ar(cfg: &DesignConfig, seed: Option<&str>, lens: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let params = cfg.seed_params(seed)?;
    let lens = lens_for(cfg, &params, lens)?;
    let spec = MeritSpec {
        eye_reliefs_mm: cfg.eye_relief_mm.clone(),
        ..MeritSpec::default()
    };
    let mut opts = OptimizeOptions {
        require_feasible: !cfg.optimizer.allow_infeasible,
        ..Default::default()
    };
    if let Some(n) = cfg.optimizer.max_iters {
        opts.lm.max_iters = n;
    }
    if let Some(t) = cfg.optimizer.tol {
        opts.lm.tol = t;
    }
    let free = free_params(cfg)?;
    let result = optimize(&params, &lens, &cfg.prescription, &free, &spec, &opts)?;
    for v in &result.constraints.violations {
        eprintln!("warning: constraint {} violated by {:.4}", v.name, v.amount);
    }
    let mut written = Vec::new();
    write(out.join("params.json"), json(&result.params)?, &mut written)?;
    write(out.join("optimize_log.csv"), csv_bytes(|w| write_log_csv(&result.log, w))?, &mut written)?;
    Ok(written)
}

fn load_ar(cfg: &DesignConfig, seed: Option<&str>, lens: Option<&Path>) -> Result<ArSystem, CliError> {
    let params = cfg.seed_params(seed)?;
    let lens = lens_for(cfg, &params, lens)?;
    Ok(build_ar_system_with_lens(&params, &lens, &cfg.prescription)?)
}

fn center_mtf_frequencies() -> Vec<f64> {
    (0..MTF_FREQUENCIES_CPD).map(|k| k as f64 * MTF_STEP_CPD).collect()
}

/// Computes the requested metrics on a built display path.
pub fn assess(
    cfg: &DesignConfig,
    seed: Option<&str>,
    lens: Option<&Path>,
    metrics: &[Metric],
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let ar = load_ar(cfg, seed, lens)?;
    let mut written = Vec::new();
    let mut rep = AssessmentReport {
        prescription: cfg.prescription,
        eye_relief_mm: ar.params.eye_relief_mm,
        lens_thickness_mm: ar.params.lens_thickness_mm,
        extrapolated: build_eye(&cfg.prescription)?.extrapolated,
        warnings: ar.warnings.clone(),
        fov: None,
        eyebox: None,
        focus: Vec::new(),
        resolution: Vec::new(),
        center_mtf: None,
        center_spot_rms_um: None,
    };
    for m in metrics {
        match m {
            Metric::Fov => rep.fov = Some(fov(&ar)),
            Metric::EyeBox => rep.eyebox = Some(eyebox(&ar, &default_fields(&ar), &EyeBoxOptions::default())?),
            Metric::Mtf => {
                let s = ar_spot(&ar, [0.0, 0.0], &RESOLUTION_GRID, EyeFocus::Best)?;
                let curve = geometric_mtf(&s.points_mm, eye_mm_per_degree(), &center_mtf_frequencies(), 90.0)?;
                write(out.join("mtf_center.csv"), csv_bytes(|w| report::write_mtf_csv(&curve, w))?, &mut written)?;
                let svg = report::curve_svg(
                    "Center-field MTF",
                    "cycles/degree",
                    "modulation",
                    &[
                        Series {
                            name: "tangential",
                            x: &curve.frequencies_cpd,
                            y: &curve.tangential,
                        },
                        Series {
                            name: "sagittal",
                            x: &curve.frequencies_cpd,
                            y: &curve.sagittal,
                        },
                    ],
                );
                write(out.join("mtf_center.svg"), svg, &mut written)?;
                rep.center_mtf = Some(curve);
            }
            Metric::Spots => {
                let d = ar.params.display;
                let points = [
                    ("center", [0.0, 0.0]),
                    ("right", [0.25 * d.width_mm, 0.0]),
                    ("left", [-0.25 * d.width_mm, 0.0]),
                    ("top", [0.0, 0.25 * d.height_mm]),
                    ("bottom", [0.0, -0.25 * d.height_mm]),
                ];
                for (name, local) in points {
                    let s = match ar_spot(&ar, local, &RESOLUTION_GRID, EyeFocus::Best) {
                        Ok(s) => s,
                        Err(e) => {
                            rep.warnings.push(format!("spot `{name}` skipped: {e}"));
                            continue;
                        }
                    };
                    if name == "center" {
                        rep.center_spot_rms_um = Some(s.rms_um);
                    }
                    write(out.join(format!("spot_{name}.csv")), csv_bytes(|w| report::write_spot_csv(&s, w))?, &mut written)?;
                    write(out.join(format!("spot_{name}.svg")), report::spot_svg(&s, &format!("Spot, {name}")), &mut written)?;
                }
            }
            Metric::Focus => {
                let n = FOCUS_SAMPLES - 1;
                let deltas: Vec<f64> = (0..=n)
                    .map(|k| FOCUS_TRAVEL_MM[0] + (FOCUS_TRAVEL_MM[1] - FOCUS_TRAVEL_MM[0]) * k as f64 / n as f64)
                    .collect();
                let pts = focus_mapping(&ar, &deltas, Execution::Parallel)?;
                write(out.join("focus.csv"), csv_bytes(|w| report::write_focus_csv(&pts, w))?, &mut written)?;
                let x: Vec<f64> = pts.iter().map(|p| p.delta_a_mm).collect();
                let y: Vec<f64> = pts.iter().map(|p| p.corrected_d).collect();
                let svg = report::curve_svg(
                    "Varifocal mapping",
                    "display travel (mm)",
                    "image depth, corrected scene (D)",
                    &[Series {
                        name: "corrected",
                        x: &x,
                        y: &y,
                    }],
                );
                write(out.join("focus.svg"), svg, &mut written)?;
                rep.focus = pts;
            }
            Metric::ResolutionProfile => {
                let samples = resolution_profile(&ar, &PROFILE_ECCENTRICITIES_DEG, Execution::Parallel)?;
                write(
                    out.join("resolution.csv"),
                    csv_bytes(|w| report::write_resolution_csv(&samples, w))?,
                    &mut written,
                )?;
                let x: Vec<f64> = samples.iter().map(|s| s.eccentricity_deg).collect();
                let cpd: Vec<f64> = samples.iter().map(|s| s.cpd).collect();
                let nyq: Vec<f64> = samples.iter().map(|s| s.nyquist_cpd).collect();
                let svg = report::curve_svg(
                    "Angular resolution",
                    "eccentricity (deg)",
                    "cycles/degree",
                    &[
                        Series {
                            name: "resolution",
                            x: &x,
                            y: &cpd,
                        },
                        Series {
                            name: "pixel Nyquist",
                            x: &x,
                            y: &nyq,
                        },
                    ],
                );
                write(out.join("resolution.svg"), svg, &mut written)?;
                rep.resolution = samples;
            }
        }
    }
    write(out.join("report.json"), rep.to_json().map_err(|e| CliError::Config(e.to_string()))? + "\n", &mut written)?;
    Ok(written)
}

/// FOV and eye box across values of one geometry variable.
pub fn sweep(
    cfg: &DesignConfig,
    seed: Option<&str>,
    variable: TradeVariable,
    values: &[f64],
    reoptimize: bool,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let params = cfg.seed_params(seed)?;
    let mut opts = TradeOptions::default();
    if reoptimize {
        let spec = MeritSpec {
            eye_reliefs_mm: vec![params.eye_relief_mm],
            ..MeritSpec::default()
        };
        let mut o = OptimizeOptions {
            require_feasible: !cfg.optimizer.allow_infeasible,
            ..Default::default()
        };
        if let Some(n) = cfg.optimizer.max_iters {
            o.lm.max_iters = n;
        }
        if let Some(t) = cfg.optimizer.tol {
            o.lm.tol = t;
        }
        opts.reoptimize = Some((spec, o));
    }
    let curve = trade_sweep(&params, &cfg.prescription, variable, values, &opts)?;
    let mut written = Vec::new();
    write(out.join("trade.csv"), csv_bytes(|w| report::write_trade_csv(&curve, w))?, &mut written)?;
    let (fov_svg, box_svg) = report::trade_svgs(&curve);
    write(out.join("trade_fov.svg"), fov_svg, &mut written)?;
    write(out.join("trade_eyebox.svg"), box_svg, &mut written)?;
    Ok(written)
}
