//! CSV, JSON and SVG output for assessments and sweeps.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::Serialize;

use crate::analysis::{EyeBox, FocusPoint, Fov, MtfCurve, ResolutionSample, SpotDiagram, TradeCurve};
use crate::eye::Prescription;

/// Everything an assessment run produces, serialized as the JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct AssessmentReport {
    pub prescription: Prescription,
    pub eye_relief_mm: f64,
    pub lens_thickness_mm: f64,
    /// Set when the eye model extrapolates outside its myopic data.
    pub extrapolated: bool,
    pub warnings: Vec<String>,
    pub fov: Option<Fov>,
    pub eyebox: Option<EyeBox>,
    pub focus: Vec<FocusPoint>,
    pub resolution: Vec<ResolutionSample>,
    pub center_mtf: Option<MtfCurve>,
    pub center_spot_rms_um: Option<f64>,
}

impl AssessmentReport {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

fn row<W: Write>(w: &mut W, cells: &[String]) -> io::Result<()> {
    writeln!(w, "{}", cells.join(","))
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

/// Display travel against image depth, corrected scene first.
pub fn write_focus_csv<W: Write>(points: &[FocusPoint], mut w: W) -> io::Result<()> {
    row(&mut w, &["delta_a_mm".into(), "corrected_d".into(), "real_d".into()])?;
    for p in points {
        row(&mut w, &[num(p.delta_a_mm), num(p.corrected_d), num(p.real_d)])?;
    }
    Ok(())
}

pub fn write_resolution_csv<W: Write>(samples: &[ResolutionSample], mut w: W) -> io::Result<()> {
    row(
        &mut w,
        &["eccentricity_deg".into(), "cpd".into(), "mtf50_cpd".into(), "nyquist_cpd".into()],
    )?;
    for s in samples {
        row(&mut w, &[num(s.eccentricity_deg), num(s.cpd), num(s.mtf50_cpd), num(s.nyquist_cpd)])?;
    }
    Ok(())
}

pub fn write_trade_csv<W: Write>(curve: &TradeCurve, mut w: W) -> io::Result<()> {
    row(
        &mut w,
        &[
            curve.variable.to_string(),
            "fov_h_deg".into(),
            "fov_v_deg".into(),
            "eyebox_w_mm".into(),
            "eyebox_h_mm".into(),
        ],
    )?;
    for k in 0..curve.values.len() {
        row(
            &mut w,
            &[
                num(curve.values[k]),
                num(curve.fov_h_deg[k]),
                num(curve.fov_v_deg[k]),
                num(curve.eyebox_w_mm[k]),
                num(curve.eyebox_h_mm[k]),
            ],
        )?;
    }
    Ok(())
}

pub fn write_mtf_csv<W: Write>(curve: &MtfCurve, mut w: W) -> io::Result<()> {
    row(&mut w, &["frequency_cpd".into(), "tangential".into(), "sagittal".into()])?;
    for k in 0..curve.frequencies_cpd.len() {
        row(&mut w, &[num(curve.frequencies_cpd[k]), num(curve.tangential[k]), num(curve.sagittal[k])])?;
    }
    Ok(())
}

pub fn write_spot_csv<W: Write>(spot: &SpotDiagram, mut w: W) -> io::Result<()> {
    row(&mut w, &["x_mm".into(), "y_mm".into()])?;
    for p in &spot.points_mm {
        row(&mut w, &[format!("{:.9}", p[0]), format!("{:.9}", p[1])])?;
    }
    Ok(())
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Linear map from data range to pixels, with a small pad so points on the
/// range limits stay inside the frame.
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = values
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 1e-12 { 0.05 * lo.abs() } else { 1.0 };
            (lo, hi) = (lo - pad, hi + pad);
        }
        let pad = 0.05 * (hi - lo);
        Self {
            lo: lo - pad,
            hi: hi + pad,
            px_lo,
            px_hi,
        }
    }

    fn px(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str, xa: &Axis, ya: &Axis) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = xa.lo + t * (xa.hi - xa.lo);
        let yv = ya.lo + t * (ya.hi - ya.lo);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            xa.px(xv),
            HEIGHT - MARGIN + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            ya.px(yv) + 4.0,
            tick(yv)
        );
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Scatter plot of a spot diagram in micrometres about its centroid.
pub fn spot_svg(spot: &SpotDiagram, title: &str) -> String {
    let c = spot.centroid_mm;
    let um: Vec<[f64; 2]> = spot
        .points_mm
        .iter()
        .map(|p| [(p[0] - c[0]) * 1e3, (p[1] - c[1]) * 1e3])
        .collect();
    let half = um.iter().map(|p| p[0].abs().max(p[1].abs())).fold(1e-3, f64::max);
    let side = HEIGHT - 2.0 * MARGIN;
    let x0 = (WIDTH - side) / 2.0;
    let xa = Axis::new([-half, half].into_iter(), x0, x0 + side);
    let ya = Axis::new([-half, half].into_iter(), HEIGHT - MARGIN, MARGIN);
    let mut out = String::new();
    frame(&mut out, &format!("{title} (RMS {:.2} µm)", spot.rms_um), "x (µm)", "y (µm)", &xa, &ya);
    for p in &um {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{}"/>"#,
            xa.px(p[0]),
            ya.px(p[1]),
            PALETTE[0]
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One named polyline of a curve plot.
#[derive(Debug, Clone)]
pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// Line plot with markers and a legend.
pub fn curve_svg(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let xa = Axis::new(series.iter().flat_map(|s| s.x.iter().copied()), MARGIN, WIDTH - MARGIN);
    let ya = Axis::new(series.iter().flat_map(|s| s.y.iter().copied()), HEIGHT - MARGIN, MARGIN);
    let mut out = String::new();
    frame(&mut out, title, x_label, y_label, &xa, &ya);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .x
            .iter()
            .zip(s.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", xa.px(*x), ya.px(*y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted as x,y");
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
        }
        let ly = MARGIN + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            WIDTH - MARGIN - 110.0,
            WIDTH - MARGIN - 92.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            WIDTH - MARGIN - 86.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// FOV and eye box panels of a trade sweep.
pub fn trade_svgs(curve: &TradeCurve) -> (String, String) {
    let x = curve.variable.to_string();
    let fov = curve_svg(
        &format!("FOV vs {x}"),
        &x,
        "degrees",
        &[
            Series {
                name: "horizontal",
                x: &curve.values,
                y: &curve.fov_h_deg,
            },
            Series {
                name: "vertical",
                x: &curve.values,
                y: &curve.fov_v_deg,
            },
        ],
    );
    let eyebox = curve_svg(
        &format!("Eye box vs {x}"),
        &x,
        "mm",
        &[
            Series {
                name: "width",
                x: &curve.values,
                y: &curve.eyebox_w_mm,
            },
            Series {
                name: "height",
                x: &curve.values,
                y: &curve.eyebox_h_mm,
            },
        ],
    );
    (fov, eyebox)
}
