use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prescription_ar::analysis::trade::geometry_coupled_params;
use prescription_ar::designer::{DesignParams, Param, PrescriptionLensDesign};
use tempfile::TempDir;

fn rxar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rxar")).args(args).output().expect("run rxar")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn frozen_prototype_seed_is_emitted_unchanged() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "c.json", r#"{"prescription": {"sph": -1}, "optimizer": {"frozen": ["all"]}}"#);
    let out = dir.path().join("out");
    let o = rxar(&["design-ar", "--config", s(&cfg), "--seed", "prototype", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("params.json")).unwrap();
    let p: DesignParams = serde_json::from_str(&text).unwrap();
    assert_eq!(p, DesignParams::prototype());
    assert_eq!(serde_json::to_string_pretty(&p).unwrap() + "\n", text);
    let log = fs::read_to_string(out.join("optimize_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn emitted_params_reseed_identically() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "c.json", r#"{"prescription": {"sph": -1}, "optimizer": {"frozen": ["all"]}}"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&rxar(&["design-ar", "--config", s(&cfg), "--out", s(&a)])), 0);
    let seed = a.join("params.json");
    assert_eq!(code(&rxar(&["design-ar", "--config", s(&cfg), "--seed", s(&seed), "--out", s(&b)])), 0);
    assert_eq!(fs::read(a.join("params.json")).unwrap(), fs::read(b.join("params.json")).unwrap());
}

/// Config that frees only the display gap at one eye relief.
fn gap_only_config(dir: &Path, allow_infeasible: bool) -> PathBuf {
    let frozen: Vec<String> = geometry_coupled_params()
        .into_iter()
        .filter(|p| *p != Param::A)
        .map(|p| format!("\"{p}\""))
        .collect();
    let body = format!(
        r#"{{"prescription": {{"sph": -1}}, "eye_relief_mm": [20],
            "optimizer": {{"max_iters": 50, "frozen": [{}], "allow_infeasible": {allow_infeasible}}}}}"#,
        frozen.join(", ")
    );
    config(dir, "gap.json", &body)
}

#[test]
fn design_ar_is_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = gap_only_config(dir.path(), true);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (threads, out) in [("1", &a), ("2", &b)] {
        let o = rxar(&["--threads", threads, "design-ar", "--config", s(&cfg), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["params.json", "optimize_log.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(fs::read_to_string(a.join("optimize_log.csv")).unwrap().lines().count() > 1);
}

#[test]
fn infeasible_design_exits_two() {
    let dir = TempDir::new().unwrap();
    // the display gap alone cannot thicken the waveguide edge
    let cfg = gap_only_config(dir.path(), false);
    let o = rxar(&["design-ar", "--config", s(&cfg), "--out", s(dir.path())]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(code(&o), 2, "{err}");
    assert!(err.contains("no feasible design"), "{err}");
}

#[test]
fn unconverged_lens_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "c.json", r#"{"prescription": {"sph": -1}, "optimizer": {"max_iters": 1}}"#);
    let o = rxar(&["design-lens", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("did not converge"));
}

#[test]
fn config_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let good = config(dir.path(), "good.json", r#"{"prescription": {"sph": -1}}"#);
    let cases = [
        r#"{"prescription": {"sph": -1}, "lens": {"thickness_mm": 5, "colour": "red"}}"#,
        r#"{"prescription": {"sph": -1, "cyl": 1}}"#,
        r#"{"prescription": {"sph": -1}, "lens": {"material": "unobtainium"}}"#,
        r#"{"prescription": {"sph": -1}, "seed": "missing.json"}"#,
        r#"not json"#,
    ];
    for (k, body) in cases.iter().enumerate() {
        let cfg = config(dir.path(), &format!("bad{k}.json"), body);
        let o = rxar(&["design-ar", "--config", s(&cfg), "--out", s(dir.path())]);
        assert_eq!(code(&o), 1, "case {k}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = s(dir.path());
    for args in [
        vec!["assess", "--config", s(&good), "--out", out, "--metrics", ""],
        vec!["assess", "--config", s(&good), "--out", out],
        vec!["assess", "--config", s(&good), "--out", out, "--metrics", "fov,glare"],
        vec!["sweep", "--config", s(&good), "--out", out, "--variable", "r_cy", "--values", "1,2"],
        vec!["sweep", "--config", s(&good), "--out", out, "--variable", "d_e", "--values", "20,12"],
        vec!["assess", "--config", "/nonexistent/c.json", "--metrics", "fov"],
        vec!["--threads", "0", "assess", "--config", s(&good), "--metrics", "fov"],
        vec!["frobnicate"],
    ] {
        assert_eq!(code(&rxar(&args)), 1, "{args:?}");
    }
}

#[test]
fn assess_is_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "c.json", r#"{"prescription": {"sph": -1}}"#);
    let run = |threads: &str, out: &Path| {
        let o = rxar(&["--threads", threads, "assess", "--config", s(&cfg), "--out", s(out), "--metrics", "fov,mtf,focus"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run("1", &a);
    run("3", &b);
    for f in ["focus.csv", "mtf_center.csv", "report.json", "focus.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    let fov = &report["fov"];
    assert!(fov["horizontal_deg"].as_f64().unwrap() > fov["vertical_deg"].as_f64().unwrap());
    let again: serde_json::Value = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(again, report);
    assert_eq!(report["focus"].as_array().unwrap().len(), 23);
}

#[test]
fn plano_lens_has_near_zero_power() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "c.json", r#"{"prescription": {"sph": 0}, "eye_relief_mm": [12, 20]}"#);
    let o = rxar(&["design-lens", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("lens.json")).unwrap();
    let lens: PrescriptionLensDesign = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&lens).unwrap() + "\n", text);
    let (px, py) = lens.back_vertex_powers();
    assert!(px.abs() < 0.25 && py.abs() < 0.25, "{px} {py}");
    let spots = fs::read_to_string(dir.path().join("through_focus.csv")).unwrap();
    // header, naked eye, then one block per eye relief
    assert_eq!(spots.lines().count(), 1 + 9 * 3);
    assert!(spots.lines().skip(1).take(9).all(|l| l.starts_with("naked,,")));
}

#[test]
fn sweep_writes_curve_and_plots() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "c.json", r#"{"prescription": {"sph": -1}}"#);
    let o = rxar(&["sweep", "--config", s(&cfg), "--out", s(dir.path()), "--variable", "d_e", "--values", "20"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("trade.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "d_e_mm,fov_h_deg,fov_v_deg,eyebox_w_mm,eyebox_h_mm");
    assert!(lines.next().unwrap().starts_with("20.000000,"));
    for f in ["trade_fov.svg", "trade_eyebox.svg"] {
        assert!(fs::read_to_string(dir.path().join(f)).unwrap().starts_with("<svg"));
    }
}
