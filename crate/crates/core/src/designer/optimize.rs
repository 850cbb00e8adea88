//! Staged damped least-squares optimization of the display path.

use serde::Serialize;

use super::ar_path::{build_ar_system_with_lens, ArSystem};
use super::constraints::{project_distances, validate_design, ConstraintReport};
use super::lens::PrescriptionLensDesign;
use super::lm::{self, IterationRecord, LmOptions};
use super::merit::{build_configs, evaluate, merit, MeritSpec};
use super::params::{DesignParams, Param};
use crate::eye::Prescription;
use crate::{OpticsError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub lm: LmOptions,
    /// Release the second freeform stage once the first has converged.
    pub staged: bool,
    /// Fail with [`OpticsError::InfeasibleConstraints`] when the result
    /// breaks a manufacturing constraint; otherwise the violations are only
    /// reported.
    pub require_feasible: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            lm: LmOptions::default(),
            staged: true,
            require_feasible: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeResult {
    pub params: DesignParams,
    pub seed_merit: f64,
    pub merit: f64,
    pub iterations: usize,
    pub log: Vec<IterationRecord>,
    pub constraints: ConstraintReport,
}

/// Display-local points of the merit fields, mapped through `ar`.
pub fn field_display_points(ar: &ArSystem, spec: &MeritSpec) -> Vec<[f64; 2]> {
    spec.fields_deg
        .iter()
        .filter_map(|f| ar.display_point_for_field(*f).ok())
        .collect()
}

fn validate_at(params: &DesignParams, lens: &PrescriptionLensDesign, rx: &Prescription, spec: &MeritSpec) -> Result<(ArSystem, ConstraintReport)> {
    let ar = build_ar_system_with_lens(params, lens, rx)?;
    let pts = field_display_points(&ar, spec);
    let rep = validate_design(&ar, &pts);
    Ok((ar, rep))
}

/// Optimizes the `free` parameters of `seed` for the given lens and
/// prescription.
///
/// The seed's distances are first projected onto the feasible set. With an
/// empty `free` set the seed is returned unchanged together with its
/// constraint report.
pub fn optimize(
    seed: &DesignParams,
    lens: &PrescriptionLensDesign,
    rx: &Prescription,
    free: &[Param],
    spec: &MeritSpec,
    opts: &OptimizeOptions,
) -> Result<OptimizeResult> {
    spec.validate()?;
    let seed_merit = evaluate(seed, lens, rx, spec).merit;
    let mut free: Vec<Param> = free.to_vec();
    free.dedup();
    if seed.symmetric_magnification {
        free.retain(|p| *p != Param::ThetaL);
    }
    if free.is_empty() {
        let (_, rep) = validate_at(seed, lens, rx, spec)?;
        return Ok(OptimizeResult {
            params: seed.clone(),
            seed_merit,
            merit: seed_merit,
            iterations: 0,
            log: Vec::new(),
            constraints: rep,
        });
    }

    let mut current = project_distances(seed);
    build_ar_system_with_lens(&current, lens, rx)?;

    let late = Param::freeform_stage_two();
    let stages: Vec<Vec<Param>> = if opts.staged && free.iter().any(|p| late.contains(p)) {
        let early: Vec<Param> = free.iter().copied().filter(|p| !late.contains(p)).collect();
        if early.is_empty() {
            vec![free.clone()]
        } else {
            vec![early, free.clone()]
        }
    } else {
        vec![free.clone()]
    };

    let mut log: Vec<IterationRecord> = Vec::new();
    let mut iterations = 0;
    let mut final_merit = evaluate(&current, lens, rx, spec).merit;
    for vars in &stages {
        let base = current.clone();
        let apply = |x: &[f64]| {
            let mut p = base.clone();
            for (param, v) in vars.iter().zip(x) {
                p.set(*param, *v);
            }
            p
        };
        let residuals = |x: &[f64]| {
            let p = apply(x);
            let systems = build_configs(&p, lens, rx, spec);
            merit(&systems, &p, spec).residuals
        };
        let violation = |x: &[f64]| {
            let p = apply(x);
            super::constraints::distance_excess(&p, 0.0)
                .into_iter()
                .map(|(_, v)| v)
                .fold(0.0, f64::max)
        };
        let x0: Vec<f64> = vars.iter().map(|p| base.get(*p)).collect();
        let steps: Vec<f64> = vars.iter().map(|p| p.fd_step()).collect();
        let res = lm::minimize(&residuals, &x0, &steps, &violation, &opts.lm);
        let offset = iterations;
        log.extend(res.log.iter().skip(usize::from(!log.is_empty())).map(|r| IterationRecord {
            iteration: r.iteration + offset,
            ..*r
        }));
        iterations += res.iterations;
        current = apply(&res.x);
        final_merit = res.merit;
        if !res.converged {
            return Err(OpticsError::NotConverged(format!(
                "display-path optimization hit {} iterations at merit {:.6e}",
                opts.lm.max_iters, res.merit
            )));
        }
    }

    let (_, mut rep) = validate_at(&current, lens, rx, spec)?;
    if !rep.is_feasible() {
        let repaired = project_distances(&current);
        if let Ok((_, r)) = validate_at(&repaired, lens, rx, spec) {
            if r.is_feasible() {
                final_merit = evaluate(&repaired, lens, rx, spec).merit;
                current = repaired;
            }
            rep = r;
        }
    }
    if opts.require_feasible && !rep.is_feasible() {
        let names: Vec<String> = rep.violations.iter().map(|v| format!("{} by {:.4}", v.name, v.amount)).collect();
        return Err(OpticsError::InfeasibleConstraints(names.join(", ")));
    }
    Ok(OptimizeResult {
        params: current,
        seed_merit,
        merit: final_merit,
        iterations,
        log,
        constraints: rep,
    })
}

/// Writes the iteration log as CSV.
pub fn write_log_csv<W: std::io::Write>(log: &[IterationRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "iteration,merit,damping,max_violation")?;
    for r in log {
        writeln!(w, "{},{:.9e},{:.3e},{:.6e}", r.iteration, r.merit, r.damping, r.max_violation)?;
    }
    Ok(())
}
