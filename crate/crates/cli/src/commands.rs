use std::path::PathBuf;
use std::time::Instant;

use serde_json::{json, Value};
use ssem_core::analysis::{
    self, demonstrate_rescue, gaussian_tail_sandwich, rate_bound_item1, rate_bound_item2,
    rate_bound_item3, verify_theorem1, verify_theorem2, Check, RescueOutcome, SLACK,
};
use ssem_core::em::{run_em, Trajectory};
use ssem_core::sampling::sample_dataset;
use ssem_core::{MixtureParams, ModelKind, PopulationModel, SampleConfig};

use crate::config::RunConfig;
use crate::error::{Class, CliError, CliResult};
use crate::output::{write_atomic, write_json, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Thm1,
    Thm2,
    Thm3Item1,
    Thm3Item2,
    Thm3Item3,
    Lemma3,
    Rescue,
    All,
}

impl Which {
    pub fn label(self) -> &'static str {
        match self {
            Which::Thm1 => "thm1",
            Which::Thm2 => "thm2",
            Which::Thm3Item1 => "thm3-1",
            Which::Thm3Item2 => "thm3-2",
            Which::Thm3Item3 => "thm3-3",
            Which::Lemma3 => "lemma3",
            Which::Rescue => "rescue",
            Which::All => "all",
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    /// Number of failed checks for `verify`; zero otherwise.
    pub failed_checks: usize,
}

fn numeric(e: ssem_core::Error) -> CliError {
    CliError::numeric(e)
}

fn split_counts(cfg: &RunConfig) -> (usize, usize) {
    let m = ((cfg.gamma * cfg.total_samples as f64).round() as usize).min(cfg.total_samples);
    (m, cfg.total_samples - m)
}

fn sample_config(cfg: &RunConfig) -> SampleConfig {
    let (m, n) = split_counts(cfg);
    SampleConfig {
        seed: cfg.seed,
        m,
        n,
        allocation: cfg.allocation,
    }
}

fn population_model(cfg: &RunConfig, gamma: f64) -> CliResult<PopulationModel> {
    if !(gamma < 1.0) {
        return Err(CliError::config(
            "data.gamma",
            "population operators need gamma < 1",
        ));
    }
    PopulationModel::new(cfg.kind.clone(), cfg.truth.clone(), gamma, cfg.scheme)
        .map_err(|e| CliError::config("model", e.to_string()))
}

fn summary(
    cfg: &RunConfig,
    command: &str,
    traj: &Trajectory,
    rate: Option<f64>,
    rate_reference: &str,
    started: Instant,
) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg.resolved,
        "final_theta": traj.final_params().theta(),
        "iterations": traj.iterations(),
        "converged": traj.converged,
        "empirical_rate": rate,
        "empirical_rate_reference": rate_reference,
        "wall_time_seconds": started.elapsed().as_secs_f64(),
    })
}

pub fn cmd_sample(cfg: &RunConfig) -> CliResult<Outcome> {
    let data = sample_dataset(&cfg.kind, &cfg.truth, &sample_config(cfg)).map_err(numeric)?;
    let path = write_atomic(&cfg.out_dir, "dataset.csv", data.to_csv().as_bytes())?;
    Ok(Outcome {
        outputs: vec![path],
        failed_checks: 0,
    })
}

/// Finite-sample EM on a freshly sampled dataset. The reported rate measures
/// contraction towards the run's own limit (its final iterate).
pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Outcome> {
    let started = Instant::now();
    let theta0 = cfg.require_theta0()?;
    let data = sample_dataset(&cfg.kind, &cfg.truth, &sample_config(cfg)).map_err(numeric)?;
    let traj = run_em(&cfg.kind, &data, theta0, &cfg.em, Some(&cfg.truth)).map_err(numeric)?;
    let rate = analysis::empirical_rate(&traj, traj.final_params(), 100.0 * cfg.em.tol).ok();
    let csv = write_atomic(&cfg.out_dir, "trajectory.csv", traj.to_csv().as_bytes())?;
    let sum = write_json(
        &cfg.out_dir,
        "summary.json",
        &summary(cfg, "simulate", &traj, rate, "final_iterate", started),
    )?;
    Ok(Outcome {
        outputs: vec![csv, sum],
        failed_checks: 0,
    })
}

pub fn cmd_population(cfg: &RunConfig) -> CliResult<Outcome> {
    let started = Instant::now();
    let theta0 = cfg.require_theta0()?;
    let pm = population_model(cfg, cfg.gamma)?;
    let traj = pm
        .population_em(theta0, cfg.em.max_iters, cfg.em.tol)
        .map_err(numeric)?;
    let rate = analysis::empirical_rate(&traj, &cfg.truth, 100.0 * cfg.scheme.abs_tol).ok();
    let csv = write_atomic(&cfg.out_dir, "trajectory.csv", traj.to_csv().as_bytes())?;
    let sum = write_json(
        &cfg.out_dir,
        "summary.json",
        &summary(cfg, "population", &traj, rate, "theta_star", started),
    )?;
    Ok(Outcome {
        outputs: vec![csv, sum],
        failed_checks: 0,
    })
}

const SYM2_OFFSETS: [f64; 8] = [0.2, 0.5, 0.8, 1.2, 1.6, 2.0, 2.5, 3.0];
const GMM_SHIFTS: [f64; 4] = [0.25, 0.5, 1.0, 1.5];

/// Probe grid: the configured list, or a deterministic grid around the truth.
pub fn probe_grid(cfg: &RunConfig) -> CliResult<Vec<MixtureParams>> {
    if let Some(list) = &cfg.verify.probes {
        return list.iter().map(|p| cfg.params(p.clone())).collect();
    }
    let star = cfg.truth.theta();
    if cfg.kind == ModelKind::Sym2 {
        let s = cfg.truth.sym2_scalar();
        return Ok(SYM2_OFFSETS
            .iter()
            .map(|d| MixtureParams::sym2(s + d))
            .collect());
    }
    let mut out = Vec::new();
    for d in GMM_SHIFTS {
        for alternate in [false, true] {
            let shifted: Vec<f64> = star
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    if alternate && j % 2 == 1 {
                        t - d
                    } else {
                        t + d
                    }
                })
                .collect();
            let p = cfg.truth.with_theta(shifted).map_err(numeric)?;
            if cfg.kind.validate(&p).is_ok() {
                out.push(p);
            }
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

struct Section {
    checks: Vec<Check>,
    details: Value,
}

fn verify_thm1(cfg: &RunConfig) -> CliResult<Section> {
    if !matches!(cfg.kind, ModelKind::Gmm | ModelKind::Sym2) {
        return Err(CliError::config("model.kind", "thm1 needs gmm or sym2"));
    }
    let probes = probe_grid(cfg)?;
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    for &g in &cfg.verify.gammas {
        let pm = population_model(cfg, g)?;
        let rep = verify_theorem1(&pm, &probes).map_err(numeric)?;
        for r in &rep.records {
            let skipped = r.note.is_some() && r.bound_satisfied;
            if skipped {
                continue;
            }
            checks.push(Check {
                name: format!("thm1 gamma={g} k={}", r.component + 1),
                probe: r.probe.clone(),
                lhs: opt(r.ratio_empirical),
                rhs: opt(r.beta_theory) + SLACK,
                pass: r.bound_satisfied,
            });
        }
        reports.push(rep);
    }
    Ok(Section {
        checks,
        details: json!(reports),
    })
}

fn verify_thm2(cfg: &RunConfig) -> CliResult<Section> {
    if !matches!(cfg.kind, ModelKind::ExpFam(_)) {
        return Err(CliError::config("model.kind", "thm2 needs expfam"));
    }
    let pm = population_model(cfg, cfg.gamma)?;
    let rep = verify_theorem2(&pm, &cfg.verify.epsilons).map_err(numeric)?;
    let mut checks = Vec::new();
    for c in &rep.components {
        let gaps: Vec<f64> = c.rows.iter().filter_map(|r| r.gap).collect();
        let worst_increase = gaps.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
        checks.push(Check {
            name: format!("thm2 k={} gap_monotone", c.component + 1),
            probe: rep.epsilons.clone(),
            lhs: worst_increase,
            rhs: 1e-12,
            pass: c.gap_monotone,
        });
        let slope_dev = if c.taylor_exact {
            0.0
        } else {
            c.taylor_slope.map_or(f64::NAN, |s| (s - 2.0).abs())
        };
        checks.push(Check {
            name: format!("thm2 k={} taylor_slope", c.component + 1),
            probe: rep.epsilons.clone(),
            lhs: slope_dev,
            rhs: 0.3,
            pass: slope_dev <= 0.3,
        });
        for r in c.rows.iter().filter(|r| r.note.is_some()) {
            checks.push(Check {
                name: format!("thm2 k={} probe_evaluated", c.component + 1),
                probe: vec![r.epsilon],
                lhs: f64::NAN,
                rhs: f64::NAN,
                pass: false,
            });
        }
    }
    Ok(Section {
        checks,
        details: json!(rep),
    })
}

fn item_truths(cfg: &RunConfig) -> CliResult<Vec<f64>> {
    if let Some(list) = &cfg.verify.theta_stars {
        return Ok(list.clone());
    }
    if cfg.kind == ModelKind::Sym2 {
        return Ok(vec![cfg.truth.sym2_scalar()]);
    }
    Err(CliError::config(
        "verify.theta_stars",
        "theorem 3 items need sym2 or an explicit list of truths",
    ))
}

fn prefixed(prefix: &str, checks: Vec<Check>) -> Vec<Check> {
    checks
        .into_iter()
        .map(|mut c| {
            c.name = format!("{prefix} {}", c.name);
            c
        })
        .collect()
}

fn verify_item(cfg: &RunConfig, item: u8) -> CliResult<Section> {
    if !(cfg.gamma < 1.0) {
        return Err(CliError::config(
            "data.gamma",
            "population bounds need gamma < 1",
        ));
    }
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    for star in item_truths(cfg)? {
        if !(star > 0.0) {
            return Err(CliError::config(
                "verify.theta_stars",
                "truths must be positive",
            ));
        }
        match item {
            1 => {
                let r = rate_bound_item1(star, cfg.gamma, cfg.scheme).map_err(numeric)?;
                checks.extend(prefixed("thm3-1", r.checks.clone()));
                reports.push(r);
            }
            2 => {
                let r = rate_bound_item2(star, cfg.gamma, cfg.scheme).map_err(numeric)?;
                if r.applicable {
                    checks.extend(prefixed("thm3-2", r.checks.clone()));
                }
                reports.push(r);
            }
            _ => {
                for &d in &cfg.verify.offsets {
                    let r =
                        rate_bound_item3(star, cfg.gamma, star + d, cfg.scheme).map_err(numeric)?;
                    if r.applicable {
                        checks.extend(prefixed("thm3-3", r.checks.clone()));
                    }
                    reports.push(r);
                }
            }
        }
    }
    Ok(Section {
        checks,
        details: json!(reports),
    })
}

fn verify_lemma3(cfg: &RunConfig) -> CliResult<Section> {
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for &t in &cfg.verify.t_grid {
        let s = gaussian_tail_sandwich(t)
            .map_err(|e| CliError::config("verify.t_grid", e.to_string()))?;
        checks.push(Check {
            name: "lemma3 upper".into(),
            probe: vec![t],
            lhs: s.phi_tail,
            rhs: s.upper,
            pass: s.phi_tail < s.upper,
        });
        if t >= 1.0 {
            checks.push(Check {
                name: "lemma3 lower".into(),
                probe: vec![t],
                lhs: s.lower,
                rhs: s.phi_tail,
                pass: s.lower < s.phi_tail,
            });
        }
        rows.push(s);
    }
    Ok(Section {
        checks,
        details: json!(rows),
    })
}

fn verify_rescue(cfg: &RunConfig) -> CliResult<Section> {
    let pm = population_model(cfg, 0.0)?;
    let probes = probe_grid(cfg)?;
    let rep = demonstrate_rescue(&pm, &probes).map_err(numeric)?;
    let mut checks = Vec::new();
    match &rep.outcome {
        RescueOutcome::NoRescueNeeded { kappa } => checks.push(Check {
            name: "rescue kappa_below_one".into(),
            probe: rep.worst_probe.clone(),
            lhs: *kappa,
            rhs: 1.0,
            pass: *kappa < 1.0,
        }),
        RescueOutcome::Rescued {
            kappa,
            gamma_min,
            above,
            ..
        } => {
            let w = cfg.truth.weights()[rep.worst_component];
            let beta = analysis::beta_theoretical(rep.c_theta, w, *gamma_min).map_err(numeric)?;
            checks.push(Check {
                name: "rescue threshold_identity".into(),
                probe: rep.worst_probe.clone(),
                lhs: (beta * kappa - 1.0).abs(),
                rhs: 1e-9,
                pass: (beta * kappa - 1.0).abs() <= 1e-9,
            });
            checks.push(Check {
                name: "rescue first_step_above_threshold".into(),
                probe: rep.worst_probe.clone(),
                lhs: above.step_ratios.first().copied().unwrap_or(f64::NAN),
                rhs: above.predicted_rate + SLACK,
                pass: above.first_step_within_bound,
            });
        }
    }
    Ok(Section {
        checks,
        details: json!(rep),
    })
}

fn run_section(cfg: &RunConfig, which: Which) -> CliResult<Section> {
    match which {
        Which::Thm1 => verify_thm1(cfg),
        Which::Thm2 => verify_thm2(cfg),
        Which::Thm3Item1 => verify_item(cfg, 1),
        Which::Thm3Item2 => verify_item(cfg, 2),
        Which::Thm3Item3 => verify_item(cfg, 3),
        Which::Lemma3 => verify_lemma3(cfg),
        Which::Rescue => verify_rescue(cfg),
        Which::All => unreachable!("expanded by the caller"),
    }
}

fn applicable_sections(cfg: &RunConfig) -> Vec<Which> {
    let mut out = Vec::new();
    match cfg.kind {
        ModelKind::Gmm => out.push(Which::Thm1),
        ModelKind::Sym2 => out.push(Which::Thm1),
        ModelKind::ExpFam(_) => out.push(Which::Thm2),
    }
    if cfg.kind == ModelKind::Sym2 || cfg.verify.theta_stars.is_some() {
        out.extend([Which::Thm3Item1, Which::Thm3Item2, Which::Thm3Item3]);
    }
    out.extend([Which::Lemma3, Which::Rescue]);
    out
}

pub fn cmd_verify(cfg: &RunConfig, which: Which) -> CliResult<Outcome> {
    let sections = if which == Which::All {
        applicable_sections(cfg)
    } else {
        vec![which]
    };
    let mut checks = Vec::new();
    let mut details = serde_json::Map::new();
    for w in sections {
        let s = run_section(cfg, w)?;
        checks.extend(s.checks);
        details.insert(w.label().to_string(), s.details);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": format!("verify {}", which.label()),
        "config": cfg.resolved,
        "checks": checks,
        "pass_all": failed == 0,
        "details": details,
    });
    let path = write_json(
        &cfg.out_dir,
        &format!("verify_{}.json", which.label()),
        &doc,
    )?;
    Ok(Outcome {
        outputs: vec![path],
        failed_checks: failed,
    })
}

/// Converts a verify outcome with failures into the exit-4 error.
pub fn theorem_gate(outcome: &Outcome, total_label: &str) -> CliResult<()> {
    if outcome.failed_checks == 0 {
        return Ok(());
    }
    Err(CliError {
        class: Class::TheoremViolation,
        field: None,
        message: format!("{} check(s) failed in {total_label}", outcome.failed_checks),
    })
}
