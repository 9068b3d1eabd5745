//! Commands behind the `imitate` binary: run, verify, equilibria and sweep.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{check_order_condition, check_sign_condition, vector_field, ImitationRule, DEFAULT_SIGN_TOL};
use crate::equilibria::{border_potential_check, equilibrium_set, is_boundary_critical, EquilibriumLabel, EquilibriumSet, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::game::{dot, Game};
use crate::potential::{verify_potential_identity, Potential};
use crate::scenario::{ConvergenceExpectation, Initial, OutputKind, Scenario};
use crate::simplex::{sample_dirichlet, sample_rng, Configuration};
use crate::simulate::{
    basin_probe, detect_convergence, gronwall_positivity_check, integrate, monitor_lyapunov, BasinEntry,
    ConvergenceReport, IntegratorConfig, Method, Trajectory,
};

/// Samples used by the sampling-based checks.
pub const CHECK_SAMPLES: usize = 1000;

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 4,
        e if e.is_integrator_error() => 3,
        _ => 2,
    }
}

/// Command-line overrides applied on top of a scenario.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub fixed: Option<bool>,
    pub t_end: Option<f64>,
    /// Relative tolerance of the adaptive integrator (absolute tolerance is a hundredth of it).
    pub tol: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, scenario: Scenario) -> Result<Scenario> {
        let mut s = match self.seed {
            Some(seed) => scenario.reseeded(seed)?,
            None => scenario,
        };
        let cfg = &mut s.integrator;
        match self.fixed {
            Some(true) if !matches!(cfg.method, Method::Rk4Fixed { .. }) => {
                cfg.method = Method::Rk4Fixed { step: 0.01 };
            }
            Some(false) if !matches!(cfg.method, Method::Rk45Adaptive { .. }) => {
                cfg.method = Method::default();
            }
            _ => {}
        }
        if let Some(t) = self.t_end {
            cfg.t_end = t;
        }
        if let Some(tol) = self.tol {
            match &mut cfg.method {
                Method::Rk45Adaptive { rtol, atol } => {
                    *rtol = tol;
                    *atol = tol / 100.0;
                }
                Method::Rk4Fixed { .. } => {
                    return Err(Error::validation("--tol", "only applies to the adaptive integrator"));
                }
            }
        }
        cfg.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub initial: Configuration,
    pub final_state: Configuration,
    pub t_final: f64,
    /// "converged" or "undetermined".
    pub status: &'static str,
    pub converged: bool,
    pub t_converged: Option<f64>,
    pub limit_point: Option<Configuration>,
    pub limit_label: Option<EquilibriumLabel>,
    pub final_distance: Option<f64>,
    pub plateau: bool,
    pub min_phi_dot: Option<f64>,
    pub max_projection_correction: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BasinCount {
    pub limit: Option<Configuration>,
    pub label: Option<EquilibriumLabel>,
    pub starts: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario_id: String,
    pub seed: u64,
    pub game_digest: String,
    pub rule: String,
    pub integrator: IntegratorConfig,
    pub equilibria: usize,
    pub runs: Vec<RunRecord>,
    pub basins: Option<Vec<BasinCount>>,
    pub output_dir: PathBuf,
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

/// Trajectory as CSV: `t,x_1,…,x_m,phi,phi_dot`.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let m = traj.initial().dim();
    let mut out = String::from("t");
    for i in 1..=m {
        write!(out, ",x_{i}").unwrap();
    }
    out.push_str(",phi,phi_dot\n");
    for (k, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        out.push_str(&num(*t));
        for w in x.weights() {
            out.push(',');
            out.push_str(&num(*w));
        }
        let phi = traj.phi.as_ref().map_or(f64::NAN, |p| p[k]);
        let dot = traj.phi_dot.as_ref().map_or(f64::NAN, |p| p[k]);
        write!(out, ",{},{}", num(phi), num(dot)).unwrap();
        out.push('\n');
    }
    out
}

/// Equilibrium table as CSV: `x_1,…,x_m,support,label,stability,phi`.
pub fn equilibria_csv(game: &Game, set: &EquilibriumSet) -> String {
    let m = game.num_actions();
    let mut out = String::new();
    for i in 1..=m {
        write!(out, "x_{i},").unwrap();
    }
    out.push_str("support,label,stability,phi\n");
    for e in &set.items {
        for w in e.point.weights() {
            write!(out, "{},", num(*w)).unwrap();
        }
        let phi = game
            .potential()
            .map_or(f64::NAN, |p| p.value_at(e.point.weights()));
        let hint = e.stability_hint.map_or(String::new(), |h| h.to_string());
        writeln!(out, "\"{}\",{},{},{}", e.support, e.label, hint, num(phi)).unwrap();
    }
    out
}

/// Human-readable equilibrium table.
pub fn equilibria_text(game: &Game, set: &EquilibriumSet) -> String {
    let mut out = format!("{:<36} {:<10} {:<18} {:<17} {}\n", "point", "support", "label", "stability", "potential");
    for e in &set.items {
        let phi = game
            .potential()
            .map_or("-".to_string(), |p| format!("{:.10}", p.value_at(e.point.weights())));
        let hint = e.stability_hint.map_or("-".to_string(), |h| h.to_string());
        writeln!(
            out,
            "{:<36} {:<10} {:<18} {:<17} {}",
            e.point.to_string(),
            e.support.to_string(),
            e.label.to_string(),
            hint,
            phi
        )
        .unwrap();
    }
    for s in &set.degenerate_supports {
        writeln!(out, "continuum of critical points on support {s} (not sampled)").unwrap();
    }
    out
}

fn basin_csv(game: &Game, entries: &[BasinEntry], set: &EquilibriumSet) -> String {
    let m = game.num_actions();
    let mut out = String::new();
    for i in 1..=m {
        write!(out, "x0_{i},").unwrap();
    }
    out.push_str("limit_index,label");
    for i in 1..=m {
        write!(out, ",x_end_{i}").unwrap();
    }
    out.push('\n');
    for e in entries {
        for w in e.start.weights() {
            write!(out, "{},", num(*w)).unwrap();
        }
        match e.limit {
            Some(k) => write!(out, "{k},{}", set.items[k].label).unwrap(),
            None => out.push_str(",undetermined"),
        }
        for w in e.final_state.weights() {
            write!(out, ",{}", num(*w)).unwrap();
        }
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn record(game: &Game, traj: &Trajectory, eqset: Option<&EquilibriumSet>, cfg: &IntegratorConfig) -> Result<RunRecord> {
    let conv: Option<ConvergenceReport> = match eqset {
        Some(set) => {
            let support = traj.initial().support(0.0);
            match detect_convergence(game, traj, set, &support, cfg.convergence_tol, cfg.convergence_window) {
                Ok(rep) => Some(rep),
                Err(Error::EmptySet) => None,
                Err(e) => return Err(e),
            }
        }
        None => None,
    };
    let converged = conv.as_ref().is_some_and(|c| c.converged);
    Ok(RunRecord {
        initial: traj.initial().clone(),
        final_state: traj.last().clone(),
        t_final: traj.final_time(),
        status: if converged { "converged" } else { "undetermined" },
        converged,
        t_converged: conv.as_ref().and_then(|c| c.t_converged),
        limit_point: conv.as_ref().and_then(|c| c.limit_point.clone()),
        limit_label: conv.as_ref().and_then(|c| c.limit_label),
        final_distance: conv.as_ref().map(|c| c.final_distance),
        plateau: conv.as_ref().is_some_and(|c| c.plateau),
        min_phi_dot: traj
            .phi_dot
            .as_ref()
            .map(|d| d.iter().copied().fold(f64::INFINITY, f64::min)),
        max_projection_correction: traj.max_projection_correction,
        accepted_steps: traj.accepted_steps,
        rejected_steps: traj.rejected_steps,
    })
}

fn scenario_equilibria(game: &Game) -> Option<EquilibriumSet> {
    equilibrium_set(game, DEFAULT_TOL).ok()
}

/// Runs a scenario and writes its outputs under `out_root/<id>/<seed>/`.
pub fn run_scenario(s: &Scenario, out_root: &Path) -> Result<RunSummary> {
    let dir = out_root.join(&s.id).join(s.seed.to_string());
    fs::create_dir_all(&dir)?;
    let eqset = scenario_equilibria(&s.game);
    let mut runs = Vec::new();
    let mut basins = None;
    match &s.initial {
        Initial::Points(points) => {
            let trajs: Vec<Trajectory> = points
                .par_iter()
                .map(|x0| integrate(&s.game, &s.rule, x0, &s.integrator))
                .collect::<Result<_>>()?;
            for (k, traj) in trajs.iter().enumerate() {
                if s.wants(OutputKind::TrajectoryCsv) {
                    let name = if trajs.len() == 1 {
                        "trajectory.csv".to_string()
                    } else {
                        format!("trajectory_{k}.csv")
                    };
                    write_file(&dir.join(name), &trajectory_csv(traj))?;
                }
                runs.push(record(&s.game, traj, eqset.as_ref(), &s.integrator)?);
            }
        }
        Initial::Grid(n) => {
            let set = eqset
                .as_ref()
                .ok_or_else(|| Error::Unsupported("basin maps need an equilibrium set".into()))?;
            let entries = basin_probe(&s.game, &s.rule, set, *n, &s.integrator)?;
            if s.wants(OutputKind::BasinMap) {
                write_file(&dir.join("basin.csv"), &basin_csv(&s.game, &entries, set))?;
            }
            basins = Some(count_basins(&entries, set));
        }
    }
    if s.wants(OutputKind::BasinMap) && basins.is_none() && s.game.num_actions() <= 3 {
        if let Some(set) = &eqset {
            let entries = basin_probe(&s.game, &s.rule, set, 21, &s.integrator)?;
            write_file(&dir.join("basin.csv"), &basin_csv(&s.game, &entries, set))?;
            basins = Some(count_basins(&entries, set));
        }
    }
    if let (true, Some(set)) = (s.wants(OutputKind::EquilibriaTable), &eqset) {
        write_file(&dir.join("equilibria.csv"), &equilibria_csv(&s.game, set))?;
    }
    let summary = RunSummary {
        scenario_id: s.id.clone(),
        seed: s.seed,
        game_digest: s.game.digest(),
        rule: s.rule.description().to_string(),
        integrator: s.integrator,
        equilibria: eqset.as_ref().map_or(0, |e| e.len()),
        runs,
        basins,
        output_dir: dir.clone(),
    };
    if s.wants(OutputKind::Summary) {
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_file(&dir.join("summary.json"), &(json + "\n"))?;
    }
    Ok(summary)
}

fn count_basins(entries: &[BasinEntry], set: &EquilibriumSet) -> Vec<BasinCount> {
    let mut counts: Vec<BasinCount> = set
        .items
        .iter()
        .map(|e| BasinCount {
            limit: Some(e.point.clone()),
            label: Some(e.label),
            starts: 0,
        })
        .collect();
    counts.push(BasinCount {
        limit: None,
        label: None,
        starts: 0,
    });
    let last = counts.len() - 1;
    for e in entries {
        counts[e.limit.unwrap_or(last)].starts += 1;
    }
    counts.retain(|c| c.starts > 0);
    counts
}

/// Runs a basin probe on a grid with `grid` points per edge.
pub fn sweep_scenario(s: &Scenario, grid: usize, out_root: &Path) -> Result<Vec<BasinCount>> {
    let set = equilibrium_set(&s.game, DEFAULT_TOL)?;
    let entries = basin_probe(&s.game, &s.rule, &set, grid, &s.integrator)?;
    let dir = out_root.join(&s.id).join(s.seed.to_string());
    fs::create_dir_all(&dir)?;
    write_file(&dir.join("basin.csv"), &basin_csv(&s.game, &entries, &set))?;
    Ok(count_basins(&entries, &set))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Outcome,
    pub expected: Outcome,
    /// Outcome agrees with the expectation (skipped checks always agree).
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub scenario_id: String,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub ok: bool,
}

impl VerifyReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Checks {
    list: Vec<CheckResult>,
}

impl Checks {
    fn push(&mut self, name: &'static str, passed: Option<bool>, expect_pass: bool, detail: String) {
        let outcome = match passed {
            Some(true) => Outcome::Pass,
            Some(false) => Outcome::Fail,
            None => Outcome::Skipped,
        };
        let expected = if expect_pass { Outcome::Pass } else { Outcome::Fail };
        self.list.push(CheckResult {
            name,
            outcome,
            expected,
            ok: outcome == Outcome::Skipped || outcome == expected,
            detail,
        });
    }
}

fn identity_candidate(game: &Game) -> Option<Potential> {
    game.potential()
        .cloned()
        .or_else(|| game.matrix().and_then(|r| Potential::symmetric_part(r).ok()))
}

/// Largest entry-wise gap between the replicator field and `xᵢ(rᵢ − r̄)`.
pub fn replicator_gap(game: &Game, samples: usize, seed: u64) -> f64 {
    let m = game.num_actions();
    let rule = ImitationRule::replicator();
    (0..samples as u64)
        .into_par_iter()
        .map(|k| {
            let x = sample_dirichlet(m, &mut sample_rng(seed, k));
            let v = vector_field(game, &rule, &x).expect("dimensions agree");
            let r = game.rewards_at(x.weights());
            let mean = dot(x.weights(), &r);
            x.weights()
                .iter()
                .zip(&r)
                .zip(&v)
                .map(|((xi, ri), vi)| (vi - xi * (ri - mean)).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Runs the executable property checks on one scenario.
pub fn verify_scenario(s: &Scenario) -> Result<VerifyReport> {
    let game = &s.game;
    let rule = &s.rule;
    let exp = &s.expect;
    let seed = s.seed;
    let mut checks = Checks { list: Vec::new() };

    let sign = check_sign_condition(game, rule, CHECK_SAMPLES, DEFAULT_SIGN_TOL, seed)?;
    let detail = match &sign.witness {
        Some(w) => format!("violated at {} for ({}, {}): r_j - r_i = {:e}, f_ij - f_ji = {:e}", w.x, w.i + 1, w.j + 1, w.reward_gap, w.rate_gap),
        None => format!("{CHECK_SAMPLES} samples"),
    };
    checks.push("sign", Some(sign.holds), exp.sign.unwrap_or(true), detail);

    let order = check_order_condition(game, rule, CHECK_SAMPLES, DEFAULT_SIGN_TOL, seed)?;
    let (passed, detail) = match &order.witness {
        Some(w) => {
            let confirmed = w.reverify(game, rule, DEFAULT_SIGN_TOL)?;
            (
                // an unconfirmed witness is reported as a failed search, not a violation
                !confirmed,
                format!(
                    "witness at {} with (i, j, k) = ({}, {}, {}), confirmed by direct evaluation: {confirmed}",
                    w.x,
                    w.i + 1,
                    w.j + 1,
                    w.k + 1
                ),
            )
        }
        None => (true, format!("{CHECK_SAMPLES} samples plus local search")),
    };
    checks.push("order", Some(passed), exp.order.unwrap_or(true), detail);

    match identity_candidate(game) {
        Some(p) => {
            let rep = verify_potential_identity(game, &p, CHECK_SAMPLES, DEFAULT_TOL, seed)?;
            let detail = format!("{} candidate, max violation {:e}", p.form(), rep.max_violation);
            checks.push("potential_identity", Some(rep.holds), exp.potential_identity.unwrap_or(true), detail);
        }
        None => checks.push("potential_identity", None, exp.potential_identity.unwrap_or(true), "no candidate".into()),
    }

    let points = s.initial_points();
    let trajs: Vec<Trajectory> = points
        .par_iter()
        .map(|x0| integrate(game, rule, x0, &s.integrator))
        .collect::<Result<_>>()?;

    if game.potential().is_some() {
        let mut all = true;
        let mut worst = (f64::INFINITY, f64::INFINITY, 0.0f64);
        for t in &trajs {
            let rep = monitor_lyapunov(t)?;
            all &= rep.monotone && rep.max_path_disagreement <= 1e-12 && rep.min_phidot >= -1e-10;
            worst = (
                worst.0.min(rep.min_increment),
                worst.1.min(rep.min_phidot),
                worst.2.max(rep.max_path_disagreement),
            );
        }
        let detail = format!(
            "min increment {:e}, min phi_dot {:e}, max path disagreement {:e}",
            worst.0, worst.1, worst.2
        );
        checks.push("lyapunov", Some(all), exp.lyapunov.unwrap_or(true), detail);
    } else {
        checks.push("lyapunov", None, exp.lyapunov.unwrap_or(true), "no potential attached".into());
    }

    let mut gw_ok = true;
    let mut gw_min = f64::INFINITY;
    for t in &trajs {
        let rep = gronwall_positivity_check(t, game, rule, CHECK_SAMPLES, seed, 1e-6)?;
        gw_ok &= rep.holds;
        gw_min = gw_min.min(rep.min_slack);
    }
    checks.push("gronwall", Some(gw_ok), exp.gronwall.unwrap_or(true), format!("min slack {gw_min:e}"));

    let eqset = scenario_equilibria(game);

    match (game.potential(), &eqset) {
        (Some(p), Some(set)) => {
            let boundary: Vec<&Configuration> = set
                .boundary_critical()
                .into_iter()
                .map(|e| &e.point)
                .filter(|x| is_boundary_critical(game, x, DEFAULT_TOL).unwrap_or(false))
                .collect();
            if boundary.is_empty() {
                checks.push("border_potential", None, exp.border_potential.unwrap_or(true), "no boundary-critical points".into());
            } else {
                let mut holds = true;
                let mut min_margin = f64::INFINITY;
                for x in &boundary {
                    let rep = border_potential_check(game, p, x, 0.05, 200, DEFAULT_TOL, seed)?;
                    holds &= rep.holds;
                    min_margin = min_margin.min(rep.min_margin);
                }
                let detail = format!("{} points, min margin {min_margin:e}", boundary.len());
                checks.push("border_potential", Some(holds), exp.border_potential.unwrap_or(true), detail);
            }
        }
        _ => checks.push("border_potential", None, exp.border_potential.unwrap_or(true), "needs a potential and an equilibrium set".into()),
    }

    let expectation = exp.convergence.unwrap_or(ConvergenceExpectation::Nash);
    match &eqset {
        Some(set) => {
            let mut passed = true;
            let mut notes = Vec::new();
            for (k, t) in trajs.iter().enumerate() {
                let rec = record(game, t, Some(set), &s.integrator)?;
                let good = match expectation {
                    ConvergenceExpectation::Any => true,
                    ConvergenceExpectation::Nash => {
                        let interior = t.initial().support(0.0).is_full();
                        let label_ok = !interior || rec.limit_label == Some(EquilibriumLabel::Nash);
                        let limit_ok = match &exp.limits {
                            Some(l) => rec
                                .limit_point
                                .as_ref()
                                .is_some_and(|p| p.weights().iter().zip(&l[k]).all(|(a, b)| (a - b).abs() < 1e-6)),
                            None => true,
                        };
                        rec.converged && label_ok && limit_ok
                    }
                };
                passed &= good;
                notes.push(match &rec.limit_point {
                    Some(p) => format!("{} -> {} at t={:.1}", t.initial(), p, rec.t_converged.unwrap_or(f64::NAN)),
                    None => format!("{} -> undetermined (state {})", t.initial(), t.last()),
                });
            }
            checks.push("convergence", Some(passed), true, notes.join("; "));
        }
        None => checks.push("convergence", None, true, "no equilibrium set".into()),
    }

    match &eqset {
        Some(set) => {
            let worst = set
                .items
                .iter()
                .map(|e| {
                    vector_field(game, rule, &e.point)
                        .map(|v| v.iter().map(|x| x.abs()).fold(0.0, f64::max))
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            checks.push("field_at_critical", Some(worst <= 1e-10), true, format!("{} points, max |field| {worst:e}", set.len()));
        }
        None => checks.push("field_at_critical", None, true, "no equilibrium set".into()),
    }

    let mut face_ok = true;
    let mut face_runs = 0;
    for t in &trajs {
        let zeros: Vec<usize> = (0..t.initial().dim()).filter(|&i| t.initial().weights()[i] == 0.0).collect();
        if zeros.is_empty() {
            continue;
        }
        face_runs += 1;
        face_ok &= t.states.iter().all(|x| zeros.iter().all(|&i| x.weights()[i] == 0.0));
    }
    checks.push("face_invariance", Some(face_ok), true, format!("{face_runs} face-started trajectories"));

    let gap = replicator_gap(game, CHECK_SAMPLES, seed);
    checks.push("replicator_equivalence", Some(gap <= 1e-13), true, format!("max gap {gap:e}"));

    let ok = checks.list.iter().all(|c| c.ok);
    Ok(VerifyReport {
        scenario_id: s.id.clone(),
        seed,
        checks: checks.list,
        ok,
    })
}

/// Verifies several scenarios in parallel, keeping the input order.
pub fn verify_many(scenarios: &[Scenario]) -> Result<Vec<VerifyReport>> {
    scenarios.par_iter().map(verify_scenario).collect()
}

pub fn format_report(report: &VerifyReport) -> String {
    let mut out = String::new();
    for c in &report.checks {
        let outcome = match c.outcome {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Skipped => "skip",
        };
        let expected = match c.expected {
            Outcome::Pass => "pass",
            _ => "fail",
        };
        writeln!(
            out,
            "{} {:<22} {:<4} (expected {}) {} | {}",
            if c.ok { "ok " } else { "BAD" },
            c.name,
            outcome,
            expected,
            report.scenario_id,
            c.detail
        )
        .unwrap();
    }
    out
}
