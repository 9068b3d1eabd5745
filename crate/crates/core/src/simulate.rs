//! Numerical integration of imitation dynamics on the simplex.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{field_at, pairwise_chain, ImitationRule};
use crate::equilibria::{EquilibriumLabel, EquilibriumSet, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::game::Game;
use crate::potential::Potential;
use crate::simplex::{euclidean, sample_dirichlet, sample_rng, simplex_grid, Configuration, Support};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Rk4Fixed { step: f64 },
    Rk45Adaptive { rtol: f64, atol: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Rk45Adaptive { rtol: 1e-8, atol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    #[serde(flatten)]
    pub method: Method,
    pub t_end: f64,
    pub observation_interval: f64,
    pub projection_tol: f64,
    pub convergence_tol: f64,
    pub convergence_window: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::default(),
            t_end: 30.0,
            observation_interval: 0.1,
            projection_tol: 1e-9,
            convergence_tol: 1e-4,
            convergence_window: 1.0,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }

    pub fn fixed(step: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk4Fixed { step },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match self.method {
            Method::Rk4Fixed { step } if !positive(step) => {
                return Err(Error::validation("integrator.step", "must be positive"))
            }
            Method::Rk45Adaptive { rtol, atol } if !(positive(rtol) && positive(atol)) => {
                return Err(Error::validation("integrator.rtol", "rtol and atol must be positive"))
            }
            _ => {}
        }
        for (field, v) in [
            ("integrator.t_end", self.t_end),
            ("integrator.observation_interval", self.observation_interval),
            ("integrator.projection_tol", self.projection_tol),
            ("integrator.convergence_tol", self.convergence_tol),
        ] {
            if !positive(v) {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        if !(self.convergence_window >= 0.0) {
            return Err(Error::validation("integrator.convergence_window", "must be nonnegative"));
        }
        Ok(())
    }

    /// Nominal accuracy of the integrator: `max(rtol, atol)`, or `h⁴` for fixed-step RK4.
    pub fn tolerance(&self) -> f64 {
        match self.method {
            Method::Rk4Fixed { step } => step.powi(4),
            Method::Rk45Adaptive { rtol, atol } => rtol.max(atol),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Converged,
    ProjectionApplied,
    StepRejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Configuration>,
    pub phi: Option<Vec<f64>>,
    /// `∇Φ · ẋ` at each observation.
    pub phi_dot: Option<Vec<f64>>,
    /// The same derivative through the pairwise chain `½ Σ xᵢxⱼ(rᵢ−rⱼ)(f_jᵢ−f_ij)`.
    pub phi_dot_chain: Option<Vec<f64>>,
    pub events: Vec<Event>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Largest clamp-and-renormalize correction applied after a step (max norm).
    pub max_projection_correction: f64,
    pub tolerance: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &Configuration {
        &self.states[0]
    }

    pub fn last(&self) -> &Configuration {
        self.states.last().expect("trajectories hold the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    pub fn converged_at(&self) -> Option<f64> {
        self.events
            .iter()
            .find(|e| e.kind == EventKind::Converged)
            .map(|e| e.time)
    }
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        if *c != 0.0 {
            for (o, ki) in out.iter_mut().zip(k.iter()) {
                *o += h * c * ki;
            }
        }
    }
    out
}

/// Clamp tiny negatives and renormalize. Returns the max-norm correction.
fn project(y: &mut [f64], time: f64, projection_tol: f64) -> Result<f64> {
    if let Some((index, &value)) = y
        .iter()
        .enumerate()
        .find(|(_, &v)| v < -projection_tol || !v.is_finite())
    {
        return Err(Error::LeftSimplex { time, index, value });
    }
    let before = y.to_vec();
    for v in y.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let s: f64 = y.iter().sum();
    for v in y.iter_mut() {
        *v /= s;
    }
    Ok(before
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

struct Recorder<'a> {
    game: &'a Game,
    rule: &'a ImitationRule,
    potential: Option<&'a Potential>,
    traj: Trajectory,
    targets: &'a [Configuration],
    convergence_tol: f64,
    convergence_window: f64,
    inside_since: Option<f64>,
}

impl<'a> Recorder<'a> {
    /// Records an observation; returns true when the stop-on-convergence rule fires.
    fn observe(&mut self, t: f64, mut w: Vec<f64>) -> Result<bool> {
        // Dense output may dip below zero by round-off between steps.
        let correction = project(&mut w, t, f64::INFINITY)?;
        self.traj.max_projection_correction = self.traj.max_projection_correction.max(correction);
        if let Some(p) = self.potential {
            let v = field_at(self.game, self.rule, &w);
            self.traj.phi.as_mut().expect("set").push(p.value_at(&w));
            self.traj
                .phi_dot
                .as_mut()
                .expect("set")
                .push(p.derivative_along(&w, &v));
            self.traj
                .phi_dot_chain
                .as_mut()
                .expect("set")
                .push(pairwise_chain(self.game, self.rule, &w));
        }
        let near = !self.targets.is_empty()
            && self
                .targets
                .iter()
                .any(|c| euclidean(c.weights(), &w) < self.convergence_tol);
        self.traj.times.push(t);
        self.traj.states.push(Configuration::new(w)?);
        if !near {
            self.inside_since = None;
            return Ok(false);
        }
        let since = *self.inside_since.get_or_insert(t);
        if t - since >= self.convergence_window - 1e-12 {
            self.traj.events.push(Event {
                time: since,
                kind: EventKind::Converged,
            });
            return Ok(true);
        }
        Ok(false)
    }
}

fn observation_times(cfg: &IntegratorConfig) -> Vec<f64> {
    let n = (cfg.t_end / cfg.observation_interval - 1e-9).ceil() as usize;
    let mut out: Vec<f64> = (1..=n)
        .map(|k| (k as f64 * cfg.observation_interval).min(cfg.t_end))
        .collect();
    out.dedup();
    if out.last().copied() != Some(cfg.t_end) {
        out.push(cfg.t_end);
    }
    out
}

/// Integrates from `x0` to `cfg.t_end`, recording dense output every
/// `cfg.observation_interval`.
pub fn integrate(game: &Game, rule: &ImitationRule, x0: &Configuration, cfg: &IntegratorConfig) -> Result<Trajectory> {
    integrate_until(game, rule, x0, cfg, &[])
}

/// Like [`integrate`], but stops once the state has stayed within
/// `convergence_tol` of one of `targets` for `convergence_window` time units.
pub fn integrate_until(
    game: &Game,
    rule: &ImitationRule,
    x0: &Configuration,
    cfg: &IntegratorConfig,
    targets: &[Configuration],
) -> Result<Trajectory> {
    cfg.validate()?;
    Error::check_dim(game.num_actions(), x0.dim())?;
    if let Some(g) = rule.gains() {
        Error::check_dim(game.num_actions(), g.nrows())?;
    }
    let potential = game.potential();
    let mut rec = Recorder {
        game,
        rule,
        potential,
        traj: Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            phi: potential.map(|_| Vec::new()),
            phi_dot: potential.map(|_| Vec::new()),
            phi_dot_chain: potential.map(|_| Vec::new()),
            events: Vec::new(),
            accepted_steps: 0,
            rejected_steps: 0,
            max_projection_correction: 0.0,
            tolerance: cfg.tolerance(),
        },
        targets,
        convergence_tol: cfg.convergence_tol,
        convergence_window: cfg.convergence_window,
        inside_since: None,
    };
    if rec.observe(0.0, x0.weights().to_vec())? {
        return Ok(rec.traj);
    }
    let obs = observation_times(cfg);
    match cfg.method {
        Method::Rk4Fixed { step } => run_rk4(&mut rec, x0.weights().to_vec(), &obs, step, cfg)?,
        Method::Rk45Adaptive { rtol, atol } => run_dopri(&mut rec, x0.weights().to_vec(), &obs, rtol, atol, cfg)?,
    }
    Ok(rec.traj)
}

fn note_projection(rec: &mut Recorder<'_>, t: f64, correction: f64) {
    rec.traj.max_projection_correction = rec.traj.max_projection_correction.max(correction);
    if correction > 1e-12 {
        rec.traj.events.push(Event {
            time: t,
            kind: EventKind::ProjectionApplied,
        });
    }
}

fn run_rk4(rec: &mut Recorder<'_>, mut y: Vec<f64>, obs: &[f64], step: f64, cfg: &IntegratorConfig) -> Result<()> {
    let f = |x: &[f64]| field_at(rec.game, rec.rule, x);
    let mut t = 0.0;
    let mut pending = Vec::new();
    for &t_obs in obs {
        let span = t_obs - t;
        let n = (span / step - 1e-9).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for _ in 0..n {
            let k1 = f(&y);
            let k2 = f(&axpy(&y, h, &[(0.5, &k1)]));
            let k3 = f(&axpy(&y, h, &[(0.5, &k2)]));
            let k4 = f(&axpy(&y, h, &[(1.0, &k3)]));
            y = axpy(
                &y,
                h,
                &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
            );
            t += h;
            let c = project(&mut y, t, cfg.projection_tol)?;
            pending.push((t, c));
            rec.traj.accepted_steps += 1;
        }
        for (tc, c) in pending.drain(..) {
            note_projection(rec, tc, c);
        }
        t = t_obs;
        if rec.observe(t_obs, y.clone())? {
            break;
        }
    }
    Ok(())
}

fn run_dopri(
    rec: &mut Recorder<'_>,
    mut y: Vec<f64>,
    obs: &[f64],
    rtol: f64,
    atol: f64,
    cfg: &IntegratorConfig,
) -> Result<()> {
    let game = rec.game;
    let rule = rec.rule;
    let f = |x: &[f64]| field_at(game, rule, x);
    let m = y.len();
    let mut t = 0.0;
    let mut h = cfg.observation_interval.min(1e-2).min(cfg.t_end);
    let mut k1 = f(&y);
    let mut next_obs = 0;
    let mut steps = 0;
    while next_obs < obs.len() {
        if steps >= cfg.max_steps {
            return Err(Error::StepUnderflow { time: t, step: h });
        }
        steps += 1;
        h = h.min(cfg.t_end - t);
        if h <= 1e-14 * t.max(1.0) {
            return Err(Error::StepUnderflow { time: t, step: h });
        }
        let k2 = f(&axpy(&y, h, &[(A21, &k1)]));
        let k3 = f(&axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(&axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(&axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = f(&axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
        let y1 = axpy(&y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
        let k7 = f(&y1);

        let mut err = 0.0;
        for i in 0..m {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = atol + rtol * y[i].abs().max(y1[i].abs());
            err += (e / sc) * (e / sc);
        }
        let err = (err / m as f64).sqrt();
        let factor = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };

        if !(err <= 1.0) {
            rec.traj.rejected_steps += 1;
            rec.traj.events.push(Event {
                time: t,
                kind: EventKind::StepRejected,
            });
            h *= factor.min(1.0);
            continue;
        }

        let t1 = t + h;
        // Dense output on [t, t1] from the unprojected step.
        let r2: Vec<f64> = (0..m).map(|i| y1[i] - y[i]).collect();
        let r3: Vec<f64> = (0..m).map(|i| h * k1[i] - r2[i]).collect();
        let r4: Vec<f64> = (0..m).map(|i| r2[i] - h * k7[i] - r3[i]).collect();
        let r5: Vec<f64> = (0..m)
            .map(|i| h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
            .collect();
        let last_step = t1 >= cfg.t_end;

        let mut y_next = y1;
        let correction = project(&mut y_next, t1, cfg.projection_tol)?;
        note_projection(rec, t1, correction);
        rec.traj.accepted_steps += 1;

        let mut stop = false;
        while next_obs < obs.len() && (obs[next_obs] <= t1 || last_step) {
            let t_obs = obs[next_obs];
            let state = if (t_obs - t1).abs() <= 1e-12 * t1.max(1.0) || last_step && t_obs >= t1 {
                y_next.clone()
            } else {
                let th = (t_obs - t) / h;
                let th1 = 1.0 - th;
                (0..m)
                    .map(|i| y[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i]))))
                    .collect()
            };
            next_obs += 1;
            if rec.observe(t_obs, state)? {
                stop = true;
                break;
            }
        }
        if stop {
            break;
        }
        t = t1;
        y = y_next;
        k1 = f(&y);
        h *= factor;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    pub monotone: bool,
    pub min_increment: f64,
    pub min_phidot: f64,
    /// Largest `|∇Φ·ẋ − chain|` over the trajectory.
    pub max_path_disagreement: f64,
    pub slack: f64,
}

/// Checks that the recorded potential is nondecreasing within `10 × tolerance`.
pub fn monitor_lyapunov(traj: &Trajectory) -> Result<LyapunovReport> {
    let (Some(phi), Some(dot), Some(chain)) = (&traj.phi, &traj.phi_dot, &traj.phi_dot_chain) else {
        return Err(Error::NoPotential);
    };
    let slack = 10.0 * traj.tolerance;
    let min_increment = phi
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let min_phidot = dot.iter().copied().fold(f64::INFINITY, f64::min);
    let max_path_disagreement = dot
        .iter()
        .zip(chain)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(LyapunovReport {
        monotone: min_increment >= -slack && min_phidot >= -slack,
        min_increment: if min_increment.is_finite() { min_increment } else { 0.0 },
        min_phidot,
        max_path_disagreement,
        slack,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub t_converged: Option<f64>,
    pub limit_point: Option<Configuration>,
    pub limit_label: Option<EquilibriumLabel>,
    pub final_distance: f64,
    /// The distance to the set stopped decreasing while the state still moves.
    pub plateau: bool,
}

/// Convergence to the restricted Nash set `N_S` of `eqset`: the distance must
/// stay below `tol` over a trailing window of length `window`.
pub fn detect_convergence(
    game: &Game,
    traj: &Trajectory,
    eqset: &EquilibriumSet,
    support: &Support,
    tol: f64,
    window: f64,
) -> Result<ConvergenceReport> {
    let members = eqset.restricted_to(game, support, DEFAULT_TOL);
    if members.is_empty() {
        return Err(Error::EmptySet);
    }
    let dist = |x: &Configuration| {
        members
            .iter()
            .map(|e| (x.distance(&e.point), *e))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("nonempty")
    };
    let distances: Vec<f64> = traj.states.iter().map(|x| dist(x).0).collect();
    let mut entered = None;
    for (k, &d) in distances.iter().enumerate().rev() {
        if d < tol {
            entered = Some(traj.times[k]);
        } else {
            break;
        }
    }
    let t_final = traj.final_time();
    let converged = entered.is_some_and(|t| t_final - t >= window - 1e-12);
    let (final_distance, nearest) = dist(traj.last());

    let plateau = if converged {
        false
    } else {
        let start = t_final - window.max(traj.times[1.min(traj.len() - 1)]);
        let idx = traj.times.iter().position(|&t| t >= start).unwrap_or(0);
        let moved = traj.states[idx].distance(traj.last());
        let progress = distances[idx] - final_distance;
        moved > tol && progress <= 0.01 * moved
    };
    Ok(ConvergenceReport {
        converged,
        t_converged: if converged { entered } else { None },
        limit_point: converged.then(|| nearest.point.clone()),
        limit_label: converged.then_some(nearest.label),
        final_distance,
        plateau,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GronwallReport {
    pub holds: bool,
    /// Per-action exponential rates `Cᵢ`.
    pub constants: Vec<f64>,
    /// Smallest `xᵢ(t) − xᵢ(0)·e^{−Cᵢt}` seen.
    pub min_slack: f64,
}

/// Rate constants `Cᵢ = m · max_{x, j} |f_ij(x) − f_ji(x)|`, with the maximum
/// taken over vertices and `samples` random configurations.
pub fn gronwall_constants(game: &Game, rule: &ImitationRule, samples: usize, seed: u64) -> Vec<f64> {
    let m = game.num_actions();
    let mut points: Vec<Vec<f64>> = (0..m).map(|i| Configuration::vertex(m, i).into_weights()).collect();
    points.extend((0..samples as u64).map(|k| {
        let mut rng = sample_rng(seed, k);
        sample_dirichlet(m, &mut rng).into_weights()
    }));
    let per_point: Vec<Vec<f64>> = points
        .par_iter()
        .map(|x| {
            let r = game.rewards_at(x);
            let f = rule.rate_matrix(&r, x);
            (0..m)
                .map(|i| (0..m).map(|j| (f[(i, j)] - f[(j, i)]).abs()).fold(0.0, f64::max))
                .collect()
        })
        .collect();
    (0..m)
        .map(|i| m as f64 * per_point.iter().map(|v| v[i]).fold(0.0, f64::max))
        .collect()
}

/// Checks `xᵢ(t) ≥ xᵢ(0)·e^{−Cᵢt} − slack` along a trajectory.
pub fn gronwall_positivity_check(
    traj: &Trajectory,
    game: &Game,
    rule: &ImitationRule,
    samples: usize,
    seed: u64,
    slack: f64,
) -> Result<GronwallReport> {
    Error::check_dim(game.num_actions(), traj.initial().dim())?;
    let constants = gronwall_constants(game, rule, samples, seed);
    let x0 = traj.initial().weights();
    let mut min_slack = f64::INFINITY;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        for i in 0..x0.len() {
            if x0[i] > 0.0 {
                let bound = x0[i] * (-constants[i] * t).exp();
                min_slack = min_slack.min(x.weights()[i] - bound);
            }
        }
    }
    Ok(GronwallReport {
        holds: min_slack >= -slack,
        constants,
        min_slack,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BasinEntry {
    pub start: Configuration,
    /// Index into the equilibrium set, or `None` when undetermined.
    pub limit: Option<usize>,
    pub final_state: Configuration,
}

/// Integrates from every point of a simplex grid (`grid` points per edge) and
/// records which member of `eqset` each start converges to.
pub fn basin_probe(
    game: &Game,
    rule: &ImitationRule,
    eqset: &EquilibriumSet,
    grid: usize,
    cfg: &IntegratorConfig,
) -> Result<Vec<BasinEntry>> {
    let m = game.num_actions();
    if m > 3 {
        return Err(Error::Unsupported("grid probing needs at most three actions".into()));
    }
    if grid < 2 {
        return Err(Error::InvalidArgument("grid needs at least two points per edge".into()));
    }
    let targets: Vec<Configuration> = eqset.items.iter().map(|e| e.point.clone()).collect();
    simplex_grid(m, grid)
        .into_par_iter()
        .map(|start| {
            let traj = integrate_until(game, rule, &start, cfg, &targets)?;
            let last = traj.last().clone();
            let limit = traj.converged_at().and_then(|_| {
                targets
                    .iter()
                    .position(|p| p.distance(&last) < cfg.convergence_tol)
            });
            Ok(BasinEntry {
                start,
                limit,
                final_state: last,
            })
        })
        .collect()
}

/// For a binary game: the largest start `x₁` sent to `δ⁽²⁾` and the smallest
/// sent to `δ⁽¹⁾`, bracketing the basin threshold.
pub fn binary_threshold(entries: &[BasinEntry], eqset: &EquilibriumSet) -> Option<(f64, f64)> {
    let index_of = |v: &Configuration| eqset.items.iter().position(|e| &e.point == v);
    let to_first = index_of(&Configuration::vertex(2, 0))?;
    let to_second = index_of(&Configuration::vertex(2, 1))?;
    let below = entries
        .iter()
        .filter(|e| e.limit == Some(to_second))
        .map(|e| e.start.weights()[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let above = entries
        .iter()
        .filter(|e| e.limit == Some(to_first))
        .map(|e| e.start.weights()[0])
        .fold(f64::INFINITY, f64::min);
    (below.is_finite() && above.is_finite()).then_some((below, above))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::enumerate_equilibria_linear;
    use crate::game::matrix_from_rows;
    use crate::potential::binary_potential;
    use nalgebra::DMatrix;

    fn r1_game() -> Game {
        let r = matrix_from_rows(&[&[10.0, 0.0], &[8.0, 7.0]]).unwrap();
        let p = binary_potential(&r).unwrap();
        Game::linear(r).unwrap().with_potential(p).unwrap()
    }

    fn cfg(w: &[f64]) -> Configuration {
        Configuration::new(w.to_vec()).unwrap()
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        // replicator on a 2-action game with constant reward gap 1: logistic flow
        let g = Game::linear(matrix_from_rows(&[&[1.0, 1.0], &[0.0, 0.0]]).unwrap()).unwrap();
        let rule = ImitationRule::replicator();
        let x0 = cfg(&[0.5, 0.5]);
        let traj = integrate(&g, &rule, &x0, &IntegratorConfig::default().with_t_end(5.0)).unwrap();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let exact = 1.0 / (1.0 + (-t).exp());
            assert!((x.weights()[0] - exact).abs() < 1e-7, "t={t}");
        }
        let fixed = integrate(&g, &rule, &x0, &IntegratorConfig::fixed(0.01).with_t_end(5.0)).unwrap();
        let exact = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((fixed.last().weights()[0] - exact).abs() < 1e-9);
    }

    #[test]
    fn observation_grid() {
        let g = r1_game();
        let traj = integrate(&g, &ImitationRule::replicator(), &cfg(&[0.6, 0.4]), &IntegratorConfig::default().with_t_end(2.0)).unwrap();
        assert_eq!(traj.len(), 21);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert!((traj.final_time() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn coordination_below_threshold_goes_to_second_action() {
        let g = r1_game();
        let traj = integrate(&g, &ImitationRule::replicator(), &cfg(&[0.6, 0.4]), &IntegratorConfig::default()).unwrap();
        assert!(traj.last().weights()[0] < 1e-6);
        let rep = monitor_lyapunov(&traj).unwrap();
        assert!(rep.monotone);
        assert!(rep.max_path_disagreement < 1e-12);
    }

    #[test]
    fn vertex_start_is_constant() {
        let g = r1_game();
        let traj = integrate(&g, &ImitationRule::replicator(), &Configuration::vertex(2, 1), &IntegratorConfig::default().with_t_end(3.0)).unwrap();
        assert!(traj.states.iter().all(|x| *x == Configuration::vertex(2, 1)));
        let rep = monitor_lyapunov(&traj).unwrap();
        assert!(rep.min_phidot.abs() <= rep.slack);
        let gw = gronwall_positivity_check(&traj, &g, &ImitationRule::replicator(), 100, 0, 1e-6).unwrap();
        assert!(gw.holds);
    }

    #[test]
    fn reversed_rule_breaks_monotonicity() {
        let g = r1_game();
        let traj = integrate(&g, &ImitationRule::reversed_replicator(), &cfg(&[0.6, 0.4]), &IntegratorConfig::default().with_t_end(5.0)).unwrap();
        assert!(!monitor_lyapunov(&traj).unwrap().monotone);
    }

    #[test]
    fn no_potential_is_an_error() {
        let g = Game::linear(DMatrix::identity(2, 2)).unwrap();
        let traj = integrate(&g, &ImitationRule::replicator(), &cfg(&[0.3, 0.7]), &IntegratorConfig::default().with_t_end(1.0)).unwrap();
        assert!(traj.phi.is_none());
        assert!(matches!(monitor_lyapunov(&traj), Err(Error::NoPotential)));
    }

    #[test]
    fn face_start_keeps_zero_coordinates() {
        let g = Game::linear(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]))).unwrap();
        let gains = DMatrix::from_fn(3, 3, |i, j| 0.3 + 0.1 * (i + 2 * j) as f64);
        let rule = ImitationRule::arctan(gains).unwrap();
        let traj = integrate(&g, &rule, &cfg(&[0.0, 0.7, 0.3]), &IntegratorConfig::default()).unwrap();
        assert!(traj.states.iter().all(|x| x.weights()[0] == 0.0));
    }

    #[test]
    fn convergence_detection() {
        let g = r1_game();
        let eq = enumerate_equilibria_linear(g.matrix().unwrap(), DEFAULT_TOL).unwrap();
        let traj = integrate(&g, &ImitationRule::replicator(), &cfg(&[0.9, 0.1]), &IntegratorConfig::default()).unwrap();
        let rep = detect_convergence(&g, &traj, &eq, &Support::full(2), 1e-4, 1.0).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.limit_point.unwrap(), Configuration::vertex(2, 0));
        assert_eq!(rep.limit_label, Some(EquilibriumLabel::Nash));
    }

    #[test]
    fn stop_on_convergence() {
        let g = r1_game();
        let targets = [Configuration::vertex(2, 0)];
        let traj = integrate_until(&g, &ImitationRule::replicator(), &cfg(&[0.9, 0.1]), &IntegratorConfig::default(), &targets).unwrap();
        let t = traj.converged_at().unwrap();
        assert!(traj.final_time() < 30.0);
        assert!((traj.final_time() - t - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_config() {
        let g = r1_game();
        let mut c = IntegratorConfig::default();
        c.t_end = 0.0;
        assert!(matches!(
            integrate(&g, &ImitationRule::replicator(), &cfg(&[0.5, 0.5]), &c),
            Err(Error::Validation { .. })
        ));
        let c = IntegratorConfig::fixed(-1.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn basin_threshold_for_binary_coordination() {
        let g = r1_game();
        let eq = enumerate_equilibria_linear(g.matrix().unwrap(), DEFAULT_TOL).unwrap();
        let c = IntegratorConfig::default().with_t_end(60.0);
        let entries = basin_probe(&g, &ImitationRule::replicator(), &eq, 11, &c).unwrap();
        let (below, above) = binary_threshold(&entries, &eq).unwrap();
        assert!(below < 7.0 / 9.0 && above > 7.0 / 9.0);
        assert!(above - below <= 0.1 + 1e-12);
    }
}
