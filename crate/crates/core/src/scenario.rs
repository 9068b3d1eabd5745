//! Scenario files: JSON descriptions of a game, a rule, initial conditions and
//! integrator settings.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{sample_uniform_gains, ImitationRule};
use crate::error::{Error, Result};
use crate::game::{CostFunction, Game};
use crate::potential::{binary_potential, builtin_potential, congestion_potential, coordination_potential};
use crate::simplex::{sample_rng, Configuration};
use crate::simulate::{IntegratorConfig, Method};

/// Stream index reserved for gain sampling, so gains never share draws with
/// the verification samplers.
const GAIN_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub id: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub game: RawGame,
    #[serde(default)]
    pub potential: Option<RawPotential>,
    pub rule: RawRule,
    pub initial: RawInitial,
    #[serde(default)]
    pub integrator: RawIntegrator,
    #[serde(default)]
    pub outputs: Option<Vec<OutputKind>>,
    #[serde(default)]
    pub expect: Expectations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RawGame {
    Linear {
        #[serde(rename = "R")]
        rewards: Vec<Vec<f64>>,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
    Congestion {
        #[serde(rename = "A")]
        incidence: Vec<Vec<f64>>,
        costs: Vec<RawCost>,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RawCost {
    Affine { intercept: f64, slope: f64 },
    Exp {
        #[serde(default = "one")]
        amplitude: f64,
        rate: f64,
    },
    /// `ψ(y) = Σ c_k y^k`; its antiderivative is computed by quadrature.
    Polynomial { coefficients: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialSpec {
    /// Built-in potential when the game has one.
    Auto,
    Binary,
    Coordination,
    Congestion,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPotential {
    pub form: PotentialSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RawRule {
    Replicator,
    /// `f_ij = ½(r_i − r_j)`: violates the sign condition on purpose.
    ReversedReplicator,
    Arctan {
        #[serde(rename = "K")]
        gains: RawGains,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawGains {
    Matrix(Vec<Vec<f64>>),
    Random(RandomGains),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomGains {
    pub random_uniform: [f64; 2],
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInitial {
    #[serde(default)]
    pub point: Option<Vec<f64>>,
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawIntegrator {
    pub method: Option<MethodName>,
    pub step: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub t_end: Option<f64>,
    pub observation_interval: Option<f64>,
    pub projection_tol: Option<f64>,
    pub convergence_tol: Option<f64>,
    pub convergence_window: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    TrajectoryCsv,
    Summary,
    EquilibriaTable,
    BasinMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceExpectation {
    /// Interior starts reach a Nash equilibrium, face starts a restricted one.
    Nash,
    /// Convergence is not guaranteed; the run only has to complete.
    Any,
}

/// Expected verification outcomes. Unset entries default to "pass".
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub sign: Option<bool>,
    pub order: Option<bool>,
    pub potential_identity: Option<bool>,
    pub lyapunov: Option<bool>,
    pub gronwall: Option<bool>,
    pub border_potential: Option<bool>,
    pub convergence: Option<ConvergenceExpectation>,
    /// Expected limit point for each initial point.
    pub limits: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub enum Initial {
    Points(Vec<Configuration>),
    /// Points per simplex edge.
    Grid(usize),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub game: Game,
    pub rule: ImitationRule,
    pub initial: Initial,
    pub integrator: IntegratorConfig,
    pub outputs: Vec<OutputKind>,
    pub expect: Expectations,
    pub raw: RawScenario,
}

impl Scenario {
    /// Rebuilds the scenario with a different seed.
    pub fn reseeded(&self, seed: u64) -> Result<Scenario> {
        build(self.raw.clone(), Some(seed))
    }

    pub fn wants(&self, kind: OutputKind) -> bool {
        self.outputs.contains(&kind)
    }

    pub fn initial_points(&self) -> Vec<Configuration> {
        match &self.initial {
            Initial::Points(p) => p.clone(),
            Initial::Grid(n) => crate::simplex::simplex_grid(self.game.num_actions(), *n),
        }
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let raw: RawScenario = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    build(raw, None)
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::validation(field, "matrix must be nonempty"));
    }
    let cols = rows[0].len();
    if let Some(k) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::validation(
            format!("{field}[{k}]"),
            format!("expected {cols} entries, found {}", rows[k].len()),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::validation(field, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn cost(field: &str, raw: &RawCost) -> Result<CostFunction> {
    match raw {
        RawCost::Affine { intercept, slope } => Ok(CostFunction::affine(*intercept, *slope)),
        RawCost::Exp { amplitude, rate } => {
            CostFunction::exponential(*amplitude, *rate).map_err(|e| Error::validation(field, e.to_string()))
        }
        RawCost::Polynomial { coefficients } => {
            if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
                return Err(Error::validation(field, "coefficients must be finite and nonempty"));
            }
            let c = coefficients.clone();
            let reward = Arc::new(move |y: f64| c.iter().rev().fold(0.0, |acc, ck| acc * y + ck));
            Ok(CostFunction::custom(reward, None))
        }
    }
}

fn build_game(raw: &RawGame, potential: PotentialSpec) -> Result<Game> {
    let (game, labels) = match raw {
        RawGame::Linear { rewards, labels } => {
            let r = matrix("game.R", rewards)?;
            if r.nrows() != r.ncols() {
                return Err(Error::validation(
                    "game.R",
                    format!("must be square, found {}x{}", r.nrows(), r.ncols()),
                ));
            }
            (Game::linear(r).map_err(|e| Error::validation("game.R", e.to_string()))?, labels)
        }
        RawGame::Congestion { incidence, costs, labels } => {
            let a = matrix("game.A", incidence)?;
            if costs.len() != a.nrows() {
                return Err(Error::validation(
                    "game.costs",
                    format!("expected {} cost functions (one per resource), found {}", a.nrows(), costs.len()),
                ));
            }
            let costs = costs
                .iter()
                .enumerate()
                .map(|(k, c)| cost(&format!("game.costs[{k}]"), c))
                .collect::<Result<Vec<_>>>()?;
            (Game::congestion(a, costs).map_err(|e| Error::validation("game.A", e.to_string()))?, labels)
        }
    };
    let game = match labels {
        Some(l) => game
            .with_labels(l.clone())
            .map_err(|e| Error::validation("game.labels", e.to_string()))?,
        None => game,
    };
    let invalid = |msg: &str| Error::validation("potential.form", msg);
    let attached = match potential {
        PotentialSpec::None => None,
        PotentialSpec::Auto => builtin_potential(&game),
        PotentialSpec::Binary => {
            let r = game.matrix().filter(|r| r.nrows() == 2).ok_or_else(|| invalid("binary needs a 2x2 linear game"))?;
            Some(binary_potential(r)?)
        }
        PotentialSpec::Coordination => {
            let r = game.matrix().ok_or_else(|| invalid("coordination needs a linear game"))?;
            let off_diagonal = (0..r.nrows()).any(|i| (0..r.ncols()).any(|j| i != j && r[(i, j)] != 0.0));
            if off_diagonal {
                return Err(invalid("coordination needs a diagonal reward matrix"));
            }
            let d: Vec<f64> = r.diagonal().iter().copied().collect();
            Some(coordination_potential(&d).map_err(|e| invalid(&e.to_string()))?)
        }
        PotentialSpec::Congestion => {
            let (a, costs) = game.congestion_parts().ok_or_else(|| invalid("congestion needs a congestion game"))?;
            Some(congestion_potential(a, costs)?)
        }
    };
    match attached {
        Some(p) => game.with_potential(p),
        None => Ok(game),
    }
}

fn build_rule(raw: &RawRule, m: usize, scenario_seed: Option<u64>) -> Result<ImitationRule> {
    match raw {
        RawRule::Replicator => Ok(ImitationRule::replicator()),
        RawRule::ReversedReplicator => Ok(ImitationRule::reversed_replicator()),
        RawRule::Arctan { gains } => {
            let k = match gains {
                RawGains::Matrix(rows) => matrix("rule.K", rows)?,
                RawGains::Random(spec) => {
                    let [lo, hi] = spec.random_uniform;
                    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo) {
                        return Err(Error::validation(
                            "rule.K.random_uniform",
                            "need 0 <= lo < hi (gains are drawn from (lo, hi])",
                        ));
                    }
                    let seed = spec.seed.or(scenario_seed).ok_or_else(|| {
                        Error::validation("rule.K.seed", "random gains need a seed (rule-level or scenario-level)")
                    })?;
                    sample_uniform_gains(m, lo, hi, &mut sample_rng(seed, GAIN_STREAM))
                }
            };
            if k.nrows() != m || k.ncols() != m {
                return Err(Error::validation(
                    "rule.K",
                    format!("expected {m}x{m}, found {}x{}", k.nrows(), k.ncols()),
                ));
            }
            ImitationRule::arctan(k).map_err(|e| Error::validation("rule.K", e.to_string()))
        }
    }
}

fn configuration(field: &str, w: &[f64], m: usize) -> Result<Configuration> {
    if w.len() != m {
        return Err(Error::validation(field, format!("expected {m} entries, found {}", w.len())));
    }
    Configuration::new(w.to_vec()).map_err(|e| Error::validation(field, e.to_string()))
}

fn build_initial(raw: &RawInitial, m: usize) -> Result<Initial> {
    match (&raw.point, &raw.points, raw.grid) {
        (Some(p), None, None) => Ok(Initial::Points(vec![configuration("initial.point", p, m)?])),
        (None, Some(ps), None) if !ps.is_empty() => Ok(Initial::Points(
            ps.iter()
                .enumerate()
                .map(|(k, p)| configuration(&format!("initial.points[{k}]"), p, m))
                .collect::<Result<_>>()?,
        )),
        (None, None, Some(n)) => {
            if n < 2 {
                Err(Error::validation("initial.grid", "need at least two points per edge"))
            } else if m > 3 {
                Err(Error::validation("initial.grid", "grids need at most three actions"))
            } else {
                Ok(Initial::Grid(n))
            }
        }
        _ => Err(Error::validation(
            "initial",
            "give exactly one of `point`, `points` (nonempty) or `grid`",
        )),
    }
}

fn build_integrator(raw: &RawIntegrator) -> Result<IntegratorConfig> {
    let defaults = IntegratorConfig::default();
    let Method::Rk45Adaptive { rtol: d_rtol, atol: d_atol } = defaults.method else {
        unreachable!("adaptive by default")
    };
    let method = match raw.method.unwrap_or(if raw.step.is_some() {
        MethodName::Rk4Fixed
    } else {
        MethodName::Rk45Adaptive
    }) {
        MethodName::Rk4Fixed => Method::Rk4Fixed {
            step: raw.step.unwrap_or(0.01),
        },
        MethodName::Rk45Adaptive => Method::Rk45Adaptive {
            rtol: raw.rtol.unwrap_or(d_rtol),
            atol: raw.atol.unwrap_or(d_atol),
        },
    };
    let cfg = IntegratorConfig {
        method,
        t_end: raw.t_end.unwrap_or(defaults.t_end),
        observation_interval: raw.observation_interval.unwrap_or(defaults.observation_interval),
        projection_tol: raw.projection_tol.unwrap_or(defaults.projection_tol),
        convergence_tol: raw.convergence_tol.unwrap_or(defaults.convergence_tol),
        convergence_window: raw.convergence_window.unwrap_or(defaults.convergence_window),
        max_steps: defaults.max_steps,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn build(raw: RawScenario, seed_override: Option<u64>) -> Result<Scenario> {
    if raw.id.is_empty() || raw.id.contains(['/', '\\']) || raw.id == "." || raw.id == ".." {
        return Err(Error::validation("id", "must be a nonempty name without path separators"));
    }
    let form = raw.potential.as_ref().map_or(PotentialSpec::Auto, |p| p.form);
    let game = build_game(&raw.game, form)?;
    let m = game.num_actions();
    let seed = seed_override.or(raw.seed);
    let rule = build_rule(&raw.rule, m, seed)?;
    let initial = build_initial(&raw.initial, m)?;
    let integrator = build_integrator(&raw.integrator)?;
    if let Some(limits) = &raw.expect.limits {
        let n = match &initial {
            Initial::Points(p) => p.len(),
            Initial::Grid(_) => {
                return Err(Error::validation("expect.limits", "not available for grid starts"));
            }
        };
        if limits.len() != n {
            return Err(Error::validation(
                "expect.limits",
                format!("expected {n} limits (one per initial point), found {}", limits.len()),
            ));
        }
        for (k, l) in limits.iter().enumerate() {
            configuration(&format!("expect.limits[{k}]"), l, m)?;
        }
    }
    let outputs = raw.outputs.clone().unwrap_or_else(|| match initial {
        Initial::Points(_) => vec![OutputKind::TrajectoryCsv, OutputKind::Summary, OutputKind::EquilibriaTable],
        Initial::Grid(_) => vec![OutputKind::BasinMap, OutputKind::Summary, OutputKind::EquilibriaTable],
    });
    Ok(Scenario {
        id: raw.id.clone(),
        seed: seed.unwrap_or(0),
        game,
        rule,
        initial,
        integrator,
        outputs,
        expect: raw.expect.clone(),
        raw,
    })
}

/// Scenario files shipped with the crate, by id.
pub const BUNDLED: &[(&str, &str)] = &[
    ("coordination_R1", include_str!("../scenarios/coordination_R1.json")),
    ("anticoordination_R2", include_str!("../scenarios/anticoordination_R2.json")),
    ("dominance_R3", include_str!("../scenarios/dominance_R3.json")),
    ("coordination_b2_c3", include_str!("../scenarios/coordination_b2_c3.json")),
    ("coordination_b02_c5", include_str!("../scenarios/coordination_b02_c5.json")),
    ("congestion_exponential", include_str!("../scenarios/congestion_exponential.json")),
    ("congestion_dominated_A1", include_str!("../scenarios/congestion_dominated_A1.json")),
    ("congestion_dominated_A2", include_str!("../scenarios/congestion_dominated_A2.json")),
    ("rsp_negative", include_str!("../scenarios/rsp_negative.json")),
];

pub fn bundled(id: &str) -> Option<Result<Scenario>> {
    BUNDLED
        .iter()
        .find(|(name, _)| *name == id)
        .map(|(_, text)| parse_scenario(text))
}

pub fn bundled_all() -> Result<Vec<Scenario>> {
    BUNDLED.iter().map(|(_, text)| parse_scenario(text)).collect()
}
