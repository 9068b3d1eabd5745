//! Population games: action sets, reward evaluators and the built-in families.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::simplex::{Configuration, Support};

pub type RewardFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Absolute tolerance of the quadrature used for missing antiderivatives.
pub const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSet {
    size: usize,
    labels: Option<Vec<String>>,
}

impl ActionSet {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("action set must be nonempty".into()));
        }
        Ok(ActionSet { size, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut set = ActionSet::new(labels.len())?;
        set.labels = Some(labels);
        Ok(set)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => format!("{}", i + 1),
        }
    }
}

/// Reward `ψ(y)` of a resource used by a fraction `y` of the population,
/// together with an antiderivative `Ψ`.
#[derive(Clone)]
pub enum CostFunction {
    /// `ψ(y) = intercept + slope·y`.
    Affine { intercept: f64, slope: f64 },
    /// `ψ(y) = amplitude·exp(−rate·y)`.
    Exponential { amplitude: f64, rate: f64 },
    Custom {
        reward: ScalarFn,
        antiderivative: Option<ScalarFn>,
    },
}

impl CostFunction {
    pub fn affine(intercept: f64, slope: f64) -> Self {
        CostFunction::Affine { intercept, slope }
    }

    pub fn exponential(amplitude: f64, rate: f64) -> Result<Self> {
        if rate == 0.0 || !rate.is_finite() {
            return Err(Error::InvalidArgument(
                "exponential cost needs a nonzero finite rate".into(),
            ));
        }
        Ok(CostFunction::Exponential { amplitude, rate })
    }

    /// A user-supplied cost. Without an antiderivative, `Ψ(y) = ∫₀ʸ ψ` is computed
    /// by adaptive quadrature.
    pub fn custom(reward: ScalarFn, antiderivative: Option<ScalarFn>) -> Self {
        CostFunction::Custom {
            reward,
            antiderivative,
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        match self {
            CostFunction::Affine { intercept, slope } => intercept + slope * y,
            CostFunction::Exponential { amplitude, rate } => amplitude * (-rate * y).exp(),
            CostFunction::Custom { reward, .. } => reward(y),
        }
    }

    pub fn antiderivative(&self, y: f64) -> f64 {
        match self {
            CostFunction::Affine { intercept, slope } => intercept * y + 0.5 * slope * y * y,
            CostFunction::Exponential { amplitude, rate } => -amplitude / rate * (-rate * y).exp(),
            CostFunction::Custom {
                antiderivative: Some(psi),
                ..
            } => psi(y),
            CostFunction::Custom { reward, .. } => {
                adaptive_simpson(&|t| reward(t), 0.0, y, QUADRATURE_TOL)
            }
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, CostFunction::Affine { .. })
    }

    /// Checks strict decrease on `[0, 1]` by comparing consecutive samples.
    pub fn is_strictly_decreasing(&self, samples: usize) -> bool {
        let n = samples.max(2);
        let mut prev = self.eval(0.0);
        for k in 1..=n {
            let v = self.eval(k as f64 / n as f64);
            if v >= prev {
                return false;
            }
            prev = v;
        }
        true
    }

    fn describe(&self) -> String {
        match self {
            CostFunction::Affine { intercept, slope } => format!("affine({intercept:e},{slope:e})"),
            CostFunction::Exponential { amplitude, rate } => format!("exp({amplitude:e},{rate:e})"),
            CostFunction::Custom { .. } => "custom".to_string(),
        }
    }
}

impl fmt::Debug for CostFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameFamily {
    Linear,
    Congestion,
    Custom,
}

impl fmt::Display for GameFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GameFamily::Linear => "linear",
            GameFamily::Congestion => "congestion",
            GameFamily::Custom => "custom",
        })
    }
}

#[derive(Clone)]
enum Rewards {
    Linear {
        matrix: DMatrix<f64>,
    },
    Congestion {
        incidence: DMatrix<f64>,
        costs: Vec<CostFunction>,
    },
    Custom {
        rewards: RewardFn,
        description: String,
    },
}

/// A population game: a finite action set and a reward vector function on the simplex.
#[derive(Clone)]
pub struct Game {
    actions: ActionSet,
    rewards: Rewards,
    potential: Option<Potential>,
}

impl fmt::Debug for Game {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Game")
            .field("family", &self.family())
            .field("actions", &self.actions.size())
            .field("description", &self.describe())
            .field("potential", &self.potential.as_ref().map(|p| p.form()))
            .finish()
    }
}

impl Game {
    /// Linear rewards `r(x) = R x`.
    pub fn linear(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidArgument(format!(
                "reward matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("reward matrix has non-finite entries".into()));
        }
        Ok(Game {
            actions: ActionSet::new(matrix.nrows())?,
            rewards: Rewards::Linear { matrix },
            potential: None,
        })
    }

    /// Convenience constructor from row-major nested slices.
    pub fn linear_from_rows(rows: &[&[f64]]) -> Result<Self> {
        Game::linear(matrix_from_rows(rows)?)
    }

    /// Congestion rewards `r(x) = Aᵀ ψ(A x)` for a 0/1 incidence matrix `A` (resources × actions).
    pub fn congestion(incidence: DMatrix<f64>, costs: Vec<CostFunction>) -> Result<Self> {
        if incidence.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("incidence matrix must be 0/1".into()));
        }
        if costs.len() != incidence.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} cost functions for {} resources",
                costs.len(),
                incidence.nrows()
            )));
        }
        Ok(Game {
            actions: ActionSet::new(incidence.ncols())?,
            rewards: Rewards::Congestion { incidence, costs },
            potential: None,
        })
    }

    /// A game with an arbitrary reward evaluator. The caller guarantees it is
    /// total and Lipschitz on the simplex.
    pub fn custom(m: usize, rewards: RewardFn, description: impl Into<String>) -> Result<Self> {
        Ok(Game {
            actions: ActionSet::new(m)?,
            rewards: Rewards::Custom {
                rewards,
                description: description.into(),
            },
            potential: None,
        })
    }

    pub fn with_potential(mut self, potential: Potential) -> Result<Self> {
        Error::check_dim(self.num_actions(), potential.dim())?;
        self.potential = Some(potential);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        Error::check_dim(self.num_actions(), labels.len())?;
        self.actions = ActionSet::with_labels(labels)?;
        Ok(self)
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn num_actions(&self) -> usize {
        self.actions.size()
    }

    pub fn family(&self) -> GameFamily {
        match self.rewards {
            Rewards::Linear { .. } => GameFamily::Linear,
            Rewards::Congestion { .. } => GameFamily::Congestion,
            Rewards::Custom { .. } => GameFamily::Custom,
        }
    }

    pub fn potential(&self) -> Option<&Potential> {
        self.potential.as_ref()
    }

    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.rewards {
            Rewards::Linear { matrix } => Some(matrix),
            _ => None,
        }
    }

    pub fn congestion_parts(&self) -> Option<(&DMatrix<f64>, &[CostFunction])> {
        match &self.rewards {
            Rewards::Congestion { incidence, costs } => Some((incidence, costs)),
            _ => None,
        }
    }

    /// The matrix `M` with `r(x) = M x` on the simplex, when rewards are affine.
    ///
    /// Congestion games with affine costs `ψₖ(y) = αₖ + βₖ y` are linear on the
    /// simplex: `r(x) = Aᵀα 1ᵀx + Aᵀ diag(β) A x`.
    pub fn linear_equivalent(&self) -> Option<DMatrix<f64>> {
        match &self.rewards {
            Rewards::Linear { matrix } => Some(matrix.clone()),
            Rewards::Congestion { incidence, costs } if costs.iter().all(|c| c.is_affine()) => {
                let l = incidence.nrows();
                let m = incidence.ncols();
                let mut out = DMatrix::zeros(m, m);
                for k in 0..l {
                    let CostFunction::Affine { intercept, slope } = costs[k] else {
                        unreachable!()
                    };
                    for i in 0..m {
                        if incidence[(k, i)] == 0.0 {
                            continue;
                        }
                        for j in 0..m {
                            out[(i, j)] += intercept + slope * incidence[(k, j)];
                        }
                    }
                }
                Some(out)
            }
            _ => None,
        }
    }

    /// `r(x)`, with dimension checking.
    pub fn rewards(&self, x: &Configuration) -> Result<Vec<f64>> {
        Error::check_dim(self.num_actions(), x.dim())?;
        Ok(self.rewards_at(x.weights()))
    }

    /// `r(x)` at a raw point. Also defined slightly off the simplex for the
    /// built-in families, which finite-difference checks rely on.
    pub fn rewards_at(&self, x: &[f64]) -> Vec<f64> {
        match &self.rewards {
            Rewards::Linear { matrix } => {
                let m = matrix.nrows();
                (0..m)
                    .map(|i| (0..m).map(|j| matrix[(i, j)] * x[j]).sum())
                    .collect()
            }
            Rewards::Congestion { incidence, costs } => {
                let loads = resource_loads(incidence, x);
                let psi: Vec<f64> = costs.iter().zip(&loads).map(|(c, &y)| c.eval(y)).collect();
                (0..incidence.ncols())
                    .map(|i| {
                        (0..incidence.nrows())
                            .map(|k| incidence[(k, i)] * psi[k])
                            .sum()
                    })
                    .collect()
            }
            Rewards::Custom { rewards, .. } => rewards(x),
        }
    }

    /// `r_*(x) = maxᵢ rᵢ(x)`.
    pub fn max_reward(&self, x: &Configuration) -> Result<f64> {
        Ok(max_of(&self.rewards(x)?))
    }

    /// `r̄(x) = Σᵢ xᵢ rᵢ(x)`.
    pub fn mean_reward(&self, x: &Configuration) -> Result<f64> {
        let r = self.rewards(x)?;
        Ok(dot(x.weights(), &r))
    }

    pub fn describe(&self) -> String {
        match &self.rewards {
            Rewards::Linear { matrix } => format!("linear R={}", rows_string(matrix)),
            Rewards::Congestion { incidence, costs } => format!(
                "congestion A={} costs={:?}",
                rows_string(incidence),
                costs
            ),
            Rewards::Custom { description, .. } => format!("custom {description}"),
        }
    }

    /// Short stable identifier derived from the game's parameters.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.describe().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub(crate) fn resource_loads(incidence: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..incidence.nrows())
        .map(|k| (0..incidence.ncols()).map(|i| incidence[(k, i)] * x[i]).sum())
        .collect()
}

fn rows_string(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let r: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
            format!("[{}]", r.join(","))
        })
        .collect();
    format!("[{}]", rows.join(","))
}

pub fn matrix_from_rows(rows: &[&[f64]]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument("ragged or empty matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Classes of 2×2 linear reward games `R = [[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryClass {
    /// `a > c` and `d > b`; `interior` is the mixed equilibrium weight on action 1.
    Coordination { interior: f64 },
    /// `a < c` and `d < b`.
    AntiCoordination { interior: f64 },
    /// One action (0-based `action`) dominates, weakly when some payoff ties.
    Dominance { action: usize, weak: bool },
}

pub fn classify_binary_game(matrix: &DMatrix<f64>) -> Result<BinaryClass> {
    if matrix.nrows() != 2 || matrix.ncols() != 2 {
        return Err(Error::InvalidArgument("binary classification needs a 2x2 matrix".into()));
    }
    let (a, b, c, d) = (matrix[(0, 0)], matrix[(0, 1)], matrix[(1, 0)], matrix[(1, 1)]);
    let interior = || (d - b) / (a - c + d - b);
    Ok(if a > c && d > b {
        BinaryClass::Coordination {
            interior: interior(),
        }
    } else if a < c && d < b {
        BinaryClass::AntiCoordination {
            interior: interior(),
        }
    } else {
        // r₁ − r₂ = (a − c)x₁ + (b − d)x₂
        let weak = a == c || b == d;
        let action = if a >= c && b >= d { 0 } else { 1 };
        BinaryClass::Dominance { action, weak }
    })
}

/// `{i : xᵢ > threshold}`; thresholds of `1/m` or more are rejected since the
/// result could then be empty.
pub fn restrict_to_support(x: &Configuration, threshold: f64) -> Result<Support> {
    let m = x.dim();
    if !(threshold >= 0.0) || threshold >= 1.0 / m as f64 {
        return Err(Error::InvalidArgument(format!(
            "support threshold {threshold} must lie in [0, 1/{m})"
        )));
    }
    Ok(x.support(threshold))
}
