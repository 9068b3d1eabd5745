//! Imitation rules `F(x) = (f_ij(x))` and the vector field
//! `ẋᵢ = xᵢ Σⱼ xⱼ (f_jᵢ − f_ij)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::Game;
use crate::simplex::{sample_dirichlet, sample_rng, Configuration};

/// Pairwise switch propensity `f_ij` as a function of `(i, j, r_i, r_j, x)`.
pub type PairRateFn = Arc<dyn Fn(usize, usize, f64, f64, &[f64]) -> f64 + Send + Sync>;

pub const DEFAULT_SIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Replicator,
    Arctan,
    Custom,
}

#[derive(Clone)]
enum Rates {
    Replicator,
    Arctan { gains: DMatrix<f64> },
    Custom { rate: PairRateFn, lipschitz: f64 },
}

/// An imitation rule. Rates are computed from the reward vector, so the rule
/// is independent of any particular game instance.
#[derive(Clone)]
pub struct ImitationRule {
    rates: Rates,
    description: String,
}

impl fmt::Debug for ImitationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImitationRule")
            .field("kind", &self.kind())
            .field("description", &self.description)
            .finish()
    }
}

impl ImitationRule {
    /// `f_ij = ½(r_j − r_i)`, which turns the dynamics into the replicator equation.
    pub fn replicator() -> Self {
        ImitationRule {
            rates: Rates::Replicator,
            description: "replicator".into(),
        }
    }

    /// `f_ij = ½ + (1/π) arctan(K_ij (r_j − r_i))` with positive gains.
    pub fn arctan(gains: DMatrix<f64>) -> Result<Self> {
        if gains.nrows() != gains.ncols() {
            return Err(Error::InvalidArgument("gain matrix must be square".into()));
        }
        if let Some(k) = gains.iter().find(|&&k| !(k > 0.0) || !k.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "arctan gains must be positive and finite, got {k}"
            )));
        }
        Ok(ImitationRule {
            rates: Rates::Arctan { gains },
            description: "arctan".into(),
        })
    }

    /// A rule given by pairwise rates. Lipschitz continuity is the caller's
    /// obligation; `lipschitz` is only used to scale tie tolerances.
    pub fn custom(rate: PairRateFn, lipschitz: f64, description: impl Into<String>) -> Self {
        ImitationRule {
            rates: Rates::Custom { rate, lipschitz },
            description: description.into(),
        }
    }

    /// `f_ij = ½(r_i − r_j)`: violates the sign condition everywhere rewards differ.
    pub fn reversed_replicator() -> Self {
        ImitationRule::custom(
            Arc::new(|_, _, ri, rj, _| 0.5 * (ri - rj)),
            1.0,
            "reversed-replicator",
        )
    }

    pub fn kind(&self) -> RuleKind {
        match self.rates {
            Rates::Replicator => RuleKind::Replicator,
            Rates::Arctan { .. } => RuleKind::Arctan,
            Rates::Custom { .. } => RuleKind::Custom,
        }
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn gains(&self) -> Option<&DMatrix<f64>> {
        match &self.rates {
            Rates::Arctan { gains } => Some(gains),
            _ => None,
        }
    }

    /// Bound on `|f_ij − f_ji|` per unit reward difference.
    pub fn lipschitz_hint(&self) -> f64 {
        match &self.rates {
            Rates::Replicator => 1.0,
            Rates::Arctan { gains } => {
                let n = gains.nrows();
                let mut best: f64 = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        best = best.max((gains[(i, j)] + gains[(j, i)]) / PI);
                    }
                }
                best
            }
            Rates::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    fn check_dim(&self, m: usize) -> Result<()> {
        match &self.rates {
            Rates::Arctan { gains } => Error::check_dim(gains.nrows(), m),
            _ => Ok(()),
        }
    }

    /// `f_ij` given the two rewards.
    pub fn pair_rate(&self, i: usize, j: usize, ri: f64, rj: f64, x: &[f64]) -> f64 {
        match &self.rates {
            Rates::Replicator => 0.5 * (rj - ri),
            Rates::Arctan { gains } => 0.5 + (gains[(i, j)] * (rj - ri)).atan() / PI,
            Rates::Custom { rate, .. } => rate(i, j, ri, rj, x),
        }
    }

    /// The full matrix `F(x)` from the reward vector `r = r(x)`.
    pub fn rate_matrix(&self, r: &[f64], x: &[f64]) -> DMatrix<f64> {
        let m = r.len();
        DMatrix::from_fn(m, m, |i, j| self.pair_rate(i, j, r[i], r[j], x))
    }

    /// `F(x)` for a game, with dimension checks.
    pub fn rates(&self, game: &Game, x: &Configuration) -> Result<DMatrix<f64>> {
        self.check_dim(game.num_actions())?;
        let r = game.rewards(x)?;
        Ok(self.rate_matrix(&r, x.weights()))
    }
}

/// Draws a gain matrix with entries uniform in `(lo, hi]`.
pub fn sample_uniform_gains<R: Rng + ?Sized>(m: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |_, _| {
        let u: f64 = rng.random();
        lo + (hi - lo) * (1.0 - u)
    })
}

/// `ẋᵢ = xᵢ Σⱼ xⱼ (f_jᵢ − f_ij)`, evaluated pair by pair.
pub fn field_from_rates(rates: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let m = x.len();
    (0..m)
        .map(|i| {
            let inner: f64 = (0..m).map(|j| x[j] * (rates[(j, i)] - rates[(i, j)])).sum();
            x[i] * inner
        })
        .collect()
}

/// `ẋ = diag(x)(Fᵀ − F)x`, evaluated as two matrix-vector products.
pub fn field_from_rates_compact(rates: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let xv = nalgebra::DVector::from_column_slice(x);
    let inflow = rates.transpose() * &xv;
    let outflow = rates * &xv;
    (0..m).map(|i| x[i] * (inflow[i] - outflow[i])).collect()
}

/// The imitation vector field at `x`.
pub fn vector_field(game: &Game, rule: &ImitationRule, x: &Configuration) -> Result<Vec<f64>> {
    let f = rule.rates(game, x)?;
    Ok(field_from_rates(&f, x.weights()))
}

/// Same field through the compact matrix form.
pub fn vector_field_compact(game: &Game, rule: &ImitationRule, x: &Configuration) -> Result<Vec<f64>> {
    let f = rule.rates(game, x)?;
    Ok(field_from_rates_compact(&f, x.weights()))
}

/// Field at a raw state without validation; used inside the integrator.
pub(crate) fn field_at(game: &Game, rule: &ImitationRule, x: &[f64]) -> Vec<f64> {
    let r = game.rewards_at(x);
    field_from_rates(&rule.rate_matrix(&r, x), x)
}

/// `½ Σᵢⱼ xᵢxⱼ (rᵢ − rⱼ)(f_jᵢ − f_ij)`: the potential derivative written
/// without the potential, valid for any potential game.
pub fn pairwise_chain(game: &Game, rule: &ImitationRule, x: &[f64]) -> f64 {
    let r = game.rewards_at(x);
    let f = rule.rate_matrix(&r, x);
    let m = x.len();
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            acc += x[i] * x[j] * (r[i] - r[j]) * (f[(j, i)] - f[(i, j)]);
        }
    }
    0.5 * acc
}

#[derive(Debug, Clone, Serialize)]
pub struct SignWitness {
    pub x: Configuration,
    pub i: usize,
    pub j: usize,
    pub reward_gap: f64,
    pub rate_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SignReport {
    pub holds: bool,
    pub witness: Option<SignWitness>,
}

/// First pair violating `sgn(f_ij − f_ji) = sgn(r_j − r_i)` at `x`, if any.
fn sign_violation(rule: &ImitationRule, r: &[f64], x: &Configuration, tol: f64) -> Option<SignWitness> {
    let m = r.len();
    let f = rule.rate_matrix(r, x.weights());
    let tie_bound = 10.0 * tol * rule.lipschitz_hint().max(1.0);
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let reward_gap = r[j] - r[i];
            let rate_gap = f[(i, j)] - f[(j, i)];
            let bad = if reward_gap.abs() > tol {
                rate_gap.signum() != reward_gap.signum() || rate_gap == 0.0
            } else {
                rate_gap.abs() > tie_bound
            };
            if bad {
                return Some(SignWitness {
                    x: x.clone(),
                    i,
                    j,
                    reward_gap,
                    rate_gap,
                });
            }
        }
    }
    None
}

/// Samples the sign condition at `samples` uniform points.
pub fn check_sign_condition(
    game: &Game,
    rule: &ImitationRule,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<SignReport> {
    let m = game.num_actions();
    rule.check_dim(m)?;
    let witness = (0..samples as u64)
        .into_par_iter()
        .filter_map(|k| {
            let x = sample_dirichlet(m, &mut sample_rng(seed, k));
            let r = game.rewards_at(x.weights());
            sign_violation(rule, &r, &x, tol).map(|w| (k, w))
        })
        .min_by_key(|(k, _)| *k)
        .map(|(_, w)| w);
    Ok(SignReport {
        holds: witness.is_none(),
        witness,
    })
}

/// A point where `rᵢ > rⱼ` but action `i` is less attractive than `j` to a
/// third party `k`.
#[derive(Debug, Clone, Serialize)]
pub struct OrderWitness {
    pub x: Configuration,
    pub i: usize,
    pub j: usize,
    pub k: usize,
    /// `rᵢ − rⱼ` (positive).
    pub reward_gap: f64,
    /// `(f_kᵢ − f_ik) − (f_kⱼ − f_jk)` (negative).
    pub rate_gap: f64,
}

impl OrderWitness {
    /// Re-evaluates rewards and rates at the witness point from scratch.
    pub fn reverify(&self, game: &Game, rule: &ImitationRule, tol: f64) -> Result<bool> {
        let r = game.rewards(&self.x)?;
        let x = self.x.weights();
        let (i, j, k) = (self.i, self.j, self.k);
        let f = |a: usize, b: usize| rule.pair_rate(a, b, r[a], r[b], x);
        let attract_i = f(k, i) - f(i, k);
        let attract_j = f(k, j) - f(j, k);
        Ok(r[i] - r[j] > tol && attract_i - attract_j < -tol)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderReport {
    pub holds: bool,
    pub witness: Option<OrderWitness>,
}

/// Largest violation margin `min(rᵢ − rⱼ, −rate_gap)` over all triples at `x`.
fn order_margin(rule: &ImitationRule, r: &[f64], x: &[f64]) -> (f64, usize, usize, usize, f64, f64) {
    let m = r.len();
    let f = rule.rate_matrix(r, x);
    let mut best = (f64::NEG_INFINITY, 0, 0, 0, 0.0, 0.0);
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let reward_gap = r[i] - r[j];
                let rate_gap = (f[(k, i)] - f[(i, k)]) - (f[(k, j)] - f[(j, k)]);
                let margin = reward_gap.min(-rate_gap);
                if margin > best.0 {
                    best = (margin, i, j, k, reward_gap, rate_gap);
                }
            }
        }
    }
    best
}

/// Searches for a violation of the third-party ordering condition
/// `rᵢ ≥ rⱼ ⇔ f_kᵢ − f_ik ≥ f_kⱼ − f_jk`.
///
/// Random sampling locates the most promising point; a coordinate hill-climb
/// then pushes its violation margin above `tol`.
pub fn check_order_condition(
    game: &Game,
    rule: &ImitationRule,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<OrderReport> {
    let m = game.num_actions();
    rule.check_dim(m)?;
    let margin_at = |x: &[f64]| order_margin(rule, &game.rewards_at(x), x);

    let best = (0..samples as u64)
        .into_par_iter()
        .map(|k| {
            let x = sample_dirichlet(m, &mut sample_rng(seed, k));
            let mg = margin_at(x.weights());
            (mg.0, k, x)
        })
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    let Some((_, _, start)) = best else {
        return Ok(OrderReport { holds: true, witness: None });
    };

    let mut x = start.into_weights();
    let mut current = margin_at(&x);
    let mut delta = 0.05;
    while current.0 <= tol && delta > 1e-9 {
        let mut improved = false;
        for a in 0..m {
            for b in 0..m {
                if a == b || x[b] < delta {
                    continue;
                }
                let mut y = x.clone();
                y[a] += delta;
                y[b] -= delta;
                let cand = margin_at(&y);
                if cand.0 > current.0 {
                    x = y;
                    current = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            delta *= 0.5;
        }
    }

    if current.0 > tol {
        let (_, i, j, k, reward_gap, rate_gap) = current;
        let x = Configuration::new(x)?;
        Ok(OrderReport {
            holds: false,
            witness: Some(OrderWitness {
                x,
                i,
                j,
                k,
                reward_gap,
                rate_gap,
            }),
        })
    } else {
        Ok(OrderReport { holds: true, witness: None })
    }
}
