//! Nash, restricted-Nash and critical configurations.
//!
//! Linear games (and congestion games with affine costs) are solved exactly by
//! enumerating supports; congestion games with decreasing costs are solved by
//! maximizing their concave potential on every face.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{dot, max_of, Game, GameFamily};
use crate::potential::{builtin_potential, Potential};
use crate::simplex::{project_onto_simplex, sample_dirichlet, sample_rng, Configuration, Support};

/// Default absolute tolerance for reward-equality and membership predicates.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Two items closer than this are the same equilibrium.
pub const DEDUP_DISTANCE: f64 = 1e-9;

/// Largest action set handled by support enumeration.
pub const MAX_ENUMERATION_ACTIONS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumLabel {
    Nash,
    /// Not Nash, but Nash for a game restricted to a face strictly larger than
    /// the point's own support.
    RestrictedNash,
    /// Critical only with respect to its own support.
    CriticalNonNash,
}

impl fmt::Display for EquilibriumLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EquilibriumLabel::Nash => "nash",
            EquilibriumLabel::RestrictedNash => "restricted-nash",
            EquilibriumLabel::CriticalNonNash => "critical-non-nash",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityHint {
    StableCandidate,
    Unstable,
    Saddle,
}

impl fmt::Display for StabilityHint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilityHint::StableCandidate => "stable-candidate",
            StabilityHint::Unstable => "unstable",
            StabilityHint::Saddle => "saddle",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LabeledEquilibrium {
    pub point: Configuration,
    pub support: Support,
    pub label: EquilibriumLabel,
    pub stability_hint: Option<StabilityHint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSet {
    pub items: Vec<LabeledEquilibrium>,
    pub game_digest: String,
    /// Supports whose equal-reward system has a continuum of solutions; these
    /// are reported rather than sampled.
    pub degenerate_supports: Vec<Support>,
}

impl EquilibriumSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn with_label(&self, label: EquilibriumLabel) -> Vec<&LabeledEquilibrium> {
        self.items.iter().filter(|e| e.label == label).collect()
    }

    pub fn nash(&self) -> Vec<&LabeledEquilibrium> {
        self.with_label(EquilibriumLabel::Nash)
    }

    /// Items that are not Nash equilibria of the full game.
    pub fn boundary_critical(&self) -> Vec<&LabeledEquilibrium> {
        self.items
            .iter()
            .filter(|e| e.label != EquilibriumLabel::Nash)
            .collect()
    }

    /// Members of the restricted Nash set `N_S`.
    pub fn restricted_to(&self, game: &Game, support: &Support, tol: f64) -> Vec<&LabeledEquilibrium> {
        self.items
            .iter()
            .filter(|e| e.support.is_subset_of(support))
            .filter(|e| is_restricted_nash(game, &e.point, support, tol).unwrap_or(false))
            .collect()
    }

    pub fn contains_point(&self, x: &Configuration, tol: f64) -> bool {
        self.items.iter().any(|e| e.point.distance(x) <= tol)
    }
}

/// Whether `x` is a Nash equilibrium of the game restricted to `support`.
pub fn is_restricted_nash(game: &Game, x: &Configuration, support: &Support, tol: f64) -> Result<bool> {
    Error::check_dim(game.num_actions(), support.universe())?;
    if !x.is_supported_on(support, tol) {
        return Err(Error::NotSupported);
    }
    let r = game.rewards(x)?;
    let best = support
        .actions()
        .iter()
        .map(|&j| r[j])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(x.weights()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > tol)
        .all(|(i, _)| r[i] >= best - tol))
}

pub fn is_nash(game: &Game, x: &Configuration, tol: f64) -> Result<bool> {
    is_restricted_nash(game, x, &Support::full(game.num_actions()), tol)
}

/// Every used action earns the mean reward.
pub fn is_critical(game: &Game, x: &Configuration, tol: f64) -> Result<bool> {
    let r = game.rewards(x)?;
    let mean = dot(x.weights(), &r);
    Ok(x.weights()
        .iter()
        .zip(&r)
        .filter(|(&w, _)| w > tol)
        .all(|(_, &ri)| (ri - mean).abs() <= tol))
}

/// Critical, but some unused action earns strictly more than the mean.
pub fn is_boundary_critical(game: &Game, x: &Configuration, tol: f64) -> Result<bool> {
    if !is_critical(game, x, tol)? {
        return Ok(false);
    }
    let r = game.rewards(x)?;
    Ok(max_of(&r) > dot(x.weights(), &r) + tol)
}

/// Label of a critical point, or `None` when `x` is not critical.
pub fn classify_point(game: &Game, x: &Configuration, tol: f64) -> Result<Option<EquilibriumLabel>> {
    if !is_critical(game, x, tol)? {
        return Ok(None);
    }
    if is_nash(game, x, tol)? {
        return Ok(Some(EquilibriumLabel::Nash));
    }
    // Largest face on which x is restricted Nash: its support plus every
    // unused action earning no more than the mean.
    let r = game.rewards(x)?;
    let mean = dot(x.weights(), &r);
    let own = x.support(tol);
    let extendable = (0..game.num_actions()).any(|j| !own.contains(j) && r[j] <= mean + tol);
    Ok(Some(if extendable {
        EquilibriumLabel::RestrictedNash
    } else {
        EquilibriumLabel::CriticalNonNash
    }))
}

fn label_and_push(
    game: &Game,
    x: Configuration,
    tol: f64,
    items: &mut Vec<LabeledEquilibrium>,
) -> Result<()> {
    if items.iter().any(|e| e.point.distance(&x) < DEDUP_DISTANCE) {
        return Ok(());
    }
    if let Some(label) = classify_point(game, &x, tol)? {
        items.push(LabeledEquilibrium {
            support: x.support(tol),
            point: x,
            label,
            stability_hint: None,
        });
    }
    Ok(())
}

/// Supports in deterministic order: by size, then by bitmask.
fn supports_in_order(m: usize) -> Vec<Support> {
    let mut masks: Vec<u64> = (1..(1u64 << m)).collect();
    masks.sort_by_key(|&mk| (mk.count_ones(), mk));
    masks
        .into_iter()
        .map(|mk| Support::from_mask(m, mk).expect("nonzero mask"))
        .collect()
}

enum SupportSolution {
    Unique(Vec<f64>),
    Continuum,
    Inconsistent,
}

/// Solves `{rᵢ = r_j ∀ i, j ∈ S; Σ x = 1}` over the coordinates in `S`.
fn solve_support(matrix: &DMatrix<f64>, support: &Support) -> SupportSolution {
    let idx = support.actions();
    let s = idx.len();
    let mut a = DMatrix::zeros(s, s);
    let mut b = DVector::zeros(s);
    let pivot = idx[0];
    for (row, &i) in idx.iter().enumerate().skip(1) {
        for (col, &j) in idx.iter().enumerate() {
            a[(row - 1, col)] = matrix[(i, j)] - matrix[(pivot, j)];
        }
    }
    for col in 0..s {
        a[(s - 1, col)] = 1.0;
    }
    b[s - 1] = 1.0;

    let svd = a.clone().svd(true, true);
    let scale = svd.singular_values.max().max(1.0);
    let eps = 1e-10 * scale;
    let rank = svd.rank(eps);
    if rank == s {
        let x = a.lu().solve(&b).expect("full-rank system");
        return SupportSolution::Unique(x.iter().copied().collect());
    }
    match svd.solve(&b, eps) {
        Ok(x) if (&a * &x - &b).norm() <= 1e-9 * scale => SupportSolution::Continuum,
        _ => SupportSolution::Inconsistent,
    }
}

/// All critical configurations of a linear game `r(x) = R x` with at most six actions.
pub fn enumerate_equilibria_linear(matrix: &DMatrix<f64>, tol: f64) -> Result<EquilibriumSet> {
    let game = Game::linear(matrix.clone())?;
    enumerate_linear_game(&game, matrix, tol)
}

fn enumerate_linear_game(game: &Game, matrix: &DMatrix<f64>, tol: f64) -> Result<EquilibriumSet> {
    let m = matrix.nrows();
    if m > MAX_ENUMERATION_ACTIONS {
        return Err(Error::TooManyActions {
            max: MAX_ENUMERATION_ACTIONS,
            found: m,
        });
    }
    let mut items = Vec::new();
    let mut degenerate = Vec::new();
    for support in supports_in_order(m) {
        match solve_support(matrix, &support) {
            SupportSolution::Unique(sol) => {
                if sol.iter().any(|&v| v < -1e-12) {
                    continue;
                }
                let mut w = vec![0.0; m];
                for (&i, &v) in support.actions().iter().zip(&sol) {
                    w[i] = v.max(0.0);
                }
                label_and_push(game, Configuration::new(w)?, tol, &mut items)?;
            }
            SupportSolution::Continuum => degenerate.push(support),
            SupportSolution::Inconsistent => {}
        }
    }
    let mut set = EquilibriumSet {
        items,
        game_digest: game.digest(),
        degenerate_supports: degenerate,
    };
    attach_stability_hints(game, &mut set, tol);
    Ok(set)
}

/// Options for projected gradient ascent on the simplex.
#[derive(Debug, Clone, Copy)]
pub struct AscentOptions {
    pub gradient_tol: f64,
    pub max_iterations: usize,
    pub armijo: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            gradient_tol: 1e-10,
            max_iterations: 100_000,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AscentOutcome {
    pub point: Configuration,
    pub iterations: usize,
    pub converged: bool,
    /// `‖x − P(x + ∇Φ(x))‖` at the returned point.
    pub gradient_mapping_norm: f64,
}

/// Maximizes `Φ` over the face spanned by `support`, starting from its barycenter.
///
/// Steps are chosen by backtracking (halving from 1) with an Armijo condition
/// along the projection arc.
pub fn maximize_on_face(potential: &Potential, support: &Support, opts: AscentOptions) -> Result<AscentOutcome> {
    let m = potential.dim();
    Error::check_dim(m, support.universe())?;
    let idx = support.actions();
    let embed = |sub: &[f64]| {
        let mut w = vec![0.0; m];
        for (&i, &v) in idx.iter().zip(sub) {
            w[i] = v;
        }
        w
    };
    let sub_gradient = |sub: &[f64]| {
        let g = potential.gradient_at(&embed(sub));
        idx.iter().map(|&i| g[i]).collect::<Vec<f64>>()
    };
    let mapping_norm = |sub: &[f64], g: &[f64]| {
        let stepped: Vec<f64> = sub.iter().zip(g).map(|(a, b)| a + b).collect();
        let p = project_onto_simplex(&stepped);
        crate::simplex::euclidean(&p, sub)
    };

    let mut x = vec![1.0 / idx.len() as f64; idx.len()];
    let mut fx = potential.value_at(&embed(&x));
    let mut iterations = 0;
    let mut g = sub_gradient(&x);
    let mut norm = mapping_norm(&x, &g);
    while norm > opts.gradient_tol && iterations < opts.max_iterations {
        iterations += 1;
        let mut step = 1.0;
        loop {
            let stepped: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            let y = project_onto_simplex(&stepped);
            let fy = potential.value_at(&embed(&y));
            let ascent: f64 = g.iter().zip(y.iter().zip(&x)).map(|(gi, (yi, xi))| gi * (yi - xi)).sum();
            if fy >= fx + opts.armijo * ascent || step < 1e-20 {
                x = y;
                fx = fy;
                break;
            }
            step *= 0.5;
        }
        g = sub_gradient(&x);
        norm = mapping_norm(&x, &g);
    }
    Ok(AscentOutcome {
        point: Configuration::new(embed(&x))?,
        iterations,
        converged: norm <= opts.gradient_tol,
        gradient_mapping_norm: norm,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CongestionNash {
    pub equilibrium: LabeledEquilibrium,
    pub ascent: AscentOutcome,
    /// Set when the iteration cap was reached before the gradient tolerance.
    pub warning: Option<String>,
}

fn require_decreasing_costs(game: &Game) -> Result<Potential> {
    let Some((incidence, costs)) = game.congestion_parts() else {
        return Err(Error::Unsupported("not a congestion game".into()));
    };
    if let Some(index) = costs.iter().position(|c| !c.is_strictly_decreasing(1000)) {
        return Err(Error::NonDecreasingCost { index });
    }
    crate::potential::congestion_potential(incidence, costs)
}

/// The unique Nash equilibrium of a congestion game with strictly decreasing
/// costs, found as the maximizer of its concave potential.
pub fn congestion_nash_by_potential(game: &Game, opts: AscentOptions) -> Result<CongestionNash> {
    let potential = require_decreasing_costs(game)?;
    let m = game.num_actions();
    let ascent = maximize_on_face(&potential, &Support::full(m), opts)?;
    let warning = (!ascent.converged).then(|| {
        format!(
            "iteration cap {} reached with gradient mapping norm {:e}",
            opts.max_iterations, ascent.gradient_mapping_norm
        )
    });
    let point = ascent.point.clone();
    Ok(CongestionNash {
        equilibrium: LabeledEquilibrium {
            support: point.support(DEFAULT_TOL),
            point,
            label: EquilibriumLabel::Nash,
            stability_hint: Some(StabilityHint::StableCandidate),
        },
        ascent,
        warning,
    })
}

/// Critical configurations of a congestion game with decreasing costs: one
/// potential maximizer per face (each is restricted Nash on that face).
pub fn enumerate_equilibria_congestion(game: &Game, tol: f64, opts: AscentOptions) -> Result<EquilibriumSet> {
    let potential = require_decreasing_costs(game)?;
    let m = game.num_actions();
    if m > MAX_ENUMERATION_ACTIONS {
        return Err(Error::TooManyActions {
            max: MAX_ENUMERATION_ACTIONS,
            found: m,
        });
    }
    let mut items = Vec::new();
    for support in supports_in_order(m) {
        let outcome = maximize_on_face(&potential, &support, opts)?;
        label_and_push(game, outcome.point, tol, &mut items)?;
    }
    let mut set = EquilibriumSet {
        items,
        game_digest: game.digest(),
        degenerate_supports: Vec::new(),
    };
    attach_stability_hints(game, &mut set, tol);
    Ok(set)
}

/// Equilibrium set through the best available exact path for the game's family.
pub fn equilibrium_set(game: &Game, tol: f64) -> Result<EquilibriumSet> {
    match game.family() {
        GameFamily::Linear => {
            enumerate_linear_game(game, game.matrix().expect("linear family"), tol)
        }
        GameFamily::Congestion => match enumerate_equilibria_congestion(game, tol, AscentOptions::default()) {
            Err(Error::NonDecreasingCost { .. }) if game.linear_equivalent().is_some() => {
                let r = game.linear_equivalent().expect("checked");
                enumerate_linear_game(game, &r, tol)
            }
            other => other,
        },
        GameFamily::Custom => Err(Error::Unsupported(
            "equilibrium enumeration needs a linear or congestion game".into(),
        )),
    }
}

/// Euclidean distance from `x` to the nearest of `points`.
pub fn distance_to_set<'a>(
    x: &Configuration,
    points: impl IntoIterator<Item = &'a Configuration>,
) -> Result<f64> {
    points
        .into_iter()
        .map(|p| x.distance(p))
        .min_by(|a, b| a.total_cmp(b))
        .ok_or(Error::EmptySet)
}

/// Nearest member of `items` and its distance.
pub fn nearest<'a>(
    x: &Configuration,
    items: &[&'a LabeledEquilibrium],
) -> Option<(&'a LabeledEquilibrium, f64)> {
    items
        .iter()
        .map(|e| (*e, x.distance(&e.point)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

#[derive(Debug, Clone, Serialize)]
pub struct BorderReport {
    pub holds: bool,
    pub min_margin: f64,
    /// Actions earning the maximal reward at the boundary-critical point.
    pub best_actions: Vec<usize>,
}

/// Samples points near a boundary-critical `xbar` that put mass on the
/// best-reply actions and checks that the potential is strictly larger there.
///
/// Each sample is `xbar + t·z`, where `z` moves mass `a ∈ (0, eps/2)` from the
/// support of `xbar` (proportionally) onto the best-reply set with random
/// weights, and `t ∈ (0, 1]`.
pub fn border_potential_check(
    game: &Game,
    potential: &Potential,
    xbar: &Configuration,
    eps: f64,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<BorderReport> {
    Error::check_dim(game.num_actions(), potential.dim())?;
    if !(eps > 0.0) || samples == 0 {
        return Err(Error::InvalidArgument("need eps > 0 and samples >= 1".into()));
    }
    if !is_boundary_critical(game, xbar, tol)? {
        return Err(Error::NotBoundaryCritical);
    }
    let m = game.num_actions();
    let r = game.rewards(xbar)?;
    let best = max_of(&r);
    let best_actions: Vec<usize> = (0..m).filter(|&i| r[i] >= best - tol).collect();
    let target = Support::new(m, best_actions.iter().copied())?;
    let base = potential.value(xbar)?;

    let mut rng = sample_rng(seed, 0);
    let mut min_margin = f64::INFINITY;
    for _ in 0..samples {
        let a: f64 = 0.5 * eps * (1.0 - rng.random::<f64>()) * 0.999_999;
        let t: f64 = 1.0 - rng.random::<f64>();
        let onto = crate::simplex::sample_face(m, &target, &mut rng);
        let w: Vec<f64> = (0..m)
            .map(|i| xbar.weights()[i] + t * a * (onto.weights()[i] - xbar.weights()[i]))
            .collect();
        let x = Configuration::new(w)?;
        let margin = potential.value(&x)? - base;
        min_margin = min_margin.min(margin);
    }
    Ok(BorderReport {
        holds: min_margin > 0.0,
        min_margin,
        best_actions,
    })
}

/// Classifies critical points by the potential landscape around them:
/// no higher neighbour → stable candidate, only higher neighbours → unstable,
/// both → saddle. Boundary-critical points are always unstable.
pub fn stability_hint(game: &Game, potential: &Potential, x: &Configuration, tol: f64) -> Result<StabilityHint> {
    if is_boundary_critical(game, x, tol)? {
        return Ok(StabilityHint::Unstable);
    }
    let m = game.num_actions();
    let radius = 1e-4;
    let base = potential.value(x)?;
    let threshold = 1e-13 * base.abs().max(1.0);
    let mut rng = sample_rng(0x5eed, 0);
    let mut targets: Vec<Configuration> = (0..m).map(|i| Configuration::vertex(m, i)).collect();
    targets.extend((0..128).map(|_| sample_dirichlet(m, &mut rng)));
    let (mut higher, mut lower) = (false, false);
    for y in targets {
        let w: Vec<f64> = x
            .weights()
            .iter()
            .zip(y.weights())
            .map(|(a, b)| a + radius * (b - a))
            .collect();
        let delta = potential.value_at(&w) - base;
        if delta > threshold {
            higher = true;
        } else if delta < -threshold {
            lower = true;
        }
    }
    Ok(match (higher, lower) {
        (false, _) => StabilityHint::StableCandidate,
        (true, false) => StabilityHint::Unstable,
        (true, true) => StabilityHint::Saddle,
    })
}

fn attach_stability_hints(game: &Game, set: &mut EquilibriumSet, tol: f64) {
    let Some(potential) = game.potential().cloned().or_else(|| builtin_potential(game)) else {
        return;
    };
    for item in set.items.iter_mut() {
        item.stability_hint = stability_hint(game, &potential, &item.point, tol).ok();
    }
}
