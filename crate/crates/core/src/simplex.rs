//! Points of the unit simplex and the subsets of actions they are supported on.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries above `-CLAMP_TOL` are clamped to zero during construction.
pub const CLAMP_TOL: f64 = 1e-12;

/// Default threshold separating true zeros from round-off.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-9;

/// A population state: nonnegative action weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Configuration(Vec<f64>);

impl Configuration {
    /// Builds a configuration by clamping round-off negatives and dividing by the sum.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidConfiguration("no actions".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidConfiguration(format!("non-finite entry {w}")));
        }
        if let Some(w) = weights.iter().find(|&&w| w < -CLAMP_TOL) {
            return Err(Error::InvalidConfiguration(format!("negative entry {w:e}")));
        }
        let mut weights = weights;
        for w in weights.iter_mut() {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidConfiguration("entries sum to zero".into()));
        }
        for w in weights.iter_mut() {
            *w /= sum;
        }
        Ok(Configuration(weights))
    }

    /// The pure configuration `δ⁽ⁱ⁾` (0-based `index`).
    pub fn vertex(m: usize, index: usize) -> Self {
        assert!(index < m, "vertex index out of range");
        let mut w = vec![0.0; m];
        w[index] = 1.0;
        Configuration(w)
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m > 0);
        Configuration(vec![1.0 / m as f64; m])
    }

    /// Uniform barycenter of the face spanned by `support`.
    pub fn barycenter(m: usize, support: &Support) -> Self {
        let mut w = vec![0.0; m];
        let share = 1.0 / support.len() as f64;
        for &i in support.actions() {
            w[i] = share;
        }
        Configuration(w)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.0
    }

    pub fn distance(&self, other: &Configuration) -> f64 {
        euclidean(&self.0, &other.0)
    }

    /// Actions with weight above `threshold`.
    pub fn support(&self, threshold: f64) -> Support {
        let actions = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > threshold)
            .map(|(i, _)| i)
            .collect();
        Support {
            actions,
            size: self.dim(),
        }
    }

    /// True when every entry outside `support` is at most `tol`.
    pub fn is_supported_on(&self, support: &Support, tol: f64) -> bool {
        self.0
            .iter()
            .enumerate()
            .all(|(i, &w)| support.contains(i) || w <= tol)
    }
}

impl TryFrom<Vec<f64>> for Configuration {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Configuration::new(value)
    }
}

impl From<Configuration> for Vec<f64> {
    fn from(value: Configuration) -> Self {
        value.0
    }
}

impl AsRef<[f64]> for Configuration {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, w) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{w:.6}")?;
        }
        write!(f, ")")
    }
}

/// Nonempty subset of the action set, stored as sorted 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Support {
    actions: Vec<usize>,
    size: usize,
}

impl Support {
    pub fn new(size: usize, actions: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut actions: Vec<usize> = actions.into_iter().collect();
        actions.sort_unstable();
        actions.dedup();
        if actions.is_empty() {
            return Err(Error::InvalidArgument("support must be nonempty".into()));
        }
        if let Some(&i) = actions.iter().find(|&&i| i >= size) {
            return Err(Error::InvalidArgument(format!(
                "action {i} outside an action set of size {size}"
            )));
        }
        Ok(Support { actions, size })
    }

    pub fn full(size: usize) -> Self {
        Support {
            actions: (0..size).collect(),
            size,
        }
    }

    /// Support encoded by the bits of `mask` (bit `i` set means action `i` present).
    pub fn from_mask(size: usize, mask: u64) -> Result<Self> {
        Support::new(size, (0..size).filter(|i| mask & (1 << i) != 0))
    }

    pub fn mask(&self) -> u64 {
        self.actions.iter().fold(0, |m, &i| m | (1 << i))
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.actions.binary_search(&i).is_ok()
    }

    pub fn universe(&self) -> usize {
        self.size
    }

    pub fn is_full(&self) -> bool {
        self.actions.len() == self.size
    }

    pub fn is_subset_of(&self, other: &Support) -> bool {
        self.actions.iter().all(|&i| other.contains(i))
    }
}

impl fmt::Display for Support {
    /// Prints 1-based action labels, e.g. `{1,3}`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.actions.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean projection of `v` onto the unit simplex (sort-and-threshold).
pub fn project_onto_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumulative += uk;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Deterministic generator for sample `index` of a run seeded with `seed`.
///
/// Each index gets its own ChaCha stream, so parallel sampling gives the same
/// draws regardless of scheduling.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform draw from the simplex (Dirichlet(1, …, 1)).
pub fn sample_dirichlet<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Configuration {
    let w: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    Configuration::new(w).expect("exponential draws are positive")
}

/// Uniform draw from the face spanned by `support`.
pub fn sample_face<R: Rng + ?Sized>(m: usize, support: &Support, rng: &mut R) -> Configuration {
    let mut w = vec![0.0; m];
    for &i in support.actions() {
        w[i] = rng.sample::<f64, _>(Exp1);
    }
    Configuration::new(w).expect("exponential draws are positive")
}

/// Regular grid on the simplex: all points `k / (n - 1)` with integer `k` summing to `n - 1`.
///
/// `resolution` is the number of points per edge (`grid = 101` gives step 0.01).
pub fn simplex_grid(m: usize, resolution: usize) -> Vec<Configuration> {
    assert!(resolution >= 2, "grid needs at least two points per edge");
    let total = resolution - 1;
    let mut out = Vec::new();
    let mut counts = vec![0usize; m];
    fill_grid(&mut counts, 0, total, total, &mut out);
    out
}

fn fill_grid(
    counts: &mut Vec<usize>,
    pos: usize,
    remaining: usize,
    total: usize,
    out: &mut Vec<Configuration>,
) {
    let m = counts.len();
    if pos == m - 1 {
        counts[pos] = remaining;
        let w = counts.iter().map(|&c| c as f64 / total as f64).collect();
        out.push(Configuration(w));
        return;
    }
    for c in (0..=remaining).rev() {
        counts[pos] = c;
        fill_grid(counts, pos + 1, remaining - c, total, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn construction_normalizes_and_clamps() {
        let x = Configuration::new(vec![2.0, 2.0, -1e-13]).unwrap();
        assert_eq!(x.weights(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(Configuration::new(vec![]).is_err());
        assert!(Configuration::new(vec![0.0, 0.0]).is_err());
        assert!(Configuration::new(vec![1.0, -1e-6]).is_err());
        assert!(Configuration::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn support_display_is_one_based() {
        let s = Support::new(3, [0, 2]).unwrap();
        assert_eq!(s.to_string(), "{1,3}");
        assert_eq!(s.mask(), 0b101);
        assert_eq!(Support::from_mask(3, 0b101).unwrap(), s);
    }

    #[test]
    fn projection_of_simplex_point_is_identity() {
        let p = project_onto_simplex(&[0.2, 0.3, 0.5]);
        for (a, b) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(project_onto_simplex(&[5.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn grid_counts() {
        // number of compositions of n-1 into m parts
        assert_eq!(simplex_grid(2, 101).len(), 101);
        assert_eq!(simplex_grid(3, 11).len(), 66);
    }

    proptest! {
        #[test]
        fn constructed_configurations_lie_on_simplex(w in prop::collection::vec(0.0f64..10.0, 1..8)) {
            prop_assume!(w.iter().sum::<f64>() > 1e-9);
            let x = Configuration::new(w).unwrap();
            prop_assert!(x.weights().iter().all(|&v| v >= 0.0));
            prop_assert!((x.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn projection_lands_on_simplex_and_is_nearest(v in prop::collection::vec(-3.0f64..3.0, 2..6), seed in 0u64..1000) {
            let p = project_onto_simplex(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // no random simplex point is closer than the projection
            let mut rng = sample_rng(seed, 0);
            let d = euclidean(&p, &v);
            for _ in 0..50 {
                let y = sample_dirichlet(v.len(), &mut rng);
                prop_assert!(euclidean(y.weights(), &v) >= d - 1e-12);
            }
        }
    }
}
