//! Potential functions: closed forms for the built-in game families and
//! numerical checks of the potential identity `r_j − r_i = ∂_jΦ − ∂_iΦ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{dot, resource_loads, CostFunction, Game};
use crate::simplex::{sample_dirichlet, sample_rng, Configuration};

pub type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialForm {
    BinaryQuadratic,
    CoordinationQuadratic,
    Quadratic,
    CongestionSum,
    Custom,
}

impl fmt::Display for PotentialForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PotentialForm::BinaryQuadratic => "binary-quadratic",
            PotentialForm::CoordinationQuadratic => "coordination-quadratic",
            PotentialForm::Quadratic => "quadratic",
            PotentialForm::CongestionSum => "congestion-sum",
            PotentialForm::Custom => "custom",
        })
    }
}

#[derive(Clone)]
enum Repr {
    /// `½ xᵀ S x` with symmetric `S`.
    Quadratic(DMatrix<f64>),
    /// `Σₖ Ψₖ((A x)ₖ)`.
    Congestion {
        incidence: DMatrix<f64>,
        costs: Vec<CostFunction>,
    },
    Custom {
        dim: usize,
        value: ValueFn,
        gradient: GradientFn,
    },
}

/// A candidate potential `Φ` with its gradient. Values are only meaningful up
/// to an additive constant.
#[derive(Clone)]
pub struct Potential {
    form: PotentialForm,
    repr: Repr,
    offset: f64,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("form", &self.form)
            .field("dim", &self.dim())
            .field("offset", &self.offset)
            .finish()
    }
}

impl Potential {
    /// `½ xᵀ S x` for a symmetric matrix `S`.
    pub fn quadratic(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidArgument("quadratic form must be square".into()));
        }
        let n = matrix.nrows();
        for i in 0..n {
            for j in 0..i {
                if matrix[(i, j)] != matrix[(j, i)] {
                    return Err(Error::InvalidArgument("quadratic form must be symmetric".into()));
                }
            }
        }
        Ok(Potential {
            form: PotentialForm::Quadratic,
            repr: Repr::Quadratic(matrix),
            offset: 0.0,
        })
    }

    /// `½ xᵀ ((R + Rᵀ)/2) x`, the natural quadratic candidate for a linear game.
    /// Exact when `R` is symmetric; fails the identity check otherwise.
    pub fn symmetric_part(matrix: &DMatrix<f64>) -> Result<Self> {
        let sym = (matrix + matrix.transpose()) * 0.5;
        Potential::quadratic(sym)
    }

    pub fn custom(dim: usize, value: ValueFn, gradient: GradientFn) -> Self {
        Potential {
            form: PotentialForm::Custom,
            repr: Repr::Custom {
                dim,
                value,
                gradient,
            },
            offset: 0.0,
        }
    }

    /// The same potential plus a constant.
    pub fn shifted(mut self, constant: f64) -> Self {
        self.offset += constant;
        self
    }

    pub fn form(&self) -> PotentialForm {
        self.form
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            Repr::Quadratic(s) => s.nrows(),
            Repr::Congestion { incidence, .. } => incidence.ncols(),
            Repr::Custom { dim, .. } => *dim,
        }
    }

    pub fn value(&self, x: &Configuration) -> Result<f64> {
        Error::check_dim(self.dim(), x.dim())?;
        Ok(self.value_at(x.weights()))
    }

    pub fn gradient(&self, x: &Configuration) -> Result<Vec<f64>> {
        Error::check_dim(self.dim(), x.dim())?;
        Ok(self.gradient_at(x.weights()))
    }

    /// `Φ` at a raw point (closed forms extend off the simplex).
    pub fn value_at(&self, x: &[f64]) -> f64 {
        let base = match &self.repr {
            Repr::Quadratic(s) => {
                let n = s.nrows();
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += x[i] * s[(i, j)] * x[j];
                    }
                }
                0.5 * acc
            }
            Repr::Congestion { incidence, costs } => resource_loads(incidence, x)
                .iter()
                .zip(costs)
                .map(|(&y, c)| c.antiderivative(y))
                .sum(),
            Repr::Custom { value, .. } => value(x),
        };
        base + self.offset
    }

    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        match &self.repr {
            Repr::Quadratic(s) => {
                let n = s.nrows();
                (0..n)
                    .map(|i| (0..n).map(|j| s[(i, j)] * x[j]).sum())
                    .collect()
            }
            Repr::Congestion { incidence, costs } => {
                let psi: Vec<f64> = resource_loads(incidence, x)
                    .iter()
                    .zip(costs)
                    .map(|(&y, c)| c.eval(y))
                    .collect();
                (0..incidence.ncols())
                    .map(|i| {
                        (0..incidence.nrows())
                            .map(|k| incidence[(k, i)] * psi[k])
                            .sum()
                    })
                    .collect()
            }
            Repr::Custom { gradient, .. } => gradient(x),
        }
    }

    /// `Φ̇ = ∇Φ(x) · ẋ`.
    pub fn derivative_along(&self, x: &[f64], velocity: &[f64]) -> f64 {
        dot(&self.gradient_at(x), velocity)
    }
}

/// `φ(x) = ½((a − c)x₁² + (d − b)x₂²)` for `R = [[a, b], [c, d]]`.
pub fn binary_potential(matrix: &DMatrix<f64>) -> Result<Potential> {
    if matrix.nrows() != 2 || matrix.ncols() != 2 {
        return Err(Error::InvalidArgument("binary potential needs a 2x2 matrix".into()));
    }
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        matrix[(0, 0)] - matrix[(1, 0)],
        matrix[(1, 1)] - matrix[(0, 1)],
    ]));
    Ok(Potential {
        form: PotentialForm::BinaryQuadratic,
        repr: Repr::Quadratic(diag),
        offset: 0.0,
    })
}

/// `Φ(x) = ½ Σᵢ Rᵢᵢ xᵢ²` for a positive diagonal reward matrix.
pub fn coordination_potential(diagonal: &[f64]) -> Result<Potential> {
    if diagonal.is_empty() {
        return Err(Error::InvalidArgument("empty diagonal".into()));
    }
    if let Some(d) = diagonal.iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "coordination diagonal entries must be positive, got {d}"
        )));
    }
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diagonal));
    Ok(Potential {
        form: PotentialForm::CoordinationQuadratic,
        repr: Repr::Quadratic(s),
        offset: 0.0,
    })
}

/// `Φ(x) = Σₖ Ψₖ((A x)ₖ)`; its gradient `Aᵀ ψ(A x)` is the congestion reward vector.
pub fn congestion_potential(incidence: &DMatrix<f64>, costs: &[CostFunction]) -> Result<Potential> {
    if costs.len() != incidence.nrows() {
        return Err(Error::InvalidArgument(format!(
            "{} cost functions for {} resources",
            costs.len(),
            incidence.nrows()
        )));
    }
    if incidence.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument("incidence matrix must be 0/1".into()));
    }
    Ok(Potential {
        form: PotentialForm::CongestionSum,
        repr: Repr::Congestion {
            incidence: incidence.clone(),
            costs: costs.to_vec(),
        },
        offset: 0.0,
    })
}

/// The closed-form potential of a built-in game, when one is known.
///
/// Linear games get the binary form for 2×2 matrices and the coordination
/// form for positive diagonal matrices; congestion games get `ΣΨₖ`.
pub fn builtin_potential(game: &Game) -> Option<Potential> {
    if let Some(r) = game.matrix() {
        if r.nrows() == 2 {
            return binary_potential(r).ok();
        }
        let off_diagonal_zero = (0..r.nrows())
            .all(|i| (0..r.ncols()).all(|j| i == j || r[(i, j)] == 0.0));
        if off_diagonal_zero {
            let d: Vec<f64> = (0..r.nrows()).map(|i| r[(i, i)]).collect();
            return coordination_potential(&d).ok();
        }
        return None;
    }
    game.congestion_parts()
        .and_then(|(a, costs)| congestion_potential(a, costs).ok())
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub holds: bool,
    pub max_violation: f64,
    pub witness: Option<Configuration>,
}

/// Largest `|(r_j − r_i) − (∂_jΦ − ∂_iΦ)|` over all pairs at one point.
pub fn identity_violation(game: &Game, potential: &Potential, x: &[f64]) -> f64 {
    let r = game.rewards_at(x);
    let g = potential.gradient_at(x);
    let dev: Vec<f64> = r.iter().zip(&g).map(|(a, b)| a - b).collect();
    let hi = dev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = dev.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Checks the potential identity at `samples` uniform interior points.
pub fn verify_potential_identity(
    game: &Game,
    potential: &Potential,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<IdentityReport> {
    let m = game.num_actions();
    Error::check_dim(m, potential.dim())?;
    if samples == 0 || !(tol > 0.0) {
        return Err(Error::InvalidArgument("need samples >= 1 and tol > 0".into()));
    }
    let worst = (0..samples as u64)
        .into_par_iter()
        .map(|k| {
            let x = sample_dirichlet(m, &mut sample_rng(seed, k));
            (identity_violation(game, potential, x.weights()), k, x)
        })
        .reduce_with(|a, b| {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        })
        .expect("samples >= 1");
    let holds = worst.0 <= tol;
    Ok(IdentityReport {
        holds,
        max_violation: worst.0,
        witness: (!holds).then_some(worst.2),
    })
}

/// Central differences of `Φ` in each coordinate; one-sided (forward) within
/// `h` of a face so the stencil never needs negative weights.
pub fn finite_difference_gradient(potential: &Potential, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let xi = x[i];
            let d = if xi < h {
                probe[i] = xi + h;
                let fp = potential.value_at(&probe);
                probe[i] = xi + 2.0 * h;
                let fpp = potential.value_at(&probe);
                let f0 = potential.value_at(x);
                (-3.0 * f0 + 4.0 * fp - fpp) / (2.0 * h)
            } else {
                probe[i] = xi + h;
                let fp = potential.value_at(&probe);
                probe[i] = xi - h;
                let fm = potential.value_at(&probe);
                (fp - fm) / (2.0 * h)
            };
            probe[i] = xi;
            d
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub holds: bool,
    pub max_error: f64,
}

/// Compares the analytic gradient with finite differences at random interior points.
pub fn check_gradient(
    potential: &Potential,
    samples: usize,
    h: f64,
    tol: f64,
    seed: u64,
) -> GradientReport {
    let m = potential.dim();
    let max_error = (0..samples as u64)
        .into_par_iter()
        .map(|k| {
            let x = sample_dirichlet(m, &mut sample_rng(seed, k));
            let exact = potential.gradient_at(x.weights());
            let fd = finite_difference_gradient(potential, x.weights(), h);
            exact
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    GradientReport {
        holds: max_error <= tol,
        max_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::matrix_from_rows;

    fn cfg(w: &[f64]) -> Configuration {
        Configuration::new(w.to_vec()).unwrap()
    }

    fn r1() -> DMatrix<f64> {
        matrix_from_rows(&[&[10.0, 0.0], &[8.0, 7.0]]).unwrap()
    }

    fn a1() -> DMatrix<f64> {
        matrix_from_rows(&[&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0]]).unwrap()
    }

    fn a2() -> DMatrix<f64> {
        matrix_from_rows(&[&[1.0, 1.0, 1.0], &[0.0, 1.0, 1.0]]).unwrap()
    }

    #[test]
    fn binary_potential_values() {
        let p = binary_potential(&r1()).unwrap();
        assert_eq!(p.value(&Configuration::vertex(2, 0)).unwrap(), 1.0);
        assert_eq!(p.value(&Configuration::vertex(2, 1)).unwrap(), 3.5);
        let r2 = matrix_from_rows(&[&[0.0, 7.0], &[2.0, 6.0]]).unwrap();
        let p2 = binary_potential(&r2).unwrap();
        let v = p2.value(&cfg(&[1.0 / 3.0, 2.0 / 3.0])).unwrap();
        assert!((v + 1.0 / 3.0).abs() < 1e-15);
        let id = binary_potential(&DMatrix::identity(2, 2)).unwrap();
        assert!((id.value(&cfg(&[0.3, 0.7])).unwrap() - 0.5 * (0.09 + 0.49)).abs() < 1e-15);
    }

    #[test]
    fn binary_gradient_balances_at_interior_equilibrium() {
        let p = binary_potential(&r1()).unwrap();
        let g = p.gradient(&cfg(&[7.0, 2.0])).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-14);
    }

    #[test]
    fn coordination_potential_values() {
        let p = coordination_potential(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.value(&Configuration::vertex(3, 2)).unwrap(), 1.5);
        let g = p.gradient(&Configuration::uniform(3)).unwrap();
        for (a, b) in g.iter().zip([1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        for m in 1..6 {
            let ones = vec![1.0; m];
            let p = coordination_potential(&ones).unwrap();
            let v = p.value(&Configuration::uniform(m)).unwrap();
            assert!((v - 1.0 / (2.0 * m as f64)).abs() < 1e-15);
        }
        assert!(coordination_potential(&[1.0, 0.0]).is_err());
        assert!(coordination_potential(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn congestion_potentials_match_closed_forms() {
        let neg = vec![CostFunction::affine(0.0, -1.0); 2];
        let p1 = congestion_potential(&a1(), &neg).unwrap();
        assert!((p1.value(&cfg(&[0.5, 0.5, 0.0])).unwrap() + 0.25).abs() < 1e-15);
        // A₂'s first resource is used by everyone, so ΣΨₖ = −½ − ½(x₂+x₃)² on the simplex.
        let p2 = congestion_potential(&a2(), &neg).unwrap();
        let closed = Potential::custom(
            3,
            Arc::new(|x: &[f64]| -0.5 * (x[1] + x[2]).powi(2)),
            Arc::new(|x: &[f64]| vec![0.0, -(x[1] + x[2]), -(x[1] + x[2])]),
        );
        for w in [[0.2, 0.3, 0.5], [1.0, 0.0, 0.0], [0.0, 0.5, 0.5]] {
            let x = cfg(&w);
            let diff = p2.value(&x).unwrap() - closed.value(&x).unwrap();
            assert!((diff + 0.5).abs() < 1e-15);
        }
        assert_eq!(closed.gradient(&Configuration::vertex(3, 0)).unwrap(), vec![0.0, -0.0, -0.0]);
        let g = Game::congestion(a2(), neg.clone()).unwrap();
        assert!(verify_potential_identity(&g, &closed, 500, 1e-12, 2).unwrap().holds);

        let c = [1.0, 2.0, 3.0];
        let costs: Vec<_> = c.iter().map(|&ci| CostFunction::exponential(1.0, ci).unwrap()).collect();
        let pe = congestion_potential(&DMatrix::identity(3, 3), &costs).unwrap();
        let x = cfg(&[0.2, 0.3, 0.5]);
        let expected: f64 = (0..3).map(|i| -(1.0 / c[i]) * (-c[i] * x.weights()[i]).exp()).sum();
        assert!((pe.value(&x).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn identity_holds_for_builtin_pairs() {
        let r3 = matrix_from_rows(&[&[2.0, 0.0], &[3.0, 1.0]]).unwrap();
        for r in [r1(), r3] {
            let g = Game::linear(r.clone()).unwrap();
            let p = binary_potential(&r).unwrap();
            let rep = verify_potential_identity(&g, &p, 1000, 1e-8, 1).unwrap();
            assert!(rep.holds, "{rep:?}");
            assert!(rep.witness.is_none());
        }
    }

    #[test]
    fn identity_fails_for_rock_scissors_paper() {
        let rsp = matrix_from_rows(&[&[0.0, -1.0, 1.0], &[1.0, 0.0, -1.0], &[-1.0, 1.0, 0.0]]).unwrap();
        let g = Game::linear(rsp.clone()).unwrap();
        let candidates = [
            Potential::symmetric_part(&rsp).unwrap(),
            coordination_potential(&[1.0, 1.0, 1.0]).unwrap(),
            Potential::quadratic(DMatrix::from_element(3, 3, 0.3)).unwrap(),
        ];
        for p in candidates {
            let rep = verify_potential_identity(&g, &p, 200, 1e-8, 3).unwrap();
            assert!(!rep.holds);
            assert!(rep.witness.is_some());
            assert!(rep.max_violation > 1e-3);
        }
    }

    #[test]
    fn identity_check_rejects_bad_arguments() {
        let g = Game::linear(r1()).unwrap();
        let p = coordination_potential(&[1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            verify_potential_identity(&g, &p, 10, 1e-8, 0),
            Err(Error::DimensionMismatch { .. })
        ));
        let p = binary_potential(&r1()).unwrap();
        assert!(verify_potential_identity(&g, &p, 0, 1e-8, 0).is_err());
    }

    #[test]
    fn shifted_potential_keeps_identity() {
        let g = Game::linear(r1()).unwrap();
        let p = binary_potential(&r1()).unwrap().shifted(42.0);
        assert!(verify_potential_identity(&g, &p, 100, 1e-8, 9).unwrap().holds);
        assert_eq!(p.value(&Configuration::vertex(2, 0)).unwrap(), 43.0);
    }

    #[test]
    fn finite_differences_near_faces_are_one_sided() {
        let p = coordination_potential(&[1.0, 2.0, 3.0]).unwrap();
        let x = [0.0, 0.5, 0.5];
        let fd = finite_difference_gradient(&p, &x, FD_STEP);
        let exact = p.gradient_at(&x);
        for (a, b) in fd.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetry_is_enforced_for_quadratic_forms() {
        let bad = matrix_from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]).unwrap();
        assert!(Potential::quadratic(bad).is_err());
    }
}
