use nalgebra::DMatrix;
use proptest::prelude::*;

use imitate::dynamics::{
    check_sign_condition, pairwise_chain, vector_field, vector_field_compact, ImitationRule, DEFAULT_SIGN_TOL,
};
use imitate::equilibria::{classify_point, enumerate_equilibria_linear, is_critical, is_nash, EquilibriumLabel, DEFAULT_TOL};
use imitate::game::{classify_binary_game, BinaryClass, CostFunction, Game};
use imitate::potential::{check_gradient, congestion_potential, verify_potential_identity, Potential};
use imitate::simplex::{project_onto_simplex, Configuration};
use imitate::simulate::{integrate, monitor_lyapunov, IntegratorConfig};

fn square(m: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, m * m).prop_map(move |v| DMatrix::from_row_slice(m, m, &v))
}

fn game_and_size() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..=4).prop_flat_map(|m| square(m, -10.0, 10.0))
}

fn symmetric(m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    square(m, -10.0, 10.0).prop_map(|r| (&r + r.transpose()) * 0.5)
}

/// Simplex points with a fair chance of exact zeros.
fn point(m: usize) -> impl Strategy<Value = Configuration> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.0..1.0f64], m)
        .prop_filter("nonzero", |w| w.iter().sum::<f64>() > 1e-3)
        .prop_map(|w| Configuration::new(w).unwrap())
}

fn gains(m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    square(m, 0.01, 2.0)
}

fn rule(m: usize) -> impl Strategy<Value = ImitationRule> {
    prop_oneof![
        Just(ImitationRule::replicator()),
        gains(m).prop_map(|k| ImitationRule::arctan(k).unwrap()),
    ]
}

fn game_rule_point() -> impl Strategy<Value = (Game, ImitationRule, Configuration)> {
    game_and_size().prop_flat_map(|r| {
        let m = r.nrows();
        (Just(Game::linear(r).unwrap()), rule(m), point(m))
    })
}

fn potential_game_rule_point() -> impl Strategy<Value = (Game, ImitationRule, Configuration)> {
    (2usize..=4).prop_flat_map(|m| {
        symmetric(m).prop_flat_map(move |r| {
            let p = Potential::symmetric_part(&r).unwrap();
            (Just(Game::linear(r).unwrap().with_potential(p).unwrap()), rule(m), point(m))
        })
    })
}

fn decreasing_cost() -> impl Strategy<Value = CostFunction> {
    prop_oneof![
        (-5.0..5.0f64, -5.0..-0.01f64).prop_map(|(a, b)| CostFunction::affine(a, b)),
        (0.1..5.0f64, 0.1..4.0f64).prop_map(|(a, c)| CostFunction::exponential(a, c).unwrap()),
    ]
}

fn congestion_game() -> impl Strategy<Value = Game> {
    (1usize..=3, 2usize..=4).prop_flat_map(|(l, m)| {
        (
            prop::collection::vec(prop::bool::ANY, l * m),
            prop::collection::vec(decreasing_cost(), l),
        )
            .prop_map(move |(bits, costs)| {
                let a = DMatrix::from_fn(l, m, |k, i| if bits[k * m + i] { 1.0 } else { 0.0 });
                Game::congestion(a, costs).unwrap()
            })
    })
}

fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn configurations_are_normalized(w in prop::collection::vec(0.0..100.0f64, 1..8)) {
        prop_assume!(sum(&w) > 0.0);
        let x = Configuration::new(w).unwrap();
        prop_assert!(x.weights().iter().all(|&v| v >= 0.0));
        prop_assert!((sum(x.weights()) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn projection_lands_on_simplex(v in prop::collection::vec(-5.0..5.0f64, 1..8)) {
        let p = project_onto_simplex(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((sum(&p) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn linear_rewards_are_linear(r in game_and_size(), alpha in 0.0..1.0f64, seed in any::<u64>()) {
        let m = r.nrows();
        let g = Game::linear(r).unwrap();
        let mut rng = imitate::simplex::sample_rng(seed, 0);
        let x = imitate::simplex::sample_dirichlet(m, &mut rng);
        let y = imitate::simplex::sample_dirichlet(m, &mut rng);
        let z: Vec<f64> = x.weights().iter().zip(y.weights()).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let rz = g.rewards_at(&z);
        let (rx, ry) = (g.rewards_at(x.weights()), g.rewards_at(y.weights()));
        for i in 0..m {
            prop_assert!((rz[i] - (alpha * rx[i] + (1.0 - alpha) * ry[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn mean_reward_at_most_max((g, _rule, x) in game_rule_point()) {
        let mean = g.mean_reward(&x).unwrap();
        let max = g.max_reward(&x).unwrap();
        prop_assert!(mean <= max + 1e-12);
        let r = g.rewards(&x).unwrap();
        let support_at_max = x.support(0.0).actions().iter().all(|&i| r[i] >= max - 1e-12);
        if !support_at_max {
            prop_assert!(mean < max);
        }
    }

    #[test]
    fn binary_interior_point_equalizes_rewards(r in square(2, -10.0, 10.0)) {
        match classify_binary_game(&r).unwrap() {
            BinaryClass::Coordination { interior } | BinaryClass::AntiCoordination { interior } => {
                let g = Game::linear(r).unwrap();
                let rw = g.rewards_at(&[interior, 1.0 - interior]);
                prop_assert!((rw[0] - rw[1]).abs() <= 1e-12 * (1.0 + rw[0].abs()));
            }
            BinaryClass::Dominance { .. } => {}
        }
    }

    #[test]
    fn symmetric_games_have_quadratic_potential(r in (2usize..=4).prop_flat_map(symmetric), seed in any::<u64>()) {
        let g = Game::linear(r.clone()).unwrap();
        let p = Potential::symmetric_part(&r).unwrap();
        prop_assert!(verify_potential_identity(&g, &p, 200, 1e-8, seed).unwrap().holds);
        prop_assert!(check_gradient(&p, 20, 1e-5, 1e-6, seed).holds);
        let shifted = p.clone().shifted(42.0);
        prop_assert!(verify_potential_identity(&g, &shifted, 200, 1e-8, seed).unwrap().holds);
    }

    #[test]
    fn congestion_potentials_satisfy_identity_and_concavity(g in congestion_game(), seed in any::<u64>()) {
        let (a, costs) = g.congestion_parts().unwrap();
        let p = congestion_potential(a, costs).unwrap();
        prop_assert!(verify_potential_identity(&g, &p, 200, 1e-8, seed).unwrap().holds);
        prop_assert!(check_gradient(&p, 20, 1e-5, 1e-6, seed).holds);
        let m = g.num_actions();
        let mut rng = imitate::simplex::sample_rng(seed, 1);
        for _ in 0..20 {
            let x = imitate::simplex::sample_dirichlet(m, &mut rng);
            let y = imitate::simplex::sample_dirichlet(m, &mut rng);
            let mid: Vec<f64> = x.weights().iter().zip(y.weights()).map(|(a, b)| 0.5 * (a + b)).collect();
            let second = p.value_at(x.weights()) + p.value_at(y.weights()) - 2.0 * p.value_at(&mid);
            prop_assert!(second <= 1e-10);
        }
    }

    #[test]
    fn field_conserves_mass_and_faces((g, rule, x) in game_rule_point()) {
        let v = vector_field(&g, &rule, &x).unwrap();
        prop_assert!(sum(&v).abs() <= 1e-13);
        for (xi, vi) in x.weights().iter().zip(&v) {
            if *xi == 0.0 {
                prop_assert_eq!(*vi, 0.0);
            }
        }
        let compact = vector_field_compact(&g, &rule, &x).unwrap();
        for (a, b) in v.iter().zip(&compact) {
            prop_assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn arctan_rates_are_probabilities((g, _rule, x) in game_rule_point(), seed in any::<u64>()) {
        let m = g.num_actions();
        let k = imitate::dynamics::sample_uniform_gains(m, 0.0, 1.0, &mut imitate::simplex::sample_rng(seed, 0));
        let rule = ImitationRule::arctan(k).unwrap();
        let f = rule.rates(&g, &x).unwrap();
        prop_assert!(f.iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(check_sign_condition(&g, &rule, 50, DEFAULT_SIGN_TOL, seed).unwrap().holds);
    }

    #[test]
    fn potential_increases_along_the_field((g, rule, x) in potential_game_rule_point()) {
        let p = g.potential().unwrap();
        let v = vector_field(&g, &rule, &x).unwrap();
        let grad_path = p.derivative_along(x.weights(), &v);
        let chain = pairwise_chain(&g, &rule, x.weights());
        prop_assert!(grad_path >= -1e-10);
        prop_assert!((grad_path - chain).abs() <= 1e-12);
        if !is_critical(&g, &x, 1e-6).unwrap() {
            prop_assert!(grad_path > 0.0);
        }
    }

    #[test]
    fn enumerated_points_are_consistent(r in game_and_size(), k in (2usize..=4).prop_flat_map(gains)) {
        let m = r.nrows();
        prop_assume!(k.nrows() == m);
        let g = Game::linear(r.clone()).unwrap();
        let rule = ImitationRule::arctan(k).unwrap();
        let set = enumerate_equilibria_linear(&r, DEFAULT_TOL).unwrap();
        for i in 0..m {
            prop_assert!(set.contains_point(&Configuration::vertex(m, i), 1e-12));
        }
        for e in &set.items {
            prop_assert_eq!(classify_point(&g, &e.point, DEFAULT_TOL).unwrap(), Some(e.label));
            prop_assert!(is_critical(&g, &e.point, DEFAULT_TOL).unwrap());
            if e.label == EquilibriumLabel::Nash {
                prop_assert!(is_nash(&g, &e.point, DEFAULT_TOL).unwrap());
            }
            let v = vector_field(&g, &rule, &e.point).unwrap();
            prop_assert!(v.iter().all(|c| c.abs() <= 1e-10));
        }
        if m == 2 {
            let interior: Vec<_> = set.items.iter().filter(|e| e.support.is_full()).collect();
            prop_assert!(set.len() == 2 + interior.len());
            prop_assert!(interior.iter().all(|e| e.label == EquilibriumLabel::Nash));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trajectories_stay_on_their_face((g, rule, x) in potential_game_rule_point()) {
        let cfg = IntegratorConfig::default().with_t_end(10.0);
        let traj = integrate(&g, &rule, &x, &cfg).unwrap();
        let zeros: Vec<usize> = (0..x.dim()).filter(|&i| x.weights()[i] == 0.0).collect();
        for state in &traj.states {
            prop_assert!((sum(state.weights()) - 1.0).abs() <= 1e-12);
            prop_assert!(zeros.iter().all(|&i| state.weights()[i] == 0.0));
        }
        prop_assert!(traj.max_projection_correction <= 1e-9);
        let rep = monitor_lyapunov(&traj).unwrap();
        prop_assert!(rep.monotone, "{:?}", rep);
    }

    #[test]
    fn fixed_step_runs_are_reproducible((g, rule, x) in game_rule_point()) {
        let cfg = IntegratorConfig::fixed(0.01).with_t_end(2.0);
        let a = integrate(&g, &rule, &x, &cfg).unwrap();
        let b = integrate(&g, &rule, &x, &cfg).unwrap();
        prop_assert_eq!(imitate::cli::trajectory_csv(&a), imitate::cli::trajectory_csv(&b));
    }
}
