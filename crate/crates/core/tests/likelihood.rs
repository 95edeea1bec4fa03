//! Covariance assembly and the Gaussian likelihood against nalgebra.

mod common;

use common::random_batch;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgp_core::covariance::{cov_entry, cov_matrix, matern, CovarianceParams, Smoothness, SpaceTimePoint};
use tgp_core::estimation::{nll, objective_and_gradient, penalized_objective, ModelState};
use tgp_core::flow::{BackwardFlow, FlowArch, FlowNetwork, IdentityFlow};
use tgp_core::matrix::{self, Matrix};

/// Half-integer Matérn `ν = p + ½` from its finite series.
fn matern_series(d: f64, p: u32) -> f64 {
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let nu = p as f64 + 0.5;
    let z = (2.0 * nu).sqrt() * d;
    let sum: f64 = (0..=p)
        .map(|i| fact(p + i) / (fact(i) * fact(p - i)) * (2.0 * z).powi((p - i) as i32))
        .sum();
    (-z).exp() * fact(p) / fact(2 * p) * sum
}

fn params(nu: Smoothness) -> CovarianceParams {
    CovarianceParams {
        sigma2: 1.3,
        l0: 0.5,
        l1: 0.3,
        l2: 0.4,
        nu,
        tau2: 0.02,
    }
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

#[test]
fn matern_matches_series() {
    for (nu, p) in [(Smoothness::Half, 0), (Smoothness::ThreeHalves, 1), (Smoothness::FiveHalves, 2)] {
        for d in [0.0, 1e-3, 0.1, 0.5, 1.0, 2.7, 9.0] {
            let want = 2.0 * matern_series(d, p);
            let got = matern(d, 2.0, nu).unwrap();
            assert!((got - want).abs() < 1e-14, "{nu} {d}: {got} vs {want}");
        }
    }
    assert!(matern(-1.0, 1.0, Smoothness::Half).is_err());
}

#[test]
fn eulerian_covariance_is_lagrangian_at_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = FlowNetwork::random(FlowArch::default(), 0.9, &mut rng).unwrap();
    let p = params(Smoothness::ThreeHalves);
    for _ in 0..20 {
        let a = SpaceTimePoint::new(rng.random(), [rng.random(), rng.random()]);
        let b = SpaceTimePoint::new(rng.random(), [rng.random(), rng.random()]);
        let la = SpaceTimePoint::new(a.t, net.forward(a.t, a.x));
        let lb = SpaceTimePoint::new(b.t, net.forward(b.t, b.x));
        assert_eq!(cov_entry(a, b, &p, &net), cov_entry(la, lb, &p, &IdentityFlow));
    }
}

#[test]
fn nll_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for nu in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
        let data = random_batch(30, 3, &mut rng);
        let net = FlowNetwork::random(FlowArch::default(), 0.8, &mut rng).unwrap();
        let p = params(nu);
        let k = to_na(&cov_matrix(&data.points, &p, &net).unwrap());
        let y = DVector::from_column_slice(&data.values);
        let chol = k.clone().cholesky().unwrap();
        let quad = y.dot(&chol.solve(&y));
        let logdet = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let want = 0.5 * quad + 0.5 * logdet;
        let got = nll(&data, &p, &net).unwrap();
        assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{nu}: {got} vs {want}");
    }
}

#[test]
fn objective_variants_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = random_batch(25, 5, &mut rng);
    let p = params(Smoothness::ThreeHalves);
    for norm in [0.5, 1.5] {
        let net = FlowNetwork::random(FlowArch::default(), norm, &mut rng).unwrap();
        let plain = nll(&data, &p, &net).unwrap();
        assert_eq!(penalized_objective(&data, &p, &net, 0.0, 0.98).unwrap(), plain);
        let pen = penalized_objective(&data, &p, &net, 10.0, 0.98).unwrap();
        let excess: f64 = net.norm_products().iter().map(|n| (n - 0.98).max(0.0).powi(2)).sum();
        assert!((pen - plain - 10.0 * excess).abs() < 1e-8 * pen.abs());
        let state = ModelState::new(&p, net).unwrap();
        let (tape_value, _) = objective_and_gradient(&data, &state, 10.0, 0.98, 1.0).unwrap();
        assert!((tape_value - pen).abs() < 1e-9 * pen.abs(), "{tape_value} vs {pen}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn covariance_is_a_valid_gram_matrix(seed in 0u64..100_000, n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<SpaceTimePoint> = (0..n)
            .map(|_| SpaceTimePoint::new(rng.random(), [rng.random(), rng.random()]))
            .collect();
        let net = FlowNetwork::random(FlowArch::default(), 0.9, &mut rng).unwrap();
        let mut p = params(Smoothness::ThreeHalves);
        p.tau2 = 1e-6 * p.sigma2;
        let k = cov_matrix(&points, &p, &net).unwrap();
        for r in 0..n {
            prop_assert_eq!(k[(r, r)], p.sigma2 + p.tau2);
            for c in 0..n {
                prop_assert_eq!(k[(r, c)], k[(c, r)]);
                prop_assert!(k[(r, c)] > 0.0 && k[(r, c)] <= p.sigma2 + p.tau2);
            }
        }
        let l = matrix::cholesky(&k).unwrap();
        let oracle = to_na(&k).cholesky().unwrap().l();
        prop_assert!((to_na(&l) - oracle).amax() < 1e-10);
    }

    #[test]
    fn correlation_decreases_with_distance(a in 0.0f64..5.0, b in 0.0f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for nu in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
            prop_assert!(nu.correlation(hi) <= nu.correlation(lo));
        }
    }
}
