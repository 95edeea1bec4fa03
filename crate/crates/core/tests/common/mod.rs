//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use rand::Rng;
use tgp_core::covariance::SpaceTimePoint;
use tgp_core::estimation::{objective_and_gradient, ModelState, ObservationSet};

/// `n_times` evenly spaced times on `[0, 1]` with `n` random points spread
/// across them and standard normal-ish values.
pub fn random_batch<R: Rng>(n: usize, n_times: usize, rng: &mut R) -> ObservationSet {
    let mut points = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let ti = i * n_times / n;
        let t = if n_times == 1 { 0.0 } else { ti as f64 / (n_times - 1) as f64 };
        points.push(SpaceTimePoint::new(t, [rng.random::<f64>(), rng.random::<f64>()]));
        values.push(rng.random_range(-2.0..2.0));
    }
    ObservationSet::new(points, values).unwrap()
}

/// Central differences of the penalized objective over the flat parameters.
pub fn fd_gradient(
    batch: &ObservationSet,
    state: &ModelState,
    lambda: f64,
    gamma: f64,
    h: f64,
) -> Vec<f64> {
    let base = state.to_flat();
    let mut probe = state.clone();
    let mut eval = |flat: &[f64]| {
        probe.set_from_flat(flat).unwrap();
        objective_and_gradient(batch, &probe, lambda, gamma, 1.0).unwrap().0
    };
    (0..base.len())
        .map(|i| {
            let mut up = base.clone();
            up[i] += h;
            let mut down = base.clone();
            down[i] -= h;
            (eval(&up) - eval(&down)) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise `|a − b| / max(|b|, 1e-8)`; the floor only guards
/// components that are exactly zero.
pub fn grad_rel_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-8))
        .fold(0.0, f64::max)
}
