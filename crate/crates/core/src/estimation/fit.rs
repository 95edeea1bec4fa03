use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::objective::objective_and_gradient;
use super::optim::{adam_step, minibatch_sample, AdamState};
use super::{FitConfig, ModelState, ObservationSet};
use crate::covariance::CovarianceParams;
use crate::error::{Error, Result};
use crate::flow::FlowNetwork;

const ADAM_EPS: f64 = 1e-8;
/// Norm product of each block of the initial network.
const INIT_NORM: f64 = 0.5;
const INIT_LENGTHSCALE: f64 = 0.25;
const NUGGET_RETRY_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Fitted flow after the final contraction projection.
    pub net: FlowNetwork,
    pub params: CovarianceParams,
    /// Minibatch objective at every iteration, before that iteration's step.
    pub nll_trace: Vec<f64>,
    /// Seconds spent in the optimization loop.
    pub wallclock: f64,
}

/// Starting point: σ² and τ² split the sample variance 95/5, all lengthscales
/// 0.25 and a network with random weights and zero biases.
pub fn initial_state<R: Rng + ?Sized>(
    data: &ObservationSet,
    config: &FitConfig,
    rng: &mut R,
) -> Result<ModelState> {
    let n = data.len() as f64;
    let mean = data.values.iter().sum::<f64>() / n;
    let mut var = data.values.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0 && var.is_finite()) {
        log::warn!("observations have zero variance; initializing with unit variance");
        var = 1.0;
    }
    let params = CovarianceParams {
        sigma2: 0.95 * var,
        l0: INIT_LENGTHSCALE,
        l1: INIT_LENGTHSCALE,
        l2: INIT_LENGTHSCALE,
        nu: config.nu,
        tau2: 0.05 * var,
    };
    let net = FlowNetwork::random_weights(config.arch, INIT_NORM, rng)?;
    ModelState::new(&params, net)
}

/// Minibatch Adam on the penalized negative log-likelihood. `data` must have
/// times in `[0, 1]`.
pub fn fit(data: &ObservationSet, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if let Some(p) = data.points.iter().find(|p| !(0.0..=1.0).contains(&p.t)) {
        return Err(Error::Contract(format!(
            "time {} outside [0, 1]; normalize the data before fitting",
            p.t
        )));
    }
    let batch_size = config.resolved_minibatch(data.len())?;
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "need at least 2 observations per minibatch, have {batch_size}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = initial_state(data, config, &mut rng)?;
    let mut flat = state.to_flat();
    let mut adam = AdamState::new(flat.len());
    let mut trace = Vec::with_capacity(config.iterations);
    let start = Instant::now();

    for it in 0..config.iterations {
        let idx = minibatch_sample(data.len(), batch_size, &mut rng)?;
        let batch = if batch_size == data.len() {
            data.clone()
        } else {
            data.subset(&idx)?
        };
        let eval = |scale: f64| {
            objective_and_gradient(
                &batch,
                &state,
                config.penalty_weight,
                config.penalty_target,
                scale,
            )
        };
        let (value, grad) = match eval(1.0) {
            Err(Error::NotPositiveDefinite { pivot, value }) => {
                log::warn!(
                    "iteration {it}: covariance not positive definite (pivot {pivot} = {value:e}); \
                     retrying with nugget x{NUGGET_RETRY_FACTOR}"
                );
                eval(NUGGET_RETRY_FACTOR)?
            }
            other => other?,
        };
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::domain(
                "fit",
                format!("non-finite objective or gradient at iteration {it} (objective {value})"),
            ));
        }
        log::debug!("iteration {it}: objective {value:.6}");
        trace.push(value);
        adam_step(
            &mut flat,
            &grad,
            &mut adam,
            config.learning_rate,
            (config.beta1, config.beta2),
            ADAM_EPS,
        )?;
        state.set_from_flat(&flat)?;
    }

    let net = state.net.spectral_project(config.penalty_target);
    let wallclock = start.elapsed().as_secs_f64();
    Ok(FitResult {
        net,
        params: state.covariance(),
        nll_trace: trace,
        wallclock,
    })
}
