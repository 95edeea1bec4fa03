//! Negative log-likelihood, contraction penalty and their gradients.

use super::ObservationSet;
use crate::autodiff::Tape;
use crate::covariance::{cov_matrix, cov_matrix_on_tape, CovarianceParams, CovarianceVars, Smoothness};
use crate::error::{Error, Result};
use crate::flow::tape::NetworkVars;
use crate::flow::{BackwardFlow, FlowNetwork};
use crate::matrix::{self, Matrix};

/// Number of unconstrained covariance parameters at the front of the flat
/// parameter vector: `log σ², log l₀, log l₁, log l₂, log τ²`.
pub const N_COV_PARAMS: usize = 5;

/// Everything the optimizer moves, with positive parameters stored as logs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub log_cov: [f64; N_COV_PARAMS],
    pub net: FlowNetwork,
    pub nu: Smoothness,
}

impl ModelState {
    pub fn new(params: &CovarianceParams, net: FlowNetwork) -> Result<Self> {
        params.validate()?;
        Ok(ModelState {
            log_cov: [
                params.sigma2.ln(),
                params.l0.ln(),
                params.l1.ln(),
                params.l2.ln(),
                params.tau2.ln(),
            ],
            net,
            nu: params.nu,
        })
    }

    pub fn covariance(&self) -> CovarianceParams {
        let [s, l0, l1, l2, t] = self.log_cov.map(f64::exp);
        CovarianceParams {
            sigma2: s,
            l0,
            l1,
            l2,
            nu: self.nu,
            tau2: t,
        }
    }

    pub fn parameter_count(&self) -> usize {
        N_COV_PARAMS + self.net.parameter_count()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.log_cov.to_vec();
        out.extend(self.net.to_flat());
        out
    }

    pub fn set_from_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::shape(
                "ModelState::set_from_flat",
                format!("{} values for {} parameters", values.len(), self.parameter_count()),
            ));
        }
        self.log_cov.copy_from_slice(&values[..N_COV_PARAMS]);
        self.net.set_from_flat(&values[N_COV_PARAMS..])?;
        Ok(())
    }
}

/// `½ log det(Σ + τ²I) + ½ Yᵀ(Σ + τ²I)⁻¹Y`, without the `(N/2) log 2π` constant.
pub fn nll<F: BackwardFlow + ?Sized>(
    data: &ObservationSet,
    params: &CovarianceParams,
    flow: &F,
) -> Result<f64> {
    let k = cov_matrix(&data.points, params, flow)?;
    let l = matrix::cholesky(&k)?;
    let z = matrix::solve_lower(&l, &Matrix::column(&data.values))?;
    let half_logdet: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
    Ok(half_logdet + 0.5 * matrix::dot(z.as_slice(), z.as_slice()))
}

/// `nll + λ·Σ_j max(0, Π_i‖W_i⁽ʲ⁾‖₂ − γ)²`.
pub fn penalized_objective(
    data: &ObservationSet,
    params: &CovarianceParams,
    net: &FlowNetwork,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("penalty weight must be nonnegative, got {lambda}")));
    }
    let value = nll(data, params, net)?;
    if lambda == 0.0 {
        return Ok(value);
    }
    let penalty: f64 = net
        .norm_products()
        .iter()
        .map(|p| (p - gamma).max(0.0).powi(2))
        .sum();
    Ok(value + lambda * penalty)
}

/// The penalized objective at `state` and its gradient with respect to
/// [`ModelState::to_flat`]. `nugget_scale` multiplies `τ²` (1 in normal use).
pub fn objective_and_gradient(
    batch: &ObservationSet,
    state: &ModelState,
    lambda: f64,
    gamma: f64,
    nugget_scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = batch.len();
    let mut tape = Tape::new();
    let log_sigma2 = tape.scalar_leaf(state.log_cov[0]);
    let log_ls = tape.leaf(Matrix::from_vec(1, 3, state.log_cov[1..4].to_vec())?);
    let log_tau2 = tape.scalar_leaf(state.log_cov[4]);
    let net = NetworkVars::register(&mut tape, &state.net);

    let sigma2 = tape.exp(log_sigma2)?;
    let neg_ls = tape.neg(log_ls)?;
    let inv_lengthscales = tape.exp(neg_ls)?;
    let mut tau2 = tape.exp(log_tau2)?;
    if nugget_scale != 1.0 {
        tau2 = tape.scale(tau2, nugget_scale)?;
    }

    let times = batch.times();
    let positions = tape.constant(Matrix::from_fn(n, 2, |r, c| batch.points[r].x[c]));
    let labels = net.forward(&mut tape, &times, positions)?;
    let vars = CovarianceVars {
        sigma2,
        inv_lengthscales,
        tau2,
        nu: state.nu,
    };
    let k = cov_matrix_on_tape(&mut tape, &times, labels, &vars)?;
    let l = tape.cholesky(k)?;
    let y = tape.constant(Matrix::column(&batch.values));
    let z = tape.triangular_solve(l, y)?;
    let zz = tape.mul(z, z)?;
    let quad = tape.sum(zz)?;
    let half_quad = tape.scale(quad, 0.5)?;
    let diag = tape.diag(l)?;
    let log_diag = tape.log(diag)?;
    let half_logdet = tape.sum(log_diag)?;
    let mut objective = tape.add(half_logdet, half_quad)?;
    if lambda > 0.0 {
        let penalty = net.contraction_penalty(&mut tape, gamma)?;
        let weighted = tape.scale(penalty, lambda)?;
        objective = tape.add(objective, weighted)?;
    }

    let grads = tape.backward(objective)?;
    let mut flat = Vec::with_capacity(state.parameter_count());
    flat.push(grads.scalar_wrt(log_sigma2));
    flat.extend_from_slice(grads.wrt(log_ls).as_slice());
    flat.push(grads.scalar_wrt(log_tau2));
    for v in net.tensors() {
        flat.extend_from_slice(grads.wrt(v).as_slice());
    }
    Ok((tape.scalar_value(objective), flat))
}
