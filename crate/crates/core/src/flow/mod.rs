//! Backward flows `ψ_t(x)`: the label (time-zero position) of the particle
//! found at `x` at time `t`.
//!
//! [`FlowNetwork`] is the trainable family, a composition of time-dependent
//! residual blocks `ψ⁽ʲ⁾_t(x) = x − t·g⁽ʲ⁾_t(x)`. Each block is invertible when
//! the Lipschitz constant of its feed-forward network `g` is below one, which
//! [`FlowNetwork::spectral_project`] enforces through the product of the
//! layers' spectral norms. The closed-form flows in [`analytic`] share the
//! [`BackwardFlow`] interface so velocity and covariance code can treat both
//! alike.

pub mod analytic;
pub mod checkpoint;
mod network;
pub mod tape;

pub use analytic::{ConstantDrift, IdentityFlow, Rotation};
pub use network::{spectral_norm, Activation, FlowArch, FlowNetwork, ResidualBlock};

use crate::error::Result;

pub type Vec2 = [f64; 2];
/// Row-major 2x2 matrix; `m[i][j] = ∂ψ_i/∂x_j` for Jacobians.
pub type Mat2 = [[f64; 2]; 2];

/// Default tolerance for fixed-point inversion.
pub const DEFAULT_INVERSE_TOL: f64 = 1e-10;
/// Default iteration cap for fixed-point inversion (per block).
pub const DEFAULT_INVERSE_MAX_ITER: usize = 200;

pub trait BackwardFlow {
    /// `ψ_t(x)`.
    fn forward(&self, t: f64, x: Vec2) -> Vec2;

    /// Spatial Jacobian `∇ψ_t(x)`.
    fn jacobian(&self, t: f64, x: Vec2) -> Mat2;

    /// `∂ψ_t(x)/∂t`.
    fn time_derivative(&self, t: f64, x: Vec2) -> Vec2;

    /// The position `x` at time `t` with `ψ_t(x) = label`.
    fn inverse(&self, t: f64, label: Vec2, tol: f64, max_iter: usize) -> Result<Vec2>;
}

#[inline]
pub(crate) fn norm2(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

#[inline]
pub(crate) fn sub2(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}
