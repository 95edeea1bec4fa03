//! Flow-warped space-time Matérn covariance.
//!
//! `K(t, x, s, y) = C(t, ψ_t(x), s, ψ_s(y))` where `C` is a stationary
//! anisotropic Matérn in `(time, label₁, label₂)` with lengthscales
//! `(l₀, l₁, l₂)`. Two observations are compared through the labels of the
//! particles occupying them, so motion is absorbed by `ψ` while `l₀` controls
//! how fast a particle's own value decorrelates.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::flow::{BackwardFlow, Vec2};
use crate::matrix::Matrix;

/// Half-integer Matérn smoothness with a closed form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Smoothness {
    Half,
    #[default]
    ThreeHalves,
    FiveHalves,
}

impl Smoothness {
    pub fn value(self) -> f64 {
        match self {
            Smoothness::Half => 0.5,
            Smoothness::ThreeHalves => 1.5,
            Smoothness::FiveHalves => 2.5,
        }
    }

    /// Unit-variance correlation at scaled distance `d ≥ 0`.
    #[inline]
    pub fn correlation(self, d: f64) -> f64 {
        match self {
            Smoothness::Half => (-d).exp(),
            Smoothness::ThreeHalves => {
                let z = 3f64.sqrt() * d;
                (1.0 + z) * (-z).exp()
            }
            Smoothness::FiveHalves => {
                let z = 5f64.sqrt() * d;
                (1.0 + z + z * z / 3.0) * (-z).exp()
            }
        }
    }

    /// Correlation as a function of the squared distance, with its derivative
    /// in `d²`. For `ν = 1/2` the derivative is unbounded at zero; zero is
    /// returned there, which is exact wherever `d² ≡ 0` (coincident points).
    #[inline]
    pub fn correlation_sq(self, d2: f64) -> (f64, f64) {
        let d = d2.max(0.0).sqrt();
        match self {
            Smoothness::Half => {
                let e = (-d).exp();
                (e, if d > 0.0 { -e / (2.0 * d) } else { 0.0 })
            }
            Smoothness::ThreeHalves => {
                let z = 3f64.sqrt() * d;
                let e = (-z).exp();
                ((1.0 + z) * e, -1.5 * e)
            }
            Smoothness::FiveHalves => {
                let z = 5f64.sqrt() * d;
                let e = (-z).exp();
                ((1.0 + z + z * z / 3.0) * e, -(5.0 / 6.0) * (1.0 + z) * e)
            }
        }
    }
}

impl fmt::Display for Smoothness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Smoothness::Half => "1/2",
            Smoothness::ThreeHalves => "3/2",
            Smoothness::FiveHalves => "5/2",
        })
    }
}

impl FromStr for Smoothness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1/2" | "0.5" => Ok(Smoothness::Half),
            "3/2" | "1.5" => Ok(Smoothness::ThreeHalves),
            "5/2" | "2.5" => Ok(Smoothness::FiveHalves),
            other => Err(Error::Config(format!(
                "unsupported Matérn smoothness '{other}' (expected 1/2, 3/2 or 5/2)"
            ))),
        }
    }
}

/// Covariance parameters `θ = (σ², l₀, l₁, l₂)` with nugget `τ²` and fixed `ν`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceParams {
    pub sigma2: f64,
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub nu: Smoothness,
    pub tau2: f64,
}

impl CovarianceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma2", self.sigma2),
            ("l0", self.l0),
            ("l1", self.l1),
            ("l2", self.l2),
            ("tau2", self.tau2),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: Vec2,
}

impl SpaceTimePoint {
    pub fn new(t: f64, x: Vec2) -> Self {
        SpaceTimePoint { t, x }
    }
}

/// `σ²·Matérn_ν(d)`, equal to `σ²` at `d = 0`.
pub fn matern(d: f64, sigma2: f64, nu: Smoothness) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::domain("matern", format!("negative or NaN distance {d}")));
    }
    Ok(sigma2 * nu.correlation(d))
}

fn scaled_distance(t: f64, a: Vec2, s: f64, b: Vec2, params: &CovarianceParams) -> f64 {
    let dt = (t - s) / params.l0;
    let d1 = (a[0] - b[0]) / params.l1;
    let d2 = (a[1] - b[1]) / params.l2;
    (dt * dt + d1 * d1 + d2 * d2).sqrt()
}

/// Scaled distance between `(t, ψ_t(x))` and `(s, ψ_s(y))`.
pub fn warped_distance<F: BackwardFlow + ?Sized>(
    p: SpaceTimePoint,
    q: SpaceTimePoint,
    params: &CovarianceParams,
    flow: &F,
) -> f64 {
    let a = flow.forward(p.t, p.x);
    let b = flow.forward(q.t, q.x);
    scaled_distance(p.t, a, q.t, b, params)
}

pub fn cov_entry<F: BackwardFlow + ?Sized>(
    p: SpaceTimePoint,
    q: SpaceTimePoint,
    params: &CovarianceParams,
    flow: &F,
) -> f64 {
    params.sigma2 * params.nu.correlation(warped_distance(p, q, params, flow))
}

fn validate_points(points: &[SpaceTimePoint]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Contract("covariance needs at least one point".into()));
    }
    if let Some(p) = points.iter().find(|p| !(0.0..=1.0).contains(&p.t)) {
        return Err(Error::Contract(format!("time {} outside [0, 1]", p.t)));
    }
    Ok(())
}

/// `Σ_{ψ,θ} + τ²I` over `points`. Labels are computed once per point.
pub fn cov_matrix<F: BackwardFlow + ?Sized>(
    points: &[SpaceTimePoint],
    params: &CovarianceParams,
    flow: &F,
) -> Result<Matrix> {
    validate_points(points)?;
    params.validate()?;
    let labels: Vec<Vec2> = points.iter().map(|p| flow.forward(p.t, p.x)).collect();
    let n = points.len();
    let mut out = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..r {
            let d = scaled_distance(points[r].t, labels[r], points[c].t, labels[c], params);
            let k = params.sigma2 * params.nu.correlation(d);
            out[(r, c)] = k;
            out[(c, r)] = k;
        }
        out[(r, r)] = params.sigma2 + params.tau2;
    }
    Ok(out)
}

/// Tape handles for the covariance parameters.
#[derive(Clone, Copy, Debug)]
pub struct CovarianceVars {
    pub sigma2: Var,
    /// `(1/l₀, 1/l₁, 1/l₂)` as a 1x3 row.
    pub inv_lengthscales: Var,
    pub tau2: Var,
    pub nu: Smoothness,
}

/// Assembles `Σ + τ²I` on the tape from observation times and warped labels
/// (an N×2 node), so gradients reach both `θ` and the flow.
pub fn cov_matrix_on_tape(
    tape: &mut Tape,
    times: &[f64],
    labels: Var,
    vars: &CovarianceVars,
) -> Result<Var> {
    let t_col = tape.constant(Matrix::column(times));
    let coords = tape.concat_cols(t_col, labels)?;
    let scaled = tape.col_scale(coords, vars.inv_lengthscales)?;
    let d2 = tape.sq_dist(scaled, scaled)?;
    let nu = vars.nu;
    let corr = tape.elementwise(d2, move |v| nu.correlation_sq(v))?;
    let k = tape.scale_by(corr, vars.sigma2)?;
    tape.add_diag(k, vars.tau2)
}
