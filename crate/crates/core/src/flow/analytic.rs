//! Closed-form backward flows with known velocity fields.

use super::{BackwardFlow, Mat2, Vec2};
use crate::error::Result;

/// `ψ_t(x) = x`: nothing moves.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IdentityFlow;

impl BackwardFlow for IdentityFlow {
    fn forward(&self, _t: f64, x: Vec2) -> Vec2 {
        x
    }

    fn jacobian(&self, _t: f64, _x: Vec2) -> Mat2 {
        [[1.0, 0.0], [0.0, 1.0]]
    }

    fn time_derivative(&self, _t: f64, _x: Vec2) -> Vec2 {
        [0.0, 0.0]
    }

    fn inverse(&self, _t: f64, label: Vec2, _tol: f64, _max_iter: usize) -> Result<Vec2> {
        Ok(label)
    }
}

/// `ψ_t(x) = x − t·w`: uniform translation with velocity `w`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantDrift {
    pub velocity: Vec2,
}

impl ConstantDrift {
    pub fn new(velocity: Vec2) -> Self {
        ConstantDrift { velocity }
    }
}

impl BackwardFlow for ConstantDrift {
    fn forward(&self, t: f64, x: Vec2) -> Vec2 {
        [x[0] - t * self.velocity[0], x[1] - t * self.velocity[1]]
    }

    fn jacobian(&self, _t: f64, _x: Vec2) -> Mat2 {
        [[1.0, 0.0], [0.0, 1.0]]
    }

    fn time_derivative(&self, _t: f64, _x: Vec2) -> Vec2 {
        [-self.velocity[0], -self.velocity[1]]
    }

    fn inverse(&self, t: f64, label: Vec2, _tol: f64, _max_iter: usize) -> Result<Vec2> {
        Ok([label[0] + t * self.velocity[0], label[1] + t * self.velocity[1]])
    }
}

/// Rigid rotation about `center`: `ψ_t(x) = c + R(θt)(x − c)` with
/// `R(φ) = [[cos φ, −sin φ], [sin φ, cos φ]]`. The induced velocity is
/// `θ·((x−c)₂, −(x−c)₁)`, clockwise for positive `rate`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    pub rate: f64,
    pub center: Vec2,
}

impl Rotation {
    pub fn new(rate: f64, center: Vec2) -> Self {
        Rotation { rate, center }
    }

    fn rotate(phi: f64, v: Vec2) -> Vec2 {
        let (s, c) = phi.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }
}

impl BackwardFlow for Rotation {
    fn forward(&self, t: f64, x: Vec2) -> Vec2 {
        let r = Self::rotate(self.rate * t, [x[0] - self.center[0], x[1] - self.center[1]]);
        [self.center[0] + r[0], self.center[1] + r[1]]
    }

    fn jacobian(&self, t: f64, _x: Vec2) -> Mat2 {
        let (s, c) = (self.rate * t).sin_cos();
        [[c, -s], [s, c]]
    }

    fn time_derivative(&self, t: f64, x: Vec2) -> Vec2 {
        let (s, c) = (self.rate * t).sin_cos();
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        [
            self.rate * (-s * d[0] - c * d[1]),
            self.rate * (c * d[0] - s * d[1]),
        ]
    }

    fn inverse(&self, t: f64, label: Vec2, _tol: f64, _max_iter: usize) -> Result<Vec2> {
        let r = Self::rotate(
            -self.rate * t,
            [label[0] - self.center[0], label[1] - self.center[1]],
        );
        Ok([self.center[0] + r[0], self.center[1] + r[1]])
    }
}
