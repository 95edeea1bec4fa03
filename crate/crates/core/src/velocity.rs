//! Velocity fields of backward flows.
//!
//! The velocity of the particle at `x` at time `t` is the time derivative of
//! its trajectory `s ↦ ψ_s⁻¹(ψ_t(x))` at `s = t`. Differentiating
//! `ψ_s⁻¹(ψ_s(x)) = x` turns this into a 2x2 linear solve,
//! `v = −[∇ψ_t(x)]⁻¹ ∂ψ_t(x)/∂t`, which [`velocity_at`] evaluates in closed
//! form. [`velocity_fd_oracle`] differentiates the trajectory directly by
//! inverting the flow, and is kept as an independent check.

use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{BackwardFlow, Vec2};
use crate::kv::write_atomic;
use crate::table;

pub const VELOCITY_HEADER: [&str; 5] = ["t", "x1", "x2", "v1", "v2"];

/// Determinant magnitude below which the flow Jacobian is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocitySample {
    pub t: f64,
    pub x: Vec2,
    pub v: Vec2,
}

/// Velocity samples ordered by time, then by grid position.
///
/// Velocities are kept in fitting units (normalized space per normalized
/// time); `unit_scale` converts them to physical units when written out.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub samples: Vec<VelocitySample>,
    pub unit_scale: f64,
}

impl VelocityField {
    pub fn new(samples: Vec<VelocitySample>) -> Self {
        VelocityField {
            samples,
            unit_scale: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<[f64; 5]> = self
            .samples
            .iter()
            .map(|s| {
                [
                    s.t,
                    s.x[0],
                    s.x[1],
                    s.v[0] * self.unit_scale,
                    s.v[1] * self.unit_scale,
                ]
            })
            .collect();
        table::render(&VELOCITY_HEADER, rows.iter().map(|r| r.as_slice()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_table())
    }

    /// Reads a velocity table; values are taken as already scaled.
    pub fn read(path: &Path) -> Result<Self> {
        let rows = table::read(path, &VELOCITY_HEADER)?;
        Ok(Self::from_rows(&rows))
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let rows = table::parse(source, text, &VELOCITY_HEADER)?;
        Ok(Self::from_rows(&rows))
    }

    fn from_rows(rows: &[table::Row]) -> Self {
        VelocityField::new(
            rows.iter()
                .map(|r| VelocitySample {
                    t: r.values[0],
                    x: [r.values[1], r.values[2]],
                    v: [r.values[3], r.values[4]],
                })
                .collect(),
        )
    }
}

/// `−[∇ψ_t(x)]⁻¹ ∂ψ_t(x)/∂t` via the 2x2 adjugate.
pub fn velocity_at<F: BackwardFlow + ?Sized>(flow: &F, t: f64, x: Vec2) -> Result<Vec2> {
    let j = flow.jacobian(t, x);
    let d = flow.time_derivative(t, x);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if !(det.abs() >= SINGULAR_DET) {
        return Err(Error::SingularJacobian { t, x, det });
    }
    Ok([
        -(j[1][1] * d[0] - j[0][1] * d[1]) / det,
        -(-j[1][0] * d[0] + j[0][0] * d[1]) / det,
    ])
}

/// Central difference of the trajectory `s ↦ ψ_s⁻¹(ψ_t(x))` at `s = t`.
pub fn velocity_fd_oracle<F: BackwardFlow + ?Sized>(
    flow: &F,
    t: f64,
    x: Vec2,
    h: f64,
) -> Result<Vec2> {
    if !(h > 0.0) || t - h < 0.0 || t + h > 1.0 {
        return Err(Error::Contract(format!(
            "finite-difference window [{}, {}] leaves [0, 1]",
            t - h,
            t + h
        )));
    }
    const TOL: f64 = 1e-13;
    const MAX_ITER: usize = 5000;
    let label = flow.forward(t, x);
    let ahead = flow.inverse(t + h, label, TOL, MAX_ITER)?;
    let behind = flow.inverse(t - h, label, TOL, MAX_ITER)?;
    Ok([
        (ahead[0] - behind[0]) / (2.0 * h),
        (ahead[1] - behind[1]) / (2.0 * h),
    ])
}

/// Evaluates [`velocity_at`] for every time (outer) and grid point (inner).
pub fn velocity_field<F: BackwardFlow + ?Sized>(
    flow: &F,
    times: &[f64],
    grid: &[Vec2],
    unit_scale: f64,
) -> Result<VelocityField> {
    if let Some(t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Contract(format!("time {t} outside [0, 1]")));
    }
    let mut samples = Vec::with_capacity(times.len() * grid.len());
    for &t in times {
        for &x in grid {
            samples.push(VelocitySample {
                t,
                x,
                v: velocity_at(flow, t, x)?,
            });
        }
    }
    Ok(VelocityField {
        samples,
        unit_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{ConstantDrift, FlowArch, FlowNetwork, IdentityFlow, Mat2, Rotation};

    #[test]
    fn constant_drift_velocity() {
        let f = ConstantDrift::new([1.0, 2.0]);
        assert_eq!(velocity_at(&f, 0.3, [5.0, -1.0]).unwrap(), [1.0, 2.0]);
        let v = velocity_fd_oracle(&f, 0.5, [0.2, 0.2], 1e-3).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-10 && (v[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn rotation_velocity() {
        let f = Rotation::new(1.0, [0.0, 0.0]);
        let v = velocity_at(&f, 0.37, [1.0, 0.0]).unwrap();
        assert!(v[0].abs() < 1e-15 && (v[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_velocity() {
        assert_eq!(velocity_at(&IdentityFlow, 0.5, [0.1, 0.9]).unwrap(), [0.0, 0.0]);
        let zero = FlowNetwork::zeros(FlowArch::default()).unwrap();
        assert_eq!(velocity_at(&zero, 0.5, [0.1, 0.9]).unwrap(), [0.0, 0.0]);
        assert_eq!(velocity_fd_oracle(&zero, 0.5, [0.1, 0.9], 1e-4).unwrap(), [0.0, 0.0]);
    }

    struct Degenerate;
    impl BackwardFlow for Degenerate {
        fn forward(&self, _t: f64, x: Vec2) -> Vec2 {
            [x[0], 0.0]
        }
        fn jacobian(&self, _t: f64, _x: Vec2) -> Mat2 {
            [[1.0, 0.0], [0.0, 0.0]]
        }
        fn time_derivative(&self, _t: f64, _x: Vec2) -> Vec2 {
            [0.0, 1.0]
        }
        fn inverse(&self, _t: f64, a: Vec2, _tol: f64, _m: usize) -> Result<Vec2> {
            Ok(a)
        }
    }

    #[test]
    fn singular_jacobian_echoes_location() {
        let err = velocity_at(&Degenerate, 0.25, [3.0, 4.0]).unwrap_err();
        match err {
            Error::SingularJacobian { t, x, .. } => assert_eq!((t, x), (0.25, [3.0, 4.0])),
            other => panic!("{other:?}"),
        }
        let err = velocity_field(&Degenerate, &[0.5], &[[1.0, 2.0]], 1.0).unwrap_err();
        assert!(err.to_string().contains("t=0.5"));
    }

    #[test]
    fn oracle_window_must_stay_in_unit_interval() {
        assert!(velocity_fd_oracle(&IdentityFlow, 0.0, [0.0, 0.0], 1e-4).is_err());
        assert!(velocity_fd_oracle(&IdentityFlow, 1.0, [0.0, 0.0], 1e-4).is_err());
    }

    #[test]
    fn field_ordering_and_scaling() {
        let f = ConstantDrift::new([0.5, -0.25]);
        let grid = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let field = velocity_field(&f, &[0.0, 1.0], &grid, 4.0).unwrap();
        assert_eq!(field.len(), 6);
        assert_eq!(field.samples[3].t, 1.0);
        assert_eq!(field.samples[4].x, [0.0, 1.0]);
        let back = VelocityField::parse("v", &field.to_table()).unwrap();
        assert_eq!(back.samples[0].v, [2.0, -1.0]);
        assert!(velocity_field(&f, &[1.5], &grid, 1.0).is_err());
    }
}
