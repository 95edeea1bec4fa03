//! Synthetic scenes with known motion, observation files and error metrics.

mod io;
mod metrics;
mod spec;

pub use io::{parse_observations, read_observations, render_observations, write_observations, OBS_HEADER};
pub use metrics::{rms, rmse};
pub use spec::{FlowKind, SceneSpec, DEFAULT_MAX_POINTS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::{cov_matrix, SpaceTimePoint};
use crate::error::{Error, Result};
use crate::estimation::ObservationSet;
use crate::flow::{BackwardFlow, ConstantDrift, FlowNetwork, IdentityFlow, Rotation, Vec2};
use crate::matrix::{self, Matrix};
use crate::velocity::{velocity_at, VelocityField, VelocitySample};

/// Rotations turn about the middle of the unit square so particles stay in
/// the domain.
pub const ROTATION_CENTER: Vec2 = [0.5, 0.5];

/// `rows × cols` lattice on the unit square in row-major order, with
/// `x₁ = r/(rows−1)` and `x₂ = c/(cols−1)` (0.5 for a single row or column).
pub fn unit_lattice(rows: usize, cols: usize) -> Vec<Vec2> {
    let coord = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push([coord(r, rows), coord(c, cols)]);
        }
    }
    out
}

/// `n` evenly spaced times from 0 to 1 (just 0 when `n = 1`).
pub fn uniform_times(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// A scene's flow as a trait object.
pub enum SceneFlow {
    Identity(IdentityFlow),
    Constant(ConstantDrift),
    Rotation(Rotation),
    Residual(FlowNetwork),
}

impl SceneFlow {
    pub fn as_flow(&self) -> &dyn BackwardFlow {
        match self {
            SceneFlow::Identity(f) => f,
            SceneFlow::Constant(f) => f,
            SceneFlow::Rotation(f) => f,
            SceneFlow::Residual(f) => f,
        }
    }
}

impl SceneSpec {
    pub fn flow(&self) -> Result<SceneFlow> {
        Ok(match self.flow_kind {
            FlowKind::Identity => SceneFlow::Identity(IdentityFlow),
            FlowKind::Constant(w) => SceneFlow::Constant(ConstantDrift::new(w)),
            FlowKind::Rotation(rate) => SceneFlow::Rotation(Rotation::new(rate, ROTATION_CENTER)),
            FlowKind::Residual { seed, norm, arch } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                SceneFlow::Residual(FlowNetwork::random(arch, norm, &mut rng)?)
            }
        })
    }

    /// Observation sites, grouped by time.
    pub fn points(&self) -> Vec<SpaceTimePoint> {
        let grid = unit_lattice(self.rows, self.cols);
        uniform_times(self.times)
            .into_iter()
            .flat_map(|t| grid.iter().map(move |&x| SpaceTimePoint::new(t, x)))
            .collect()
    }
}

/// Draws `Y ~ N(0, Σ + τ²I)` on the scene lattice as `Y = chol(Σ + τ²I)·z`,
/// which has the same law as a noiseless draw plus independent `N(0, τ²)`
/// noise.
pub fn sample_scene(spec: &SceneSpec) -> Result<ObservationSet> {
    spec.validate()?;
    let flow = spec.flow()?;
    let points = spec.points();
    let k = cov_matrix(&points, &spec.params, flow.as_flow())?;
    let l = matrix::cholesky(&k).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot, value } => Error::Numerical(format!(
            "scene covariance is not positive definite (pivot {pivot} = {value:e}); raise tau2"
        )),
        other => other,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let z: Vec<f64> = (0..points.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y = l.matmul(&Matrix::column(&z))?;
    ObservationSet::new(points, y.into_vec())
}

/// The velocity that generated the scene at `(t, x)`.
pub fn truth_velocity(spec: &SceneSpec, t: f64, x: Vec2) -> Result<Vec2> {
    Ok(match spec.flow_kind {
        FlowKind::Identity => [0.0, 0.0],
        FlowKind::Constant(w) => w,
        FlowKind::Rotation(rate) => [
            rate * (x[1] - ROTATION_CENTER[1]),
            -rate * (x[0] - ROTATION_CENTER[0]),
        ],
        FlowKind::Residual { .. } => match spec.flow()? {
            SceneFlow::Residual(net) => velocity_at(&net, t, x)?,
            _ => unreachable!(),
        },
    })
}

/// [`truth_velocity`] on the scene's own times and lattice.
pub fn truth_field(spec: &SceneSpec) -> Result<VelocityField> {
    let samples = spec
        .points()
        .into_iter()
        .map(|p| {
            Ok(VelocitySample {
                t: p.t,
                x: p.x,
                v: truth_velocity(spec, p.t, p.x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VelocityField::new(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_layout() {
        let g = unit_lattice(2, 3);
        assert_eq!(g, vec![[0.0, 0.0], [0.0, 0.5], [0.0, 1.0], [1.0, 0.0], [1.0, 0.5], [1.0, 1.0]]);
        assert_eq!(unit_lattice(1, 1), vec![[0.5, 0.5]]);
        assert_eq!(uniform_times(3), vec![0.0, 0.5, 1.0]);
        assert_eq!(uniform_times(1), vec![0.0]);
    }

    #[test]
    fn truth_closed_forms() {
        let mut spec = SceneSpec::new(FlowKind::Identity, 2, 2, 2);
        assert_eq!(truth_velocity(&spec, 0.5, [0.1, 0.2]).unwrap(), [0.0, 0.0]);
        spec.flow_kind = FlowKind::Constant([0.3, -0.2]);
        assert_eq!(truth_velocity(&spec, 0.5, [0.1, 0.2]).unwrap(), [0.3, -0.2]);
        spec.flow_kind = FlowKind::Rotation(1.0);
        assert_eq!(truth_velocity(&spec, 0.5, [0.5, 1.0]).unwrap(), [0.5, 0.0]);
    }

    #[test]
    fn residual_truth_uses_the_network() {
        let spec = SceneSpec::new(
            FlowKind::Residual {
                seed: 4,
                norm: 0.9,
                arch: crate::flow::FlowArch {
                    blocks: 2,
                    layers: 2,
                    hidden: 5,
                    ..Default::default()
                },
            },
            3,
            3,
            2,
        );
        let net = match spec.flow().unwrap() {
            SceneFlow::Residual(n) => n,
            _ => unreachable!(),
        };
        assert_eq!(
            truth_velocity(&spec, 0.4, [0.2, 0.7]).unwrap(),
            velocity_at(&net, 0.4, [0.2, 0.7]).unwrap()
        );
    }

    #[test]
    fn sampling_is_deterministic_and_time_major() {
        let spec = SceneSpec::new(FlowKind::Constant([0.3, -0.2]), 3, 4, 2);
        let a = sample_scene(&spec).unwrap();
        let b = sample_scene(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.n_times, a.n_space), (2, 12));
        assert_eq!(a.points[12].t, 1.0);
        let other = sample_scene(&SceneSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.values, other.values);
    }

    #[test]
    fn size_cap_is_enforced() {
        let spec = SceneSpec {
            max_points: 10,
            ..SceneSpec::new(FlowKind::Identity, 3, 3, 2)
        };
        assert!(matches!(sample_scene(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn ill_conditioned_scene_suggests_nugget() {
        let mut spec = SceneSpec::new(FlowKind::Identity, 1, 2, 1);
        spec.cols = 2;
        spec.params.tau2 = 1e-300;
        spec.params.l1 = 1e200;
        spec.params.l2 = 1e200;
        let err = sample_scene(&spec).unwrap_err();
        assert!(err.to_string().contains("tau2"), "{err}");
        assert!(err.is_numerical());
    }
}
