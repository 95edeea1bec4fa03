//! Maximum-likelihood fitting of the flow, covariance parameters and nugget.

mod config;
mod fit;
mod objective;
mod optim;

pub use config::FitConfig;
pub use fit::{fit, initial_state, FitResult};
pub use objective::{
    nll, objective_and_gradient, penalized_objective, ModelState, N_COV_PARAMS,
};
pub use optim::{adam_step, minibatch_sample, AdamState};

use crate::covariance::SpaceTimePoint;
use crate::error::{Error, Result};

/// Observations `Y` at space-time points, grouped by time in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub points: Vec<SpaceTimePoint>,
    pub values: Vec<f64>,
    pub n_times: usize,
    /// Points per time; the largest group when the design is scattered.
    pub n_space: usize,
}

impl ObservationSet {
    pub fn new(points: Vec<SpaceTimePoint>, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::shape(
                "ObservationSet",
                format!("{} points but {} values", points.len(), values.len()),
            ));
        }
        if points.is_empty() {
            return Err(Error::Contract("observation set is empty".into()));
        }
        for (i, (p, &y)) in points.iter().zip(&values).enumerate() {
            if !(p.t.is_finite() && p.x[0].is_finite() && p.x[1].is_finite() && y.is_finite()) {
                return Err(Error::Contract(format!("observation {i} is not finite")));
            }
            if i > 0 && p.t < points[i - 1].t {
                return Err(Error::Contract(format!(
                    "observation {i} at t={} precedes t={}; points must be grouped by ascending time",
                    p.t,
                    points[i - 1].t
                )));
            }
        }
        let groups = time_groups(&points);
        let n_space = groups.iter().map(|g| g.len()).max().unwrap_or(0);
        Ok(ObservationSet {
            n_times: groups.len(),
            n_space,
            points,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    /// The observations at `indices`, which must be ascending.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Contract(format!("index {i} out of range")));
        }
        Self::new(
            indices.iter().map(|&i| self.points[i]).collect(),
            indices.iter().map(|&i| self.values[i]).collect(),
        )
    }

    /// True when times run from exactly 0 to exactly 1 and space lies in the
    /// unit square.
    pub fn is_normalized(&self) -> bool {
        let first = self.points[0].t;
        let last = self.points[self.len() - 1].t;
        first == 0.0
            && last == 1.0
            && self
                .points
                .iter()
                .all(|p| (0.0..=1.0).contains(&p.x[0]) && (0.0..=1.0).contains(&p.x[1]))
    }

    /// Maps times affinely onto `[0, 1]` and each spatial axis onto `[0, 1]`.
    pub fn normalize(&self) -> Result<(ObservationSet, Normalization)> {
        let t0 = self.points[0].t;
        let t1 = self.points[self.len() - 1].t;
        if !(t1 > t0) {
            return Err(Error::Contract(
                "normalization needs at least two distinct times".into(),
            ));
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.points {
            for a in 0..2 {
                lo[a] = lo[a].min(p.x[a]);
                hi[a] = hi[a].max(p.x[a]);
            }
        }
        let span = |a: usize| if hi[a] > lo[a] { hi[a] - lo[a] } else { 1.0 };
        let map = Normalization {
            t_offset: t0,
            t_scale: t1 - t0,
            x_offset: lo,
            x_scale: [span(0), span(1)],
        };
        let points = self
            .points
            .iter()
            .map(|p| map.apply(*p))
            .collect::<Vec<_>>();
        // (t − t₀)/(t₁ − t₀) is exactly 0 and 1 at the endpoints.
        let out = ObservationSet::new(points, self.values.clone())?;
        Ok((out, map))
    }
}

fn time_groups(points: &[SpaceTimePoint]) -> Vec<&[SpaceTimePoint]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=points.len() {
        if i == points.len() || points[i].t != points[start].t {
            out.push(&points[start..i]);
            start = i;
        }
    }
    out
}

/// Affine map from physical to normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub t_offset: f64,
    pub t_scale: f64,
    pub x_offset: [f64; 2],
    pub x_scale: [f64; 2],
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            t_offset: 0.0,
            t_scale: 1.0,
            x_offset: [0.0, 0.0],
            x_scale: [1.0, 1.0],
        }
    }

    pub fn apply(&self, p: SpaceTimePoint) -> SpaceTimePoint {
        SpaceTimePoint {
            t: (p.t - self.t_offset) / self.t_scale,
            x: [
                (p.x[0] - self.x_offset[0]) / self.x_scale[0],
                (p.x[1] - self.x_offset[1]) / self.x_scale[1],
            ],
        }
    }

    /// Converts a velocity in normalized units to physical units.
    pub fn velocity_to_physical(&self, v: [f64; 2]) -> [f64; 2] {
        [
            v[0] * self.x_scale[0] / self.t_scale,
            v[1] * self.x_scale[1] / self.t_scale,
        ]
    }
}
