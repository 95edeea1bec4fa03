//! Time-averaged spatial root-mean-square size of a field and of an error
//! field: `(1/n_t)·Σ_i sqrt((1/|D|)·Σ_x ‖v(t_i, x)‖²)`.

use crate::error::{Error, Result};
use crate::velocity::{VelocityField, VelocitySample};

fn time_groups(samples: &[VelocitySample]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || samples[i].t != samples[start].t {
            out.push(start..i);
            start = i;
        }
    }
    out
}

fn time_averaged_rms(samples: &[VelocitySample], vec: impl Fn(usize) -> [f64; 2]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("velocity field is empty".into()));
    }
    let groups = time_groups(samples);
    let total: f64 = groups
        .iter()
        .map(|g| {
            let sq: f64 = g.clone().map(|i| {
                let v = vec(i);
                v[0] * v[0] + v[1] * v[1]
            })
            .sum();
            (sq / g.len() as f64).sqrt()
        })
        .sum();
    Ok(total / groups.len() as f64)
}

/// RMS magnitude of a field grouped by time; the field's `unit_scale` is
/// applied.
pub fn rms(field: &VelocityField) -> Result<f64> {
    let s = field.unit_scale;
    time_averaged_rms(&field.samples, |i| {
        let v = field.samples[i].v;
        [v[0] * s, v[1] * s]
    })
}

/// RMS of `est − truth`. Both fields must list the same `(t, x)` sites in
/// the same order.
pub fn rmse(est: &VelocityField, truth: &VelocityField) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::Contract(format!(
            "fields have {} and {} samples",
            est.len(),
            truth.len()
        )));
    }
    for (i, (a, b)) in est.samples.iter().zip(&truth.samples).enumerate() {
        if a.t != b.t || a.x != b.x {
            return Err(Error::Contract(format!(
                "sample {} differs: (t={}, x=({}, {})) vs (t={}, x=({}, {}))",
                i + 1,
                a.t,
                a.x[0],
                a.x[1],
                b.t,
                b.x[0],
                b.x[1]
            )));
        }
    }
    let (se, st) = (est.unit_scale, truth.unit_scale);
    time_averaged_rms(&est.samples, |i| {
        let a = est.samples[i].v;
        let b = truth.samples[i].v;
        [a[0] * se - b[0] * st, a[1] * se - b[1] * st]
    })
}
