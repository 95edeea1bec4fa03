use std::path::Path;

use crate::covariance::{CovarianceParams, Smoothness};
use crate::error::{Error, Result};
use crate::flow::{Activation, FlowArch, Vec2};
use crate::kv::KvDoc;

/// Largest scene sampled with a dense Cholesky factorization by default.
pub const DEFAULT_MAX_POINTS: usize = 6000;

const KEYS: [&str; 20] = [
    "flow",
    "velocity",
    "rate",
    "flow_seed",
    "flow_norm",
    "flow_k",
    "flow_L",
    "flow_h",
    "rows",
    "cols",
    "times",
    "sigma2",
    "l0",
    "l1",
    "l2",
    "tau2",
    "nu",
    "seed",
    "max_points",
    "activation",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowKind {
    Identity,
    /// Uniform translation with this velocity.
    Constant(Vec2),
    /// Rotation about the centre of the unit square at this angular rate.
    Rotation(f64),
    /// A seeded random residual network with the given per-block norm product.
    Residual { seed: u64, norm: f64, arch: FlowArch },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub flow_kind: FlowKind,
    pub rows: usize,
    pub cols: usize,
    pub times: usize,
    pub params: CovarianceParams,
    pub seed: u64,
    pub max_points: usize,
}

impl SceneSpec {
    /// A scene with `σ² = 1, l₀ = 0.5, l₁ = l₂ = 0.3, τ² = 1e-3, ν = 3/2`.
    pub fn new(flow_kind: FlowKind, rows: usize, cols: usize, times: usize) -> Self {
        SceneSpec {
            flow_kind,
            rows,
            cols,
            times,
            params: CovarianceParams {
                sigma2: 1.0,
                l0: 0.5,
                l1: 0.3,
                l2: 0.3,
                nu: Smoothness::ThreeHalves,
                tau2: 1e-3,
            },
            seed: 0,
            max_points: DEFAULT_MAX_POINTS,
        }
    }

    pub fn n_points(&self) -> usize {
        self.rows.saturating_mul(self.cols).saturating_mul(self.times)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.times == 0 {
            return Err(Error::Config("rows, cols and times must all be positive".into()));
        }
        if self.n_points() > self.max_points {
            return Err(Error::Config(format!(
                "scene has {} points, above the cap of {}",
                self.n_points(),
                self.max_points
            )));
        }
        match self.flow_kind {
            FlowKind::Constant(w) if !(w[0].is_finite() && w[1].is_finite()) => {
                return Err(Error::Config("constant velocity must be finite".into()))
            }
            FlowKind::Rotation(r) if !r.is_finite() => {
                return Err(Error::Config("rotation rate must be finite".into()))
            }
            FlowKind::Residual { norm, arch, .. } => {
                arch.validate()?;
                if !(0.0..1.0).contains(&norm) {
                    return Err(Error::Config(format!(
                        "flow_norm must lie in [0, 1) for an invertible flow, got {norm}"
                    )));
                }
            }
            _ => {}
        }
        self.params.validate()
    }

    /// Parses a `key = value` scene description. `flow`, `rows`, `cols` and
    /// `times` are required; `velocity` (as `w1, w2`) is required for
    /// `flow = constant` and `rate` for `flow = rotation`.
    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let doc = KvDoc::parse(source, text)?;
        doc.reject_unknown(&KEYS)?;
        let flow_entry = doc.get("flow").ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: 0,
            column: None,
            message: "missing required key 'flow'".into(),
        })?;
        let flow_kind = match flow_entry.value.as_str() {
            "identity" => FlowKind::Identity,
            "constant" => {
                let e = doc
                    .get("velocity")
                    .ok_or_else(|| doc.error_at(flow_entry, "constant flow needs 'velocity = w1, w2'"))?;
                let parts: Vec<f64> = e
                    .value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| doc.error_at(e, format!("invalid vector '{}'", e.value)))?;
                if parts.len() != 2 {
                    return Err(doc.error_at(e, "expected two components"));
                }
                FlowKind::Constant([parts[0], parts[1]])
            }
            "rotation" => FlowKind::Rotation(doc.parse_opt("rate")?.ok_or_else(|| {
                doc.error_at(flow_entry, "rotation flow needs 'rate'")
            })?),
            "residual" => {
                let default = FlowArch::default();
                FlowKind::Residual {
                    seed: doc.parse_opt("flow_seed")?.unwrap_or(0),
                    norm: doc.parse_opt("flow_norm")?.unwrap_or(0.9),
                    arch: FlowArch {
                        blocks: doc.parse_opt("flow_k")?.unwrap_or(default.blocks),
                        layers: doc.parse_opt("flow_L")?.unwrap_or(default.layers),
                        hidden: doc.parse_opt("flow_h")?.unwrap_or(default.hidden),
                        activation: doc
                            .parse_opt::<Activation>("activation")?
                            .unwrap_or(default.activation),
                    },
                }
            }
            other => {
                return Err(doc.error_at(
                    flow_entry,
                    format!("unknown flow '{other}' (expected identity, constant, rotation or residual)"),
                ))
            }
        };
        let mut spec = SceneSpec::new(
            flow_kind,
            doc.parse_required("rows")?,
            doc.parse_required("cols")?,
            doc.parse_required("times")?,
        );
        let p = &mut spec.params;
        macro_rules! set {
            ($field:expr, $key:literal) => {
                if let Some(v) = doc.parse_opt($key)? {
                    $field = v;
                }
            };
        }
        set!(p.sigma2, "sigma2");
        set!(p.l0, "l0");
        set!(p.l1, "l1");
        set!(p.l2, "l2");
        set!(p.tau2, "tau2");
        set!(p.nu, "nu");
        set!(spec.seed, "seed");
        set!(spec.max_points, "max_points");
        spec.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{source}: {msg}")),
            other => other,
        })?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }
}
