use std::path::Path;

use crate::covariance::Smoothness;
use crate::error::{Error, Result};
use crate::flow::{Activation, FlowArch};
use crate::kv::KvDoc;

const KEYS: [&str; 13] = [
    "minibatch_size",
    "iterations",
    "learning_rate",
    "beta1",
    "beta2",
    "penalty_weight",
    "penalty_target",
    "seed",
    "k",
    "L",
    "h",
    "activation",
    "nu",
];

/// Minibatch size used when none is configured, capped at the dataset size.
pub const DEFAULT_MINIBATCH_CAP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    /// `None` means `min(2000, dataset size)`.
    pub minibatch_size: Option<usize>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub penalty_weight: f64,
    pub penalty_target: f64,
    pub seed: u64,
    pub arch: FlowArch,
    pub nu: Smoothness,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            minibatch_size: None,
            iterations: 100,
            learning_rate: 0.02,
            beta1: 0.9,
            beta2: 0.99,
            penalty_weight: 10.0,
            penalty_target: 0.98,
            seed: 0,
            arch: FlowArch::default(),
            nu: Smoothness::ThreeHalves,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if let Some(n) = self.minibatch_size {
            if n < 2 {
                return bad(format!("minibatch_size must be at least 2, got {n}"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return bad(format!(
                "penalty_weight must be nonnegative, got {}",
                self.penalty_weight
            ));
        }
        if !(self.penalty_target > 0.0 && self.penalty_target < 1.0) {
            return bad(format!(
                "penalty_target must lie in (0, 1), got {}",
                self.penalty_target
            ));
        }
        self.arch.validate()
    }

    /// Minibatch size for a dataset of `n` points.
    pub fn resolved_minibatch(&self, n: usize) -> Result<usize> {
        match self.minibatch_size {
            None => Ok(n.min(DEFAULT_MINIBATCH_CAP)),
            Some(m) if m > n => Err(Error::Config(format!(
                "minibatch_size {m} exceeds the {n} available observations"
            ))),
            Some(m) => Ok(m),
        }
    }

    /// Parses a `key = value` document; absent keys keep their defaults.
    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let doc = KvDoc::parse(source, text)?;
        doc.reject_unknown(&KEYS)?;
        let mut cfg = FitConfig::default();
        if let Some(v) = doc.parse_opt("minibatch_size")? {
            cfg.minibatch_size = Some(v);
        }
        macro_rules! set {
            ($field:expr, $key:literal) => {
                if let Some(v) = doc.parse_opt($key)? {
                    $field = v;
                }
            };
        }
        set!(cfg.iterations, "iterations");
        set!(cfg.learning_rate, "learning_rate");
        set!(cfg.beta1, "beta1");
        set!(cfg.beta2, "beta2");
        set!(cfg.penalty_weight, "penalty_weight");
        set!(cfg.penalty_target, "penalty_target");
        set!(cfg.seed, "seed");
        set!(cfg.arch.blocks, "k");
        set!(cfg.arch.layers, "L");
        set!(cfg.arch.hidden, "h");
        if let Some(a) = doc.parse_opt::<Activation>("activation")? {
            cfg.arch.activation = a;
        }
        if let Some(nu) = doc.parse_opt::<Smoothness>("nu")? {
            cfg.nu = nu;
        }
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{source}: {msg}")),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = FitConfig::default();
        assert_eq!((c.iterations, c.learning_rate, c.beta1, c.beta2), (100, 0.02, 0.9, 0.99));
        assert_eq!((c.penalty_weight, c.penalty_target), (10.0, 0.98));
        assert_eq!((c.arch.blocks, c.arch.layers, c.arch.hidden), (3, 3, 32));
        assert_eq!(c.resolved_minibatch(50).unwrap(), 50);
        assert_eq!(c.resolved_minibatch(9000).unwrap(), 2000);
        c.validate().unwrap();
    }

    #[test]
    fn parses_every_key() {
        let text = "minibatch_size = 40\niterations = 7\nlearning_rate = 0.1\nbeta1 = 0.8\n\
                    beta2 = 0.95\npenalty_weight = 0\npenalty_target = 0.5\nseed = 11\n\
                    k = 1\nL = 2\nh = 4\nactivation = sigmoid-scaled\nnu = 5/2\n";
        let c = FitConfig::parse("cfg", text).unwrap();
        assert_eq!(c.minibatch_size, Some(40));
        assert_eq!(c.iterations, 7);
        assert_eq!(c.seed, 11);
        assert_eq!(c.arch.activation, Activation::ScaledSigmoid);
        assert_eq!(c.nu, Smoothness::FiveHalves);
        assert_eq!(c.resolved_minibatch(100).unwrap(), 40);
        assert!(c.resolved_minibatch(20).is_err());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let err = FitConfig::parse("cfg", "iterations = 3\nlr = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("'lr'"), "{err}");
        assert!(FitConfig::parse("cfg", "iterations = 0\n").is_err());
        assert!(FitConfig::parse("cfg", "beta1 = 1.0\n").is_err());
        assert!(FitConfig::parse("cfg", "penalty_target = 1.5\n").is_err());
        assert!(FitConfig::parse("cfg", "minibatch_size = 1\n").is_err());
        assert!(FitConfig::parse("cfg", "nu = 2\n").is_err());
    }
}
