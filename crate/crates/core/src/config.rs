//! JSON run configuration.
//!
//! Every section is optional and falls back to its defaults; unknown keys are
//! rejected at every level. Schema:
//!
//! ```text
//! {
//!   "tracker": { "tau_high", "tau_low", "gate_high", "gate_low", "min_hits", "max_age",
//!                "appearance_weight", "stage1_metric": "mo_iou" | "iou",
//!                "mat": { "m_slow", "m_fast", "n_slow", "n_fast", "theta_center", "theta_height" } },
//!   "noise":   { "sigma_p", "sigma_v", "sigma_m" },
//!   "frame":   { "width", "height" },
//!   "arch":    { "state_dim", "meas_dim", "memory", "mlp_hidden" },
//!   "train":   { "optimizer": { "lr", "beta1", "beta2", "eps", "weight_decay" }, "window", "stride",
//!                "min_coverage", "batch_size", "epochs", "alpha_pred", "alpha_meas", "val_split",
//!                "seed", "clip_norm", "divergence_factor" },
//!   "weights": "path/to/gates.bin" | null,
//!   "seed": 0
//! }
//! ```
//!
//! `seed` drives scenario generation and weight initialization; `train.seed`
//! drives the train/validation split and batch order. The `MEMOSORT_SEED`
//! environment variable overrides both.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mekf::{FrameNormalizer, NoiseModel};
use crate::nnet::GateArch;
use crate::pipeline::TrackerConfig;
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "MEMOSORT_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub noise: NoiseModel,
    pub frame: FrameNormalizer,
    pub arch: GateArch,
    pub train: TrainConfig,
    pub weights: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tracker.validate().map_err(ConfigError::Invalid)?;
        self.noise.validate().map_err(ConfigError::Invalid)?;
        self.frame.validate().map_err(ConfigError::Invalid)?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let a = &self.arch;
        if a.state_dim != 8 || a.meas_dim != 4 || a.memory == 0 || a.mlp_hidden == 0 {
            return Err(ConfigError::Invalid(
                "arch needs state_dim 8, meas_dim 4 and positive memory/mlp_hidden".into(),
            ));
        }
        Ok(())
    }

    /// Applies a seed override, as read from [`SEED_ENV`].
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        if let Some(v) = value {
            let seed: u64 = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
            self.seed = seed;
            self.train.seed = seed;
        }
        Ok(())
    }

    /// Applies `MEMOSORT_SEED` from the environment, if set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        let v = std::env::var(SEED_ENV).ok();
        self.apply_seed_override(v.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::AssocMetric;

    #[test]
    fn default_dump_holds_the_published_constants() {
        let v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
        let t = &v["tracker"];
        assert_eq!(t["tau_high"], 0.6);
        assert_eq!(t["tau_low"], 0.1);
        assert_eq!(t["stage1_metric"], "mo_iou");
        let m = &t["mat"];
        assert_eq!(m["m_slow"], 2.0);
        assert_eq!(m["m_fast"], 1.0);
        assert_eq!(m["n_slow"], 0.5);
        assert_eq!(m["n_fast"], 0.6);
        assert_eq!(m["theta_center"], 0.0406);
        assert_eq!(m["theta_height"], 0.009);
        assert_eq!(v["train"]["optimizer"]["lr"], 1e-4);
    }

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip_is_idempotent() {
        let text = r#"{"tracker": {"tau_high": 0.7, "stage1_metric": "iou", "mat": {"m_slow": 3}},
                       "train": {"optimizer": {"lr": 0.001}}, "seed": 5}"#;
        let a = RunConfig::from_json(text).unwrap();
        assert_eq!(a.tracker.stage1_metric, AssocMetric::Iou);
        assert_eq!(a.tracker.mat.m_slow, 3.0);
        assert_eq!(a.tracker.mat.n_fast, 0.6);
        assert_eq!((a.train.optimizer.lr, a.train.optimizer.beta2), (0.001, 0.999));
        let once = a.to_json();
        let twice = RunConfig::from_json(&once).unwrap().to_json();
        assert_eq!(once, twice);
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in [
            r#"{"trackr": {}}"#,
            r#"{"tracker": {"tau_hgh": 0.5}}"#,
            r#"{"tracker": {"mat": {"theta": 1}}}"#,
            r#"{"train": {"optimizer": {"learning_rate": 1}}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(bad), Err(ConfigError::Parse(_))), "{bad}");
        }
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in [
            r#"{"tracker": {"tau_low": 0.8}}"#,
            r#"{"noise": {"sigma_m": -1}}"#,
            r#"{"train": {"window": 1}}"#,
            r#"{"arch": {"state_dim": 6}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(bad), Err(ConfigError::Invalid(_))), "{bad}");
        }
    }

    #[test]
    fn seed_override() {
        let mut c = RunConfig::default();
        c.apply_seed_override(None).unwrap();
        assert_eq!(c.seed, 0);
        c.apply_seed_override(Some("42")).unwrap();
        assert_eq!((c.seed, c.train.seed), (42, 42));
        assert!(c.apply_seed_override(Some("-3")).is_err());
    }
}
