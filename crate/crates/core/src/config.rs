//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 3            # optional; overrides benchmark.seed and train.seed
//!
//! [benchmark]
//! target_correct_rate = 0.99
//!
//! [model]
//! hidden_dims = [32, 32]
//! activation = "tanh"
//!
//! [train]
//! variant = "full"
//! alpha = 5e-4
//!
//! [gradcheck]
//! mode = "second_order"
//! ```
//!
//! Every section and key is optional; unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::BenchmarkConfig;
use crate::error::{Error, Result};
use crate::model::{Activation, Architecture};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32, 32],
            activation: Activation::Tanh,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, input_dim: usize) -> Result<Architecture> {
        Architecture::new(input_dim, self.hidden_dims.clone(), self.activation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradCheckMode {
    SecondOrder,
    /// Drops the Hessian term; expected to fail the tolerance.
    FirstOrder,
    /// The one-dimensional quadratic with a closed-form meta-gradient.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub mode: GradCheckMode,
    pub cases: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            mode: GradCheckMode::SecondOrder,
            cases: 20,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub benchmark: BenchmarkConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gradcheck: GradCheckConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            cfg.benchmark.seed = seed;
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Defaults when no path is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        self.train.validate()?;
        self.model.architecture(self.benchmark.input_dim)?;
        if !(self.gradcheck.step > 0.0 && self.gradcheck.tolerance > 0.0) || self.gradcheck.cases == 0 {
            return Err(Error::config("gradcheck step, tolerance and cases must be positive"));
        }
        Ok(())
    }

    /// The same configuration with every seed set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = Some(seed);
        cfg.benchmark.seed = seed;
        cfg.train.seed = seed;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Variant;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn sections_and_seed_override() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 9
            [model]
            hidden_dims = [16]
            [train]
            variant = "label_only"
            alpha = 0.01
            [gradcheck]
            mode = "quadratic"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.train.variant, Variant::LabelOnly);
        assert_eq!(cfg.train.alpha, 0.01);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.benchmark.seed, 9);
        assert_eq!(cfg.model.hidden_dims, vec![16]);
        assert_eq!(cfg.gradcheck.mode, GradCheckMode::Quadratic);
    }

    #[test]
    fn unknown_keys_are_errors() {
        for text in ["bogus = 1", "[train]\nalfa = 0.1", "[nope]\nx = 1", "[model]\nwidth = 3"] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_errors() {
        assert!(ExperimentConfig::from_toml("[train]\nalpha = -1.0").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nvariant = \"maml\"").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nhidden_dims = []").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default().with_seed(4);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
