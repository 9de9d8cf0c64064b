//! Optimization: Adam, β-annealing, the auxiliary ŷ classifier, experiment
//! configuration and the FarconVAE training loop.

pub mod adam;
pub mod classifier;
mod pipeline;
mod trainer;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use classifier::{train_aux_classifier, AuxClassifier, AuxConfig, ClassifierOptions};
pub use pipeline::{prepare_data, PreparedData};
pub use trainer::{
    train_farcon, EpochRecord, FarconObjective, Objective, TrainHistory, TrainOptions, ValidSet,
};

use crate::data::{PairingStrategy, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::model::{EncoderY, ModelDims};
use crate::objectives::{Kernel, LossWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// CSV plus JSON schema; relative paths resolve against the data
    /// directory.
    Tabular { csv: PathBuf, schema: PathBuf },
    Synthetic { spec: SyntheticSpec },
}

/// Which y the encoder receives when embedding evaluation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalY {
    /// ŷ from the auxiliary x → y classifier.
    #[default]
    Aux,
    TrueY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarconConfig {
    pub name: String,
    pub data: DataSource,
    pub zx_dim: usize,
    pub zs_dim: usize,
    pub hidden: usize,
    pub encoder_y: EncoderY,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kernel: Kernel,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta_anneal_fraction: f64,
    /// Early-stopping patience in epochs on validation y-accuracy.
    pub patience: Option<usize>,
    pub seed: u64,
    pub split_seed: u64,
    /// Train/valid/test fractions. Synthetic data only uses the first two,
    /// renormalized, to carve a validation set out of its training draw.
    pub split: [f64; 3],
    pub pairing: PairingStrategy,
    pub eval_y: EvalY,
    /// Fraction of training rows whose `s` is flipped before pairing.
    pub sensitive_noise: f64,
    pub aux: AuxConfig,
    pub probe: ProbeConfig,
}

pub const PRESETS: [&str; 4] = ["adult", "german", "synthetic", "synthetic-sr"];

impl FarconConfig {
    fn tabular(name: &str, zdim: usize) -> Self {
        Self {
            name: name.into(),
            data: DataSource::Tabular {
                csv: format!("{name}.csv").into(),
                schema: format!("{name}.schema.json").into(),
            },
            zx_dim: zdim,
            zs_dim: zdim,
            hidden: 64,
            encoder_y: EncoderY::Label,
            alpha: 1.0,
            beta: 0.2,
            gamma: 1.0,
            kernel: Kernel::Gaussian,
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 300,
            batch_size: 64,
            beta_anneal_fraction: 0.0,
            patience: Some(30),
            seed: 0,
            split_seed: 0,
            split: [0.8, 0.1, 0.1],
            pairing: PairingStrategy::MatchedNeighbor,
            eval_y: EvalY::Aux,
            sensitive_noise: 0.0,
            aux: AuxConfig::default(),
            probe: ProbeConfig::default(),
        }
    }

    pub fn adult() -> Self {
        Self::tabular("adult", 15)
    }

    pub fn german() -> Self {
        Self::tabular("german", 5)
    }

    /// `(α, β, γ, lr, wd) = (1.0, 0.2, 0.0, 1e-3, 1e-4)`, encoder y slot
    /// held at 0.5.
    pub fn synthetic() -> Self {
        Self {
            name: "synthetic".into(),
            data: DataSource::Synthetic {
                spec: SyntheticSpec::default(),
            },
            zx_dim: 4,
            zs_dim: 4,
            encoder_y: EncoderY::Uninformative,
            alpha: 1.0,
            beta: 0.2,
            gamma: 0.0,
            epochs: 100,
            // a validation set drawn like the training data rewards the
            // spurious block, so the final model is kept
            patience: None,
            split: [0.9, 0.1, 0.0],
            eval_y: EvalY::TrueY,
            ..Self::tabular("synthetic", 4)
        }
    }

    /// `(α, β, γ, lr, wd) = (0.5, 0.2, 0.5, 7e-4, 1e-4)` with β annealed over
    /// the first 10% of epochs.
    pub fn synthetic_sr() -> Self {
        Self {
            name: "synthetic-sr".into(),
            alpha: 0.5,
            gamma: 0.5,
            lr: 7e-4,
            beta_anneal_fraction: 0.1,
            ..Self::synthetic()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "adult" => Some(Self::adult()),
            "german" => Some(Self::german()),
            "synthetic" => Some(Self::synthetic()),
            "synthetic-sr" => Some(Self::synthetic_sr()),
            _ => None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            kernel: self.kernel,
        }
    }

    pub fn dims(&self, x_dim: usize) -> ModelDims {
        ModelDims {
            x_dim,
            s_dim: 1,
            y_dim: 1,
            zx_dim: self.zx_dim,
            zs_dim: self.zs_dim,
            hidden: self.hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.beta_anneal_fraction) {
            return bad(format!("beta_anneal_fraction must lie in [0, 1], got {}", self.beta_anneal_fraction));
        }
        if !(0.0..=1.0).contains(&self.sensitive_noise) {
            return bad(format!("sensitive_noise must lie in [0, 1], got {}", self.sensitive_noise));
        }
        if self.zx_dim == 0 || self.zs_dim == 0 || self.hidden == 0 {
            return bad("latent and hidden sizes must be positive".into());
        }
        if self.zx_dim != self.zs_dim {
            // the (z_x, z_s) negative pair compares the two posteriors directly
            return bad(format!("zx_dim ({}) and zs_dim ({}) must match", self.zx_dim, self.zs_dim));
        }
        Ok(())
    }

    /// Applies `key=value` overrides. Dotted keys reach nested fields; the
    /// value is parsed as JSON and falls back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("override `{item}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut tree;
            let parts: Vec<&str> = key.split('.').collect();
            for (k, part) in parts.iter().enumerate() {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| Error::InvalidArgument(format!("override key `{key}`: `{part}` is not inside an object")))?;
                if !obj.contains_key(*part) {
                    return Err(Error::InvalidArgument(format!("unknown config key `{key}`")));
                }
                if k + 1 == parts.len() {
                    obj.insert(part.to_string(), value.clone());
                    break;
                }
                node = obj.get_mut(*part).expect("checked");
            }
        }
        let cfg: Self = serde_json::from_value(tree)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Linear ramp from 0 to `target` over the first `⌈fraction·total⌉` epochs,
/// then constant.
pub fn beta_schedule(epoch: usize, total_epochs: usize, target: f64, anneal_fraction: f64) -> f64 {
    // tolerance keeps 0.1·300 from rounding up to 31
    let ramp = (anneal_fraction * total_epochs as f64 - 1e-9).ceil().max(0.0) as usize;
    if ramp == 0 || epoch >= ramp {
        target
    } else {
        target * epoch as f64 / ramp as f64
    }
}
