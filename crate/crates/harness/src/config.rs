//! Experiment configuration as flat `key = value` text.
//!
//! Keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `input_h`, `input_w` | image size the network expects | 128, 64 |
//! | `stem_channels` | stem convolution width | 8 |
//! | `au_cl_schedule` | comma-separated per-block widths | 8,8,16,16,32,32 |
//! | `head_channels` | width of the 1x1 mixing convolution | 64 |
//! | `outputs` | regression outputs | 30 |
//! | `variant` | `carn` or `cnn-baseline` | carn |
//! | `gate_kernel` | amplifier gate kernel size | 3 |
//! | `loss` | `loss_p` or `loss_t` | loss_t |
//! | `lambda_l` | manifold term weight | 1.0 |
//! | `lambda_p` | weight-norm penalty | 1e-4 |
//! | `k` | reconstruction neighbours | 5 |
//! | `weight_norm` | `euclidean` or `squared` | euclidean |
//! | `learning_rate`, `beta1`, `beta2`, `epsilon` | Adam | 1e-3, 0.9, 0.999, 1e-8 |
//! | `batch_size` | samples per step | 8 |
//! | `epochs` | passes over the training split | 100 |
//! | `seed` | initialisation and shuffling seed | 0 |
//! | `dataset` | dataset directory | data |
//! | `output` | run directory | runs/default |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use carn_core::container::parse_kv;
use carn_core::loss::LossConfig;
use carn_core::model::{CarnConfig, Variant};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossVariant {
    /// Data term and weight penalty only.
    LossP,
    /// Adds the label-manifold term.
    LossT,
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossVariant::LossP => "loss_p",
            LossVariant::LossT => "loss_t",
        })
    }
}

impl FromStr for LossVariant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss_p" => Ok(LossVariant::LossP),
            "loss_t" => Ok(LossVariant::LossT),
            other => Err(HarnessError::config("loss", format!("expected loss_p or loss_t, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: CarnConfig,
    pub loss_variant: LossVariant,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dataset: PathBuf,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: CarnConfig::default(),
            loss_variant: LossVariant::LossT,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 8,
            epochs: 100,
            seed: 0,
            dataset: PathBuf::from("data"),
            output: PathBuf::from("runs/default"),
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| HarnessError::config(key, format!("cannot parse `{value}`")))
}

impl ExperimentConfig {
    /// Loss weights actually used in training: `loss_p` runs drop the
    /// manifold term.
    pub fn effective_loss(&self) -> LossConfig {
        match self.loss_variant {
            LossVariant::LossP => LossConfig { lambda_l: 0.0, ..self.loss.clone() },
            LossVariant::LossT => self.loss.clone(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        match key {
            "loss" => self.loss_variant = value.parse()?,
            "lambda_l" => self.loss.lambda_l = parse(key, value)?,
            "lambda_p" => self.loss.lambda_p = parse(key, value)?,
            "k" => self.loss.k = parse(key, value)?,
            "weight_norm" => self.loss.weight_norm = value.parse()?,
            "learning_rate" => self.adam.learning_rate = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "epsilon" => self.adam.epsilon = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "dataset" => self.dataset = PathBuf::from(value),
            "output" => self.output = PathBuf::from(value),
            other => return Err(HarnessError::config(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |k: &str, r: &str| Err(HarnessError::config(k, r));
        if !(self.loss.lambda_l >= 0.0 && self.loss.lambda_l.is_finite()) {
            return bad("lambda_l", "must be finite and non-negative");
        }
        if !(self.loss.lambda_p >= 0.0 && self.loss.lambda_p.is_finite()) {
            return bad("lambda_p", "must be finite and non-negative");
        }
        if self.loss.k == 0 {
            return bad("k", "must be positive");
        }
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        for (k, b) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(k, "must lie in [0, 1)");
            }
        }
        if self.adam.epsilon.is_nan() || self.adam.epsilon <= 0.0 {
            return bad("epsilon", "must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size", "batch norm needs at least 2 samples per batch");
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text) {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_kv(&text)
    }

    /// Applies `--key value` and `--key=value` flags; dashes in keys map to
    /// underscores.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        let mut it = args.iter().map(|s| s.as_ref());
        while let Some(flag) = it.next() {
            let Some(body) = flag.strip_prefix("--") else {
                return Err(HarnessError::config(flag, "expected a `--key value` override"));
            };
            let (key, value) = match body.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| HarnessError::config(body, "missing value"))?;
                    (body.to_string(), v.to_string())
                }
            };
            self.set(&key.replace('-', "_"), &value)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "{}loss = {}\nlambda_l = {}\nlambda_p = {}\nk = {}\nweight_norm = {}\nlearning_rate = {}\nbeta1 = {}\nbeta2 = {}\nepsilon = {}\nbatch_size = {}\nepochs = {}\nseed = {}\ndataset = {}\noutput = {}\n",
            self.model.to_kv(),
            self.loss_variant,
            self.loss.lambda_l,
            self.loss.lambda_p,
            self.loss.k,
            self.loss.weight_norm,
            self.adam.learning_rate,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.epsilon,
            self.batch_size,
            self.epochs,
            self.seed,
            self.dataset.display(),
            self.output.display(),
        )
    }

    /// Name in the ablation table, e.g. `CARN-loss_t`.
    pub fn label(&self) -> String {
        let model = match self.model.variant {
            Variant::Carn => "CARN",
            Variant::CnnBaseline => "CNN",
        };
        format!("{model}-{}", self.loss_variant)
    }
}
