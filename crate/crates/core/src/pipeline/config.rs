//! Run configuration, read from TOML.
//!
//! ```toml
//! [data]
//! factors = "factors.csv"
//! returns = "returns.csv"
//! caps = "caps.csv"        # needed for value weighting
//! riskfree = "rf.csv"      # optional, zero when absent
//!
//! [period]
//! label = "custom"         # 1911 | 2112 | 2212 | custom
//! train_len = 180
//! test_len = 59
//!
//! [models]
//! kinds = ["RNN", "LD", "self_att", "sparse_att"]
//! hidden = [8, 4]
//!
//! [run]
//! seed = 7
//! ```
//!
//! Relative data paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::PretrainConfig;
use crate::backtest::{CostConvention, Weighting};
use crate::data::Month;
use crate::error::{Error, Result};
use crate::numeric::Activation;
use crate::training::{AdamConfig, ModelKind, TrainConfig};

pub const ENV_SEED: &str = "RNNATTN_SEED";
pub const ENV_OUT: &str = "RNNATTN_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub factors: PathBuf,
    pub returns: PathBuf,
    #[serde(default)]
    pub caps: Option<PathBuf>,
    #[serde(default)]
    pub riskfree: Option<PathBuf>,
    #[serde(default = "default_max_missing")]
    pub max_missing: f64,
}

fn default_max_missing() -> f64 {
    0.4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeriodLabel {
    #[serde(rename = "1911")]
    P1911,
    #[serde(rename = "2112")]
    P2112,
    #[serde(rename = "2212")]
    P2212,
    #[serde(rename = "custom")]
    Custom,
}

impl PeriodLabel {
    pub fn name(self) -> &'static str {
        match self {
            PeriodLabel::P1911 => "1911",
            PeriodLabel::P2112 => "2112",
            PeriodLabel::P2212 => "2212",
            PeriodLabel::Custom => "custom",
        }
    }

    /// First and last forecast month of a labelled period.
    pub fn oos_months(self) -> Option<(Month, Month)> {
        let start = Month::new(2013, 1)?;
        let end = match self {
            PeriodLabel::P1911 => Month::new(2019, 11)?,
            PeriodLabel::P2112 => Month::new(2021, 12)?,
            PeriodLabel::P2212 => Month::new(2022, 12)?,
            PeriodLabel::Custom => return None,
        };
        Some((start, end))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    pub label: PeriodLabel,
    /// Training samples per window; 672 for labelled periods by default.
    #[serde(default)]
    pub train_len: Option<usize>,
    /// Required for `custom`: the last `test_len` samples are forecast.
    #[serde(default)]
    pub test_len: Option<usize>,
    #[serde(default = "default_valid_frac")]
    pub valid_frac: f64,
}

fn default_valid_frac() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub kinds: Vec<ModelKind>,
    #[serde(default = "default_hidden")]
    pub hidden: [usize; 2],
    /// Sparse attention window `w`.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_hidden() -> [usize; 2] {
    [64, 32]
}

fn default_window() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub minibatch: Option<usize>,
    /// Windows served by one fit; 1 re-fits at every rolling step.
    pub refit_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            lambda: t.lambda,
            patience: t.patience,
            max_epochs: t.max_epochs,
            minibatch: t.minibatch,
            refit_every: 1,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            lambda: self.lambda,
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed,
            minibatch: self.minibatch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderSection {
    /// When off, mean-filled raw factors feed the forecasters.
    pub enabled: bool,
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub decoder: Activation,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            enabled: true,
            lr: p.adam.lr,
            patience: p.patience,
            max_epochs: p.max_epochs,
            decoder: p.decoder,
        }
    }
}

impl AutoencoderSection {
    pub fn to_pretrain_config(&self, valid_frac: f64, seed: u64) -> PretrainConfig {
        PretrainConfig {
            max_epochs: self.max_epochs,
            patience: self.patience,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            valid_frac,
            seed,
            decoder: self.decoder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct EvaluateSection {
    /// Bartlett lags for the DM variance; plain sample variance when absent.
    pub dm_hac_lags: Option<usize>,
    /// Shuffles per latent factor for permutation importance; 0 skips it.
    pub importance_repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSection {
    pub cost_bp: f64,
    pub convention: CostConvention,
    pub weightings: Vec<Weighting>,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            cost_bp: 50.0,
            convention: CostConvention::PerSide,
            weightings: vec![Weighting::Equal, Weighting::Value],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 uses every logical core.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub period: PeriodConfig,
    pub models: ModelsConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub autoencoder: AutoencoderSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub backtest: BacktestSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, resolves relative data paths and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.factors);
        fix(&mut self.data.returns);
        if let Some(p) = self.data.caps.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.riskfree.as_mut() {
            fix(p);
        }
        fix(&mut self.output.dir);
    }

    /// Applies `RNNATTN_SEED` and `RNNATTN_OUT` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_overrides(std::env::var(ENV_SEED).ok(), std::env::var(ENV_OUT).ok())
    }

    pub fn apply_overrides(&mut self, seed: Option<String>, out: Option<String>) -> Result<()> {
        if let Some(s) = seed {
            self.run.seed = s.trim().parse().map_err(|_| {
                Error::Config(format!("{ENV_SEED} must be an unsigned integer, got `{s}`"))
            })?;
        }
        if let Some(o) = out {
            self.output.dir = PathBuf::from(o);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.kinds.is_empty() {
            return Err(Error::Config("at least one model must be listed".into()));
        }
        let mut seen = self.models.kinds.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.kinds.len() {
            return Err(Error::Config("model list contains duplicates".into()));
        }
        if self.models.hidden.contains(&0) || self.models.window == 0 {
            return Err(Error::Config(
                "hidden sizes and attention window must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.data.max_missing) {
            return Err(Error::Config(format!(
                "max_missing must lie in [0, 1), got {}",
                self.data.max_missing
            )));
        }
        if self.period.label == PeriodLabel::Custom
            && (self.period.train_len.is_none() || self.period.test_len.is_none())
        {
            return Err(Error::Config(
                "period `custom` needs explicit train_len and test_len".into(),
            ));
        }
        if self.train.refit_every == 0 {
            return Err(Error::Config("refit_every must be at least 1".into()));
        }
        self.train.to_train_config(0).validate()?;
        self.autoencoder
            .to_pretrain_config(self.period.valid_frac, 0)
            .adam
            .validate()?;
        if self.autoencoder.patience == 0 || self.autoencoder.max_epochs == 0 {
            return Err(Error::Config(
                "autoencoder patience and max_epochs must be positive".into(),
            ));
        }
        if !(self.backtest.cost_bp >= 0.0) {
            return Err(Error::Config(format!(
                "cost_bp must be non-negative, got {}",
                self.backtest.cost_bp
            )));
        }
        if self.backtest.weightings.contains(&Weighting::Value) && self.data.caps.is_none() {
            return Err(Error::Config("value weighting needs a `caps` file".into()));
        }
        Ok(())
    }
}
