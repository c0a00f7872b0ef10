//! The run configuration file and its hash.

use std::path::{Path, PathBuf};

use metatrend::backtest::BacktestConfig;
use metatrend::config::TrainConfig;
use metatrend::finetune::{FinetuneOptions, RunMode};
use metatrend::indicators::IndicatorConfig;
use metatrend::labeling::LabelingConfig;
use metatrend::nn::{Arch, ScaleConfig};
use metatrend::tensor::NormPolicy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SEED_ENV: &str = "METATREND_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    /// `universe.json`; relative paths resolve against the config file.
    pub universe: Option<PathBuf>,
    /// Where every artifact is written.
    pub workdir: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self {
            universe: None,
            workdir: PathBuf::from("metatrend-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataPaths,
    pub labeling: LabelingConfig,
    pub indicators: IndicatorConfig,
    pub normalization: NormPolicy,
    pub train: TrainConfig,
    pub scale: ScaleConfig,
    pub finetune: FinetuneOptions,
    pub backtest: BacktestConfig,
    /// Default selection for `finetune`, `meta-train` and `run-all`.
    pub mode: RunMode,
    pub arch: Arch,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataPaths::default(),
            labeling: LabelingConfig::default(),
            indicators: IndicatorConfig::default(),
            normalization: NormPolicy::default(),
            train: TrainConfig::default(),
            scale: ScaleConfig::default(),
            finetune: FinetuneOptions::default(),
            backtest: BacktestConfig::default(),
            mode: RunMode::MetaInd,
            arch: Arch::Tcn,
            seed: 0,
        }
    }
}

/// Everything that changes an artifact's content. Paths and the mode/arch
/// selection are left out so runs in different directories, and different
/// runs over the same data, share one hash.
#[derive(Serialize)]
struct Hashed<'a> {
    labeling: &'a LabelingConfig,
    indicators: &'a IndicatorConfig,
    normalization: NormPolicy,
    train: &'a TrainConfig,
    scale: &'a ScaleConfig,
    finetune: &'a FinetuneOptions,
    backtest: &'a BacktestConfig,
    seed: u64,
}

impl RunConfig {
    /// Reads and validates `path`; unknown keys are rejected with their path.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            key: String::new(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: RunConfig =
            serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
                key: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        if let (Some(u), Some(dir)) = (&cfg.data.universe, path.parent()) {
            if u.is_relative() {
                cfg.data.universe = Some(dir.join(u));
            }
        }
        if cfg.data.workdir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.workdir = dir.join(&cfg.data.workdir);
            }
        }
        Ok(cfg)
    }

    /// Applies the seed environment override.
    pub fn apply_env(&mut self) -> Result<(), CliError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| CliError::Config {
                key: SEED_ENV.into(),
                message: format!("expected an unsigned integer, got {v:?}"),
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let at = |key: &'static str| {
            move |e: metatrend::Error| CliError::Config {
                key: key.into(),
                message: e.to_string(),
            }
        };
        self.labeling.validate().map_err(at("labeling"))?;
        self.indicators.validate().map_err(at("indicators"))?;
        self.train.validate().map_err(at("train"))?;
        self.backtest.validate().map_err(at("backtest"))?;
        metatrend::nn::param_specs(self.arch, &self.scale).map_err(at("scale"))?;
        Ok(())
    }

    /// The training settings with the run seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    /// Hex SHA-256 over the canonical JSON of the content-bearing settings.
    pub fn hash(&self) -> String {
        let h = Hashed {
            labeling: &self.labeling,
            indicators: &self.indicators,
            normalization: self.normalization,
            train: &self.train,
            scale: &self.scale,
            finetune: &self.finetune,
            backtest: &self.backtest,
            seed: self.seed,
        };
        let json = serde_json::to_vec(&h).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn universe_path(&self) -> Result<&Path, CliError> {
        self.data
            .universe
            .as_deref()
            .ok_or_else(|| CliError::Config {
                key: "data.universe".into(),
                message: "no universe manifest given (set data.universe or pass --universe)".into(),
            })
    }
}
