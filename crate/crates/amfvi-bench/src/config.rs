//! Declarative run configuration: a TOML file with CLI flag overrides.
//! Every default matches the benchmark protocol used by the library tests.

use std::path::{Path, PathBuf};

use amfvi::flows::TrainConfig;
use amfvi::mixture::Stage2Config;
use amfvi::targets::FAMILY_NAMES;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const MODEL_NAMES: [&str; 4] = ["amf_vi", "realnvp", "maf", "rbig"];

/// Expert order inside the mixture (also the weight-CSV column order).
pub const EXPERT_ORDER: [&str; 3] = ["realnvp", "maf", "rbig"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub out: PathBuf,
    pub data: DataConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Toml,
    pub metrics: MetricsConfig,
    pub plot: PlotConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_size: usize,
    pub eval_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub maf_layers: usize,
    pub realnvp_layers: usize,
    pub rbig_layers: usize,
    pub rbig_nodes: usize,
    /// Train this many epochs for MAF specifically; `None` uses `epochs`.
    /// Used to deliberately cripple one expert in containment tests.
    pub maf_epochs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Toml {
    pub beta: f64,
    pub epochs: usize,
    pub batch: usize,
    pub floor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub w2_samples: usize,
    pub mmd_samples: usize,
    pub nll_samples: usize,
    pub kl_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    pub points: usize,
    pub axis: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            datasets: FAMILY_NAMES.iter().map(|s| s.to_string()).collect(),
            models: MODEL_NAMES.iter().map(|s| s.to_string()).collect(),
            seeds: vec![0, 1, 2],
            workers: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Toml::default(),
            metrics: MetricsConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_size: 20_000,
            eval_size: 5_000,
        }
    }
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            epochs: 200,
            batch: 256,
            learning_rate: 1e-3,
            hidden: vec![64, 64],
            maf_layers: 5,
            realnvp_layers: 6,
            rbig_layers: 30,
            rbig_nodes: 200,
            maf_epochs: None,
        }
    }
}

impl Default for Stage2Toml {
    fn default() -> Self {
        Stage2Toml {
            beta: 0.9,
            epochs: 200,
            batch: 512,
            floor: 1e-3,
        }
    }
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            w2_samples: 2_000,
            mmd_samples: 2_000,
            nll_samples: 5_000,
            kl_samples: 5_000,
        }
    }
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            points: 2_000,
            axis: 6.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.models.is_empty() || self.seeds.is_empty() {
            bail!("datasets, models, and seeds must all be nonempty");
        }
        for d in &self.datasets {
            if !FAMILY_NAMES.contains(&d.as_str()) {
                bail!("unknown dataset {d:?} (expected one of {FAMILY_NAMES:?})");
            }
        }
        for m in &self.models {
            if !MODEL_NAMES.contains(&m.as_str()) {
                bail!("unknown model {m:?} (expected one of {MODEL_NAMES:?})");
            }
        }
        if self.workers < 1 {
            bail!("workers must be >= 1");
        }
        if self.data.train_size < 100 || self.data.eval_size < 10 {
            bail!("train/eval sizes too small");
        }
        if self.metrics.w2_samples > self.data.eval_size
            || self.metrics.nll_samples > self.data.eval_size
            || self.metrics.mmd_samples > self.data.eval_size
        {
            bail!("metric sample sizes cannot exceed the eval split size");
        }
        let stage2 = self.stage2_config();
        stage2
            .validate(EXPERT_ORDER.len())
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.stage1.epochs,
            batch_size: self.stage1.batch,
            learning_rate: self.stage1.learning_rate,
            hidden: self.stage1.hidden.clone(),
            maf_layers: self.stage1.maf_layers,
            realnvp_layers: self.stage1.realnvp_layers,
            seed,
        }
    }

    pub fn stage2_config(&self) -> Stage2Config {
        Stage2Config {
            beta: self.stage2.beta,
            epochs: self.stage2.epochs,
            batch_size: self.stage2.batch,
            floor: self.stage2.floor,
        }
    }

    /// Directory holding one cell's artifacts.
    pub fn cell_dir(&self, dataset: &str, model: &str, seed: u64) -> PathBuf {
        self.out.join(dataset).join(model).join(seed.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_names_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.datasets = vec!["spiral".into()];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.models = vec!["nice".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip_preserves_defaults() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.stage1.epochs, cfg.stage1.epochs);
        assert_eq!(back.datasets, cfg.datasets);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str("datasets = [\"banana\"]\n[stage1]\nepochs = 5\n").unwrap();
        assert_eq!(cfg.datasets, vec!["banana"]);
        assert_eq!(cfg.stage1.epochs, 5);
        assert_eq!(cfg.stage1.batch, 256);
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
    }
}
