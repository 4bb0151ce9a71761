//! Experiment configuration files (TOML).
//!
//! ```toml
//! seed = 0
//! data_dir = "data"          # optional; defaults to the output directory
//!
//! [benchmark]                # synthetic benchmark, see BenchmarkConfig
//! num_classes = 30
//!
//! [train]                    # see TrainConfig
//! epochs = 40
//!
//! [eval]
//! group_weighting = "sample"
//! ablation_seeds = [0, 1, 2, 3, 4]
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{GroupThresholds, GroupWeighting};
use crate::synth::BenchmarkConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub thresholds: GroupThresholds,
    pub group_weighting: GroupWeighting,
    /// Seeds the ablation runs over; medians are reported.
    pub ablation_seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: GroupThresholds::default(),
            group_weighting: GroupWeighting::Sample,
            ablation_seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Directory holding the embedding files for `train` and `eval`.
    pub data_dir: Option<PathBuf>,
    pub benchmark: BenchmarkConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            data_dir: None,
            benchmark: BenchmarkConfig::default(),
            train: TrainConfig::desk(),
            eval: EvalConfig::default(),
        };
        cfg.set_seed(0);
        cfg
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let seed = cfg.seed;
        cfg.set_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a configuration file. A relative `data_dir` is
    /// resolved against the file's directory and must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = &cfg.data_dir {
            let resolved = match path.parent() {
                Some(base) if dir.is_relative() => base.join(dir),
                _ => dir.clone(),
            };
            if !resolved.is_dir() {
                return Err(Error::InvalidConfig(format!(
                    "data_dir {} does not exist",
                    resolved.display()
                )));
            }
            cfg.data_dir = Some(resolved);
        }
        Ok(cfg)
    }

    /// Sets the experiment seed and propagates it to the benchmark and
    /// training sections.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.benchmark.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        self.train.validate()?;
        self.eval.thresholds.validate()?;
        if self.eval.ablation_seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "ablation_seeds must not be empty".into(),
            ));
        }
        Ok(())
    }

    /// Canonical TOML rendering (seed included).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short stable hash of the full configuration including the seed.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(&(self, self.seed)).expect("config serializes");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "sead = 3",
            "[train]\nlearning_rat = 0.1",
            "[benchmark]\nimbalance = 3.0",
            "[nope]",
        ] {
            assert!(
                matches!(
                    ExperimentConfig::from_toml(text),
                    Err(Error::InvalidConfig(_))
                ),
                "{text}"
            );
        }
    }

    #[test]
    fn seed_propagates() {
        let cfg = ExperimentConfig::from_toml("seed = 42\n[train]\nepochs = 3").unwrap();
        assert_eq!(cfg.benchmark.seed, 42);
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml("[benchmark]\nimbalance_ratio = 0.5").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nbatch_per_domain = 1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.set_seed(5);
        cfg.train.mining = crate::losses::NegativeMining::AllPairsMean;
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.set_seed(1);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }

    #[test]
    fn missing_data_dir_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "data_dir = \"nowhere\"").unwrap();
        assert!(matches!(
            ExperimentConfig::load(&path),
            Err(Error::InvalidConfig(_))
        ));
        std::fs::create_dir(dir.path().join("here")).unwrap();
        std::fs::write(&path, "data_dir = \"here\"").unwrap();
        assert_eq!(
            ExperimentConfig::load(&path).unwrap().data_dir,
            Some(dir.path().join("here"))
        );
    }
}
