//! Flat key-value configuration file: `section.key = value` lines, `#`
//! comments. Unknown keys are rejected so typos fail fast.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qatok_core::DomainMode;

use crate::{IoFormatError, Result};

/// Keys the parser accepts.
pub const KNOWN_KEYS: &[&str] = &[
    "domain",
    "mode",
    "input",
    "vocab",
    "params",
    "merges",
    "seed",
    "out_dir",
    "merge.alpha",
    "merge.epsilon_f",
    "merge.epsilon_q",
    "quality.beta_pos",
    "quality.epsilon_len",
    "quality.beta_vol",
    "quality.gamma_vol",
    "quality.alpha_spread",
    "quality.vol_lookback",
    "quality.w_liq",
    "quality.w_sig",
    "quality.w_stb",
    "quality.w_info",
    "lob.price_bins",
    "lob.spread_bins",
    "lob.imbalance_bins",
    "lob.time_bins",
    "lob.range_ticks",
    "lob.time_min_s",
    "lob.time_max_s",
    "lob.initial_mid",
    "lob.initial_spread",
    "rl.episodes",
    "rl.horizon",
    "rl.k_pq",
    "rl.clip",
    "rl.gae_lambda",
    "rl.gamma",
    "rl.value_coef",
    "rl.entropy_coef",
    "rl.epochs_per_update",
    "rl.episodes_per_update",
    "rl.lr_policy",
    "rl.lr_value",
    "rl.epsilon_start",
    "rl.epsilon_final",
    "stage2.iterations",
    "stage2.eta",
    "stage2.k_candidates",
    "stage2.steps",
    "stage2.lambda_reg",
    "stage2.tau_init",
    "stage2.beta_anneal",
    "stage2.tau_floor",
    "stage2.reward_norm",
    "eval.lambda_lm",
    "eval.lambda_comp",
    "eval.lambda_qual",
    "sample.ratio",
    "sample.epsilon_base",
];

/// Training mode selected by the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Greedy construction with configured parameters only.
    Greedy,
    /// Adaptive parameter learning, then greedy construction.
    GreedyStage2,
    /// RL policy stage, adaptive stage, then greedy construction.
    Full,
}

/// Parsed configuration with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn value_err(what: impl Into<String>) -> IoFormatError {
    IoFormatError::ConfigValue(what.into())
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(IoFormatError::Config {
                line: idx,
                what: format!("expected 'key = value', got {line:?}"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(IoFormatError::Config {
                    line: idx,
                    what: format!("unknown key {key:?}"),
                });
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(IoFormatError::Config {
                    line: idx,
                    what: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| value_err(format!("missing required key {key:?}")))
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| value_err(format!("{key}: {e} (got {raw:?})"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| value_err(format!("{key}: {e} (got {raw:?})"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| value_err(format!("{key}: {e} (got {raw:?})"))),
        }
    }

    pub fn domain(&self) -> Result<DomainMode> {
        match self.require("domain")? {
            "genomics" => Ok(DomainMode::Genomics),
            "finance" => Ok(DomainMode::Finance),
            other => Err(value_err(format!(
                "domain must be genomics or finance, got {other:?}"
            ))),
        }
    }

    pub fn train_mode(&self) -> Result<TrainMode> {
        match self.get("mode").unwrap_or("greedy") {
            "greedy" => Ok(TrainMode::Greedy),
            "greedy+stage2" => Ok(TrainMode::GreedyStage2),
            "full" => Ok(TrainMode::Full),
            other => Err(value_err(format!(
                "mode must be greedy, greedy+stage2 or full, got {other:?}"
            ))),
        }
    }

    pub fn input_path(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.require("input")?))
    }

    pub fn vocab_path(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.require("vocab")?))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir").unwrap_or("qatok-out"))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_u64("seed", 0)
    }

    /// Default quality sensitivity: the converged per-domain value unless
    /// the config pins one.
    pub fn alpha(&self, domain: DomainMode) -> Result<f64> {
        let default = match domain {
            DomainMode::Genomics => 0.72,
            DomainMode::Finance => 0.95,
        };
        self.get_f64("merge.alpha", default)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_defaults() {
        let cfg = Config::parse(
            "# comment\n\
             domain = genomics\n\
             input = reads.fastq\n\
             merges = 32\n\
             \n\
             merge.alpha = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.domain().unwrap(), DomainMode::Genomics);
        assert_eq!(cfg.get_usize("merges", 0).unwrap(), 32);
        assert_eq!(cfg.alpha(DomainMode::Genomics).unwrap(), 0.5);
        assert_eq!(cfg.seed().unwrap(), 0);
        assert_eq!(cfg.train_mode().unwrap(), TrainMode::Greedy);
    }

    #[test]
    fn per_domain_alpha_defaults() {
        let cfg = Config::parse("domain = finance\ninput = lob.csv\n").unwrap();
        assert_eq!(cfg.alpha(DomainMode::Finance).unwrap(), 0.95);
        assert_eq!(cfg.alpha(DomainMode::Genomics).unwrap(), 0.72);
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        assert!(Config::parse("nope = 1\n").is_err());
        assert!(Config::parse("seed = 1\nseed = 2\n").is_err());
        assert!(Config::parse("seed 1\n").is_err());
    }

    #[test]
    fn bad_values_fail_typed_getters() {
        let cfg = Config::parse("seed = banana\n").unwrap();
        assert!(cfg.seed().is_err());
        let cfg = Config::parse("mode = pure-magic\n").unwrap();
        assert!(cfg.train_mode().is_err());
    }
}
