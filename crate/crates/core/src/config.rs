//! The run configuration file (TOML).
//!
//! Top-level keys are [`TrainConfig`] fields. A `[coldstart]` table holds the
//! cold-start settings and a `[paths]` table default file locations:
//!
//! ```toml
//! lr = 3e-3
//! group_size = 8
//!
//! [[stages]]
//! strategy = "shared"
//!
//! [[stages]]
//! strategy = "full"
//! gamma = 0.0
//! eta = 0.0
//!
//! [coldstart]
//! sc = { strength = 0.8 }
//! bc = { epochs = 10, lr = 1e-2 }
//!
//! [paths]
//! train_data = "data/train.jsonl"
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::coldstart::ColdstartConfig;
use crate::error::{ConfigError, Error, Result};
use crate::grpo::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    /// Checkpoint to start from (`train`) or to evaluate (`eval`, `rollout`).
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub coldstart: ColdstartConfig,
    pub paths: Paths,
}

#[derive(Serialize)]
struct Echo<'a> {
    #[serde(flatten)]
    train: &'a TrainConfig,
    coldstart: &'a ColdstartConfig,
    paths: &'a Paths,
}

/// Deserializes `table`; on failure, names the first key that fails on its own.
fn section<T: DeserializeOwned>(table: &toml::Table, prefix: &str) -> Result<T, ConfigError> {
    toml::Value::Table(table.clone()).try_into::<T>().map_err(|whole| {
        for (k, v) in table {
            let one = toml::Table::from_iter([(k.clone(), v.clone())]);
            if let Err(e) = toml::Value::Table(one).try_into::<T>() {
                return ConfigError::invalid(format!("{prefix}{k}"), e.message().trim().to_string());
            }
        }
        ConfigError::invalid(prefix.trim_end_matches('.'), whole.message().trim().to_string())
    })
}

fn take_table(table: &mut toml::Table, key: &str) -> Result<toml::Table, ConfigError> {
    match table.remove(key) {
        None => Ok(toml::Table::new()),
        Some(toml::Value::Table(t)) => Ok(t),
        Some(_) => Err(ConfigError::invalid(key, "expected a table")),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::invalid("<file>", e.message().trim().to_string()))?;
        let coldstart = take_table(&mut table, "coldstart")?;
        let paths = take_table(&mut table, "paths")?;

        if let Some(toml::Value::Array(stages)) = table.get("stages") {
            for (i, s) in stages.iter().enumerate() {
                let toml::Value::Table(s) = s else {
                    return Err(ConfigError::invalid(format!("stages[{i}]"), "expected a table"));
                };
                section::<crate::grpo::StageConfig>(s, &format!("stages[{i}]."))?;
            }
        }
        for sub in ["bc", "sc", "multiturn"] {
            if let Some(toml::Value::Table(t)) = coldstart.get(sub) {
                match sub {
                    "sc" => section::<crate::coldstart::ScConfig>(t, "coldstart.sc.").map(drop)?,
                    _ => section::<crate::coldstart::SftConfig>(t, &format!("coldstart.{sub}.")).map(drop)?,
                }
            }
        }
        let cfg = RunConfig {
            train: section(&table, "")?,
            coldstart: section(&coldstart, "coldstart.")?,
            paths: section(&paths, "paths.")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_toml_str(&text)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate()?;
        self.coldstart.validate()
    }

    /// Sets every seed the run uses.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.coldstart.init_seed = seed;
        self.coldstart.bc.seed = seed;
        self.coldstart.sc.seed = seed;
        self.coldstart.multiturn.seed = seed;
    }

    /// The resolved configuration as TOML; parses back to an equal value.
    pub fn to_toml(&self) -> String {
        let echo = Echo {
            train: &self.train,
            coldstart: &self.coldstart,
            paths: &self.paths,
        };
        toml::to_string(&echo).expect("config serializes")
    }

    /// Writes the config echo as `config.toml` in `dir`.
    pub fn write_echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grpo::StageStrategy;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train.lr = 3e-3;
        cfg.train.stages[0].max_steps = Some(5);
        cfg.coldstart.sc.strength = 0.5;
        cfg.paths.train_data = Some("t.jsonl".into());
        cfg.set_seed(9);
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn parses_the_documented_layout() {
        let text = r#"
            lr = 3e-3
            [[stages]]
            strategy = "shared"
            [[stages]]
            strategy = "full"
            eta = 0.1
            [coldstart]
            sc = { threshold = 0.05 }
            bc = { epochs = 10, lr = 1e-2 }
            [paths]
            train_data = "data/train.jsonl"
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.train.stages[1].strategy, StageStrategy::Full);
        assert_eq!(cfg.train.stages[1].eta, 0.1);
        assert_eq!(cfg.coldstart.bc.epochs, 10);
        assert_eq!(cfg.coldstart.sc.threshold, 0.05);
        assert_eq!(cfg.coldstart.multiturn, ColdstartConfig::default().multiturn);
    }

    #[test]
    fn errors_name_the_key() {
        let key = |t: &str| RunConfig::from_toml_str(t).unwrap_err().key;
        assert_eq!(key("lrr = 1.0"), "lrr");
        assert_eq!(key("lr = \"fast\""), "lr");
        assert_eq!(key("lr = -1.0"), "lr");
        assert_eq!(key("alpha = 0.9\nbeta = 0.5"), "beta");
        assert_eq!(key("[[stages]]\nstrategy = \"shared\"\n[[stages]]\netaa = 1.0"), "stages[1].etaa");
        assert_eq!(key("[[stages]]\neta = -1.0"), "stages[0].eta");
        assert_eq!(key("[coldstart]\nbc = { lr = 0.0 }"), "coldstart.bc.lr");
        assert_eq!(key("[coldstart]\nsc = { strenght = 1.0 }"), "coldstart.sc.strenght");
        assert_eq!(key("[paths]\nout = \"x\""), "paths.out");
        assert_eq!(key("coldstart = 3"), "coldstart");
    }
}
