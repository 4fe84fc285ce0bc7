//! Training settings assembled from defaults, an optional `key=value` file,
//! the `MCSEG_SEED` environment variable and command-line flags.

use std::collections::BTreeMap;
use std::str::FromStr;

use mcseg_core::corpus::NormalizeMode;
use mcseg_core::model::Hyperparams;
use mcseg_core::trainer::TrainConfig;

pub const SEED_ENV: &str = "MCSEG_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub hyper: Hyperparams,
    pub train: TrainConfig,
    pub min_count: usize,
    pub placeholders: NormalizeMode,
}

impl Default for Settings {
    fn default() -> Self {
        let hyper = Hyperparams::default();
        Settings {
            hyper,
            train: TrainConfig {
                dropout: hyper.dropout,
                ..TrainConfig::default()
            },
            min_count: 1,
            placeholders: NormalizeMode::Split,
        }
    }
}

/// Parses a flat `key=value` file. Blank lines and lines starting with `#`
/// are ignored.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", i + 1))?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

impl Settings {
    /// Applies one setting by name. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "d_char" => self.hyper.d_char = parse(key, value)?,
            "d_bigram" => self.hyper.d_bigram = parse(key, value)?,
            "d_hidden" => self.hyper.d_hidden = parse(key, value)?,
            "dropout" => {
                self.hyper.dropout = parse(key, value)?;
                self.train.dropout = self.hyper.dropout;
            }
            "epochs" => self.train.epochs = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "clip_norm" => self.train.clip_norm = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "placeholders" => {
                self.placeholders = NormalizeMode::from_name(value)
                    .ok_or_else(|| format!("placeholders must be split or unified, got `{value}`"))?
            }
            _ => return Err(format!("unknown config key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.hyper.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.min_count == 0 {
            return Err("min_count must be at least 1".into());
        }
        Ok(())
    }
}
