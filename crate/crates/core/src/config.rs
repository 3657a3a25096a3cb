//! Flat TOML configuration covering the encoder and the toy training loop.
//!
//! ```toml
//! alpha = 0.5
//! stem_channels = 16
//! stages = 3
//! combination_mode = "parallel_hl"
//! branches = [[7, 1], [5, 1], [3, 2], [3, 3]]
//! lr = 0.01
//! steps = 200
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::fde::{CombinationMode, EncoderConfig};
use crate::spectral::{FrequencyPolicy, Normalization};
use crate::training::TrainConfig;

pub const KEYS: [&str; 23] = [
    "alpha",
    "stage_alpha",
    "stem_channels",
    "stages",
    "group_count",
    "frequency_policy",
    "dct_normalization",
    "receptive_field",
    "branches",
    "combination_mode",
    "symmetric_css",
    "seed",
    "lr",
    "momentum",
    "weight_decay",
    "steps",
    "batch_size",
    "data_size",
    "data_count",
    "mask_ratio",
    "mask_patch",
    "lambda1",
    "lambda2",
];

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[derive(Default)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}


fn config_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.to_string(),
    }
}

fn typed<T: DeserializeOwned>(key: &str, value: &toml::Value) -> Result<T> {
    value.clone().try_into().map_err(|e: toml::de::Error| config_err(key, e.to_string().trim()))
}

fn check(key: &str, ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_err(key, msg))
    }
}

impl PipelineConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| config_err("<file>", format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text, Self::default())
    }

    /// Applies the keys in `text` on top of `base`.
    pub fn parse(text: &str, base: Self) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let key = e.message().split('`').nth(1).unwrap_or("<syntax>").to_string();
            config_err(&key, e.message().trim())
        })?;
        let mut cfg = base;
        for (key, value) in &table {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &toml::Value) -> Result<()> {
        let (e, t) = (&mut self.encoder, &mut self.train);
        match key {
            "alpha" => e.alpha = typed(key, value)?,
            "stage_alpha" => e.stage_alpha = typed(key, value)?,
            "stem_channels" => e.stem_channels = typed(key, value)?,
            "stages" => e.stages = typed(key, value)?,
            "group_count" => e.group_count = typed(key, value)?,
            "frequency_policy" => {
                e.frequency_policy = match value {
                    toml::Value::Array(_) => FrequencyPolicy::Custom(typed(key, value)?),
                    _ => typed(key, value)?,
                }
            }
            "dct_normalization" => e.dct_normalization = typed::<Normalization>(key, value)?,
            "receptive_field" => e.receptive_field = typed(key, value)?,
            "branches" => e.branches = typed(key, value)?,
            "combination_mode" => {
                let s: String = typed(key, value)?;
                e.combination_mode = s.parse::<CombinationMode>().map_err(|err| config_err(key, err))?;
            }
            "symmetric_css" => e.symmetric_css = typed(key, value)?,
            "seed" => {
                let seed: u64 = typed(key, value)?;
                e.seed = seed;
                t.seed = seed;
            }
            "lr" => t.optimizer.lr = typed(key, value)?,
            "momentum" => t.optimizer.momentum = typed(key, value)?,
            "weight_decay" => t.optimizer.weight_decay = typed(key, value)?,
            "steps" => t.steps = typed(key, value)?,
            "batch_size" => t.batch_size = typed(key, value)?,
            "data_size" => t.data.size = typed(key, value)?,
            "data_count" => t.data.count = typed(key, value)?,
            "mask_ratio" => t.mask_ratio = typed(key, value)?,
            "mask_patch" => t.mask_patch = typed(key, value)?,
            "lambda1" => t.loss_weights.lambda1 = typed(key, value)?,
            "lambda2" => t.loss_weights.lambda2 = typed(key, value)?,
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let (e, t) = (&self.encoder, &self.train);
        check("alpha", e.alpha > 0.0 && e.alpha < 1.0, "must lie in (0, 1)")?;
        check("stage_alpha", e.stage_alpha.iter().all(|a| *a > 0.0 && *a < 1.0), "entries must lie in (0, 1)")?;
        check(
            "stage_alpha",
            e.stage_alpha.is_empty() || e.stage_alpha.len() == e.stages,
            "needs one entry per stage",
        )?;
        check("stem_channels", e.stem_channels > 0, "must be positive")?;
        check("stages", e.stages > 0, "must be positive")?;
        check("group_count", e.group_count > 0, "must be positive")?;
        check("receptive_field", e.receptive_field % 2 == 1, "must be odd")?;
        check("branches", !e.branches.is_empty(), "needs at least one branch")?;
        check("lr", t.optimizer.lr > 0.0, "must be positive")?;
        check("momentum", (0.0..1.0).contains(&t.optimizer.momentum), "must lie in [0, 1)")?;
        check("weight_decay", t.optimizer.weight_decay >= 0.0, "must be non-negative")?;
        check("steps", t.steps >= 1, "must be at least 1")?;
        check("batch_size", t.batch_size >= 1, "must be at least 1")?;
        check("data_size", t.data.size > 0, "must be positive")?;
        check("data_count", t.data.count > 0, "must be positive")?;
        check("mask_ratio", t.mask_ratio > 0.0 && t.mask_ratio < 1.0, "must lie in (0, 1)")?;
        check("mask_patch", t.mask_patch > 0, "must be positive")?;
        check("lambda1", t.loss_weights.lambda1 >= 0.0, "must be non-negative")?;
        check("lambda2", t.loss_weights.lambda2 >= 0.0, "must be non-negative")?;
        t.loss_weights
            .validate()
            .map_err(|err| config_err("lambda1", err))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::parse("", PipelineConfig::default()).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn keys_are_applied() {
        let text = r#"
            alpha = 0.25
            stages = 2
            combination_mode = "serial_lh"
            branches = [[5, 1], [3, 2]]
            frequency_policy = [[0, 1], [1, 0]]
            seed = 9
            lr = 0.05
            data_size = 32
        "#;
        let c = PipelineConfig::parse(text, PipelineConfig::default()).unwrap();
        assert_eq!(c.encoder.alpha, 0.25);
        assert_eq!(c.encoder.stages, 2);
        assert_eq!(c.encoder.combination_mode, CombinationMode::SerialLh);
        assert_eq!(c.encoder.branches, vec![(5, 1), (3, 2)]);
        assert_eq!(c.encoder.frequency_policy, FrequencyPolicy::Custom(vec![(0, 1), (1, 0)]));
        assert_eq!((c.encoder.seed, c.train.seed), (9, 9));
        assert_eq!(c.train.optimizer.lr, 0.05);
        assert_eq!(c.train.data.size, 32);
    }

    fn key_of(text: &str) -> String {
        match PipelineConfig::parse(text, PipelineConfig::default()) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of("alhpa = 0.5"), "alhpa");
        assert_eq!(key_of("alpha = \"half\""), "alpha");
        assert_eq!(key_of("alpha = 1.5"), "alpha");
        assert_eq!(key_of("lr = 0.0"), "lr");
        assert_eq!(key_of("combination_mode = \"diagonal\""), "combination_mode");
        assert_eq!(key_of("branches = [[7]]"), "branches");
        assert_eq!(key_of("steps = -1"), "steps");
    }

    #[test]
    fn every_key_is_accepted() {
        let defaults = PipelineConfig::default();
        let probe = toml::Value::try_from(&defaults.encoder).unwrap();
        let mut cfg = PipelineConfig::default();
        for key in KEYS {
            let value = match probe.get(key) {
                Some(v) => v.clone(),
                None => match key {
                    "lr" | "momentum" | "weight_decay" | "mask_ratio" | "lambda1" | "lambda2" => toml::Value::Float(0.5),
                    _ => toml::Value::Integer(3),
                },
            };
            cfg.apply(key, &value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
