use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Which condition rows a noisy block cross-attends to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConditionVariant {
    /// `[C_global, C_part_i]`.
    #[default]
    Full,
    GlobalOnly,
    PartsOnly,
}

/// Which condition rows a clean (context) block cross-attends to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CleanCondition {
    /// Only `C_global`. Keeps every noisy block independent of the part
    /// features of other parts.
    #[default]
    Global,
    /// Same rows as a noisy block of that part.
    Part,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `hidden`.
    pub ff_mult: usize,
    pub block_len: usize,
    pub max_blocks: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
    pub encoder_hidden: usize,
    pub variant: ConditionVariant,
    pub clean_condition: CleanCondition,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 9218,
            hidden: 128,
            layers: 4,
            heads: 4,
            ff_mult: 4,
            block_len: 256,
            max_blocks: 16,
            cond_dim: 128,
            time_dim: 64,
            encoder_hidden: 128,
            variant: ConditionVariant::Full,
            clean_condition: CleanCondition::Global,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ff_mult", self.ff_mult),
            ("block_len", self.block_len),
            ("max_blocks", self.max_blocks),
            ("cond_dim", self.cond_dim),
            ("time_dim", self.time_dim),
            ("encoder_hidden", self.encoder_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model.{name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::invalid("time_dim must be even"));
        }
        Ok(())
    }

    /// Positional table rows; clean and noisy copies of a block share them.
    pub fn positions(&self) -> usize {
        self.block_len * self.max_blocks
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("vocab_size", self.vocab_size.to_string()),
            ("hidden", self.hidden.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("ff_mult", self.ff_mult.to_string()),
            ("block_len", self.block_len.to_string()),
            ("max_blocks", self.max_blocks.to_string()),
            ("cond_dim", self.cond_dim.to_string()),
            ("time_dim", self.time_dim.to_string()),
            ("encoder_hidden", self.encoder_hidden.to_string()),
            (
                "variant",
                match self.variant {
                    ConditionVariant::Full => "full",
                    ConditionVariant::GlobalOnly => "global",
                    ConditionVariant::PartsOnly => "parts",
                }
                .into(),
            ),
            (
                "clean_condition",
                match self.clean_condition {
                    CleanCondition::Global => "global",
                    CleanCondition::Part => "part",
                }
                .into(),
            ),
        ]
    }

    /// Applies one `key=value` setting; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::invalid(format!("model.{key}: expected an integer, got {v:?}")))
        };
        match key {
            "vocab_size" => self.vocab_size = num(value)?,
            "hidden" => self.hidden = num(value)?,
            "layers" => self.layers = num(value)?,
            "heads" => self.heads = num(value)?,
            "ff_mult" => self.ff_mult = num(value)?,
            "block_len" => self.block_len = num(value)?,
            "max_blocks" => self.max_blocks = num(value)?,
            "cond_dim" => self.cond_dim = num(value)?,
            "time_dim" => self.time_dim = num(value)?,
            "encoder_hidden" => self.encoder_hidden = num(value)?,
            "variant" => {
                self.variant = match value {
                    "full" => ConditionVariant::Full,
                    "global" => ConditionVariant::GlobalOnly,
                    "parts" => ConditionVariant::PartsOnly,
                    _ => return Err(Error::invalid(format!("unknown variant {value:?}"))),
                }
            }
            "clean_condition" => {
                self.clean_condition = match value {
                    "global" => CleanCondition::Global,
                    "part" => CleanCondition::Part,
                    _ => return Err(Error::invalid(format!("unknown clean_condition {value:?}"))),
                }
            }
            _ => return Err(Error::invalid(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key=value, got {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = Self::default();
        for (k, v) in &map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let cfg = ModelConfig {
            hidden: 32,
            heads: 2,
            variant: ConditionVariant::PartsOnly,
            clean_condition: CleanCondition::Part,
            ..Default::default()
        };
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_heads() {
        let cfg = ModelConfig {
            hidden: 30,
            heads: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().set("nope", "1").is_err());
    }
}
