//! Encoder hyperparameters.

use crate::error::{Error, Result};

/// Number of token types: word, tag, region.
pub const TYPE_VOCAB: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub vocab: usize,
    /// Region feature dimension P.
    pub region_dim: usize,
    /// Box geometry dimension R.
    pub box_dim: usize,
    /// Budget for discrete tokens (words + tags).
    pub max_tokens: usize,
    pub max_regions: usize,
    pub ffn_mult: usize,
    /// Width of the answer-classification head.
    pub num_answers: usize,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Desk-scale defaults around a given vocabulary size.
    pub fn desk(vocab: usize) -> Self {
        ModelConfig {
            hidden: 32,
            num_layers: 2,
            num_heads: 4,
            vocab,
            region_dim: 16,
            box_dim: 6,
            max_tokens: 35,
            max_regions: 50,
            ffn_mult: 4,
            num_answers: 8,
            layer_norm_eps: 1e-9,
        }
    }

    /// Smallest config that still exercises every code path; used by the
    /// gradient-check suites.
    pub fn tiny() -> Self {
        ModelConfig {
            hidden: 16,
            num_layers: 2,
            num_heads: 2,
            vocab: 32,
            region_dim: 4,
            box_dim: 6,
            max_tokens: 16,
            max_regions: 4,
            ffn_mult: 2,
            num_answers: 4,
            layer_norm_eps: 1e-9,
        }
    }

    pub fn ffn_dim(&self) -> usize {
        self.hidden * self.ffn_mult
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.num_heads
    }

    pub fn region_input_dim(&self) -> usize {
        self.region_dim + self.box_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.hidden,
            self.num_layers.max(1), // L = 0 is legal (identity encoder)
            self.num_heads,
            self.vocab,
            self.region_dim,
            self.box_dim,
            self.max_tokens,
            self.max_regions,
            self.ffn_mult,
            self.num_answers,
        ];
        if positive.iter().any(|&d| d == 0) {
            return Err(Error::Config("all dimensions must be positive".into()));
        }
        if self.hidden % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.num_heads
            )));
        }
        if self.box_dim != 4 && self.box_dim != 6 {
            return Err(Error::Config(format!("box_dim must be 4 or 6, got {}", self.box_dim)));
        }
        Ok(())
    }

    /// key=value lines, the checkpoint config record.
    pub fn to_record(&self) -> String {
        format!(
            "hidden={}\nnum_layers={}\nnum_heads={}\nvocab={}\nregion_dim={}\nbox_dim={}\nmax_tokens={}\nmax_regions={}\nffn_mult={}\nnum_answers={}\nlayer_norm_eps={}\n",
            self.hidden,
            self.num_layers,
            self.num_heads,
            self.vocab,
            self.region_dim,
            self.box_dim,
            self.max_tokens,
            self.max_regions,
            self.ffn_mult,
            self.num_answers,
            self.layer_norm_eps
        )
    }

    pub fn from_record(record: &str) -> Result<Self> {
        let mut cfg = ModelConfig::desk(1);
        let mut seen = std::collections::BTreeSet::new();
        for line in record.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad config line {line:?}")))?;
            let parse_usize = || -> Result<usize> {
                value
                    .parse()
                    .map_err(|_| Error::Format(format!("bad value for {key}: {value:?}")))
            };
            match key {
                "hidden" => cfg.hidden = parse_usize()?,
                "num_layers" => cfg.num_layers = parse_usize()?,
                "num_heads" => cfg.num_heads = parse_usize()?,
                "vocab" => cfg.vocab = parse_usize()?,
                "region_dim" => cfg.region_dim = parse_usize()?,
                "box_dim" => cfg.box_dim = parse_usize()?,
                "max_tokens" => cfg.max_tokens = parse_usize()?,
                "max_regions" => cfg.max_regions = parse_usize()?,
                "ffn_mult" => cfg.ffn_mult = parse_usize()?,
                "num_answers" => cfg.num_answers = parse_usize()?,
                "layer_norm_eps" => {
                    cfg.layer_norm_eps = value
                        .parse()
                        .map_err(|_| Error::Format(format!("bad value for {key}: {value:?}")))?
                }
                other => return Err(Error::Format(format!("unknown config key {other:?}"))),
            }
            seen.insert(key.to_string());
        }
        for required in [
            "hidden",
            "num_layers",
            "num_heads",
            "vocab",
            "region_dim",
            "box_dim",
        ] {
            if !seen.contains(required) {
                return Err(Error::Format(format!("config record missing {required}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_head_divisibility() {
        let mut c = ModelConfig::desk(64);
        assert!(c.validate().is_ok());
        c.num_heads = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn record_round_trip() {
        let c = ModelConfig::tiny();
        let r = c.to_record();
        let back = ModelConfig::from_record(&r).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn record_rejects_junk() {
        assert!(ModelConfig::from_record("hidden=16\nwat").is_err());
        assert!(ModelConfig::from_record("hidden=16").is_err()); // missing keys
    }
}
