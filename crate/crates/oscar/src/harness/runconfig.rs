//! Run configuration: defaults, key=value config files, and CLI flag
//! overrides (flags are the file keys with a `--` prefix).

use std::path::PathBuf;

use crate::corpus::TagMode;
use crate::error::{Error, Result};
use crate::finetune::vqa::QaLossKind;
use crate::model::mask::MaskKind;
use crate::objectives::MaskScheme;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Pretrain,
    FinetuneRetrieval,
    FinetuneCaption,
    FinetuneVqa,
    FinetuneNlvr,
}

impl RunMode {
    pub fn name(&self) -> &'static str {
        match self {
            RunMode::Pretrain => "pretrain",
            RunMode::FinetuneRetrieval => "finetune-retrieval",
            RunMode::FinetuneCaption => "finetune-caption",
            RunMode::FinetuneVqa => "finetune-vqa",
            RunMode::FinetuneNlvr => "finetune-nlvr",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: RunMode,
    pub tag_mode: TagMode,
    pub mask_kind: MaskKind,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: Option<u64>,
    pub world_seed: u64,
    pub corpus_seed: u64,
    pub corpus_size: usize,
    pub eval_size: usize,
    pub eval_interval: usize,
    pub warmup: Option<usize>,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub mask_rate: f64,
    pub pollute_rate: f64,
    /// Region feature noise of the generated corpora.
    pub noise_std: f64,
    pub mask_scheme: MaskScheme,
    pub max_masked: Option<usize>,
    pub neg_ratio: usize,
    pub beam_size: usize,
    pub max_len: usize,
    pub qa_loss: QaLossKind,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub corpus_path: Option<PathBuf>,
    pub vocab_path: Option<PathBuf>,
    pub init_from: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub checkpoint_interval: usize,
    pub log_path: Option<PathBuf>,
    pub out_path: Option<PathBuf>,
    pub threshold: f64,
    pub tag_modes: Vec<TagMode>,
    pub seeds: Vec<u64>,
    /// Steps of shared text-only masked-token init before each ablation arm.
    pub init_steps: usize,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: RunMode::Pretrain,
            tag_mode: TagMode::Groundtruth,
            mask_kind: MaskKind::Full,
            steps: 2000,
            batch: 32,
            lr: 1.5e-2,
            seed: None,
            world_seed: 1,
            corpus_seed: 2,
            corpus_size: 256,
            eval_size: 20,
            eval_interval: 100,
            warmup: None,
            weight_decay: 0.01,
            clip_norm: 1.0,
            mask_rate: 0.15,
            pollute_rate: 0.5,
            noise_std: 1.0,
            mask_scheme: MaskScheme::Plain,
            max_masked: None,
            neg_ratio: 1,
            beam_size: 5,
            max_len: 12,
            qa_loss: QaLossKind::BinaryPerAnswer,
            hidden: 32,
            layers: 2,
            heads: 4,
            corpus_path: None,
            vocab_path: None,
            init_from: None,
            checkpoint_out: None,
            checkpoint_interval: 0,
            log_path: None,
            out_path: None,
            threshold: 0.8,
            tag_modes: vec![TagMode::None, TagMode::Groundtruth],
            seeds: vec![1, 2, 3],
            init_steps: 800,
            threads: threads_from_env(),
        }
    }
}

/// Worker cap from OSCAR_THREADS; default 1.
pub fn threads_from_env() -> usize {
    std::env::var("OSCAR_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

impl RunConfig {
    /// Warmup steps: explicit value, else 5% of total.
    pub fn warmup_steps(&self) -> usize {
        self.warmup.unwrap_or(self.steps / 20)
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("--seed is mandatory for training modes".into()))
    }

    /// Apply one key=value setting (config-file line or CLI flag).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
        }
        match key {
            "tag-mode" => {
                self.tag_mode = TagMode::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown tag mode {value:?}")))?
            }
            "mask" => {
                self.mask_kind = MaskKind::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown mask kind {value:?}")))?
            }
            "steps" => self.steps = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "seed" => self.seed = Some(parse(key, value)?),
            "world-seed" => self.world_seed = parse(key, value)?,
            "corpus-seed" => self.corpus_seed = parse(key, value)?,
            "corpus-size" => self.corpus_size = parse(key, value)?,
            "eval-size" => self.eval_size = parse(key, value)?,
            "eval-interval" => self.eval_interval = parse(key, value)?,
            "warmup" => self.warmup = Some(parse(key, value)?),
            "weight-decay" => self.weight_decay = parse(key, value)?,
            "clip-norm" => self.clip_norm = parse(key, value)?,
            "mask-rate" => self.mask_rate = parse(key, value)?,
            "pollute-rate" => self.pollute_rate = parse(key, value)?,
            "noise-std" => self.noise_std = parse(key, value)?,
            "mask-scheme" => {
                self.mask_scheme = MaskScheme::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown mask scheme {value:?}")))?
            }
            "max-masked" => self.max_masked = Some(parse(key, value)?),
            "neg-ratio" => self.neg_ratio = parse(key, value)?,
            "beam" => self.beam_size = parse(key, value)?,
            "max-len" => self.max_len = parse(key, value)?,
            "qa-loss" => {
                self.qa_loss = match value {
                    "binary" => QaLossKind::BinaryPerAnswer,
                    "softmax" => QaLossKind::SoftmaxCrossEntropy,
                    _ => return Err(Error::Config(format!("unknown qa loss {value:?}"))),
                }
            }
            "hidden" => self.hidden = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "corpus" => self.corpus_path = Some(PathBuf::from(value)),
            "vocab" => self.vocab_path = Some(PathBuf::from(value)),
            "init-from" => self.init_from = Some(PathBuf::from(value)),
            "checkpoint-out" => self.checkpoint_out = Some(PathBuf::from(value)),
            "checkpoint-interval" => self.checkpoint_interval = parse(key, value)?,
            "log" => self.log_path = Some(PathBuf::from(value)),
            "out" => self.out_path = Some(PathBuf::from(value)),
            "threshold" => self.threshold = parse(key, value)?,
            "tag-modes" => {
                self.tag_modes = value
                    .split(',')
                    .map(|m| {
                        TagMode::parse(m.trim())
                            .ok_or_else(|| Error::Config(format!("unknown tag mode {m:?}")))
                    })
                    .collect::<Result<_>>()?
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse("seeds", s.trim()))
                    .collect::<Result<_>>()?
            }
            "init-steps" => self.init_steps = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown option {other:?}"))),
        }
        Ok(())
    }

    /// Load key=value lines; '#' starts a comment.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Parse `--key value` pairs, with `--config <path>` loaded first so
    /// explicit flags override the file.
    pub fn from_flags(mode: RunMode, args: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig {
            mode,
            ..RunConfig::default()
        };
        // first pass: config file
        let mut i = 0;
        while i < args.len() {
            if args[i] == "--config" {
                let path = args
                    .get(i + 1)
                    .ok_or_else(|| Error::Config("--config needs a path".into()))?;
                cfg.apply_file(std::path::Path::new(path))?;
            }
            i += 1;
        }
        // second pass: flags override
        let mut i = 0;
        while i < args.len() {
            let flag = &args[i];
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected a --flag, got {flag:?}")))?;
            let value = args
                .get(i + 1)
                .ok_or_else(|| Error::Config(format!("flag {flag} needs a value")))?;
            if key != "config" {
                cfg.apply(key, value)?;
            }
            i += 2;
        }
        Ok(cfg)
    }
}
