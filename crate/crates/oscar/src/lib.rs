//! Desk-scale lab for word-tag-region transformer pre-training.
//!
//! An image-text pair is represented as a triple: caption word tokens,
//! object-tag tokens detected from the image, and projected region feature
//! vectors. A single transformer encoder consumes the flattened triple
//! under configurable attention masks and is trained with two losses:
//! a masked token loss over the discrete tokens, and a contrastive loss
//! that detects when the tag sequence has been swapped for a random
//! donor's. Fine-tuning heads cover retrieval ranking, seq2seq caption
//! generation with beam search, multi-label answer classification, and
//! paired-image reasoning.
//!
//! Everything runs on a small, from-scratch f64 tensor/tape stack so whole
//! training runs are deterministic functions of their seeds and every
//! gradient can be checked against central finite differences.
//!
//! The `examples/` directory is the front door: one runnable example per
//! capability (`gradcheck`, `pretrain`, `retrieval`, `captioning`, `vqa`,
//! `nlvr`, `ablation`, `mask_patterns`, `export_features`). The `oscar`
//! binary exposes the same flows as subcommands for scripted runs.

pub mod corpus;
pub mod error;
pub mod finetune;
pub mod harness;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tape::{finite_diff_grad, grad_rel_err, NodeId, Tape};
pub use tensor::Tensor;
