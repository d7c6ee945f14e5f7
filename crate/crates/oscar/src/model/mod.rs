//! The word-tag-region encoder: configuration, weights, attention masks,
//! forward passes, output heads, and checkpointing.

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod mask;
pub mod weights;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use encoder::{
    answer_logits, attention, bind, cls_binary, embed_triple, encode_triple, encoder_forward,
    hidden_states, mlm_logits, BoundLayer, BoundWeights,
};
pub use mask::{build_mask, AttentionMask, MaskKind, Segment};
pub use weights::{LayerWeights, ModelWeights};
