//! Operational shell: optimizer, schedules, training loops, metrics,
//! the tag ablation protocol, feature export, and the CLI.

pub mod ablation;
pub mod cli;
pub mod export;
pub mod metrics;
pub mod optim;
pub mod runconfig;
pub mod train;

pub use ablation::{run_ablation, AblationReport, ArmResult};
pub use export::{export_features, features_to_csv, region_tag_alignment, save_features, FeatureRow};
pub use metrics::{bleu4, bleu_n, MetricLog, MetricRow};
pub use optim::{clip_global_norm, lr_schedule, AdamW};
pub use runconfig::{threads_from_env, RunConfig, RunMode};
pub use train::{
    train_retrieval_with_init, train_text_mtl,
    eval_caption, eval_nlvr, eval_pretrain, eval_retrieval, eval_vqa, prepare, train_caption,
    train_nlvr, train_pretrain, train_retrieval, train_vqa, Prepared,
};
