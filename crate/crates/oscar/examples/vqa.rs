//! Answer classification: "what is the main object" against the class
//! answer set, trained with per-answer binary cross-entropy on soft
//! targets and predicted by softmax-argmax.
//!
//! ```bash
//! cargo run --release --example vqa
//! ```

use oscar::harness::runconfig::{RunConfig, RunMode};
use oscar::harness::train::train_vqa;

fn main() -> oscar::Result<()> {
    let cfg = RunConfig {
        mode: RunMode::FinetuneVqa,
        seed: Some(3),
        steps: 800,
        eval_interval: 100,
        corpus_size: 512,
        eval_size: 64,
        ..RunConfig::default()
    };
    println!(
        "question: \"what is the main object\"; answers: the {} world classes; dominant class wins",
        8
    );
    let (_, log) = train_vqa(&cfg)?;
    for r in log.rows() {
        println!("step {:>5}  loss {:.4}  accuracy {:.3}", r.step, r.loss_c, r.metric_value);
    }
    Ok(())
}
