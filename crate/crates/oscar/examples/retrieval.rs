//! Retrieval fine-tuning: binary alignment classification, then ranking
//! by the alignment probability and scoring R@K in both directions.
//!
//! ```bash
//! cargo run --release --example retrieval
//! ```

use oscar::finetune::retrieval::{recall_at_k, score_matrix};
use oscar::harness::runconfig::{RunConfig, RunMode};
use oscar::harness::train::{prepare, train_retrieval_with_init, train_text_mtl};
use oscar::harness::threads_from_env;

fn main() -> oscar::Result<()> {
    let cfg = RunConfig {
        mode: RunMode::FinetuneRetrieval,
        seed: Some(1),
        steps: 700,
        eval_interval: 100,
        neg_ratio: 3,
        corpus_size: 1024,
        eval_size: 20,
        ..RunConfig::default()
    };
    println!("text-only init (800 steps), then {} alignment steps", cfg.steps);
    let init = train_text_mtl(&cfg, 800, 1)?;
    let (weights, log) = train_retrieval_with_init(&cfg, None, Some(&init))?;
    for r in log.rows() {
        println!("step {:>5}  loss {:.4}  mean R@1 {:.3}", r.step, r.loss_c, r.metric_value);
    }

    let prep = prepare(&cfg)?;
    let scores = score_matrix(&weights, &prep.heldout, threads_from_env())?;
    let report = recall_at_k(&scores, &[1, 5, 10])?;
    println!("\n{:>14} {:>8} {:>8} {:>8}", "", "R@1", "R@5", "R@10");
    println!(
        "{:>14} {:>8.3} {:>8.3} {:>8.3}",
        "text", report.text_at(1), report.text_at(5), report.text_at(10)
    );
    println!(
        "{:>14} {:>8.3} {:>8.3} {:>8.3}",
        "image", report.image_at(1), report.image_at(5), report.image_at(10)
    );
    Ok(())
}
