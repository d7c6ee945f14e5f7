//! The tag-anchoring ablation at demo scale: identical retrieval
//! fine-tuning runs that differ only in tag supply (ground-truth detector
//! vs noisy detector vs none), scored by steps until mean R@1 reaches the
//! threshold. One seed here; the acceptance suite runs three.
//!
//! ```bash
//! cargo run --release --example ablation
//! ```

use oscar::corpus::TagMode;
use oscar::harness::run_ablation;
use oscar::harness::runconfig::{RunConfig, RunMode};

fn main() -> oscar::Result<()> {
    let base = RunConfig {
        mode: RunMode::FinetuneRetrieval,
        steps: 1000,
        eval_interval: 50,
        neg_ratio: 3,
        corpus_size: 1024,
        eval_size: 20,
        init_steps: 800,
        ..RunConfig::default()
    };
    let threshold = 0.8;
    println!(
        "three arms from a shared text-only init, threshold: mean R@1 >= {threshold}"
    );
    let report = run_ablation(
        &base,
        &[
            TagMode::Groundtruth,
            TagMode::Predicted { flip: 0.2, drop: 0.0 },
            TagMode::None,
        ],
        &[1],
        threshold,
    )?;
    print!("{}", report.to_csv());
    for arm in &report.arms {
        println!(
            "arm {:<12} median steps-to-threshold: {}",
            arm.tag_mode.name(),
            arm.median_steps()
                .map_or("never".to_string(), |s| s.to_string())
        );
    }
    Ok(())
}
