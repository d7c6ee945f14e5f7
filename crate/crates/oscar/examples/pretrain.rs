//! Short joint pre-training run: watch the masked-token loss fall from
//! its ln V chance floor and the contrastive loss from ln 2 while
//! held-out pollution detection climbs.
//!
//! ```bash
//! cargo run --release --example pretrain
//! ```

use oscar::harness::runconfig::{RunConfig, RunMode};
use oscar::harness::train::train_pretrain;

fn main() -> oscar::Result<()> {
    let cfg = RunConfig {
        mode: RunMode::Pretrain,
        seed: Some(11),
        steps: 600,
        eval_interval: 100,
        corpus_size: 256,
        eval_size: 32,
        ..RunConfig::default()
    };
    println!(
        "pre-training {} steps, batch {}, lr {}, V = 64: chance floors ln V = {:.3}, ln 2 = {:.3}",
        cfg.steps,
        cfg.batch,
        cfg.lr,
        64f64.ln(),
        2f64.ln()
    );
    let (_, log) = train_pretrain(&cfg)?;
    println!("{:>6} {:>10} {:>10} {:>14}", "step", "loss_mtl", "loss_c", "pollution_acc");
    for r in log.rows() {
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>14.3}",
            r.step, r.loss_mtl, r.loss_c, r.metric_value
        );
    }
    println!("(2000 steps reach > 0.95 pollution accuracy; see the acceptance suite)");
    Ok(())
}
