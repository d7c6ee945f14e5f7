//! Paired-image reasoning: encode (sentence, image A) and (sentence,
//! image B) separately, concatenate the two [CLS] outputs, and classify
//! whether both images share their dominant class.
//!
//! ```bash
//! cargo run --release --example nlvr
//! ```

use oscar::harness::runconfig::{RunConfig, RunMode};
use oscar::harness::train::train_nlvr;

fn main() -> oscar::Result<()> {
    let cfg = RunConfig {
        mode: RunMode::FinetuneNlvr,
        seed: Some(4),
        steps: 800,
        eval_interval: 100,
        corpus_size: 512,
        eval_size: 64,
        ..RunConfig::default()
    };
    println!("statement: \"same main object in both\"; two encoder passes, 2H -> H -> 1 MLP");
    let (_, log) = train_nlvr(&cfg)?;
    for r in log.rows() {
        println!("step {:>5}  loss {:.4}  accuracy {:.3}", r.step, r.loss_c, r.metric_value);
    }
    Ok(())
}
