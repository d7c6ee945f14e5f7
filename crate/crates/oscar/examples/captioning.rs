//! Caption fine-tuning under the seq2seq mask, then mask-append beam
//! search: feed [MASK], take the best token, append a new [MASK], stop at
//! [STOP]. Prints generated captions next to their references with BLEU-4.
//!
//! ```bash
//! cargo run --release --example captioning
//! ```

use oscar::finetune::generate_caption;
use oscar::harness::metrics::bleu4;
use oscar::harness::runconfig::{RunConfig, RunMode};
use oscar::harness::train::{prepare, train_caption};

fn main() -> oscar::Result<()> {
    let cfg = RunConfig {
        mode: RunMode::FinetuneCaption,
        seed: Some(2),
        steps: 1200,
        eval_interval: 400,
        corpus_size: 1024,
        eval_size: 8,
        beam_size: 5,
        max_len: 12,
        ..RunConfig::default()
    };
    println!("caption fine-tuning: {} steps, masking up to 3 caption tokens per sample", cfg.steps);
    let (weights, log) = train_caption(&cfg)?;
    for r in log.rows() {
        println!("step {:>5}  loss {:.4}  BLEU-4 {:.3}", r.step, r.loss_mtl, r.metric_value);
    }

    let prep = prepare(&cfg)?;
    println!("\nbeam size {}, max length {}:", cfg.beam_size, cfg.max_len);
    let mut total = 0.0;
    for item in &prep.heldout.items {
        let ids = generate_caption(
            &weights,
            &item.triple.tag_ids,
            &item.triple.region_vecs,
            cfg.beam_size,
            cfg.max_len,
        )?;
        let tokens = prep.vocab.decode(&ids)?;
        let score = if tokens.is_empty() {
            0.0
        } else {
            bleu4(&tokens, &[item.caption.clone()])
        };
        total += score;
        println!("  tags {:?}", item.tags);
        println!("    generated: {}", tokens.join(" "));
        println!("    reference: {}   (BLEU-4 {score:.3})", item.caption.join(" "));
    }
    println!("\nmean BLEU-4: {:.3}", total / prep.heldout.len() as f64);
    Ok(())
}
