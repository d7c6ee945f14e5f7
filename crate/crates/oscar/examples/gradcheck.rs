//! Check every analytic gradient of the joint training loss against
//! central finite differences on a tiny model.
//!
//! ```bash
//! cargo run --release --example gradcheck
//! ```

use oscar::corpus::triple::Triple;
use oscar::corpus::vocab::{CLS, MASK, SEP};
use oscar::model::encoder::{bind, cls_binary, encode_triple};
use oscar::model::mask::{build_mask, MaskKind};
use oscar::model::{ModelConfig, ModelWeights};
use oscar::objectives::{contrastive_loss, mtl_loss, pretrain_loss, MaskedItem};
use oscar::tape::{finite_diff_grad, grad_rel_err, Tape};
use oscar::tensor::Tensor;
use oscar::{Rng, Result};

fn joint_loss(config: &ModelConfig, weights: &ModelWeights, item: &MaskedItem) -> Result<f64> {
    let mask = build_mask(MaskKind::Full, &item.triple.layout());
    let mut tape = Tape::new();
    let bound = bind(&mut tape, weights);
    let hidden = encode_triple(&mut tape, &bound, config, &item.triple, &mask)?;
    let mtl = mtl_loss(&mut tape, &bound, hidden, item, config.vocab)?.expect("masked positions");
    let logit = cls_binary(&mut tape, &bound, hidden)?;
    let con = contrastive_loss(&mut tape, logit, false)?;
    let total = pretrain_loss(&mut tape, mtl, con)?;
    Ok(tape.scalar_value(total))
}

fn main() -> Result<()> {
    let config = ModelConfig::tiny();
    let mut weights = ModelWeights::init(&config, 7)?;
    let mut rng = Rng::new(17);
    weights.mlm_w = Tensor::randn(vec![config.hidden, config.vocab], 0.3, &mut rng);
    weights.mlm_b = Tensor::randn(vec![config.vocab], 0.1, &mut rng);
    weights.cls_w = Tensor::randn(vec![config.hidden, 1], 0.3, &mut rng);
    weights.cls_b = Tensor::randn(vec![1], 0.1, &mut rng);

    let rin = config.region_input_dim();
    let item = MaskedItem {
        triple: Triple {
            word_ids: vec![CLS, 9, MASK, 11, SEP],
            tag_ids: vec![MASK, 8, SEP],
            region_vecs: (0..2)
                .map(|_| (0..rin).map(|_| rng.normal() as f32).collect())
                .collect(),
        },
        masked_positions: vec![2, 5],
        original_ids: vec![10, 7],
    };

    println!(
        "model: H={} L={} A={} V={}, {} parameters",
        config.hidden,
        config.num_layers,
        config.num_heads,
        config.vocab,
        weights.num_params()
    );

    // analytic pass
    let mask = build_mask(MaskKind::Full, &item.triple.layout());
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &weights);
    let hidden = encode_triple(&mut tape, &bound, &config, &item.triple, &mask)?;
    let mtl = mtl_loss(&mut tape, &bound, hidden, &item, config.vocab)?.unwrap();
    let logit = cls_binary(&mut tape, &bound, hidden)?;
    let con = contrastive_loss(&mut tape, logit, false)?;
    let total = pretrain_loss(&mut tape, mtl, con)?;
    println!("joint loss: {:.6}", tape.scalar_value(total));
    tape.backward(total)?;
    let analytic = bound.gradients(&tape);

    // numeric oracle
    let params: Vec<Tensor> = weights.tensors().iter().map(|t| (*t).clone()).collect();
    let cfg2 = config.clone();
    let item2 = item.clone();
    let numeric = finite_diff_grad(
        move |p: &[Tensor]| {
            let mut w = ModelWeights::init(&cfg2, 7)?;
            w.assign_all(p)?;
            joint_loss(&cfg2, &w, &item2)
        },
        &params,
        1e-5,
    )?;

    let names = weights.param_names();
    let mut worst = (0.0f64, String::new());
    for ((name, a), n) in names.iter().zip(&analytic).zip(&numeric) {
        let e = grad_rel_err(a, n);
        println!("  {name:<28} rel err {e:.3e}");
        if e > worst.0 {
            worst = (e, name.clone());
        }
    }
    println!("worst: {:.3e} at {}", worst.0, worst.1);
    Ok(())
}
