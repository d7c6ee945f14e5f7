//! Triple embedding, multi-head attention, the pre-norm encoder stack,
//! and the output heads.
//!
//! Discrete tokens get word + learned absolute position + type embeddings
//! under a position counter shared by words and tags. Regions carry no
//! sequence position: their geometry enters only through the projected
//! box coordinates, which is what makes region order an exchangeable
//! dimension under the full mask.

use crate::corpus::triple::Triple;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::mask::AttentionMask;
use crate::model::weights::ModelWeights;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Type-embedding rows.
const TYPE_WORD: usize = 0;
const TYPE_TAG: usize = 1;
const TYPE_REGION: usize = 2;

pub struct BoundLayer {
    pub ln1_gamma: NodeId,
    pub ln1_beta: NodeId,
    pub q_w: NodeId,
    pub q_b: NodeId,
    pub k_w: NodeId,
    pub k_b: NodeId,
    pub v_w: NodeId,
    pub v_b: NodeId,
    pub o_w: NodeId,
    pub o_b: NodeId,
    pub ln2_gamma: NodeId,
    pub ln2_beta: NodeId,
    pub ffn_in_w: NodeId,
    pub ffn_in_b: NodeId,
    pub ffn_out_w: NodeId,
    pub ffn_out_b: NodeId,
}

/// Every parameter registered as a tape leaf, in the same canonical order
/// as [`ModelWeights::for_each`]; `all` drives gradient extraction.
pub struct BoundWeights {
    pub word_embedding: NodeId,
    pub position_embedding: NodeId,
    pub type_embedding: NodeId,
    pub region_proj_w: NodeId,
    pub region_proj_b: NodeId,
    pub layers: Vec<BoundLayer>,
    pub mlm_w: NodeId,
    pub mlm_b: NodeId,
    pub cls_w: NodeId,
    pub cls_b: NodeId,
    pub answer_w: NodeId,
    pub answer_b: NodeId,
    pub nlvr_w1: NodeId,
    pub nlvr_b1: NodeId,
    pub nlvr_w2: NodeId,
    pub nlvr_b2: NodeId,
    pub all: Vec<NodeId>,
}

/// Insert every parameter as a leaf on the tape.
pub fn bind(tape: &mut Tape, weights: &ModelWeights) -> BoundWeights {
    let mut all = Vec::new();
    let mut leaf = |t: &Tensor| {
        let id = tape.leaf(t.clone());
        all.push(id);
        id
    };
    let word_embedding = leaf(&weights.word_embedding);
    let position_embedding = leaf(&weights.position_embedding);
    let type_embedding = leaf(&weights.type_embedding);
    let region_proj_w = leaf(&weights.region_proj_w);
    let region_proj_b = leaf(&weights.region_proj_b);
    let layers = weights
        .layers
        .iter()
        .map(|l| BoundLayer {
            ln1_gamma: leaf(&l.ln1_gamma),
            ln1_beta: leaf(&l.ln1_beta),
            q_w: leaf(&l.q_w),
            q_b: leaf(&l.q_b),
            k_w: leaf(&l.k_w),
            k_b: leaf(&l.k_b),
            v_w: leaf(&l.v_w),
            v_b: leaf(&l.v_b),
            o_w: leaf(&l.o_w),
            o_b: leaf(&l.o_b),
            ln2_gamma: leaf(&l.ln2_gamma),
            ln2_beta: leaf(&l.ln2_beta),
            ffn_in_w: leaf(&l.ffn_in_w),
            ffn_in_b: leaf(&l.ffn_in_b),
            ffn_out_w: leaf(&l.ffn_out_w),
            ffn_out_b: leaf(&l.ffn_out_b),
        })
        .collect();
    BoundWeights {
        word_embedding,
        position_embedding,
        type_embedding,
        region_proj_w,
        region_proj_b,
        layers,
        mlm_w: leaf(&weights.mlm_w),
        mlm_b: leaf(&weights.mlm_b),
        cls_w: leaf(&weights.cls_w),
        cls_b: leaf(&weights.cls_b),
        answer_w: leaf(&weights.answer_w),
        answer_b: leaf(&weights.answer_b),
        nlvr_w1: leaf(&weights.nlvr_w1),
        nlvr_b1: leaf(&weights.nlvr_b1),
        nlvr_w2: leaf(&weights.nlvr_w2),
        nlvr_b2: leaf(&weights.nlvr_b2),
        all,
    }
}

impl BoundWeights {
    /// Gradients for every parameter in canonical order. Call after
    /// `tape.backward`; parameters untouched by the loss yield zeros.
    pub fn gradients(&self, tape: &Tape) -> Vec<Tensor> {
        self.all
            .iter()
            .map(|&id| tape.grad(id).expect("backward has run").clone())
            .collect()
    }
}

/// Embed a triple into the S x H input matrix: discrete positions get
/// word + position + type embeddings, regions get the projected
/// position-sensitive feature vector plus the region type embedding.
pub fn embed_triple(
    tape: &mut Tape,
    bound: &BoundWeights,
    config: &ModelConfig,
    triple: &Triple,
) -> Result<NodeId> {
    let layout = triple.layout();
    let discrete_len = layout.discrete_len();
    if discrete_len > config.max_tokens {
        return Err(Error::Limit(format!(
            "{discrete_len} discrete tokens exceed max_tokens {}",
            config.max_tokens
        )));
    }
    if triple.region_vecs.len() > config.max_regions {
        return Err(Error::Limit(format!(
            "{} regions exceed max_regions {}",
            triple.region_vecs.len(),
            config.max_regions
        )));
    }

    let ids = triple.discrete_ids();
    let tok = tape.gather_rows(bound.word_embedding, &ids)?;
    let positions: Vec<usize> = (0..discrete_len).collect();
    let pos = tape.gather_rows(bound.position_embedding, &positions)?;
    let types: Vec<usize> = (0..discrete_len)
        .map(|p| if layout.words.contains(&p) { TYPE_WORD } else { TYPE_TAG })
        .collect();
    let typ = tape.gather_rows(bound.type_embedding, &types)?;
    let tp = tape.add(tok, pos)?;
    let discrete = tape.add(tp, typ)?;

    if triple.region_vecs.is_empty() {
        return Ok(discrete);
    }

    let rin = config.region_input_dim();
    let mut data = Vec::with_capacity(triple.region_vecs.len() * rin);
    for v in &triple.region_vecs {
        if v.len() != rin {
            return Err(Error::Shape(format!(
                "region vector has dim {}, expected {rin}",
                v.len()
            )));
        }
        data.extend(v.iter().map(|&x| x as f64));
    }
    let region_in = tape.leaf(Tensor::new(vec![triple.region_vecs.len(), rin], data)?);
    let proj = tape.matmul(region_in, bound.region_proj_w)?;
    let proj = tape.add_row(proj, bound.region_proj_b)?;
    let region_type = tape.gather_rows(bound.type_embedding, &[TYPE_REGION])?;
    let regions = tape.add_row(proj, region_type)?;

    tape.concat_rows(&[discrete, regions])
}

/// Scaled dot-product multi-head attention under a mask. Pure attention:
/// residuals and normalization belong to the caller.
pub fn attention(
    tape: &mut Tape,
    x: NodeId,
    mask: &AttentionMask,
    layer: &BoundLayer,
    num_heads: usize,
) -> Result<NodeId> {
    let s = tape.value(x).rows();
    let h = tape.value(x).cols();
    if mask.size() != s {
        return Err(Error::Shape(format!(
            "mask size {} vs sequence {s}",
            mask.size()
        )));
    }
    let d = h / num_heads;
    let scale = 1.0 / (d as f64).sqrt();

    let q = tape.matmul(x, layer.q_w)?;
    let q = tape.add_row(q, layer.q_b)?;
    let k = tape.matmul(x, layer.k_w)?;
    let k = tape.add_row(k, layer.k_b)?;
    let v = tape.matmul(x, layer.v_w)?;
    let v = tape.add_row(v, layer.v_b)?;

    let allow = mask.allow_matrix();
    let mut heads = Vec::with_capacity(num_heads);
    for a in 0..num_heads {
        let qa = tape.slice_cols(q, a * d, d)?;
        let ka = tape.slice_cols(k, a * d, d)?;
        let va = tape.slice_cols(v, a * d, d)?;
        let kat = tape.transpose(ka)?;
        let scores = tape.matmul(qa, kat)?;
        let scores = tape.scale(scores, scale);
        let probs = tape.masked_softmax_rows(scores, allow.clone())?;
        heads.push(tape.matmul(probs, va)?);
    }
    let cat = tape.concat_cols(&heads)?;
    let out = tape.matmul(cat, layer.o_w)?;
    tape.add_row(out, layer.o_b)
}

/// L pre-norm transformer blocks: x += attn(ln1(x)); x += ffn(ln2(x)).
/// With zero layers the input passes through untouched.
pub fn encoder_forward(
    tape: &mut Tape,
    bound: &BoundWeights,
    config: &ModelConfig,
    input: NodeId,
    mask: &AttentionMask,
) -> Result<NodeId> {
    let mut x = input;
    for layer in &bound.layers {
        let normed = tape.layer_norm(x, layer.ln1_gamma, layer.ln1_beta, config.layer_norm_eps)?;
        let att = attention(tape, normed, mask, layer, config.num_heads)?;
        x = tape.add(x, att)?;
        let normed2 = tape.layer_norm(x, layer.ln2_gamma, layer.ln2_beta, config.layer_norm_eps)?;
        let mid = tape.matmul(normed2, layer.ffn_in_w)?;
        let mid = tape.add_row(mid, layer.ffn_in_b)?;
        let act = tape.gelu(mid);
        let out = tape.matmul(act, layer.ffn_out_w)?;
        let out = tape.add_row(out, layer.ffn_out_b)?;
        x = tape.add(x, out)?;
    }
    Ok(x)
}

/// Embed and encode in one call.
pub fn encode_triple(
    tape: &mut Tape,
    bound: &BoundWeights,
    config: &ModelConfig,
    triple: &Triple,
    mask: &AttentionMask,
) -> Result<NodeId> {
    let x = embed_triple(tape, bound, config, triple)?;
    encoder_forward(tape, bound, config, x, mask)
}

/// Vocabulary logits at the given discrete positions.
pub fn mlm_logits(
    tape: &mut Tape,
    bound: &BoundWeights,
    hidden: NodeId,
    positions: &[usize],
    discrete_len: usize,
) -> Result<NodeId> {
    for &p in positions {
        if p >= discrete_len {
            return Err(Error::Limit(format!(
                "mlm position {p} points past the discrete range {discrete_len}"
            )));
        }
    }
    let rows = tape.gather_rows(hidden, positions)?;
    let logits = tape.matmul(rows, bound.mlm_w)?;
    tape.add_row(logits, bound.mlm_b)
}

/// Binary pair logit from the [CLS] position (position 0 by layout).
pub fn cls_binary(tape: &mut Tape, bound: &BoundWeights, hidden: NodeId) -> Result<NodeId> {
    let cls = tape.gather_rows(hidden, &[0])?;
    let logit = tape.matmul(cls, bound.cls_w)?;
    tape.add_row(logit, bound.cls_b)
}

/// Answer-set logits from the [CLS] position.
pub fn answer_logits(tape: &mut Tape, bound: &BoundWeights, hidden: NodeId) -> Result<NodeId> {
    let cls = tape.gather_rows(hidden, &[0])?;
    let logits = tape.matmul(cls, bound.answer_w)?;
    tape.add_row(logits, bound.answer_b)
}

/// Run the encoder without keeping the tape, returning the final hidden
/// states as a plain tensor. Convenience for evaluation paths.
pub fn hidden_states(
    weights: &ModelWeights,
    triple: &Triple,
    mask: &AttentionMask,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, weights);
    let h = encode_triple(&mut tape, &bound, &weights.config, triple, mask)?;
    Ok(tape.value(h).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::triple::TripleLayout;
    use crate::model::mask::{build_mask, MaskKind};
    use crate::rng::Rng;
    use crate::tape::{finite_diff_grad, grad_rel_err};

    fn tiny_triple(rng: &mut Rng, cfg: &ModelConfig) -> Triple {
        let rin = cfg.region_input_dim();
        Triple {
            word_ids: vec![1, 9, 12, 9, 2],
            tag_ids: vec![7, 2],
            region_vecs: (0..2)
                .map(|_| (0..rin).map(|_| rng.normal() as f32).collect())
                .collect(),
        }
    }

    #[test]
    fn zero_region_vector_lands_on_type_embedding() {
        let cfg = ModelConfig::tiny();
        let mut w = ModelWeights::init(&cfg, 1).unwrap();
        w.region_proj_b = Tensor::zeros(vec![cfg.hidden]);
        let triple = Triple {
            word_ids: vec![1, 2],
            tag_ids: vec![2],
            region_vecs: vec![vec![0.0; cfg.region_input_dim()]],
        };
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &w);
        let x = embed_triple(&mut tape, &bound, &cfg, &triple).unwrap();
        let region_row = tape.value(x).row(3).to_vec();
        assert_eq!(region_row.as_slice(), w.type_embedding.row(TYPE_REGION));
    }

    #[test]
    fn region_order_permutes_region_rows_only() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 2).unwrap();
        let mut rng = Rng::new(4);
        let t1 = tiny_triple(&mut rng, &cfg);
        let mut t2 = t1.clone();
        t2.region_vecs.swap(0, 1);

        let mut tape = Tape::new();
        let bound = bind(&mut tape, &w);
        let x1 = embed_triple(&mut tape, &bound, &cfg, &t1).unwrap();
        let x2 = embed_triple(&mut tape, &bound, &cfg, &t2).unwrap();
        let d = t1.layout().discrete_len();
        for p in 0..d {
            assert_eq!(tape.value(x1).row(p), tape.value(x2).row(p));
        }
        assert_eq!(tape.value(x1).row(d), tape.value(x2).row(d + 1));
        assert_eq!(tape.value(x1).row(d + 1), tape.value(x2).row(d));
    }

    #[test]
    fn zero_layers_is_identity() {
        let mut cfg = ModelConfig::tiny();
        cfg.num_layers = 0;
        let w = ModelWeights::init(&cfg, 1).unwrap();
        let mut rng = Rng::new(4);
        let t = tiny_triple(&mut rng, &cfg);
        let mask = build_mask(MaskKind::Full, &t.layout());
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &w);
        let x = embed_triple(&mut tape, &bound, &cfg, &t).unwrap();
        let h = encoder_forward(&mut tape, &bound, &cfg, x, &mask).unwrap();
        assert_eq!(tape.value(h).data(), tape.value(x).data());
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 5).unwrap();
        let mut rng = Rng::new(6);
        let t = tiny_triple(&mut rng, &cfg);
        let mask = build_mask(MaskKind::Full, &t.layout());
        let a = hidden_states(&w, &t, &mask).unwrap();
        let b = hidden_states(&w, &t, &mask).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn single_position_attention_is_own_value_projection() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 3).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &w);
        let mut rng = Rng::new(9);
        let x = tape.leaf(Tensor::randn(vec![1, cfg.hidden], 1.0, &mut rng));
        let layout = TripleLayout {
            words: 0..1,
            tags: 1..1,
            regions: 1..1,
        };
        let mask = build_mask(MaskKind::Full, &layout);
        let out = attention(&mut tape, x, &mask, &bound.layers[0], cfg.num_heads).unwrap();

        // expected: (x V + b_v) O + b_o, softmax over one position is 1
        let v = tape.matmul(x, bound.layers[0].v_w).unwrap();
        let v = tape.add_row(v, bound.layers[0].v_b).unwrap();
        let e = tape.matmul(v, bound.layers[0].o_w).unwrap();
        let e = tape.add_row(e, bound.layers[0].o_b).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(e).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rows_attend_identically() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 3).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &w);
        let mut rng = Rng::new(10);
        let row: Vec<f64> = (0..cfg.hidden).map(|_| rng.normal()).collect();
        let mut data = row.clone();
        data.extend_from_slice(&row);
        let x = tape.leaf(Tensor::new(vec![2, cfg.hidden], data).unwrap());
        let layout = TripleLayout {
            words: 0..2,
            tags: 2..2,
            regions: 2..2,
        };
        let mask = build_mask(MaskKind::Full, &layout);
        let out = attention(&mut tape, x, &mask, &bound.layers[0], cfg.num_heads).unwrap();
        assert_eq!(tape.value(out).row(0), tape.value(out).row(1));
    }

    #[test]
    fn region_projection_gradient_matches_finite_differences() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 11).unwrap();
        let mut rng = Rng::new(12);
        let triple = tiny_triple(&mut rng, &cfg);
        let mask = build_mask(MaskKind::Full, &triple.layout());

        let loss_of = |proj: &Tensor| -> crate::error::Result<f64> {
            let mut weights = w.clone();
            weights.region_proj_w = proj.clone();
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &weights);
            let h = encode_triple(&mut tape, &bound, &cfg, &triple, &mask)?;
            let sq = tape.mul(h, h)?;
            let s = tape.sum_all(sq);
            Ok(tape.scalar_value(s))
        };
        let numeric = finite_diff_grad(
            |p| loss_of(&p[0]),
            &[w.region_proj_w.clone()],
            1e-5,
        )
        .unwrap();

        let mut tape = Tape::new();
        let bound = bind(&mut tape, &w);
        let h = encode_triple(&mut tape, &bound, &cfg, &triple, &mask).unwrap();
        let sq = tape.mul(h, h).unwrap();
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        let analytic = tape.grad(bound.region_proj_w).unwrap();
        assert!(grad_rel_err(analytic, &numeric[0]) < 1e-4);
    }

    #[test]
    fn mlm_positions_must_be_discrete() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 1).unwrap();
        let mut rng = Rng::new(2);
        let t = tiny_triple(&mut rng, &cfg);
        let mask = build_mask(MaskKind::Full, &t.layout());
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &w);
        let h = encode_triple(&mut tape, &bound, &cfg, &t, &mask).unwrap();
        let d = t.layout().discrete_len();
        assert!(mlm_logits(&mut tape, &bound, h, &[d], d).is_err());
        assert!(mlm_logits(&mut tape, &bound, h, &[0, d - 1], d).is_ok());
    }

    #[test]
    fn zero_heads_give_uniform_and_zero_outputs() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 1).unwrap();
        let mut rng = Rng::new(2);
        let t = tiny_triple(&mut rng, &cfg);
        let mask = build_mask(MaskKind::Full, &t.layout());
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &w);
        let h = encode_triple(&mut tape, &bound, &cfg, &t, &mask).unwrap();
        let lg = mlm_logits(&mut tape, &bound, h, &[1, 2], t.layout().discrete_len()).unwrap();
        assert!(tape.value(lg).data().iter().all(|&v| v == 0.0));
        let c = cls_binary(&mut tape, &bound, h).unwrap();
        assert_eq!(tape.scalar_value(c), 0.0);
        let a = answer_logits(&mut tape, &bound, h).unwrap();
        assert!(tape.value(a).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cls_logit_scales_linearly_with_cls_row() {
        let cfg = ModelConfig::tiny();
        let mut w = ModelWeights::init(&cfg, 1).unwrap();
        let mut rng = Rng::new(3);
        w.cls_w = Tensor::randn(vec![cfg.hidden, 1], 1.0, &mut rng);
        // keep bias zero
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &w);
        let row = Tensor::randn(vec![1, cfg.hidden], 1.0, &mut rng);
        let h1 = tape.leaf(row.clone());
        let l1 = cls_binary(&mut tape, &bound, h1).unwrap();
        let scaled = Tensor::new(
            vec![1, cfg.hidden],
            row.data().iter().map(|v| v * 3.0).collect(),
        )
        .unwrap();
        let h2 = tape.leaf(scaled);
        let l2 = cls_binary(&mut tape, &bound, h2).unwrap();
        assert!((tape.scalar_value(l2) - 3.0 * tape.scalar_value(l1)).abs() < 1e-9);
    }
}
