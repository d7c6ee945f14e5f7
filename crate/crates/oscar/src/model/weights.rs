//! Learnable parameters, addressable by name in a fixed canonical order.
//!
//! The name -> shape map is the checkpoint contract; optimizer state and
//! checkpoint files both follow the order of [`ModelWeights::for_each`].

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, TYPE_VOCAB};
use crate::rng::Rng;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct LayerWeights {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub q_w: Tensor,
    pub q_b: Tensor,
    pub k_w: Tensor,
    pub k_b: Tensor,
    pub v_w: Tensor,
    pub v_b: Tensor,
    pub o_w: Tensor,
    pub o_b: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub ffn_in_w: Tensor,
    pub ffn_in_b: Tensor,
    pub ffn_out_w: Tensor,
    pub ffn_out_b: Tensor,
}

/// All parameters. Output heads start zeroed so an untrained model sits
/// exactly at its analytic chance floor (ln V per masked token, ln 2 for
/// the pair classifier).
#[derive(Clone, Debug)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub word_embedding: Tensor,
    pub position_embedding: Tensor,
    pub type_embedding: Tensor,
    pub region_proj_w: Tensor,
    pub region_proj_b: Tensor,
    pub layers: Vec<LayerWeights>,
    pub mlm_w: Tensor,
    pub mlm_b: Tensor,
    pub cls_w: Tensor,
    pub cls_b: Tensor,
    pub answer_w: Tensor,
    pub answer_b: Tensor,
    pub nlvr_w1: Tensor,
    pub nlvr_b1: Tensor,
    pub nlvr_w2: Tensor,
    pub nlvr_b2: Tensor,
}

impl ModelWeights {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derive(seed, &[0x69_6e_69_74]); // "init"
        let h = config.hidden;
        let f = config.ffn_dim();
        let rin = config.region_input_dim();
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            layers.push(LayerWeights {
                ln1_gamma: Tensor::full(vec![h], 1.0),
                ln1_beta: Tensor::zeros(vec![h]),
                q_w: Tensor::randn(vec![h, h], INIT_STD, &mut rng),
                q_b: Tensor::zeros(vec![h]),
                k_w: Tensor::randn(vec![h, h], INIT_STD, &mut rng),
                k_b: Tensor::zeros(vec![h]),
                v_w: Tensor::randn(vec![h, h], INIT_STD, &mut rng),
                v_b: Tensor::zeros(vec![h]),
                o_w: Tensor::randn(vec![h, h], INIT_STD, &mut rng),
                o_b: Tensor::zeros(vec![h]),
                ln2_gamma: Tensor::full(vec![h], 1.0),
                ln2_beta: Tensor::zeros(vec![h]),
                ffn_in_w: Tensor::randn(vec![h, f], INIT_STD, &mut rng),
                ffn_in_b: Tensor::zeros(vec![f]),
                ffn_out_w: Tensor::randn(vec![f, h], INIT_STD, &mut rng),
                ffn_out_b: Tensor::zeros(vec![h]),
            });
        }
        Ok(ModelWeights {
            word_embedding: Tensor::randn(vec![config.vocab, h], INIT_STD, &mut rng),
            position_embedding: Tensor::randn(vec![config.max_tokens, h], INIT_STD, &mut rng),
            type_embedding: Tensor::randn(vec![TYPE_VOCAB, h], INIT_STD, &mut rng),
            region_proj_w: Tensor::randn(vec![rin, h], INIT_STD, &mut rng),
            region_proj_b: Tensor::zeros(vec![h]),
            layers,
            mlm_w: Tensor::zeros(vec![h, config.vocab]),
            mlm_b: Tensor::zeros(vec![config.vocab]),
            cls_w: Tensor::zeros(vec![h, 1]),
            cls_b: Tensor::zeros(vec![1]),
            answer_w: Tensor::zeros(vec![h, config.num_answers]),
            answer_b: Tensor::zeros(vec![config.num_answers]),
            nlvr_w1: Tensor::randn(vec![2 * h, h], INIT_STD, &mut rng),
            nlvr_b1: Tensor::zeros(vec![h]),
            nlvr_w2: Tensor::zeros(vec![h, 1]),
            nlvr_b2: Tensor::zeros(vec![1]),
            config: config.clone(),
        })
    }

    /// Visit every parameter as (name, tensor), in canonical order.
    pub fn for_each<'a>(&'a self, mut f: impl FnMut(&str, &'a Tensor)) {
        f("word_embedding", &self.word_embedding);
        f("position_embedding", &self.position_embedding);
        f("type_embedding", &self.type_embedding);
        f("region_proj.weight", &self.region_proj_w);
        f("region_proj.bias", &self.region_proj_b);
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("layer{i}.ln1.gamma"), &l.ln1_gamma);
            f(&format!("layer{i}.ln1.beta"), &l.ln1_beta);
            f(&format!("layer{i}.attn.q.weight"), &l.q_w);
            f(&format!("layer{i}.attn.q.bias"), &l.q_b);
            f(&format!("layer{i}.attn.k.weight"), &l.k_w);
            f(&format!("layer{i}.attn.k.bias"), &l.k_b);
            f(&format!("layer{i}.attn.v.weight"), &l.v_w);
            f(&format!("layer{i}.attn.v.bias"), &l.v_b);
            f(&format!("layer{i}.attn.o.weight"), &l.o_w);
            f(&format!("layer{i}.attn.o.bias"), &l.o_b);
            f(&format!("layer{i}.ln2.gamma"), &l.ln2_gamma);
            f(&format!("layer{i}.ln2.beta"), &l.ln2_beta);
            f(&format!("layer{i}.ffn.in.weight"), &l.ffn_in_w);
            f(&format!("layer{i}.ffn.in.bias"), &l.ffn_in_b);
            f(&format!("layer{i}.ffn.out.weight"), &l.ffn_out_w);
            f(&format!("layer{i}.ffn.out.bias"), &l.ffn_out_b);
        }
        f("mlm_head.weight", &self.mlm_w);
        f("mlm_head.bias", &self.mlm_b);
        f("cls_head.weight", &self.cls_w);
        f("cls_head.bias", &self.cls_b);
        f("answer_head.weight", &self.answer_w);
        f("answer_head.bias", &self.answer_b);
        f("nlvr_mlp.fc1.weight", &self.nlvr_w1);
        f("nlvr_mlp.fc1.bias", &self.nlvr_b1);
        f("nlvr_mlp.fc2.weight", &self.nlvr_w2);
        f("nlvr_mlp.fc2.bias", &self.nlvr_b2);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each(|n, _| names.push(n.to_string()));
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        self.for_each(|_, t| v.push(t));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = vec![
            &mut self.word_embedding,
            &mut self.position_embedding,
            &mut self.type_embedding,
            &mut self.region_proj_w,
            &mut self.region_proj_b,
        ];
        for l in &mut self.layers {
            v.push(&mut l.ln1_gamma);
            v.push(&mut l.ln1_beta);
            v.push(&mut l.q_w);
            v.push(&mut l.q_b);
            v.push(&mut l.k_w);
            v.push(&mut l.k_b);
            v.push(&mut l.v_w);
            v.push(&mut l.v_b);
            v.push(&mut l.o_w);
            v.push(&mut l.o_b);
            v.push(&mut l.ln2_gamma);
            v.push(&mut l.ln2_beta);
            v.push(&mut l.ffn_in_w);
            v.push(&mut l.ffn_in_b);
            v.push(&mut l.ffn_out_w);
            v.push(&mut l.ffn_out_b);
        }
        v.push(&mut self.mlm_w);
        v.push(&mut self.mlm_b);
        v.push(&mut self.cls_w);
        v.push(&mut self.cls_b);
        v.push(&mut self.answer_w);
        v.push(&mut self.answer_b);
        v.push(&mut self.nlvr_w1);
        v.push(&mut self.nlvr_b1);
        v.push(&mut self.nlvr_w2);
        v.push(&mut self.nlvr_b2);
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Replace every parameter at once, in canonical order. Shapes must
    /// match; gradient-checking code uses this to rebuild a model from a
    /// flat parameter list.
    pub fn assign_all(&mut self, values: &[Tensor]) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} parameters expected, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, value) in slots.iter_mut().zip(values) {
            if slot.shape() != value.shape() {
                return Err(Error::Shape(format!(
                    "parameter shape {:?} vs {:?}",
                    slot.shape(),
                    value.shape()
                )));
            }
            **slot = value.clone();
        }
        Ok(())
    }

    /// Replace a parameter by name. Shapes must match.
    pub fn set_by_name(&mut self, name: &str, value: Tensor) -> Result<()> {
        let names = self.param_names();
        let idx = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {name:?}")))?;
        let mut slots = self.tensors_mut();
        if slots[idx].shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {name}: checkpoint shape {:?} vs model {:?}",
                value.shape(),
                slots[idx].shape()
            )));
        }
        *slots[idx] = value;
        Ok(())
    }
}
