//! Paired-image reasoning: one sentence against two images, two encoder
//! passes, [CLS] outputs concatenated into a small MLP.
//!
//! The synthetic statement is "same main object in both", true iff the
//! two images share their dominant class.

use crate::corpus::triple::{make_triple, Triple, TripleLimits};
use crate::corpus::world::{generate_image, ImageSample, SyntheticWorld};
use crate::corpus::{TagMode, Vocabulary};
use crate::error::{Error, Result};
use crate::model::encoder::{bind, encode_triple, BoundWeights};
use crate::model::mask::{build_mask, MaskKind};
use crate::model::{ModelConfig, ModelWeights};
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};

pub const SENTENCE: [&str; 5] = ["same", "main", "object", "in", "both"];

#[derive(Clone, Debug)]
pub struct NlvrSample {
    pub triple_a: Triple,
    pub triple_b: Triple,
    /// true iff both images share their dominant class.
    pub label: bool,
}

/// Build a balanced sample: a fair coin decides the label, and the second
/// image is resampled until its dominant class agrees or disagrees.
pub fn make_nlvr_sample(
    world: &SyntheticWorld,
    tag_mode: TagMode,
    vocab: &Vocabulary,
    limits: TripleLimits,
    rng: &mut Rng,
) -> Result<NlvrSample> {
    let num_objects = 3 + rng.below(3);
    let image_a = generate_image(world, num_objects, 0.1, 0.2, rng)?;
    let want_same = rng.bernoulli(0.5);
    let mut image_b = None;
    for _ in 0..64 {
        let cand = generate_image(world, 3 + rng.below(3), 0.1, 0.2, rng)?;
        if (cand.dominant_class() == image_a.dominant_class()) == want_same {
            image_b = Some(cand);
            break;
        }
    }
    let image_b = image_b.ok_or_else(|| {
        Error::Exhausted("could not sample a paired image with the requested label".into())
    })?;
    let triple_of = |img: &ImageSample, rng: &mut Rng| -> Result<Triple> {
        let tags = match tag_mode {
            TagMode::None => Vec::new(),
            TagMode::Predicted { flip, drop } => {
                crate::corpus::world::detect_tags(img, world, flip, drop, rng)?
            }
            TagMode::Groundtruth => crate::corpus::world::detect_tags(img, world, 0.0, 0.0, rng)?,
        };
        make_triple(
            &SENTENCE.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            &tags,
            img,
            world.config.box_dim,
            vocab,
            limits,
        )
    };
    let triple_a = triple_of(&image_a, rng)?;
    let triple_b = triple_of(&image_b, rng)?;
    Ok(NlvrSample {
        triple_a,
        triple_b,
        label: want_same,
    })
}

/// Two independent encoder passes; the [CLS] rows are concatenated (in
/// argument order) and fed through the 2H -> H -> 1 MLP with GELU.
pub fn nlvr_logit(
    tape: &mut Tape,
    bound: &BoundWeights,
    config: &ModelConfig,
    triple_a: &Triple,
    triple_b: &Triple,
) -> Result<NodeId> {
    let mask_a = build_mask(MaskKind::Full, &triple_a.layout());
    let mask_b = build_mask(MaskKind::Full, &triple_b.layout());
    let hidden_a = encode_triple(tape, bound, config, triple_a, &mask_a)?;
    let hidden_b = encode_triple(tape, bound, config, triple_b, &mask_b)?;
    let cls_a = tape.gather_rows(hidden_a, &[0])?;
    let cls_b = tape.gather_rows(hidden_b, &[0])?;
    let joint = tape.concat_cols(&[cls_a, cls_b])?;
    let mid = tape.matmul(joint, bound.nlvr_w1)?;
    let mid = tape.add_row(mid, bound.nlvr_b1)?;
    let act = tape.gelu(mid);
    let out = tape.matmul(act, bound.nlvr_w2)?;
    tape.add_row(out, bound.nlvr_b2)
}

pub fn nlvr_predict(weights: &ModelWeights, sample: &NlvrSample) -> Result<bool> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, weights);
    let logit = nlvr_logit(
        &mut tape,
        &bound,
        &weights.config,
        &sample.triple_a,
        &sample.triple_b,
    )?;
    Ok(tape.scalar_value(logit) > 0.0)
}
