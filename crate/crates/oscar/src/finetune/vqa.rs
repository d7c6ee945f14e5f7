//! Multi-label answer classification from the [CLS] output.
//!
//! The synthetic task asks "what is the main object" of an image: the
//! answer set is the world's class list, the correct answer is the class
//! with the most regions, and other depicted classes receive partial soft
//! credit. Tags list which classes are present but not how often, so the
//! question is only answerable from the region features.

use crate::corpus::triple::{make_triple, Triple, TripleLimits};
use crate::corpus::world::{ImageSample, SyntheticWorld};
use crate::corpus::{TagMode, Vocabulary};
use crate::error::{Error, Result};
use crate::model::encoder::{answer_logits, bind, encode_triple, BoundWeights};
use crate::model::mask::{build_mask, MaskKind};
use crate::model::ModelWeights;
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};

pub const QUESTION: [&str; 5] = ["what", "is", "the", "main", "object"];

/// Soft credit assigned to depicted-but-not-dominant classes.
const MINOR_CREDIT: f64 = 0.3;

#[derive(Clone, Debug)]
pub struct QaSample {
    pub triple: Triple,
    /// Soft target score per answer, each in [0, 1].
    pub soft_targets: Vec<f64>,
    /// The argmax answer the accuracy metric scores against.
    pub answer: usize,
}

/// Which loss couples the logits to the soft targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QaLossKind {
    /// Mean per-answer binary cross-entropy (the default).
    BinaryPerAnswer,
    /// Softmax cross-entropy against the soft scores.
    SoftmaxCrossEntropy,
}

/// Build the question triple and soft targets for one image.
pub fn make_qa_sample(
    image: &ImageSample,
    world: &SyntheticWorld,
    tag_mode: TagMode,
    vocab: &Vocabulary,
    limits: TripleLimits,
    num_answers: usize,
    rng: &mut Rng,
) -> Result<QaSample> {
    if num_answers < world.config.num_classes {
        return Err(Error::Config(format!(
            "answer head width {num_answers} smaller than {} classes",
            world.config.num_classes
        )));
    }
    let tags = match tag_mode {
        TagMode::None => Vec::new(),
        TagMode::Predicted { flip, drop } => {
            crate::corpus::world::detect_tags(image, world, flip, drop, rng)?
        }
        TagMode::Groundtruth => crate::corpus::world::detect_tags(image, world, 0.0, 0.0, rng)?,
    };
    let triple = make_triple(
        &QUESTION.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        &tags,
        image,
        world.config.box_dim,
        vocab,
        limits,
    )?;
    let answer = image.dominant_class();
    let mut soft_targets = vec![0.0; num_answers];
    for c in image.distinct_classes() {
        soft_targets[c] = MINOR_CREDIT;
    }
    soft_targets[answer] = 1.0;
    Ok(QaSample {
        triple,
        soft_targets,
        answer,
    })
}

/// Loss of one sample's logits against its soft targets.
pub fn qa_loss(
    tape: &mut Tape,
    logits: NodeId,
    soft_targets: &[f64],
    kind: QaLossKind,
) -> Result<NodeId> {
    if soft_targets.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::Config("soft targets must lie in [0, 1]".into()));
    }
    match kind {
        QaLossKind::BinaryPerAnswer => tape.bce_with_logits_mean(logits, soft_targets),
        QaLossKind::SoftmaxCrossEntropy => tape.cross_entropy_soft(logits, soft_targets),
    }
}

/// Forward one QA sample to its answer logits.
pub fn qa_logits(
    tape: &mut Tape,
    bound: &BoundWeights,
    config: &crate::model::ModelConfig,
    sample: &QaSample,
) -> Result<NodeId> {
    let mask = build_mask(MaskKind::Full, &sample.triple.layout());
    let hidden = encode_triple(tape, bound, config, &sample.triple, &mask)?;
    answer_logits(tape, bound, hidden)
}

/// Softmax-argmax prediction; ties resolve to the lowest answer id.
pub fn qa_predict(weights: &ModelWeights, sample: &QaSample) -> Result<usize> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, weights);
    let logits = qa_logits(&mut tape, &bound, &weights.config, sample)?;
    let data = tape.value(logits).data();
    let mut best = 0;
    for (i, &v) in data.iter().enumerate() {
        if v > data[best] {
            best = i;
        }
    }
    Ok(best)
}
