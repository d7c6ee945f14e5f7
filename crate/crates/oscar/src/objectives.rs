//! Pre-training objectives: the masked token loss with its masking
//! sampler, the tag-pollution contrastive loss, and their sum.
//!
//! At init with zeroed output heads the masked token loss is exactly
//! ln V per masked position and the contrastive loss is exactly ln 2;
//! training sanity checks anchor on those chance floors.

use crate::corpus::triple::Triple;
use crate::corpus::vocab::{MASK, NUM_SPECIAL};
use crate::error::{Error, Result};
use crate::model::encoder::{cls_binary, mlm_logits, BoundWeights};
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};

/// How masked-out positions are rewritten in the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskScheme {
    /// Every sampled position becomes [MASK].
    Plain,
    /// BERT-style split: 80% [MASK], 10% random non-special token, 10% kept.
    Bert,
}

impl MaskScheme {
    pub fn parse(s: &str) -> Option<MaskScheme> {
        match s {
            "plain" => Some(MaskScheme::Plain),
            "bert" => Some(MaskScheme::Bert),
            _ => None,
        }
    }
}

/// A triple with some discrete tokens masked out, plus what was there.
#[derive(Clone, Debug)]
pub struct MaskedItem {
    pub triple: Triple,
    /// Positions in the flattened discrete range (words then tags).
    pub masked_positions: Vec<usize>,
    pub original_ids: Vec<usize>,
}

/// A triple whose tags may have been replaced by a donor's, with the
/// aligned/polluted label.
#[derive(Clone, Debug)]
pub struct ContrastiveItem {
    pub triple: Triple,
    /// true iff the tags are the original tag sequence.
    pub aligned: bool,
    /// Index of the pollution donor when polluted.
    pub donor: Option<usize>,
}

/// Positions eligible for masking: discrete tokens that are not special
/// ids, never regions. `words_only` additionally restricts to the word
/// segment (used for caption fine-tuning and for polluted samples, whose
/// tags would otherwise become wrong-answer prediction targets).
pub fn eligible_positions(triple: &Triple, words_only: bool) -> Vec<usize> {
    let layout = triple.layout();
    let mut out = Vec::new();
    for p in layout.words.clone() {
        if triple.word_ids[p] >= NUM_SPECIAL {
            out.push(p);
        }
    }
    if !words_only {
        for p in layout.tags.clone() {
            if triple.tag_ids[p - layout.tags.start] >= NUM_SPECIAL {
                out.push(p);
            }
        }
    }
    out
}

/// Independently mask each eligible token with probability `rate`,
/// rewriting it according to `scheme`. When `max_masked` is set, a
/// uniformly random subset of the sampled positions is kept.
#[allow(clippy::too_many_arguments)]
pub fn sample_mtl_mask(
    triple: &Triple,
    rate: f64,
    max_masked: Option<usize>,
    scheme: MaskScheme,
    vocab_size: usize,
    words_only: bool,
    rng: &mut Rng,
) -> Result<MaskedItem> {
    let eligible = eligible_positions(triple, words_only);
    sample_mask_over(triple, &eligible, rate, max_masked, scheme, vocab_size, rng)
}

/// Masking core over an explicit eligibility list (caption fine-tuning
/// passes caption positions including the [STOP] terminator).
#[allow(clippy::too_many_arguments)]
pub fn sample_mask_over(
    triple: &Triple,
    eligible: &[usize],
    rate: f64,
    max_masked: Option<usize>,
    scheme: MaskScheme,
    vocab_size: usize,
    rng: &mut Rng,
) -> Result<MaskedItem> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("mask rate {rate} outside [0, 1]")));
    }
    let mut positions: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|_| rng.bernoulli(rate))
        .collect();
    if let Some(cap) = max_masked {
        if positions.len() > cap {
            // uniform subset: partial shuffle, then restore order
            for i in 0..cap {
                let j = i + rng.below(positions.len() - i);
                positions.swap(i, j);
            }
            positions.truncate(cap);
            positions.sort_unstable();
        }
    }

    let mut masked = triple.clone();
    let layout = triple.layout();
    let mut original_ids = Vec::with_capacity(positions.len());
    for &p in &positions {
        let slot = if layout.words.contains(&p) {
            &mut masked.word_ids[p]
        } else {
            &mut masked.tag_ids[p - layout.tags.start]
        };
        original_ids.push(*slot);
        let replacement = match scheme {
            MaskScheme::Plain => MASK,
            MaskScheme::Bert => {
                let roll = rng.f64();
                if roll < 0.8 {
                    MASK
                } else if roll < 0.9 {
                    NUM_SPECIAL + rng.below(vocab_size - NUM_SPECIAL)
                } else {
                    *slot
                }
            }
        };
        *slot = replacement;
    }
    Ok(MaskedItem {
        triple: masked,
        masked_positions: positions,
        original_ids,
    })
}

/// Mean negative log-likelihood of the original ids at the masked
/// positions. Returns `None` when nothing was masked, so batch averaging
/// can exclude the item rather than count a zero.
pub fn mtl_loss(
    tape: &mut Tape,
    bound: &BoundWeights,
    hidden: NodeId,
    item: &MaskedItem,
    vocab_size: usize,
) -> Result<Option<NodeId>> {
    if item.masked_positions.is_empty() {
        return Ok(None);
    }
    let discrete_len = item.triple.layout().discrete_len();
    let logits = mlm_logits(tape, bound, hidden, &item.masked_positions, discrete_len)?;
    let mut terms = Vec::with_capacity(item.original_ids.len());
    for (row, &target) in item.original_ids.iter().enumerate() {
        if target >= vocab_size {
            return Err(Error::Vocab(format!("target id {target} >= V {vocab_size}")));
        }
        let row_logits = tape.gather_rows(logits, &[row])?;
        let mut one_hot = vec![0.0; vocab_size];
        one_hot[target] = 1.0;
        terms.push(tape.cross_entropy_soft(row_logits, &one_hot)?);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(Some(tape.scale(acc, 1.0 / terms.len() as f64)))
}

/// With probability `p`, replace the triple's tags with a donor tag
/// sequence drawn from a different sample (resampled until it differs
/// from the original, bounded at 16 attempts).
pub fn pollute_tags(
    triple: &Triple,
    donor_tags: &[Vec<usize>],
    p: f64,
    rng: &mut Rng,
) -> Result<ContrastiveItem> {
    if donor_tags.len() < 2 {
        return Err(Error::Config(
            "pollution donor pool needs at least 2 samples".into(),
        ));
    }
    if !rng.bernoulli(p) {
        return Ok(ContrastiveItem {
            triple: triple.clone(),
            aligned: true,
            donor: None,
        });
    }
    for _ in 0..16 {
        let idx = rng.below(donor_tags.len());
        if donor_tags[idx] != triple.tag_ids {
            let mut polluted = triple.clone();
            polluted.tag_ids = donor_tags[idx].clone();
            return Ok(ContrastiveItem {
                triple: polluted,
                aligned: false,
                donor: Some(idx),
            });
        }
    }
    Err(Error::Exhausted(
        "donor pool too homogeneous: no differing tag sequence in 16 draws".into(),
    ))
}

/// Binary negative log-likelihood of the aligned/polluted label given the
/// pair classifier's logit.
pub fn contrastive_loss(tape: &mut Tape, logit: NodeId, aligned: bool) -> Result<NodeId> {
    tape.bce_with_logits_mean(logit, &[if aligned { 1.0 } else { 0.0 }])
}

/// Contrastive loss computed from the encoder output of one item.
pub fn contrastive_loss_from_hidden(
    tape: &mut Tape,
    bound: &BoundWeights,
    hidden: NodeId,
    aligned: bool,
) -> Result<NodeId> {
    let logit = cls_binary(tape, bound, hidden)?;
    contrastive_loss(tape, logit, aligned)
}

/// The joint objective: unweighted sum of the two losses.
pub fn pretrain_loss(tape: &mut Tape, mtl: NodeId, contrastive: NodeId) -> Result<NodeId> {
    tape.add(mtl, contrastive)
}
