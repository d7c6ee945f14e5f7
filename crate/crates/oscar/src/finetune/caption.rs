//! Seq2seq caption fine-tuning and mask-append generation.
//!
//! Fine-tuning rewrites a triple's word segment from `[CLS] w [SEP]` to
//! `[CLS] w [STOP]` and masks caption tokens (including the [STOP]
//! terminator, so stopping is a learnable prediction) under the seq2seq
//! mask. Generation encodes `[CLS] prefix [MASK] | tags [SEP] | regions`,
//! reads the vocabulary distribution at the [MASK] slot, appends the
//! chosen token, and repeats until [STOP]. Because caption positions are
//! causal and nothing attends back into the caption, the distribution at
//! the [MASK] slot is identical whether or not continuation tokens exist
//! yet, which makes training and generation consistent.

use crate::corpus::triple::Triple;
use crate::corpus::vocab::{CLS, MASK, NUM_SPECIAL, SEP, STOP};
use crate::error::{Error, Result};
use crate::model::encoder::{bind, encode_triple, mlm_logits};
use crate::model::mask::{build_mask, MaskKind};
use crate::model::ModelWeights;
use crate::objectives::{sample_mask_over, MaskScheme, MaskedItem};
use crate::rng::Rng;
use crate::tape::Tape;

/// Caption-mode view of a triple: the word segment's trailing [SEP]
/// becomes the [STOP] terminator the generator is trained to emit.
pub fn caption_mode_triple(triple: &Triple) -> Triple {
    let mut t = triple.clone();
    if let Some(last) = t.word_ids.last_mut() {
        if *last == SEP {
            *last = STOP;
        }
    }
    t
}

/// Mask sampler for caption fine-tuning: caption tokens plus the [STOP]
/// terminator, never [CLS], never tags, capped at `max_masked`.
pub fn sample_caption_mask(
    triple: &Triple,
    rate: f64,
    max_masked: Option<usize>,
    vocab_size: usize,
    rng: &mut Rng,
) -> Result<MaskedItem> {
    let layout = triple.layout();
    let eligible: Vec<usize> = layout
        .words
        .clone()
        .filter(|&p| {
            let id = triple.word_ids[p];
            id >= NUM_SPECIAL || id == STOP
        })
        .collect();
    sample_mask_over(
        triple,
        &eligible,
        rate,
        max_masked,
        MaskScheme::Plain,
        vocab_size,
        rng,
    )
}

#[derive(Clone, Debug)]
pub struct BeamHypothesis {
    /// Emitted token ids, including the final [STOP] once finished.
    pub tokens: Vec<usize>,
    /// Cumulative log-probability; non-increasing as tokens append.
    pub log_prob: f64,
    pub finished: bool,
}

/// Candidate set for generation: every non-special token plus [STOP].
fn allowed_tokens(vocab_size: usize) -> Vec<usize> {
    let mut v = vec![STOP];
    v.extend(NUM_SPECIAL..vocab_size);
    v
}

/// Log-probabilities over the vocabulary at the [MASK] appended after
/// `prefix`, conditioned on the tags and regions.
fn next_token_log_probs(
    weights: &ModelWeights,
    prefix: &[usize],
    tag_ids: &[usize],
    region_vecs: &[Vec<f32>],
) -> Result<Vec<f64>> {
    let mut word_ids = Vec::with_capacity(prefix.len() + 2);
    word_ids.push(CLS);
    word_ids.extend_from_slice(prefix);
    word_ids.push(MASK);
    let triple = Triple {
        word_ids,
        tag_ids: tag_ids.to_vec(),
        region_vecs: region_vecs.to_vec(),
    };
    let layout = triple.layout();
    let mask_pos = layout.words.end - 1;
    let mask = build_mask(MaskKind::Seq2Seq, &layout);
    let mut tape = Tape::new();
    let bound = bind(&mut tape, weights);
    let hidden = encode_triple(&mut tape, &bound, &weights.config, &triple, &mask)?;
    let logits = mlm_logits(&mut tape, &bound, hidden, &[mask_pos], layout.discrete_len())?;
    let x = tape.value(logits).data();
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(x.iter().map(|v| v - lse).collect())
}

/// Compare hypotheses: higher log-prob first, ties broken toward the
/// lexicographically smaller token sequence so decoding is deterministic.
fn better(a: &BeamHypothesis, b: &BeamHypothesis) -> std::cmp::Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .unwrap()
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search over the mask-append procedure, returning the selected
/// hypothesis: the highest log-prob finished one, or the best unfinished
/// one after `max_len` steps when nothing finished. Special tokens other
/// than [STOP] are excluded from the candidate set.
pub fn generate_caption_hypothesis(
    weights: &ModelWeights,
    tag_ids: &[usize],
    region_vecs: &[Vec<f32>],
    beam_size: usize,
    max_len: usize,
) -> Result<BeamHypothesis> {
    if beam_size == 0 || max_len == 0 {
        return Err(Error::Config("beam_size and max_len must be >= 1".into()));
    }
    let vocab = weights.config.vocab;
    let allowed = allowed_tokens(vocab);
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<BeamHypothesis> = Vec::new();
        for hyp in &live {
            let lp = next_token_log_probs(weights, &hyp.tokens, tag_ids, region_vecs)?;
            // top beam_size allowed continuations of this hypothesis,
            // ties toward the lower token id
            let mut ranked: Vec<usize> = allowed.clone();
            ranked.sort_by(|&x, &y| lp[y].partial_cmp(&lp[x]).unwrap().then(x.cmp(&y)));
            for &tok in ranked.iter().take(beam_size) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                candidates.push(BeamHypothesis {
                    tokens,
                    log_prob: hyp.log_prob + lp[tok],
                    finished: tok == STOP,
                });
            }
        }
        candidates.sort_by(better);
        live = Vec::new();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else if live.len() < beam_size {
                live.push(c);
            }
        }
    }

    Ok(finished
        .into_iter()
        .min_by(better)
        .or_else(|| live.into_iter().min_by(better))
        .expect("at least one hypothesis survives"))
}

/// Beam-search generation returning just the emitted token ids, without
/// the [STOP] terminator.
pub fn generate_caption(
    weights: &ModelWeights,
    tag_ids: &[usize],
    region_vecs: &[Vec<f32>],
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<usize>> {
    let best = generate_caption_hypothesis(weights, tag_ids, region_vecs, beam_size, max_len)?;
    let mut tokens = best.tokens;
    if tokens.last() == Some(&STOP) {
        tokens.pop();
    }
    Ok(tokens)
}

/// Pure greedy decoding; reference implementation for the beam_size = 1
/// equivalence check.
pub fn generate_greedy(
    weights: &ModelWeights,
    tag_ids: &[usize],
    region_vecs: &[Vec<f32>],
    max_len: usize,
) -> Result<Vec<usize>> {
    let vocab = weights.config.vocab;
    let allowed = allowed_tokens(vocab);
    let mut tokens = Vec::new();
    for _ in 0..max_len {
        let lp = next_token_log_probs(weights, &tokens, tag_ids, region_vecs)?;
        let best = allowed
            .iter()
            .copied()
            .max_by(|&x, &y| lp[x].partial_cmp(&lp[y]).unwrap().then(y.cmp(&x)))
            .unwrap();
        if best == STOP {
            return Ok(tokens);
        }
        tokens.push(best);
    }
    Ok(tokens)
}

/// Total log-probability of a fixed emission sequence under the
/// mask-append procedure; the exhaustive-enumeration oracle uses this to
/// score every possible sequence independently of the beam machinery.
pub fn sequence_log_prob(
    weights: &ModelWeights,
    emitted: &[usize],
    tag_ids: &[usize],
    region_vecs: &[Vec<f32>],
) -> Result<f64> {
    let mut total = 0.0;
    for (i, &tok) in emitted.iter().enumerate() {
        let lp = next_token_log_probs(weights, &emitted[..i], tag_ids, region_vecs)?;
        total += lp[tok];
    }
    Ok(total)
}
