//! Training triples: caption token ids, tag token ids, and
//! position-sensitive region vectors, with their sequence layout.

use crate::corpus::vocab::{Vocabulary, CLS, SEP};
use crate::corpus::world::ImageSample;
use crate::error::{Error, Result};
use std::ops::Range;

/// Sequence budgets for one triple.
#[derive(Clone, Copy, Debug)]
pub struct TripleLimits {
    /// Combined budget for word and tag ids (discrete tokens).
    pub max_tokens: usize,
    pub max_regions: usize,
}

impl Default for TripleLimits {
    fn default() -> Self {
        TripleLimits {
            max_tokens: 35,
            max_regions: 50,
        }
    }
}

/// Positions of the three segments inside the flattened sequence
/// `[CLS] w [SEP] | q [SEP] | v`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleLayout {
    pub words: Range<usize>,
    pub tags: Range<usize>,
    pub regions: Range<usize>,
}

impl TripleLayout {
    pub fn seq_len(&self) -> usize {
        self.regions.end
    }

    pub fn discrete_len(&self) -> usize {
        self.tags.end
    }
}

/// One training sample: word ids (with [CLS]/[SEP] framing), tag ids
/// (with trailing [SEP]), and region vectors v'‖z. Region values are
/// stored as f32, the corpus wire dtype; they widen exactly to f64 when
/// embedded.
#[derive(Clone, Debug, PartialEq)]
pub struct Triple {
    pub word_ids: Vec<usize>,
    pub tag_ids: Vec<usize>,
    pub region_vecs: Vec<Vec<f32>>,
}

impl Triple {
    pub fn layout(&self) -> TripleLayout {
        let w = self.word_ids.len();
        let t = self.tag_ids.len();
        let r = self.region_vecs.len();
        TripleLayout {
            words: 0..w,
            tags: w..w + t,
            regions: w + t..w + t + r,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.word_ids.len() + self.tag_ids.len() + self.region_vecs.len()
    }

    /// All discrete ids in sequence order (words then tags).
    pub fn discrete_ids(&self) -> Vec<usize> {
        let mut ids = self.word_ids.clone();
        ids.extend_from_slice(&self.tag_ids);
        ids
    }

    pub fn region_dim(&self) -> usize {
        self.region_vecs.first().map_or(0, Vec::len)
    }
}

/// Assemble a triple from caption tokens, tag tokens, and an image.
/// Words become `[CLS] w [SEP]`, tags become `q [SEP]`, and each region
/// contributes its feature concatenated with its box geometry.
pub fn make_triple<S: AsRef<str>>(
    caption: &[S],
    tags: &[S],
    image: &ImageSample,
    box_dim: usize,
    vocab: &Vocabulary,
    limits: TripleLimits,
) -> Result<Triple> {
    let mut word_ids = Vec::with_capacity(caption.len() + 2);
    word_ids.push(CLS);
    word_ids.extend(vocab.encode(caption)?);
    word_ids.push(SEP);

    let mut tag_ids = Vec::with_capacity(tags.len() + 1);
    tag_ids.extend(vocab.encode(tags)?);
    tag_ids.push(SEP);

    if word_ids.len() + tag_ids.len() > limits.max_tokens {
        return Err(Error::Limit(format!(
            "{} discrete tokens exceed budget {}",
            word_ids.len() + tag_ids.len(),
            limits.max_tokens
        )));
    }
    if image.regions.len() > limits.max_regions {
        return Err(Error::Limit(format!(
            "{} regions exceed budget {}",
            image.regions.len(),
            limits.max_regions
        )));
    }

    let region_vecs = image
        .regions
        .iter()
        .map(|r| {
            let mut v: Vec<f32> = r.feature.iter().map(|&x| x as f32).collect();
            v.extend(r.z(box_dim).iter().map(|&x| x as f32));
            v
        })
        .collect();

    Ok(Triple {
        word_ids,
        tag_ids,
        region_vecs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::world::{build_world, generate_image, WorldConfig};
    use crate::rng::Rng;

    fn fixture() -> (crate::corpus::world::SyntheticWorld, Vocabulary, ImageSample) {
        let w = build_world(WorldConfig::default(), 4).unwrap();
        let vocab = w.vocabulary();
        let mut rng = Rng::new(6);
        let img = generate_image(&w, 2, 0.1, 0.0, &mut rng).unwrap();
        (w, vocab, img)
    }

    #[test]
    fn layout_arithmetic() {
        let (w, vocab, img) = fixture();
        let caption = ["a", "photo", "of"];
        let tags = ["cat", "dog"];
        let t = make_triple(&caption, &tags, &img, w.config.box_dim, &vocab, TripleLimits::default())
            .unwrap();
        assert_eq!(t.word_ids.len(), 5); // [CLS] + 3 + [SEP]
        assert_eq!(t.tag_ids.len(), 3); // 2 + [SEP]
        assert_eq!(t.region_vecs.len(), 2);
        assert_eq!(t.region_dim(), w.config.feature_dim + w.config.box_dim);
        let layout = t.layout();
        assert_eq!(layout.words, 0..5);
        assert_eq!(layout.tags, 5..8);
        assert_eq!(layout.regions, 8..10);
        assert_eq!(layout.seq_len(), 10);
    }

    #[test]
    fn empty_tags_leave_a_bare_separator() {
        let (w, vocab, img) = fixture();
        let caption = ["a", "photo"];
        let t = make_triple::<&str>(&caption, &[], &img, w.config.box_dim, &vocab, TripleLimits::default())
            .unwrap();
        assert_eq!(t.tag_ids, vec![SEP]);
    }

    #[test]
    fn region_vector_tail_is_exactly_z() {
        let (w, vocab, img) = fixture();
        let t = make_triple(&["a"], &["cat"], &img, w.config.box_dim, &vocab, TripleLimits::default())
            .unwrap();
        let p = w.config.feature_dim;
        let z = img.regions[0].z(w.config.box_dim);
        for (i, &zi) in z.iter().enumerate() {
            assert_eq!(t.region_vecs[0][p + i], zi as f32);
        }
    }

    #[test]
    fn unknown_token_and_limits_error() {
        let (w, vocab, img) = fixture();
        assert!(matches!(
            make_triple(&["nosuchword"], &[], &img, w.config.box_dim, &vocab, TripleLimits::default()),
            Err(Error::Vocab(_))
        ));
        let tiny = TripleLimits {
            max_tokens: 3,
            max_regions: 50,
        };
        assert!(matches!(
            make_triple(&["a", "photo"], &[], &img, w.config.box_dim, &vocab, tiny),
            Err(Error::Limit(_))
        ));
        let no_regions = TripleLimits {
            max_tokens: 35,
            max_regions: 1,
        };
        assert!(matches!(
            make_triple(&["a"], &[], &img, w.config.box_dim, &vocab, no_regions),
            Err(Error::Limit(_))
        ));
    }
}
