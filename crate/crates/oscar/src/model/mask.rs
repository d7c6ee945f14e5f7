//! Attention masks over the flattened `[words | tags | regions]` sequence.

use std::sync::Arc;

use crate::corpus::triple::TripleLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Segment {
    Word,
    Tag,
    Region,
}

/// Which query/key interactions a mask permits.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskKind {
    /// Every position attends to every position.
    Full,
    /// Caption positions (including [CLS] and the caption's [SEP]) attend
    /// causally within the caption and fully to tags and regions; tag and
    /// region positions attend only to tags and regions, never back into
    /// the caption.
    Seq2Seq,
    /// Segment X may attend to segment Y iff the unordered pair {X, Y} is
    /// declared; every position keeps its diagonal regardless.
    Partial(Vec<(Segment, Segment)>),
}

impl MaskKind {
    /// Words and regions interact; tags are masked out of attention.
    pub fn partial_words_regions() -> MaskKind {
        MaskKind::Partial(vec![
            (Segment::Word, Segment::Word),
            (Segment::Word, Segment::Region),
            (Segment::Region, Segment::Region),
        ])
    }

    /// Regions and tags interact; words are masked out of attention.
    pub fn partial_tags_regions() -> MaskKind {
        MaskKind::Partial(vec![
            (Segment::Tag, Segment::Tag),
            (Segment::Tag, Segment::Region),
            (Segment::Region, Segment::Region),
        ])
    }

    pub fn parse(s: &str) -> Option<MaskKind> {
        match s {
            "full" => Some(MaskKind::Full),
            "seq2seq" => Some(MaskKind::Seq2Seq),
            "partial-wv" => Some(MaskKind::partial_words_regions()),
            "partial-qv" => Some(MaskKind::partial_tags_regions()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskKind::Full => "full",
            MaskKind::Seq2Seq => "seq2seq",
            MaskKind::Partial(_) => "partial",
        }
    }
}

/// Boolean query x key matrix; `allow[q * size + k]` says whether position
/// q may attend to position k.
#[derive(Clone, Debug)]
pub struct AttentionMask {
    pub kind: MaskKind,
    size: usize,
    allow: Arc<Vec<bool>>,
}

fn segment_of(layout: &TripleLayout, pos: usize) -> Segment {
    if layout.words.contains(&pos) {
        Segment::Word
    } else if layout.tags.contains(&pos) {
        Segment::Tag
    } else {
        Segment::Region
    }
}

fn pair_declared(pairs: &[(Segment, Segment)], x: Segment, y: Segment) -> bool {
    pairs
        .iter()
        .any(|&(a, b)| (a == x && b == y) || (a == y && b == x))
}

pub fn build_mask(kind: MaskKind, layout: &TripleLayout) -> AttentionMask {
    let s = layout.seq_len();
    let mut allow = vec![false; s * s];
    for q in 0..s {
        for k in 0..s {
            let v = match &kind {
                MaskKind::Full => true,
                MaskKind::Seq2Seq => {
                    let qs = segment_of(layout, q);
                    let ks = segment_of(layout, k);
                    if qs == Segment::Word {
                        ks != Segment::Word || k <= q
                    } else {
                        ks != Segment::Word
                    }
                }
                MaskKind::Partial(pairs) => {
                    q == k || pair_declared(pairs, segment_of(layout, q), segment_of(layout, k))
                }
            };
            allow[q * s + k] = v;
        }
    }
    debug_assert!((0..s).all(|i| allow[i * s + i]), "diagonal must hold");
    AttentionMask {
        kind,
        size: s,
        allow: Arc::new(allow),
    }
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allow[q * self.size + k]
    }

    /// Shared boolean matrix, in the layout the tape's masked softmax expects.
    pub fn allow_matrix(&self) -> Arc<Vec<bool>> {
        Arc::clone(&self.allow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(words: usize, tags: usize, regions: usize) -> TripleLayout {
        TripleLayout {
            words: 0..words,
            tags: words..words + tags,
            regions: words + tags..words + tags + regions,
        }
    }

    fn allowed_set(m: &AttentionMask, q: usize) -> Vec<usize> {
        (0..m.size()).filter(|&k| m.allows(q, k)).collect()
    }

    #[test]
    fn full_mask_is_all_true() {
        let m = build_mask(MaskKind::Full, &layout(3, 1, 1));
        assert_eq!(m.size(), 5);
        for q in 0..5 {
            assert_eq!(allowed_set(&m, q), vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn seq2seq_rows_match_stated_rule() {
        // caption {0,1,2}, tags {3}, regions {4}
        let m = build_mask(MaskKind::Seq2Seq, &layout(3, 1, 1));
        assert_eq!(allowed_set(&m, 1), vec![0, 1, 3, 4]);
        assert_eq!(allowed_set(&m, 3), vec![3, 4]);
        assert_eq!(allowed_set(&m, 4), vec![3, 4]);
    }

    #[test]
    fn partial_words_regions_matches_stated_rule() {
        // caption {0,1}, tags {2}, regions {3}
        let m = build_mask(MaskKind::partial_words_regions(), &layout(2, 1, 1));
        assert_eq!(allowed_set(&m, 0), vec![0, 1, 3]);
        assert_eq!(allowed_set(&m, 2), vec![2]);
        assert_eq!(allowed_set(&m, 3), vec![0, 1, 3]);
    }

    #[test]
    fn partial_tags_regions_excludes_words() {
        let m = build_mask(MaskKind::partial_tags_regions(), &layout(2, 2, 1));
        assert_eq!(allowed_set(&m, 0), vec![0]);
        assert_eq!(allowed_set(&m, 2), vec![2, 3, 4]);
        assert_eq!(allowed_set(&m, 4), vec![2, 3, 4]);
    }

    #[test]
    fn diagonal_always_allowed() {
        for kind in [
            MaskKind::Full,
            MaskKind::Seq2Seq,
            MaskKind::partial_words_regions(),
            MaskKind::partial_tags_regions(),
        ] {
            let m = build_mask(kind, &layout(4, 3, 2));
            for q in 0..m.size() {
                assert!(m.allows(q, q));
            }
        }
    }
}
