//! Image-text retrieval as binary alignment classification, plus the
//! recall@K ranking metric.

use crate::corpus::{Corpus, Triple};
use crate::error::{Error, Result};
use crate::model::encoder::{bind, cls_binary, encode_triple};
use crate::model::mask::{build_mask, MaskKind};
use crate::model::ModelWeights;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// A (caption, image-side) pair with its alignment label. `text_index`
/// and `image_index` point back into the source corpus.
#[derive(Clone, Debug)]
pub struct RetrievalPair {
    pub word_ids: Vec<usize>,
    pub tag_ids: Vec<usize>,
    pub region_vecs: Vec<Vec<f32>>,
    pub aligned: bool,
    pub text_index: usize,
    pub image_index: usize,
}

impl RetrievalPair {
    pub fn as_triple(&self) -> Triple {
        Triple {
            word_ids: self.word_ids.clone(),
            tag_ids: self.tag_ids.clone(),
            region_vecs: self.region_vecs.clone(),
        }
    }
}

fn pair_from(corpus: &Corpus, text_index: usize, image_index: usize) -> RetrievalPair {
    let text = &corpus.items[text_index].triple;
    let image = &corpus.items[image_index].triple;
    RetrievalPair {
        word_ids: text.word_ids.clone(),
        tag_ids: image.tag_ids.clone(),
        region_vecs: image.region_vecs.clone(),
        aligned: text_index == image_index,
        text_index,
        image_index,
    }
}

/// Every positive paired with `neg_ratio` negatives; each negative flips a
/// fair coin between swapping in a different image and swapping in a
/// different caption.
pub fn make_retrieval_batch(
    corpus: &Corpus,
    indices: &[usize],
    neg_ratio: usize,
    rng: &mut Rng,
) -> Result<Vec<RetrievalPair>> {
    if corpus.len() < 2 {
        return Err(Error::Config("retrieval needs at least 2 samples".into()));
    }
    let n = corpus.len();
    let mut out = Vec::with_capacity(indices.len() * (1 + neg_ratio));
    for &i in indices {
        out.push(pair_from(corpus, i, i));
        for _ in 0..neg_ratio {
            let other = loop {
                let j = rng.below(n);
                if j != i {
                    break j;
                }
            };
            if rng.bernoulli(0.5) {
                out.push(pair_from(corpus, i, other)); // replace the image
            } else {
                out.push(pair_from(corpus, other, i)); // replace the caption
            }
        }
    }
    Ok(out)
}

/// Alignment probability under the full attention mask.
pub fn retrieval_score(weights: &ModelWeights, pair: &RetrievalPair) -> Result<f64> {
    let triple = pair.as_triple();
    let mask = build_mask(MaskKind::Full, &triple.layout());
    let mut tape = Tape::new();
    let bound = bind(&mut tape, weights);
    let hidden = encode_triple(&mut tape, &bound, &weights.config, &triple, &mask)?;
    let logit = cls_binary(&mut tape, &bound, hidden)?;
    let l = tape.scalar_value(logit);
    Ok(1.0 / (1.0 + (-l).exp()))
}

/// N x N alignment scores: rows are texts, columns are images, diagonal
/// entries are the aligned pairs. Fans out over `threads` workers when
/// asked; the result is identical either way because each cell is a pure
/// function of (weights, text, image).
pub fn score_matrix(weights: &ModelWeights, corpus: &Corpus, threads: usize) -> Result<Tensor> {
    let n = corpus.len();
    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .collect();
    let mut scores = vec![0.0; n * n];
    let threads = threads.max(1);
    if threads == 1 {
        for &(i, j) in &cells {
            let pair = pair_from(corpus, i, j);
            scores[i * n + j] = retrieval_score(weights, &pair)?;
        }
    } else {
        let chunk = cells.len().div_ceil(threads);
        let results: Vec<Result<Vec<(usize, f64)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = cells
                .chunks(chunk)
                .map(|slice| {
                    scope.spawn(move || {
                        slice
                            .iter()
                            .map(|&(i, j)| {
                                let pair = pair_from(corpus, i, j);
                                retrieval_score(weights, &pair).map(|s| (i * n + j, s))
                            })
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for r in results {
            for (idx, s) in r? {
                scores[idx] = s;
            }
        }
    }
    Tensor::new(vec![n, n], scores)
}

#[derive(Clone, Debug)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    /// Fraction of rows whose diagonal ranks in the top K.
    pub text: Vec<f64>,
    /// Fraction of columns whose diagonal ranks in the top K.
    pub image: Vec<f64>,
}

impl RecallReport {
    pub fn text_at(&self, k: usize) -> f64 {
        self.text[self.ks.iter().position(|&x| x == k).expect("k present")]
    }

    pub fn image_at(&self, k: usize) -> f64 {
        self.image[self.ks.iter().position(|&x| x == k).expect("k present")]
    }

    /// Mean of the two directions at a given K.
    pub fn mean_at(&self, k: usize) -> f64 {
        0.5 * (self.text_at(k) + self.image_at(k))
    }
}

/// R@K over a square score matrix whose diagonal marks the true matches.
/// Ties rank the lower index first, so the metric is deterministic.
pub fn recall_at_k(scores: &Tensor, ks: &[usize]) -> Result<RecallReport> {
    if scores.rank() != 2 || scores.rows() != scores.cols() {
        return Err(Error::Shape(format!(
            "recall needs a square matrix, got {:?}",
            scores.shape()
        )));
    }
    let n = scores.rows();
    let rank_of = |own: f64, others: &mut dyn Iterator<Item = (usize, f64)>, own_idx: usize| {
        let mut rank = 0usize;
        for (idx, s) in others {
            if s > own || (s == own && idx < own_idx) {
                rank += 1;
            }
        }
        rank
    };
    let mut text = vec![0.0; ks.len()];
    let mut image = vec![0.0; ks.len()];
    for i in 0..n {
        let own = scores.at2(i, i);
        let row_rank = rank_of(own, &mut (0..n).map(|j| (j, scores.at2(i, j))), i);
        let col_rank = rank_of(own, &mut (0..n).map(|j| (j, scores.at2(j, i))), i);
        for (ki, &k) in ks.iter().enumerate() {
            if row_rank < k {
                text[ki] += 1.0;
            }
            if col_rank < k {
                image[ki] += 1.0;
            }
        }
    }
    for v in text.iter_mut().chain(image.iter_mut()) {
        *v /= n as f64;
    }
    Ok(RecallReport {
        ks: ks.to_vec(),
        text,
        image,
    })
}

/// Score matrix CSV: row = text index, column = image index.
pub fn scores_to_csv(scores: &Tensor) -> String {
    let n = scores.rows();
    let mut out = String::new();
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", scores.at2(i, j)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_world, sample_corpus, CorpusConfig, WorldConfig};

    fn small_corpus(n: usize) -> Corpus {
        let world = build_world(WorldConfig::default(), 3).unwrap();
        sample_corpus(
            &world,
            &CorpusConfig {
                size: n,
                ..CorpusConfig::default()
            },
            17,
        )
        .unwrap()
    }

    #[test]
    fn neg_ratio_one_gives_half_positives() {
        let corpus = small_corpus(8);
        let mut rng = Rng::new(2);
        let indices: Vec<usize> = (0..8).collect();
        let batch = make_retrieval_batch(&corpus, &indices, 1, &mut rng).unwrap();
        assert_eq!(batch.len(), 16);
        let positives = batch.iter().filter(|p| p.aligned).count();
        assert_eq!(positives, 8);
    }

    #[test]
    fn negatives_never_reuse_their_own_index() {
        let corpus = small_corpus(6);
        let mut rng = Rng::new(3);
        let indices: Vec<usize> = (0..6).collect();
        for _ in 0..50 {
            let batch = make_retrieval_batch(&corpus, &indices, 2, &mut rng).unwrap();
            for p in batch.iter().filter(|p| !p.aligned) {
                assert_ne!(p.text_index, p.image_index);
            }
        }
    }

    #[test]
    fn negative_flip_is_a_fair_coin() {
        let corpus = small_corpus(4);
        let mut rng = Rng::new(4);
        let indices: Vec<usize> =vec![0; 10_000];
        let batch = make_retrieval_batch(&corpus, &indices, 1, &mut rng).unwrap();
        let negatives: Vec<_> = batch.iter().filter(|p| !p.aligned).collect();
        assert_eq!(negatives.len(), 10_000);
        let image_replaced = negatives.iter().filter(|p| p.text_index == 0).count();
        let frac = image_replaced as f64 / negatives.len() as f64;
        assert!((frac - 0.5).abs() < 0.02, "image-replaced fraction {frac}");
    }

    #[test]
    fn zero_weights_score_half() {
        let corpus = small_corpus(3);
        let cfg = crate::model::ModelConfig::desk(64);
        let weights = ModelWeights::init(&cfg, 1).unwrap();
        let pair = pair_from(&corpus, 0, 1);
        let s = retrieval_score(&weights, &pair).unwrap();
        assert_eq!(s, 0.5);
        // deterministic
        assert_eq!(retrieval_score(&weights, &pair).unwrap(), s);
    }

    #[test]
    fn recall_on_diagonal_dominant_matrix() {
        let n = 10;
        let mut data = vec![0.1; n * n];
        for i in 0..n {
            data[i * n + i] = 0.9;
        }
        let m = Tensor::new(vec![n, n], data).unwrap();
        let r = recall_at_k(&m, &[1, 5]).unwrap();
        assert_eq!(r.text_at(1), 1.0);
        assert_eq!(r.image_at(1), 1.0);
    }

    #[test]
    fn recall_on_reversed_ranking() {
        let n = 10;
        // diagonal strictly minimal
        let mut data = vec![1.0; n * n];
        for i in 0..n {
            data[i * n + i] = 0.0;
        }
        let m = Tensor::new(vec![n, n], data).unwrap();
        let r = recall_at_k(&m, &[1, 10]).unwrap();
        assert_eq!(r.text_at(1), 0.0);
        assert_eq!(r.image_at(1), 0.0);
        assert_eq!(r.text_at(10), 1.0);
        assert_eq!(r.image_at(10), 1.0);
    }

    #[test]
    fn recall_random_matrix_matches_expectation() {
        let n = 100;
        let mut hits = 0.0;
        let seeds = 100;
        for seed in 0..seeds {
            let mut rng = Rng::new(seed);
            let m = Tensor::randn(vec![n, n], 1.0, &mut rng);
            let r = recall_at_k(&m, &[1]).unwrap();
            hits += r.text_at(1);
        }
        let mean = hits / seeds as f64;
        assert!((mean - 0.01).abs() < 0.005, "random R@1 {mean}");
    }

    #[test]
    fn recall_is_permutation_consistent() {
        let n = 12;
        let mut rng = Rng::new(9);
        let m = Tensor::randn(vec![n, n], 1.0, &mut rng);
        let r0 = recall_at_k(&m, &[1, 3, 5]).unwrap();

        // apply the same permutation to rows and columns
        let mut perm: Vec<usize> = (0..n).collect();
        for i in 0..n {
            let j = i + rng.below(n - i);
            perm.swap(i, j);
        }
        let mut pd = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                pd[i * n + j] = m.at2(perm[i], perm[j]);
            }
        }
        let pm = Tensor::new(vec![n, n], pd).unwrap();
        let r1 = recall_at_k(&pm, &[1, 3, 5]).unwrap();
        // ties are measure-zero for Gaussian scores, so equality is exact
        assert_eq!(r0.text, r1.text);
        assert_eq!(r0.image, r1.image);
    }

    #[test]
    fn score_matrix_threads_agree() {
        let corpus = small_corpus(4);
        let cfg = crate::model::ModelConfig::desk(64);
        let mut weights = ModelWeights::init(&cfg, 5).unwrap();
        let mut rng = Rng::new(6);
        weights.cls_w = Tensor::randn(vec![cfg.hidden, 1], 0.5, &mut rng);
        let a = score_matrix(&weights, &corpus, 1).unwrap();
        let b = score_matrix(&weights, &corpus, 3).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
