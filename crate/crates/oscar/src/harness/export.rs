//! Last-layer feature export for external alignment analysis.
//!
//! One CSV row per sequence position: sample id, position kind
//! (word/tag/region), a human-readable label (the token, or the region's
//! ground-truth class name), then the H feature values.

use std::io::Write;
use std::path::Path;

use crate::corpus::{CorpusItem, SyntheticWorld, Vocabulary};
use crate::error::Result;
use crate::model::encoder::hidden_states;
use crate::model::mask::{build_mask, MaskKind};
use crate::model::ModelWeights;

#[derive(Clone, Debug)]
pub struct FeatureRow {
    pub sample: usize,
    pub kind: &'static str,
    pub label: String,
    pub values: Vec<f64>,
}

/// Encode every item under the full mask and collect one feature row per
/// position from the final hidden states.
pub fn export_features(
    weights: &ModelWeights,
    items: &[CorpusItem],
    world: &SyntheticWorld,
    vocab: &Vocabulary,
) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for (sample, item) in items.iter().enumerate() {
        let triple = &item.triple;
        let layout = triple.layout();
        let mask = build_mask(MaskKind::Full, &layout);
        let hidden = hidden_states(weights, triple, &mask)?;
        for p in 0..layout.seq_len() {
            let (kind, label) = if layout.words.contains(&p) {
                ("word", vocab.token(triple.word_ids[p])?.to_string())
            } else if layout.tags.contains(&p) {
                ("tag", vocab.token(triple.tag_ids[p - layout.tags.start])?.to_string())
            } else {
                let region = &item.image.regions[p - layout.regions.start];
                ("region", world.class_names[region.gt_class].clone())
            };
            rows.push(FeatureRow {
                sample,
                kind,
                label,
                values: hidden.row(p).to_vec(),
            });
        }
    }
    Ok(rows)
}

pub fn features_to_csv(rows: &[FeatureRow]) -> String {
    let h = rows.first().map_or(0, |r| r.values.len());
    let mut out = String::from("sample,kind,label");
    for i in 0..h {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}", r.sample, r.kind, r.label));
        for v in &r.values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn save_features(rows: &[FeatureRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(features_to_csv(rows).as_bytes())?;
    Ok(())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine similarity between region features and tag-token features
/// of the same class within the same sample: the cross-modal alignment
/// statistic. Returns None when no (region, same-class tag) pair exists.
pub fn region_tag_alignment(rows: &[FeatureRow]) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let samples = rows.iter().map(|r| r.sample).max().map_or(0, |m| m + 1);
    for s in 0..samples {
        let in_sample: Vec<&FeatureRow> = rows.iter().filter(|r| r.sample == s).collect();
        for region in in_sample.iter().filter(|r| r.kind == "region") {
            for tag in in_sample
                .iter()
                .filter(|r| r.kind == "tag" && r.label == region.label)
            {
                total += cosine(&region.values, &tag.values);
                count += 1;
            }
        }
    }
    if count == 0 {
        None
    } else {
        Some(total / count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_world, sample_corpus, CorpusConfig, WorldConfig};
    use crate::model::{ModelConfig, ModelWeights};

    #[test]
    fn row_count_matches_layout() {
        let world = build_world(WorldConfig::default(), 1).unwrap();
        let vocab = world.vocabulary();
        let corpus = sample_corpus(
            &world,
            &CorpusConfig {
                size: 3,
                ..CorpusConfig::default()
            },
            4,
        )
        .unwrap();
        let weights = ModelWeights::init(&ModelConfig::desk(vocab.len()), 2).unwrap();
        let rows = export_features(&weights, &corpus.items, &world, &vocab).unwrap();
        let expected: usize = corpus.items.iter().map(|i| i.triple.seq_len()).collect::<Vec<_>>().iter().sum();
        assert_eq!(rows.len(), expected);
        let item0 = &corpus.items[0];
        let region_rows = rows
            .iter()
            .filter(|r| r.sample == 0 && r.kind == "region")
            .count();
        assert_eq!(region_rows, item0.image.regions.len());
        let discrete_rows = rows
            .iter()
            .filter(|r| r.sample == 0 && r.kind != "region")
            .count();
        assert_eq!(discrete_rows, item0.triple.word_ids.len() + item0.triple.tag_ids.len());
    }

    #[test]
    fn export_is_deterministic() {
        let world = build_world(WorldConfig::default(), 1).unwrap();
        let vocab = world.vocabulary();
        let corpus = sample_corpus(
            &world,
            &CorpusConfig {
                size: 2,
                ..CorpusConfig::default()
            },
            4,
        )
        .unwrap();
        let weights = ModelWeights::init(&ModelConfig::desk(vocab.len()), 2).unwrap();
        let a = export_features(&weights, &corpus.items, &world, &vocab).unwrap();
        let b = export_features(&weights, &corpus.items, &world, &vocab).unwrap();
        assert_eq!(features_to_csv(&a), features_to_csv(&b));
    }

    #[test]
    fn alignment_statistic_counts_same_class_pairs_only() {
        let mk = |sample, kind: &'static str, label: &str, v: Vec<f64>| FeatureRow {
            sample,
            kind,
            label: label.to_string(),
            values: v,
        };
        let rows = vec![
            mk(0, "region", "cat", vec![1.0, 0.0]),
            mk(0, "tag", "cat", vec![1.0, 0.0]),
            mk(0, "tag", "dog", vec![-1.0, 0.0]),
            mk(1, "region", "dog", vec![0.0, 1.0]),
            // no dog tag in sample 1: contributes nothing
        ];
        let a = region_tag_alignment(&rows).unwrap();
        assert!((a - 1.0).abs() < 1e-12);
        assert!(region_tag_alignment(&rows[3..]).is_none());
    }
}
