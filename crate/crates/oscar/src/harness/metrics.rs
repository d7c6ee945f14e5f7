//! BLEU-4 and the training metric log.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// BLEU-4: geometric mean of clipped 1..4-gram precisions with the
/// brevity penalty exp(1 - r/c) when the candidate is shorter than the
/// (closest, ties toward shorter) reference. No smoothing: any zero
/// n-gram precision zeroes the score.
pub fn bleu4<T: Eq + Hash + Clone>(candidate: &[T], references: &[Vec<T>]) -> f64 {
    bleu_n(candidate, references, 4)
}

pub fn bleu_n<T: Eq + Hash + Clone>(candidate: &[T], references: &[Vec<T>], max_n: usize) -> f64 {
    assert!(!candidate.is_empty(), "BLEU of an empty candidate");
    assert!(!references.is_empty(), "BLEU needs at least one reference");

    let c = candidate.len();
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap();
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };

    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand_grams = ngram_counts(candidate, n);
        if cand_grams.is_empty() {
            return 0.0;
        }
        // clip each candidate n-gram by its max count over the references
        let mut matched = 0usize;
        for (gram, &count) in &cand_grams {
            let limit = references
                .iter()
                .map(|r| *ngram_counts(r, n).get(gram).unwrap_or(&0))
                .max()
                .unwrap_or(0);
            matched += count.min(limit);
        }
        let total: usize = cand_grams.values().sum();
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    bp * (log_sum / max_n as f64).exp()
}

fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// One evaluation record of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub loss_mtl: f64,
    pub loss_c: f64,
    pub metric_name: String,
    pub metric_value: f64,
}

/// Per-eval-step records with strictly increasing steps, serialized as
/// `step,loss_mtl,loss_c,metric_name,metric_value` CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn new() -> Self {
        MetricLog { rows: Vec::new() }
    }

    pub fn push(&mut self, row: MetricRow) {
        if let Some(last) = self.rows.last() {
            assert!(
                row.step > last.step
                    || (row.step == last.step && row.metric_name != last.metric_name),
                "metric steps must not go backwards"
            );
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Earliest step whose named metric reaches `threshold`, if any.
    pub fn first_step_reaching(&self, metric: &str, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.metric_name == metric && r.metric_value >= threshold)
            .map(|r| r.step)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss_mtl,loss_c,metric_name,metric_value\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.loss_mtl, r.loss_c, r.metric_name, r.metric_value
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn exact_match_scores_one() {
        let cand = toks("a b c d e");
        let refs = vec![toks("a b c d e")];
        assert!((bleu4(&cand, &refs) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_overlap_scores_zero() {
        let cand = toks("x y z w");
        let refs = vec![toks("a b c d")];
        assert_eq!(bleu4(&cand, &refs), 0.0);
    }

    #[test]
    fn worked_example() {
        // p1 = 4/5, p2 = 3/4, p3 = 2/3, p4 = 1/2, BP = 1
        // -> (0.2)^(1/4), frozen from the hand n-gram count
        let cand = toks("a b c d e");
        let refs = vec![toks("a b c d f")];
        let expect = 0.2f64.powf(0.25);
        assert!((bleu4(&cand, &refs) - expect).abs() < 1e-12);
        assert!((expect - 0.6687403049764220).abs() < 1e-12);
    }

    #[test]
    fn short_candidate_gets_brevity_penalty() {
        let cand = toks("a b c d");
        let refs = vec![toks("a b c d e f g h")];
        // precisions are all 1 but c=4 < r=8: BP = exp(1 - 2)
        let expect = (1.0f64 - 2.0).exp();
        assert!((bleu4(&cand, &refs) - expect).abs() < 1e-12);
    }

    #[test]
    fn candidate_shorter_than_four_tokens_scores_zero() {
        let cand = toks("a b c");
        let refs = vec![toks("a b c")];
        assert_eq!(bleu4(&cand, &refs), 0.0);
    }

    #[test]
    fn clipping_caps_repeated_grams() {
        // "the the the the": p1 = 1/4 against a reference with one "the"
        let cand = toks("the the the the");
        let refs = vec![toks("the cat sat on")];
        assert_eq!(bleu_n(&cand, &refs, 1), 0.25);
    }

    #[test]
    fn metric_log_round_trip_and_threshold() {
        let mut log = MetricLog::new();
        log.push(MetricRow {
            step: 100,
            loss_mtl: 4.0,
            loss_c: 0.69,
            metric_name: "r_at_1".into(),
            metric_value: 0.4,
        });
        log.push(MetricRow {
            step: 200,
            loss_mtl: 3.0,
            loss_c: 0.5,
            metric_name: "r_at_1".into(),
            metric_value: 0.85,
        });
        assert_eq!(log.first_step_reaching("r_at_1", 0.8), Some(200));
        assert_eq!(log.first_step_reaching("r_at_1", 0.99), None);
        let csv = log.to_csv();
        assert!(csv.starts_with("step,loss_mtl,loss_c,metric_name,metric_value\n"));
        assert!(csv.contains("200,3,0.5,r_at_1,0.85"));
    }
}
