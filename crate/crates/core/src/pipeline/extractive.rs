//! Sentence-extraction baseline that needs no model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::rouge::tokenize;

/// Splits on line breaks, then after `.`, `?` or `!` followed by whitespace.
/// Sentences are trimmed; empty ones are dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut start = 0;
        let mut chars = line.char_indices().peekable();
        while let Some((_, c)) = chars.next() {
            if matches!(c, '.' | '?' | '!') {
                if let Some(&(j, next)) = chars.peek() {
                    if next.is_whitespace() {
                        out.push(&line[start..j]);
                        start = j;
                    }
                }
            }
        }
        out.push(&line[start..]);
    }
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Per-token weights learned from training targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenWeights {
    /// Fraction of training targets containing each token.
    pub weights: BTreeMap<String, f64>,
    /// Whether [`TokenWeights::fit`] has seen any target.
    pub trained: bool,
}

impl TokenWeights {
    pub fn fit<S: AsRef<str>>(targets: &[S]) -> Self {
        if targets.is_empty() {
            return TokenWeights::default();
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for t in targets {
            let distinct: BTreeSet<String> = tokenize(t.as_ref()).into_inner().into_iter().collect();
            for tok in distinct {
                *df.entry(tok).or_default() += 1;
            }
        }
        let n = targets.len() as f64;
        TokenWeights {
            weights: df.into_iter().map(|(t, c)| (t, c as f64 / n)).collect(),
            trained: true,
        }
    }

    pub fn weight(&self, token: &str) -> f64 {
        if !self.trained {
            return 1.0;
        }
        self.weights.get(token).copied().unwrap_or(0.0)
    }
}

/// Score of each sentence of `text`: the mean, over the sentence's distinct
/// tokens, of `weight(t) * freq(t) / total` where the frequencies are taken
/// over the whole text.
pub fn sentence_scores(text: &str, weights: &TokenWeights) -> Vec<(String, f64)> {
    let all = tokenize(text).into_inner();
    let total = all.len().max(1) as f64;
    let mut centroid: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &all {
        *centroid.entry(t.as_str()).or_default() += 1;
    }
    split_sentences(text)
        .into_iter()
        .map(|s| {
            let distinct: BTreeSet<String> = tokenize(s).into_inner().into_iter().collect();
            let score = if distinct.is_empty() {
                0.0
            } else {
                let sum: f64 = distinct
                    .iter()
                    .map(|t| weights.weight(t) * centroid.get(t.as_str()).copied().unwrap_or(0) as f64 / total)
                    .sum();
                sum / distinct.len() as f64
            };
            (s.to_string(), score)
        })
        .collect()
}

/// The `k` best sentences in source order, joined by newlines. Equal scores
/// favour the earlier sentence; sentences with no weighted overlap at all
/// are never selected.
pub fn extract(text: &str, k: usize, weights: &TokenWeights) -> String {
    let scored = sentence_scores(text, weights);
    let mut order: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].1 > 0.0).collect();
    order.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
        .iter()
        .map(|&i| scored[i].0.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}
