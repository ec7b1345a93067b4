//! ROUGE-1, ROUGE-2 and ROUGE-L with a fixed tokenizer and mean-of-documents
//! corpus aggregation.
//!
//! Scores are generic over [`ScoreValue`] so the same code yields `f64`
//! numbers for reports and exact rationals for verification.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::ScoreValue;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RougeError {
    #[error("nothing to evaluate: no candidate/reference pairs")]
    EmptyEvaluation,
    #[error("document id {0:?} appears more than once")]
    DuplicateId(String),
}

/// Lowercased tokens; never contains an empty token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence from already-normalized tokens, dropping empties.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenSeq(
            tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

/// Optional preprocessing. Both are off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizeOptions {
    pub stem: bool,
    pub remove_stopwords: bool,
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have", "he", "her", "his", "i",
    "in", "is", "it", "its", "me", "my", "of", "on", "or", "she", "so", "that", "the", "their", "them", "there",
    "they", "this", "to", "was", "we", "were", "what", "when", "which", "who", "will", "with", "you", "your",
];

fn english_stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Splits on every run of non-alphanumeric characters and lowercases.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(raw_tokens(text).collect())
}

pub fn tokenize_with(text: &str, opts: &TokenizeOptions) -> TokenSeq {
    let mut out = Vec::new();
    for tok in raw_tokens(text) {
        if opts.remove_stopwords && STOPWORDS.binary_search(&tok.as_str()).is_ok() {
            continue;
        }
        if opts.stem {
            out.push(english_stemmer().stem(&tok).into_owned());
        } else {
            out.push(tok);
        }
    }
    TokenSeq(out)
}

fn raw_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
}

/// Precision, recall and balanced F-measure for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeScore<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

impl<T: ScoreValue> RougeScore<T> {
    pub fn zero() -> Self {
        RougeScore {
            precision: T::zero(),
            recall: T::zero(),
            f1: T::zero(),
        }
    }

    /// Score from raw counts. `2pr/(p+r)` reduces to `2·hits/(cand+ref)`,
    /// which keeps the float result correctly rounded.
    pub fn from_counts(hits: u64, candidate_total: u64, reference_total: u64) -> Self {
        if candidate_total == 0 || reference_total == 0 {
            return Self::zero();
        }
        let f1 = if hits == 0 {
            T::zero()
        } else {
            T::from_counts(2 * hits, candidate_total + reference_total)
        };
        RougeScore {
            precision: T::from_counts(hits, candidate_total),
            recall: T::from_counts(hits, reference_total),
            f1,
        }
    }

    fn add(&self, other: &Self) -> Self {
        RougeScore {
            precision: self.precision.add(&other.precision),
            recall: self.recall.add(&other.recall),
            f1: self.f1.add(&other.f1),
        }
    }

    fn div_count(&self, n: u64) -> Self {
        RougeScore {
            precision: self.precision.div_count(n),
            recall: self.recall.div_count(n),
            f1: self.f1.div_count(n),
        }
    }

    pub fn to_f64(&self) -> RougeScore<f64> {
        RougeScore {
            precision: self.precision.to_f64(),
            recall: self.recall.to_f64(),
            f1: self.f1.to_f64(),
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap between two sequences.
pub fn ngram_overlap(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> u64 {
    let cand = ngram_counts(candidate.as_slice(), n);
    let refc = ngram_counts(reference.as_slice(), n);
    cand.iter()
        .map(|(gram, &c)| refc.get(gram).map_or(0, |&r| c.min(r)))
        .sum()
}

fn ngram_total(len: usize, n: usize) -> u64 {
    (len + 1).saturating_sub(n) as u64
}

/// ROUGE-N. Panics if `n == 0`.
pub fn rouge_n<T: ScoreValue>(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> RougeScore<T> {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    let cand_total = ngram_total(candidate.len(), n);
    let ref_total = ngram_total(reference.len(), n);
    if cand_total == 0 || ref_total == 0 {
        return RougeScore::zero();
    }
    RougeScore::from_counts(ngram_overlap(candidate, reference, n), cand_total, ref_total)
}

/// Longest common subsequence length, two-row dynamic program.
pub fn lcs_length(a: &TokenSeq, b: &TokenSeq) -> usize {
    let (a, b) = (a.as_slice(), b.as_slice());
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence-agnostic ROUGE-L over the whole token sequence.
pub fn rouge_l<T: ScoreValue>(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScore<T> {
    let lcs = lcs_length(candidate, reference) as u64;
    RougeScore::from_counts(lcs, candidate.len() as u64, reference.len() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentScores<T> {
    pub rouge1: RougeScore<T>,
    pub rouge2: RougeScore<T>,
    pub rouge_l: RougeScore<T>,
}

impl<T: ScoreValue> DocumentScores<T> {
    pub fn score(candidate: &str, reference: &str, opts: &TokenizeOptions) -> Self {
        let cand = tokenize_with(candidate, opts);
        let refs = tokenize_with(reference, opts);
        DocumentScores {
            rouge1: rouge_n(&cand, &refs, 1),
            rouge2: rouge_n(&cand, &refs, 2),
            rouge_l: rouge_l(&cand, &refs),
        }
    }
}

/// Corpus means plus the per-document breakdown they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores<T> {
    pub rouge1: RougeScore<T>,
    pub rouge2: RougeScore<T>,
    pub rouge_l: RougeScore<T>,
    pub per_document: BTreeMap<String, DocumentScores<T>>,
}

impl<T: ScoreValue> AggregateScores<T> {
    /// Means over `per_document`, summed in id order so the result does not
    /// depend on the order pairs were supplied in.
    pub fn from_documents(per_document: BTreeMap<String, DocumentScores<T>>) -> Result<Self, RougeError> {
        if per_document.is_empty() {
            return Err(RougeError::EmptyEvaluation);
        }
        let n = per_document.len() as u64;
        let (mut r1, mut r2, mut rl) = (RougeScore::zero(), RougeScore::zero(), RougeScore::zero());
        for doc in per_document.values() {
            r1 = r1.add(&doc.rouge1);
            r2 = r2.add(&doc.rouge2);
            rl = rl.add(&doc.rouge_l);
        }
        Ok(AggregateScores {
            rouge1: r1.div_count(n),
            rouge2: r2.div_count(n),
            rouge_l: rl.div_count(n),
            per_document,
        })
    }
}

pub fn corpus_rouge<T, I, S1, S2, S3>(pairs: I) -> Result<AggregateScores<T>, RougeError>
where
    T: ScoreValue,
    I: IntoIterator<Item = (S1, S2, S3)>,
    S1: Into<String>,
    S2: AsRef<str>,
    S3: AsRef<str>,
{
    corpus_rouge_with(pairs, &TokenizeOptions::default())
}

pub fn corpus_rouge_with<T, I, S1, S2, S3>(pairs: I, opts: &TokenizeOptions) -> Result<AggregateScores<T>, RougeError>
where
    T: ScoreValue,
    I: IntoIterator<Item = (S1, S2, S3)>,
    S1: Into<String>,
    S2: AsRef<str>,
    S3: AsRef<str>,
{
    let mut per_document = BTreeMap::new();
    for (id, cand, reference) in pairs {
        let id = id.into();
        let scores = DocumentScores::score(cand.as_ref(), reference.as_ref(), opts);
        if per_document.insert(id.clone(), scores).is_some() {
            return Err(RougeError::DuplicateId(id));
        }
    }
    AggregateScores::from_documents(per_document)
}
