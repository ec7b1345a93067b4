use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::LsgError;
use crate::rouge::tokenize;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const GLOBAL: usize = 4;
pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<global>"];

/// Token standing for a line break when line structure is kept.
pub const LINE_BREAK: &str = "\n";

/// Word vocabulary with five reserved ids at `0..5`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Whether [`Vocab::encode`] emits [`LINE_BREAK`] between lines.
    pub keep_line_breaks: bool,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    keep_line_breaks: bool,
}

impl From<VocabFile> for Vocab {
    fn from(f: VocabFile) -> Self {
        Vocab::from_tokens(f.tokens, f.keep_line_breaks)
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        VocabFile {
            tokens: v.tokens,
            keep_line_breaks: v.keep_line_breaks,
        }
    }
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>, keep_line_breaks: bool) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab {
            tokens,
            index,
            keep_line_breaks,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved entries in index order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn words_of(&self, text: &str) -> Vec<String> {
        text_tokens(text, self.keep_line_breaks)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.words_of(text).iter().map(|t| self.id(t)).collect()
    }

    /// Joins tokens with spaces, skipping reserved ids; line-break tokens
    /// become newlines.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        let mut line_start = true;
        for &id in ids {
            if id < RESERVED.len() {
                continue;
            }
            let Some(tok) = self.token(id) else { continue };
            if tok == LINE_BREAK {
                out.push('\n');
                line_start = true;
                continue;
            }
            if !line_start {
                out.push(' ');
            }
            out.push_str(tok);
            line_start = false;
        }
        out
    }
}

fn text_tokens(text: &str, keep_line_breaks: bool) -> Vec<String> {
    if !keep_line_breaks {
        return tokenize(text).into_inner();
    }
    let mut out = Vec::new();
    let lines: Vec<&str> = text.trim_matches('\n').split('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        if i > 0 {
            out.push(LINE_BREAK.to_string());
        }
        out.extend(tokenize(line).into_inner());
    }
    out
}

/// Tokens with frequency `>= min_freq`, ordered by frequency then lexically.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], min_freq: usize) -> Result<Vocab, LsgError> {
    build_vocab_with(texts, min_freq, false)
}

pub fn build_vocab_with<S: AsRef<str>>(
    texts: &[S],
    min_freq: usize,
    keep_line_breaks: bool,
) -> Result<Vocab, LsgError> {
    let min_freq = min_freq.max(1);
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for tok in text_tokens(text.as_ref(), keep_line_breaks) {
            *freq.entry(tok).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(LsgError::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize)> = freq.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect();
    Ok(Vocab::from_tokens(tokens, keep_line_breaks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_freq_one_and_two() {
        let v = build_vocab(&["a a b"], 1).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.words(), ["a", "b"]);
        let v2 = build_vocab(&["a a b"], 2).unwrap();
        assert_eq!(v2.words(), ["a"]);
        assert_eq!(v2.encode("b a"), vec![UNK, 5]);
    }

    #[test]
    fn deterministic_and_empty() {
        let texts = ["z y x y", "x q"];
        assert_eq!(build_vocab(&texts, 1).unwrap(), build_vocab(&texts, 1).unwrap());
        assert_eq!(build_vocab(&texts, 1).unwrap().words(), ["x", "y", "q", "z"]);
        assert!(matches!(build_vocab(&["  ..."], 1), Err(LsgError::EmptyCorpus)));
    }

    #[test]
    fn line_breaks_round_trip() {
        let text = "CHIEF COMPLAINT\ncough\n\nPLAN\nrest well";
        let v = build_vocab_with(&[text], 1, true).unwrap();
        let ids = v.encode(text);
        assert_eq!(v.decode(&ids), "chief complaint\ncough\n\nplan\nrest well");
        let flat = build_vocab(&[text], 1).unwrap();
        assert_eq!(flat.decode(&flat.encode(text)), "chief complaint cough plan rest well");
    }
}
