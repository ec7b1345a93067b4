use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::extractive::{extract, TokenWeights};
use super::PipelineError;
use crate::tinylsg::{
    build_vocab_with, generate, train_ids, Checkpoint, LsgConfig, ModelConfig, TinyModel, TrainConfig, TrainHistory,
};

/// One supervised example. `id` is the encounter id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Example<'a> {
    pub id: &'a str,
    pub input: &'a str,
    pub target: &'a str,
}

/// A frozen text-to-text model. `summarize` must be deterministic.
pub trait Summarizer: Send + Sync {
    fn summarize(&self, id: &str, input: &str) -> Result<String, PipelineError>;

    /// Digest of everything that determines the output.
    fn fingerprint(&self) -> String;
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Returns the stored target for `id`, or the empty string.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleSummarizer {
    pub references: BTreeMap<String, String>,
}

impl Summarizer for OracleSummarizer {
    fn summarize(&self, id: &str, _input: &str) -> Result<String, PipelineError> {
        Ok(self.references.get(id).cloned().unwrap_or_default())
    }

    fn fingerprint(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.references).expect("string map serializes"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdentitySummarizer;

impl Summarizer for IdentitySummarizer {
    fn summarize(&self, _id: &str, input: &str) -> Result<String, PipelineError> {
        Ok(input.to_string())
    }

    fn fingerprint(&self) -> String {
        sha256_hex(b"identity")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractiveSummarizer {
    pub k: usize,
    pub weights: TokenWeights,
}

impl Summarizer for ExtractiveSummarizer {
    fn summarize(&self, _id: &str, input: &str) -> Result<String, PipelineError> {
        Ok(extract(input, self.k, &self.weights))
    }

    fn fingerprint(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("extractive state serializes"))
    }
}

/// Hyperparameters for a [`TinyLsgSummarizer`]. The training seed is
/// replaced by the seed of the model slot being trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyLsgSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub lsg: LsgConfig,
    /// Decoding cap in tokens.
    pub max_len: usize,
    pub min_freq: usize,
}

impl Default for TinyLsgSettings {
    fn default() -> Self {
        TinyLsgSettings {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            lsg: LsgConfig::default(),
            max_len: 128,
            min_freq: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyLsgSummarizer {
    pub model: TinyModel<f64>,
    pub lsg: LsgConfig,
    pub max_len: usize,
}

impl TinyLsgSummarizer {
    /// Builds a vocabulary over inputs and targets (keeping line breaks so
    /// multi-section targets can be reproduced) and trains a fresh model.
    pub fn fit(
        settings: &TinyLsgSettings,
        examples: &[Example<'_>],
        seed: u64,
    ) -> Result<(Self, TrainHistory), PipelineError> {
        Self::fit_with(settings, examples, seed, |_, _| {})
    }

    /// [`TinyLsgSummarizer::fit`] with a callback receiving `(epoch, mean loss)`.
    pub fn fit_with(
        settings: &TinyLsgSettings,
        examples: &[Example<'_>],
        seed: u64,
        on_epoch: impl FnMut(usize, f64),
    ) -> Result<(Self, TrainHistory), PipelineError> {
        let texts: Vec<&str> = examples.iter().flat_map(|e| [e.input, e.target]).collect();
        let vocab = build_vocab_with(&texts, settings.min_freq, true)?;
        let mut model = TinyModel::new(settings.model.clone(), vocab, seed)?;
        let tc = TrainConfig {
            seed,
            ..settings.train.clone()
        };
        let pairs: Vec<(Vec<usize>, Vec<usize>)> = examples
            .iter()
            .map(|e| {
                let mut src = model.vocab.encode(e.input);
                src.truncate(settings.lsg.max_input_tokens);
                (src, model.vocab.encode(e.target))
            })
            .collect();
        let history = train_ids(&mut model, &pairs, &tc, &settings.lsg, on_epoch)?;
        Ok((
            TinyLsgSummarizer {
                model,
                lsg: settings.lsg.clone(),
                max_len: settings.max_len,
            },
            history,
        ))
    }
}

impl Summarizer for TinyLsgSummarizer {
    fn summarize(&self, _id: &str, input: &str) -> Result<String, PipelineError> {
        let mut src = self.model.vocab.encode(input);
        src.truncate(self.lsg.max_input_tokens);
        let out = generate(&self.model, &src, self.max_len, &self.lsg)?;
        Ok(self.model.vocab.decode(&out))
    }

    fn fingerprint(&self) -> String {
        let ck = Checkpoint::from_model(&self.model, &self.lsg).expect("in-memory model converts to a checkpoint");
        let mut bytes = serde_json::to_vec(&ck).expect("checkpoint serializes");
        bytes.extend_from_slice(&(self.max_len as u64).to_le_bytes());
        sha256_hex(&bytes)
    }
}
