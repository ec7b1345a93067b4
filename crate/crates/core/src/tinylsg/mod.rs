//! Desk-scale encoder-decoder transformer whose encoder attends through a
//! local + strided-sparse + global mask.

mod checkpoint;
mod gradcheck;
mod mask;
mod matrix;
mod model;
mod train;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_indices, relative_error, GradCheckReport};
pub use mask::{global_mask, local_mask, lsg_mask, sparse_mask, AttentionMask};
pub use matrix::Matrix;
pub use model::{
    attention, attention_probs, cross_entropy_sum, positional_encoding, DecoderLayer, EncoderLayer, FeedForward,
    ForwardTrace, LayerNorm, Linear, ModelConfig, MultiHeadAttention, Params, TinyModel,
};
pub use train::{generate, train, train_ids, LrSchedule, TrainConfig, TrainHistory};
pub use vocab::{build_vocab, build_vocab_with, Vocab, BOS, EOS, GLOBAL, LINE_BREAK, PAD, RESERVED, UNK};

#[derive(Debug, Error)]
pub enum LsgError {
    #[error("cannot build a vocabulary from empty text")]
    EmptyCorpus,
    #[error("sequence of {len} tokens exceeds the limit of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no training pairs")]
    EmptyTrainingSet,
    #[error("loss became non-finite during epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Attention pattern parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LsgConfig {
    /// Tokens per local block.
    pub block_size: usize,
    /// Every `stride`-th non-global key is visible to all queries; 0 disables.
    pub sparsity_stride: usize,
    /// Global tokens prepended to the encoder input.
    pub num_global: usize,
    /// Longest accepted source, excluding global tokens.
    pub max_input_tokens: usize,
    /// How many neighbouring blocks on each side are visible.
    #[serde(default = "default_radius")]
    pub local_radius: usize,
}

fn default_radius() -> usize {
    1
}

impl Default for LsgConfig {
    fn default() -> Self {
        LsgConfig {
            block_size: 16,
            sparsity_stride: 4,
            num_global: 1,
            max_input_tokens: 512,
            local_radius: 1,
        }
    }
}

impl LsgConfig {
    pub fn validate(&self) -> Result<(), LsgError> {
        if self.block_size == 0 {
            return Err(LsgError::InvalidConfig("block_size must be at least 1".into()));
        }
        if self.max_input_tokens < self.block_size {
            return Err(LsgError::InvalidConfig(format!(
                "max_input_tokens {} is smaller than block_size {}",
                self.max_input_tokens, self.block_size
            )));
        }
        Ok(())
    }
}
