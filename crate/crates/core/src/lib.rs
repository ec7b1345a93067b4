//! Section-aware summarization of clinical encounter dialogues into chart
//! notes.
//!
//! * [`corpus`]: encounter CSV/JSONL loading, seeded splits, prediction files
//! * [`section`]: header recognition and note segmentation/assembly
//! * [`rouge`]: ROUGE-1/2/L with corpus aggregation
//! * [`tinylsg`]: a small encoder-decoder with block-local/sparse/global
//!   encoder attention, trained by hand-written backprop
//! * [`synthetic`]: seeded toy corpus with section-local vocabulary
//! * [`pipeline`]: single-model, section-wise and two-stage approaches,
//!   evaluation and report rendering

pub mod corpus;
pub mod num;
pub mod pipeline;
pub mod rouge;
pub mod section;
pub mod synthetic;
pub mod tinylsg;

pub use num::{Real, ScoreValue};

/// Double-precision model used by the pipelines.
pub type TinyModel64 = tinylsg::TinyModel<f64>;
pub type TinyModel32 = tinylsg::TinyModel<f32>;
pub type Matrix64 = tinylsg::Matrix<f64>;
pub type RougeScore64 = rouge::RougeScore<f64>;
pub type AggregateScores64 = rouge::AggregateScores<f64>;
/// Exact rational ROUGE scores.
pub type ExactRougeScore = rouge::RougeScore<num_rational::BigRational>;
pub type ExactAggregateScores = rouge::AggregateScores<num_rational::BigRational>;
