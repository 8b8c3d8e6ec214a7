//! Encoder-decoder summarization with sliding-window attention and global
//! attention on prefixed keyword tokens.
//!
//! The crate is organized bottom-up:
//!
//! * [`corpus`]: JSON-lines ingestion, word tokenization and the vocabulary.
//! * [`keywords`]: TF-IDF / random / gibberish / summary keyword selection and
//!   the keyword prefix that marks global-attention positions.
//! * [`pattern`]: attention sparsity patterns, multi-layer reachability and
//!   PGM mask export.
//! * [`model`]: the transformer itself with exact analytic gradients.
//! * [`train`]: Adam, the epoch loop with validation-loss model selection and
//!   the few-shot experiment harness.
//! * [`beam`]: beam-search generation.
//! * [`rouge`]: ROUGE-1/2/L scoring.

pub mod beam;
pub mod corpus;
pub mod error;
pub mod keywords;
pub mod model;
pub mod pattern;
pub mod pipeline;
pub mod rouge;
pub mod seed;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use beam::{generate, GenerationConfig};
pub use corpus::{Document, TokenSeq, Vocabulary};
pub use error::{Error, Result};
pub use keywords::{BackgroundDictionary, KeywordConfig, KeywordSet, KeywordSource};
pub use model::{DecoderOrder, ModelConfig, ModelParams, Seq2Seq};
pub use pattern::{AttentionPattern, PatternKind};
pub use rouge::{RougeScore, RougeTriple};
pub use tensor::Matrix;
pub use train::{FewShotPlan, TrainConfig};
