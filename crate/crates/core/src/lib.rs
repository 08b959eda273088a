//! Subword segmental language modelling: a character LSTM whose marginal
//! likelihood sums over every segmentation of the text into subwords, plus
//! the baselines and metrics used to evaluate it.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod lm;
pub mod nn;
pub mod segmentation;
pub mod segmenters;
pub mod sslm;
pub mod synthetic;
pub mod train;

pub use config::{ModelKind, RunConfig, SegCap};
pub use corpus::{BatchMode, CharSequence, CharVocab, Corpus, Span};
pub use error::{Error, Result};
pub use lexicon::Lexicon;
pub use lm::{LanguageModel, LmConfig, TokenKind, Tokenizer};
pub use segmentation::Segmentation;
pub use sslm::{SegLattice, Sslm, SslmConfig};
pub use train::{Schedule, StopReason, TrainOptions, TrainReport};
