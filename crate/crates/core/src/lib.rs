//! # relclass
//!
//! Classification of semantic relations between entity pairs in scientific
//! abstracts into six classes (COMPARE, MODEL-FEATURE, PART_WHOLE, RESULT,
//! TOPIC, USAGE).
//!
//! Two classifiers are provided:
//!
//! - [`svm`]: an RBF-kernel SVM over boolean lexical features plus
//!   MinMax-scaled embedding averages, trained one-vs-one with SMO and
//!   predicting through sigmoid-calibrated pairwise coupling.
//! - [`clstm`]: a convolutional LSTM over the sequence
//!   `[start entity, context words…, end entity]` of frozen embeddings,
//!   trained with cross-entropy and Adam.
//!
//! [`search`] runs random hyperparameter search for the C-LSTM and [`eval`]
//! provides micro/macro F1 and stratified k-fold cross-validation.

#![allow(clippy::needless_range_loop)]

pub mod clstm;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod features;
pub mod modelio;
pub mod search;
pub mod svm;

pub use corpus::{ClassDistribution, Relation, RelationInstance};
pub use embeddings::EmbeddingTable;
pub use error::{Error, Result};
