//! Multi-criteria Chinese word segmentation.
//!
//! One character-level Bi-LSTM-CRF tagger is trained jointly on corpora that
//! follow different segmentation standards. Every sentence is wrapped in a
//! pair of criterion tokens (`<pku>` ... `</pku>`), which tell the shared
//! model which standard to follow; no criterion-specific layers exist.
//!
//! Module map:
//!
//! - [`corpus`]: reading, normalization, BMES tags, criterion markers
//! - [`vocab`]: unigram and bigram index tables
//! - [`nn`]: reverse-mode autodiff, LSTM, Adam
//! - [`crf`]: linear-chain CRF scoring, forward algorithm, Viterbi
//! - [`model`]: the full segmenter
//! - [`trainer`]: joint training loop
//! - [`scorer`]: word-level precision/recall/F1
//! - [`container`]: the `MCSEG` model file format

pub mod container;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod scorer;
pub mod synthetic;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
