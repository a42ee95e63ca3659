//! Few-shot spoken word learning from mined word-image pairs.
//!
//! Discrete speech units are segmented and searched by example to find
//! unlabelled utterances containing each support word; images are mined by
//! cosine similarity to the support images; the two rankings are zipped into
//! training pairs for a word-to-image attention model, which is then
//! evaluated on few-shot classification, retrieval and localization.

pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod localizer;
pub mod pairgen;
pub mod pipeline;
pub mod qbe;
pub mod scorer;
pub mod segmenter;
pub mod synth;
pub mod visminer;

pub use error::{Error, Result};
