//! Valence-arousal-dominance prediction from categorically labeled text.
//!
//! Labels are placed in VAD space through a word lexicon, sorted along each
//! dimension, and used as sparse target distributions for a small text
//! encoder trained under squared earth mover's distance losses. Expectations
//! of the predicted distributions give continuous VAD scores; products of the
//! three distributions give categorical labels.

pub mod cli;
pub mod data;
pub mod distribution;
pub mod emd;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod labelspace;
pub mod lexicon;
pub mod prediction;

pub use distribution::DistributionTriple;
pub use error::{Error, Result};
pub use labelspace::{AnnotationKind, AnnotationVector, Dim, LabelSpace};
pub use lexicon::{min_max_rescale, VadLexicon, VadPoint};
