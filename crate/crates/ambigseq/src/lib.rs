//! Sequence labeling from partially and ambiguously annotated corpora.
//!
//! Training data arrives as CoNLL-style sequences whose spans ("pieces") may
//! carry several candidate label tuples instead of one gold tuple. The
//! toolkit synthesizes such corpora from gold data, trains a linear
//! piecewise max-margin model that disambiguates candidates through
//! per-candidate confidence weights, implements the classic partial-label
//! baselines on the same substrate, decodes full sequences exactly, and
//! scores predictions with token/chunk F1 plus paired significance tests.

pub mod baselines;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evalstats;
pub mod features;
pub mod model;
pub mod optimizer;
pub mod pieces;
pub mod wdpsl;

pub use error::{Error, Result};
