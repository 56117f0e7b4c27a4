//! Ordinal grading with an attention-MIL network and model-confidence
//! scoring.
//!
//! The crate trains a small attention-based multiple-instance network on
//! bags of tile features under a cost-sensitive ordinal loss, and compares
//! four confidence estimators on its predictions:
//!
//! * grade-sensitive: the gap between the two largest entries of
//!   `softmax(-risk)`, computed from the single prediction already made;
//! * MC dropout: spread of repeated stochastic forward passes;
//! * deep ensembles: spread across independently trained models;
//! * raw risk: the minimum predicted risk, cohort-normalised.
//!
//! Module map: [`numerics`] kernels, [`losses`], [`model`], [`confidence`],
//! [`eval`] metrics and statistics, [`synthdata`] generator, [`pipeline`]
//! orchestration and [`cli`].

pub mod cli;
pub mod confidence;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod synthdata;

pub use error::{Error, Result};
