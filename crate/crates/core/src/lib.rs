//! Ionic transport prediction from static structures, with atomic
//! trajectories used as a modality that exists only at training time.
//!
//! The pipeline has three learned stages:
//!
//! 1. a dual-modal trainer that sees trajectory and structure embeddings,
//! 2. a structure-only predictor whose encoder is initialized by a ridge
//!    regression onto the trainer's hidden representations, then fine-tuned,
//! 3. an optional predictor for a structure-only dataset, initialized from
//!    the trainer's structure encoder and the first predictor's decoder.
//!
//! Real molecular dynamics is replaced by a lattice hopping generator
//! ([`synth`]) whose transport coefficients are known in closed form.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod embed;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod physics;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
