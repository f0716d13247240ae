//! Speaker-verification back end.
//!
//! Covers everything downstream of an embedding extractor: cosine trial
//! scoring, adaptive score normalization against an imposter cohort,
//! quality-measure features, fused score calibration and EER / minDCF
//! evaluation. It also ships a small audio front end with augmentation and
//! analytic-gradient implementations of multi-query multi-head attention
//! pooling and the angular-margin losses used to train embedding extractors,
//! together with a toy trainer that exercises them end to end.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibfuse;
pub mod dspfeat;
mod error;
pub mod kernels;
pub mod metrics;
pub mod qmf;
pub mod rng;
pub mod scoring;
pub mod trialdata;

pub use error::{Error, Result};
