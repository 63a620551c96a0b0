//! Federated distillation for multi-task time-series classification.
//!
//! Every simulated user trains a student/teacher pair of identical 1-D
//! convolutional feature extractors. Students upload their hidden-layer
//! weights each round; the server pairs every user with the user whose
//! weights are closest in squared L2 distance and sends that partner's
//! weights back to be loaded into the teacher. Hidden-layer feature
//! distillation from teacher to student then shares knowledge between users
//! running different classification tasks.

// `!(x > 0.0)` is the validation idiom here because it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataio;
pub mod dbwm;
pub mod error;
pub mod extractor;
pub mod fbst;
pub mod federation;
pub mod metrics;
pub mod nncore;
pub mod strategies;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
