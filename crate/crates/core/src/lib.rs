//! SYN-flood detection with an adaptive neuro-fuzzy classifier and flow-rule
//! mitigation on a simulated software-defined network.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anfis;
pub mod detect;
pub mod metrics;
pub mod preprocess;
pub mod simnet;
pub mod traffic;
