//! Chance-constrained DC optimal power flow with inner/outer smoothed
//! approximations of per-feeder probabilistic limits.

// negated comparisons are used deliberately so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cases;
pub mod dcflow;
pub mod model;
pub mod nlp;
pub mod reduce;
pub mod saa;
pub mod scenario;
pub mod smoothing;
pub mod verify;
