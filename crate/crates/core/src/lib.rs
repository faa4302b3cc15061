//! Strategy identification from engagement recordings: each recording is
//! turned into a kernel feature expectation and an inverse-RL reward, and
//! the two are compared as descriptors of the underlying strategy.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod fixtures;
pub mod gen;
pub mod kernel;
pub mod kpirl;
pub mod mdp;
pub mod pipeline;
pub mod rl;
pub mod trajectory;
