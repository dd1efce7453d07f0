//! Stochastic gradient methods with adaptive step sizes and adaptive batch
//! sizes, plus the tooling to run and compare them.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batchtests;
pub mod compare;
pub mod config;
pub mod dataspace;
pub mod experiment;
pub mod inconsistency;
pub mod objectives;
pub mod optimizer;
pub mod sampler;
pub mod stepsize;
