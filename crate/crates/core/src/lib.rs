//! Simulation toolkit for decentralized stochastic gradient methods with
//! gradient tracking (GT-DSGD) and the plain DSGD baseline.
//!
//! The crate covers the full pipeline of a numerical study: communication
//! graphs and mixing matrices ([`topology`]), local cost functions
//! ([`costs`], [`datasets`]), stochastic gradient oracles ([`noise`]), the
//! recursions themselves ([`algorithms`]), multi-run statistics
//! ([`metrics`]), pathwise inequality checks ([`theorycheck`]) and a
//! config-driven experiment runner ([`harness`]).

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod costs;
pub mod datasets;
pub mod error;
pub mod exec;
pub mod harness;
pub mod metrics;
pub mod noise;
pub mod rng;
pub mod theorycheck;
pub mod topology;

pub use error::{Error, Result};
pub use exec::Execution;
