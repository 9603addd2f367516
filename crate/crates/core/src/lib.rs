//! Bayesian flow networks for continuous and categorical data, together with
//! a continual-learning harness that trains one model over a stream of tasks
//! under finetuning, L1/L2 regularisation, buffer rehearsal, or generative
//! replay.

pub mod bfn;
pub mod checkpoint;
pub mod cli;
pub mod continual;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod model;
pub mod schedule;

pub use error::{BfnError, Result};
