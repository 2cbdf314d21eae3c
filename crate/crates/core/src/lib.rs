//! Stationary analysis of Markovian multiserver retrial queues with
//! geometric acceptance, abandonment and feedback.
//!
//! The orbit size is the QBD level and the number of busy servers the
//! phase. [`qbd`] computes the stationary distribution by matrix continued
//! fractions; [`genfun`], [`reduction`] and [`closed_form`] provide the
//! generating-function differential systems and exact solutions used to
//! cross-check it; [`tail`] relates the dominant singularity to the
//! empirical decay; [`sim`] is an independent Monte Carlo oracle.

// Negated comparisons reject NaN inputs on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod error;
pub mod genfun;
pub mod linalg;
pub mod model;
pub mod qbd;
pub mod reduction;
pub mod sim;
pub mod tail;

pub use error::{Error, Result};
pub use model::{DerivedRates, ErgodicityVerdict, ModelParams, QbdBlocks, Verdict};
pub use qbd::{solve, solve_model, SolverOptions, StationaryDistribution};
