//! Replica-method predictions for `y = A·S^{1/2}·x + w` with Markov and
//! hidden-Markov signal priors, together with the oracles used to check them.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod amp;
pub mod error;
pub mod markov_core;
pub mod perron;
pub mod quadrature;
pub mod replica_solver;
pub mod simulator;
pub mod single_symbol;

pub use error::{Error, Result};
