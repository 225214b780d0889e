//! Optimal long-term growth of robust power utility in a one-factor market
//! whose drifts are only known up to a box of affine perturbations.
//!
//! The crate is `no_std` (with `alloc`) unless the default `std` feature is
//! enabled; `std` only adds parallel path simulation.
//!
//! Modules:
//! - [`model`]: reference model, ambiguity box and the scalar functions of
//!   the primal and dual control problems.
//! - [`closed_form`]: explicit solutions for the Black–Scholes and geometric
//!   Ornstein–Uhlenbeck markets, including finite-horizon formulas.
//! - [`ebe`]: numerical solver for the ergodic Bellman equation on a grid.
//! - [`sim`]: seeded Euler–Maruyama Monte Carlo for wealth and factor.
//! - [`outperformance`]: Legendre duality for the outperformance criterion.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod closed_form;
pub mod ebe;
mod error;
pub mod model;
pub mod outperformance;
pub mod sim;
mod solution;

pub use error::{Error, Result};
pub use solution::EbeSolution;
