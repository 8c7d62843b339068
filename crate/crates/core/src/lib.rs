//! Optimal default-state-modulated dividend barriers for a multi-line
//! insurance group whose subsidiaries face contagious credit default.
//!
//! The group value separates into one-dimensional value functions
//! `f_i(x_i, z)`, one per surviving subsidiary `i` and default state `z`.
//! Each solves a variational inequality whose source term is built from the
//! solutions one default further down the lattice, so the whole system is
//! solved by backward induction from the all-defaulted state ([`recursion`]).
//! Every value function is an exact piecewise exponential-polynomial
//! ([`expfun`]); [`explicit2`], [`verify`] and [`simulate`] cross-check the
//! construction independently.

pub mod cli;
pub mod error;
pub mod explicit2;
pub mod expfun;
pub mod model;
pub mod recursion;
pub mod simulate;
pub mod verify;
pub mod vi_solver;

pub use error::{Error, Result};
