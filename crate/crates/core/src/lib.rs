//! Hierarchical low-rank compression of matrices built from parameterized
//! distributions (binomial, Poisson, chi-squared).
//!
//! The entries of these matrices are, up to smooth row/column factors,
//! `exp(-n D(p || q))` for a Bregman-type divergence `D`. Blocks of the dyadic
//! staircase partition around the diagonal admit separated expansions whose
//! rank grows only polylogarithmically in `1/eps`, which makes an HODLR-style
//! compressed matrix with near-linear storage and matvec cost.

pub mod cli;
pub mod divergence;
pub mod experiments;
mod error;
pub mod families;
pub mod hmatrix;
pub mod partition;
pub mod separated;

pub use error::{Error, Result};
