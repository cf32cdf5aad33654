//! Finite-difference Schrödinger operators with landscape functions, maximal
//! functions, Agmon distances, eigenvalue counting and numerical checks of
//! the associated inequalities.

pub mod agmon;
pub mod counting;
pub mod error;
pub mod grid;
pub mod landscape;
pub mod maximal;
pub mod operators;
pub mod potentials;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Grid, ScalarField};
