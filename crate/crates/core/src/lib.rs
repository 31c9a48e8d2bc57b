//! Hamiltonian learning tomography for Gibbs states of local Hamiltonians on
//! 1D qubit chains.
//!
//! The pipeline measures a state in overlapping Pauli bases, builds a
//! constraint matrix from commutator expectation values, keeps its lowest
//! right singular vectors as an ansatz for the Gibbs Hamiltonian, and fits the
//! ansatz weights against the measured outcome statistics.

pub mod ansatz;
pub mod error;
pub mod experiment;
pub mod io;
pub mod learning;
pub mod linalg;
pub mod measurement;
pub mod pauli;
pub mod qst;
pub mod seeding;
pub mod state;

pub use error::{HltError, Result};
