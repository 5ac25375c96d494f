//! Kohn-Sham ground states by an energy-stable, orthonormality-preserving
//! gradient flow, discretized with P1 finite elements on graded box meshes.

// `!(x > 0.0)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Element blocks are filled by local vertex index.
#![allow(clippy::needless_range_loop)]

pub mod assembly;
pub mod cli;
pub mod config;
pub mod error;
pub mod flow;
pub mod hamiltonian;
pub mod hartree;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod output;
pub mod sparse;

pub use error::{Error, Result};
