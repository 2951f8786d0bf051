//! Causal DAG discovery from interventional count data.
//!
//! Counts are modelled as Poisson given library size and a latent expression
//! vector that follows a linear Gaussian SCM with possibly confounded noise.
//! Single-gene mean-shift interventions reveal columns of `(I − A)⁻¹`, from
//! which a sparse acyclic `A` is estimated by an ADMM-solved constrained
//! ℓ₁ program.

pub mod dag;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod glm;
pub mod ingest;
pub mod io;
pub mod linalg;
pub mod moments;
pub mod pipeline;
pub mod seed;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::Matrix;
