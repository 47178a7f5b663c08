//! Probabilistic spectral simulation of periodic 1+1-dimensional PDEs.
//!
//! Each Fourier mode of the field and of its spatial derivatives follows an
//! integrated Wiener process in time with a homogeneous spatial prior given
//! by a log-log power spectrum. A simulation step is a nonlinear Bayesian
//! filtering problem solved by MAP optimisation, optionally jointly with the
//! spectrum.

pub mod baselines;
pub mod error;
pub mod grid;
pub mod filter;
pub mod linalg;
pub mod optim;
pub mod pde;
pub mod prior;
pub mod rng;
pub mod spectrum;

pub use error::{Error, Result};
