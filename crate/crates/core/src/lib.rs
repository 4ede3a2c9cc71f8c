//! Numerical laboratory for the spectral dynamics of `X_t = A + H_t`, where
//! `A` is a deterministic symmetric (or Hermitian) matrix and `H_t` is a
//! Hermitian Brownian motion.
//!
//! The crate is organised around three complementary descriptions of the same
//! process, plus the machinery needed to compare them:
//!
//! * [`matrix_mc`]: direct Monte Carlo at finite `N`. Sample matrix paths,
//!   diagonalise at checkpoints, and measure squared eigenvector overlaps.
//! * [`dyson_sde`]: the eigenvalue process as an interacting particle system
//!   (Dyson Brownian motion), the deterministic overlap transport ODE driven
//!   by a frozen eigenvalue path, and the mesoscopic crossover system on a
//!   lattice of rescaled eigenvalues.
//! * [`stieltjes`]: the `N -> infinity` hydrodynamic description. The
//!   Stieltjes transform `G(z, t)` solves an inviscid Burgers equation whose
//!   characteristics give the evolved density, the transport velocity field
//!   and the limiting mean squared overlap kernel.
//!
//! [`spectral_model`] describes initial spectra (bulk density plus isolated
//! spikes) and their finite-`N` discretisation. [`stationary_kernel`] carries
//! the closed-form overlap kernel of the stationary Ornstein-Uhlenbeck
//! variant of the process, expanded on Chebyshev polynomials. [`spike_lab`]
//! tracks isolated outlier eigenvalues: trajectory, overlap decay, transverse
//! overlap profile and Gaussian fluctuation moments.

pub mod dyson_sde;
pub mod error;
pub mod matrix_mc;
pub mod numerics;
pub mod rng;
pub mod spectral_model;
pub mod spike_lab;
pub mod stationary_kernel;
pub mod stieltjes;

pub use error::{Error, Result};
