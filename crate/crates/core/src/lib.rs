//! Parameter estimation for partially observed hypoelliptic diffusions.
//!
//! The models handled here have a smooth coordinate `V` driven only through
//! its drift and `p` rough coordinates `U` carrying diagonal Brownian noise:
//!
//! ```text
//! dV = a(V, U; psi) dt
//! dU = A(V, U; phi) dt + Gamma(V, U; sigma) dB
//! ```
//!
//! A strong order 1.5 Taylor discretization propagates the noise into `V`
//! and yields a non-degenerate Gaussian pseudo-transition. On top of it the
//! crate provides split contrast estimators for complete observations, a
//! particle filter for the hidden coordinates and an SAEM loop for the
//! partially observed case, together with the harmonic oscillator,
//! FitzHugh-Nagumo and synaptic conductance models.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the
//! replication harness and the command line live in the `hypodiff` crate.

#![no_std]
#![forbid(unsafe_code)]
// Float methods come from `num_traits::Float` under no_std and from std in tests.
#![cfg_attr(test, allow(unused_imports))]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod estimators;
pub mod init;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod optim;
pub mod rng;
pub mod saem;
pub mod simulate;
pub mod smc;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    check_hypoellipticity, eval_diffusion_diag, eval_drift, Fhn, Ho, Model, ModelSpec, ParamLayout,
    ParamSet, Sie, StateVector, Trajectory,
};
