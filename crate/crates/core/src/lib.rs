//! Numerical toolkit for partially observed infinite-horizon forward-backward
//! stochastic systems with Poisson jumps.
//!
//! The crate simulates the controlled forward state under either probability
//! measure, solves the backward equation by truncation plus least-squares
//! Monte Carlo regression, builds the observation process and its Girsanov
//! density, runs convex-perturbation variational systems, solves the three
//! adjoint equations, and exposes executable checks of the discounted
//! estimates, the variational inequality, transversality, and the maximum
//! condition. The `harness` module ties everything into reproducible,
//! seed-deterministic experiments.

pub mod adjoint;
pub mod backward;
pub mod control;
pub mod error;
pub mod forward;
pub mod harness;
pub mod measure;
pub mod model;
pub mod noise;
pub mod regress;
pub mod stats;

pub use error::{Error, Result};
pub use model::{DiscountProfile, MarkSpace, ModelSpec, TimeGrid};
pub use noise::NoiseBundle;
