//! Robust design of a buried permanent magnet.
//!
//! The crate contains the whole numerical pipeline and nothing that needs an
//! operating system:
//!
//! * [`geom`]: parametrized pole window, macro-triangulation and the analytic
//!   affine weights of the geometry map,
//! * [`fem`]: the 2D magnetostatic finite element model assembled once on the
//!   reference configuration and re-weighted for every design,
//! * [`sens`]: first and second order parametric sensitivities,
//! * [`rb`]: certified reduced basis models and the partitioned dictionary,
//! * [`uq`]: Gauss-Legendre and Monte Carlo moments, Sobol indices and
//!   linearized moments,
//! * [`opt`]: the six design formulations, SQP with damped BFGS and PSO,
//! * [`bench`]: the magnet-size benchmark, failure-rate audit and the
//!   uncertainty sweep.
//!
//! File formats, timing and threads live in the `pmopt` companion crate.

#![no_std]

extern crate alloc;

pub mod bench;
pub mod error;
pub mod fem;
pub mod geom;
pub mod math;
pub mod mesh;
pub mod model;
pub mod opt;
pub mod rb;
pub mod sens;
pub mod sparse;
pub mod uq;

pub use error::{Error, Result};
pub use geom::ParamVector;
