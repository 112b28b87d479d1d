//! Certified outer approximations of the minimizer set of a parametric
//! strongly convex program.
//!
//! Projected gradient descent is treated as an uncertain dynamical system
//! whose unknown parameter is part of the state. A tube around a nominal
//! rollout is certified with a system-level-synthesis parameterization of
//! the linearized error dynamics, and the final tube is inflated by the PGD
//! contraction bound so that it provably contains every minimizer.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![deny(unsafe_code)]
// Negated comparisons below are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod convergence;
pub mod error;
pub mod experiments;
pub mod interval;
pub mod linearization;
pub mod oracle;
pub mod problem;
pub mod sls;
pub mod smoothing;
pub mod tube;

pub use convergence::{ContractionCertificate, OuterApprox};
pub use error::{Error, Result};
pub use interval::{Interval, IntervalMatrix};
pub use linearization::{CurvatureBounds, InputBox, JacobianPair};
pub use problem::{ConstraintSet, ParamBox, ParametricQuadratic, ProblemSpec, SteplengthInterval};
pub use sls::{GainSchedule, StackedSystem, SystemResponse};
pub use smoothing::{SmoothingBall, SmoothingParams};
pub use tube::{SynthesisOptions, TubeCertificate};

pub use nalgebra::{DMatrix, DVector};
