//! Discrete-time solver and verification harness for mean-field backward
//! stochastic variational inequalities.
//!
//! The equation couples a backward dynamics on a binary noise tree with
//! convex-barrier constraints entering through Yosida-regularized
//! subdifferential terms and a generator that may depend on the joint law
//! of the solution. The crate provides:
//!
//! - exact proximal calculus for a closed catalog of convex barriers
//!   ([`convex`]),
//! - finitely supported measures with exact Wasserstein-2 distances
//!   ([`measure`]),
//! - the tree driver with exact conditional expectations and martingale
//!   representation ([`noise`]),
//! - generator specifications, truncation, and assumption validators
//!   ([`generator`]),
//! - the penalized backward solver with its measure-flow fixed point and
//!   continuation schedules ([`solver`]),
//! - scripted experiments that verify the quantitative estimates at desk
//!   scale ([`harness`]),
//! - JSON run configuration shared with the command-line front end
//!   ([`config`]).

pub mod catalog;
pub mod config;
pub mod convex;
pub mod error;
pub mod generator;
pub mod harness;
pub mod measure;
pub mod noise;
pub mod solver;
pub mod vecmath;

pub use error::{BsviError, Result};
