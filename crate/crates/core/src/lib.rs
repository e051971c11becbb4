//! Free-support Wasserstein barycenters of discrete distributions.
//!
//! The main solver is an inexact proximal alternating minimization (PAM)
//! loop whose convex block is a strongly convex QP solved by a semi-proximal
//! ADMM ([`spadmm`]). A three-block Bregman ADMM ([`badmm`]) is provided as a
//! baseline, an exact network-simplex transport solver ([`transport`]) scores
//! both, and [`cluster`] wraps the barycenter solver into D2-clustering.
//!
//! ```no_run
//! use wbary::datagen::{generate, Family, GenSpec, NtSpec};
//! use wbary::model::BarycenterProblem;
//! use wbary::pam::{solve_barycenter, PamConfig};
//!
//! let data = generate(&GenSpec {
//!     family: Family::MvnT,
//!     n: 20,
//!     d: 2,
//!     nt: NtSpec::Fixed(10),
//!     seed: 7,
//! })
//! .unwrap();
//! let problem = BarycenterProblem::new(data, 5).unwrap();
//! let solution = solve_barycenter(&problem, &PamConfig::default()).unwrap();
//! println!("objval = {}", solution.report.objval);
//! ```

pub mod badmm;
pub mod cli;
pub mod cluster;
pub mod datagen;
mod error;
pub mod model;
mod numeric;
pub mod pam;
pub mod projections;
pub mod spadmm;
pub mod transport;

pub use error::{Error, Result};
