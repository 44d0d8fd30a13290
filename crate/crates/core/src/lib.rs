//! Capacities and Brascamp–Lieb constants of weighted bipartite quiver data.
//!
//! A [`QuiverDatum`] is a bipartite quiver (sources `0..k`, sinks `0..m`)
//! together with a dimension vector, positive real sink weights `p`, and one
//! real matrix `V_a` of shape `n_{head} x d_{tail}` per arrow. Its capacity
//! is the infimum over positive definite sink matrices `Y_j` of
//!
//! ```text
//!   prod_i det( sum_j p_j sum_{a: i -> j} V_a^T Y_j V_a ) / prod_j det(Y_j)^{p_j}
//! ```
//!
//! and its Brascamp–Lieb constant is `1 / sqrt(capacity)`.
//!
//! The crate is organised as:
//!
//! - [`quiver`]: data model, group action, the rank-one sink splitting, and
//!   random instance generation.
//! - [`spd`]: symmetric eigendecomposition and the positive definite kernel
//!   (square roots, log-determinants, matrix exponential).
//! - [`objective`]: the capacity objective, geometric and fixed-point
//!   residuals, the determinant capacity formula, and the AM–GM certificate.
//! - [`scaling`]: the alternating scaling solver and capacity read-out.
//! - [`oracle`]: an independent gradient-descent and grid minimiser of the
//!   objective, used to cross-check the solver.
//! - [`stability`]: coordinate subrepresentation certificates, feasibility
//!   classification, block-triangular filtrations and degenerations.
//! - [`io`]: JSON file formats for data, PD tuples and filtrations.

pub mod error;
pub mod io;
pub mod json;
pub mod objective;
pub mod oracle;
pub mod quiver;
pub mod scaling;
pub mod spd;
pub mod stability;

pub use error::{Error, Result};
pub use objective::{Capacity, NumericConfig};
pub use quiver::{Arrow, BipartiteQuiver, DimVector, GroupElement, QuiverDatum, Weights};
pub use scaling::{ScalingConfig, ScalingResult, ScalingStatus};
pub use spd::PdTuple;
