//! Attribute-aware prediction over multiple domains, and the inverse task:
//! searching for a new domain-attribute vector that maximizes an aggregate
//! gain (mean response or CVaR) over a fixed set of target feature vectors.
//!
//! The pipeline has two steps. The prediction step trains a model
//! `g(x, a)` from per-domain samples and their attribute vectors
//! ([`predict`]). The optimization step inverts it: given a trained model
//! and a target feature set, it maximizes the aggregate gain over the
//! feasible attribute region ([`gain`], [`convex_solve`]). Second-order
//! attribute interactions are handled by a rank-constrained quadratic
//! model and a semidefinite relaxation with randomized hyperplane rounding
//! ([`sdp_qbm`]). The non-negative linear special case is a packing-style
//! problem with an LP-relaxation rounding algorithm ([`nao_pip`]).
//! [`eval_harness`] reproduces the domain-wise evaluation protocol and the
//! synthetic generators; [`bounds`] evaluates the closed-form
//! generalization bounds.

pub mod bounds;
pub mod convex_solve;
pub mod error;
pub mod eval_harness;
pub mod gain;
pub mod linalg;
pub mod nao_pip;
pub mod predict;
pub mod schema;
pub mod sdp_qbm;

pub use error::{Error, Result};
