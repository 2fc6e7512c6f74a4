//! Linear non-Gaussian causal representation learning from data observed
//! across general environments.
//!
//! The pipeline recovers a latent linear SCM `z = A_k z + Ω_k^{1/2} ε`,
//! observed through a fixed linear mixing `x = H† z`, from per-environment
//! sample sets. Recovery proceeds in two steps: linear ICA per environment
//! to estimate the matrices `M_k = B_k H` (with `B_k = Ω_k^{-1/2}(I - A_k)`),
//! then rank-based structure learning that grows an ancestral set, reads
//! parent sets off singular-value drops of orthogonal projections, and
//! extracts unmixing rows by intersecting row spans.
//!
//! The recovered model is only defined up to the effect-domination
//! ambiguity: each latent may be an invertible mixture of itself and its
//! effect-dominating set. The [`metrics`] module scores recoveries against
//! that equivalence class, and [`ambiguity`] constructs observationally
//! indistinguishable alternative models witnessing that the ambiguity is
//! intrinsic.

pub mod ambiguity;
pub mod assignment;
pub mod error;
pub mod graph;
pub mod harness;
pub mod ica;
pub mod linalg;
pub mod metrics;
pub mod recovery;
pub mod rng;
pub mod scm;

pub use error::{Error, Result};
