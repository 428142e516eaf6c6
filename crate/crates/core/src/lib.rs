//! Trajectory-level diverse imitation learning on 2D mazes.
//!
//! The crate bundles a small continuous maze simulator, scripted stylized
//! experts that synthesize demonstration datasets, and three behavioral
//! cloning trainers:
//!
//! * **BC**: plain maximum-likelihood cloning, `π(a|s)`.
//! * **ZBC**: cloning conditioned on a per-trajectory style vector drawn
//!   from a trainable codebook, `π(a|s, z_i)`.
//! * **WZBC**: similarity-weighted regression, which clones trajectory `i`
//!   under the (frozen) style of trajectory `j`, weighted by
//!   `exp(-β ν(τ_i, τ_j))`.
//!
//! Evaluation compares behavior histograms (checkpoint sequences) of policy
//! rollouts against the training set, and supports property-conditioned
//! generation by restricting the style mixture.

// Range checks are written as `!(x >= lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experts;
pub mod maze;
pub mod neural;
pub mod par;
pub mod rng;
pub mod similarity;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use par::Exec;
pub use rng::RngStream;
pub use types::{
    behavior_of, histogram, Action, BehaviorHistogram, BehaviorId, Dataset, DatasetMeta, State,
    Trajectory,
};
