//! The fixed differentiable stack: a residual MLP policy over
//! `(normalized state, style)`, a trainable style codebook, a diagonal
//! Gaussian action head, hand-written reverse mode and Adam.
//!
//! All parameters of the policy live in one flat `Vec<f64>`; see [`Layout`]
//! for the order, which is also the on-disk order.

mod adam;
mod checkpoint;
mod codebook;
mod loss;
mod mlp;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use codebook::Codebook;
pub use loss::{gaussian_log_prob, weighted_nll, weighted_nll_value, Gradients, Sample};
pub use mlp::{Layout, MlpPolicy};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::MazeSpec;

pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 2;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub style_dim: usize,
    pub hidden_dim: usize,
    pub num_hidden: usize,
    /// Hidden layer `k` adds `h[k - residual_every]` when `k` is a positive
    /// multiple of it. Zero disables skips.
    pub residual_every: usize,
    /// States enter the network as `(s - input_offset) * input_scale`.
    pub input_offset: [f64; 2],
    pub input_scale: [f64; 2],
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            style_dim: 10,
            hidden_dim: 128,
            num_hidden: 10,
            residual_every: 2,
            input_offset: [0.0, 0.0],
            input_scale: [1.0, 1.0],
        }
    }
}

impl ArchConfig {
    /// Default architecture with inputs mapped onto `[-1, 1]²` over the
    /// maze's bounding box.
    pub fn for_maze(maze: &MazeSpec) -> Self {
        let (w, h) = (maze.width as f64, maze.height as f64);
        Self {
            input_offset: [w / 2.0, h / 2.0],
            input_scale: [2.0 / w, 2.0 / h],
            ..Self::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        STATE_DIM + self.style_dim
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.num_hidden > 0 && self.hidden_dim == 0 {
            bad.push("hidden_dim must be positive".to_string());
        }
        if self
            .input_scale
            .iter()
            .chain(&self.input_offset)
            .any(|v| !v.is_finite())
        {
            bad.push("input normalization must be finite".to_string());
        }
        if self.input_scale.contains(&0.0) {
            bad.push("input_scale must be non-zero".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad.join("; ")))
        }
    }

    pub(crate) fn is_residual(&self, k: usize) -> bool {
        self.residual_every > 0 && k >= self.residual_every && k % self.residual_every == 0
    }
}
