use std::f64::consts::PI;

use super::{Codebook, MlpPolicy, ACTION_DIM, LOG_STD_MAX, LOG_STD_MIN, STATE_DIM};
use crate::error::{Error, Result};
use crate::types::{Action, State};

/// One weighted transition of a training batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub state: State,
    pub action: Action,
    /// Trajectory the transition was drawn from.
    pub data_index: usize,
    /// Codebook row fed to the policy; `None` feeds the zero style.
    pub style_index: Option<usize>,
    pub weight: f64,
    /// The style row is treated as a constant.
    pub stop_grad: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub policy: Vec<f64>,
    pub codebook: Vec<f64>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.policy.iter().chain(&self.codebook).all(|g| g.is_finite())
    }
}

/// Diagonal Gaussian log density.
pub fn gaussian_log_prob(a: [f64; 2], mean: [f64; 2], log_std: [f64; 2]) -> f64 {
    (0..ACTION_DIM)
        .map(|d| {
            let r = (a[d] - mean[d]) * (-log_std[d]).exp();
            -0.5 * r * r - log_std[d] - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

fn batch_input(policy: &MlpPolicy, codebook: &Codebook, batch: &[Sample]) -> Result<Vec<f64>> {
    let dz = policy.arch().style_dim;
    if codebook.dim() != dz {
        return Err(Error::DimensionMismatch {
            expected: dz,
            got: codebook.dim(),
        });
    }
    let zero = vec![0.0; dz];
    let d = policy.arch().input_dim();
    let mut x = vec![0.0; batch.len() * d];
    for (k, s) in batch.iter().enumerate() {
        let z = match s.style_index {
            Some(j) if j >= codebook.rows() => {
                return Err(Error::DimensionMismatch {
                    expected: codebook.rows(),
                    got: j,
                })
            }
            Some(j) => codebook.row(j),
            None => &zero,
        };
        policy.write_input(s.state, z, &mut x[k * d..(k + 1) * d]);
    }
    Ok(x)
}

/// `-(1/B) Σ_b w_b log π(a_b | s_b, z_b)` without gradients.
pub fn weighted_nll_value(policy: &MlpPolicy, codebook: &Codebook, batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptySample);
    }
    let x = batch_input(policy, codebook, batch)?;
    let tape = policy.forward_tape(x, batch.len());
    let log_std = policy.log_std();
    let total: f64 = batch
        .iter()
        .zip(tape.mean.chunks_exact(ACTION_DIM))
        .map(|(s, m)| s.weight * gaussian_log_prob([s.action.dx, s.action.dy], [m[0], m[1]], log_std))
        .sum();
    Ok(-total / batch.len() as f64)
}

/// The weighted negative log-likelihood and its exact gradients.
///
/// Codebook rows only receive gradient from samples without `stop_grad`.
/// The clamped log-std has zero gradient while its raw value sits outside
/// the clamp range.
pub fn weighted_nll(
    policy: &MlpPolicy,
    codebook: &Codebook,
    batch: &[Sample],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let x = batch_input(policy, codebook, batch)?;
    let tape = policy.forward_tape(x, n);
    let log_std = policy.log_std();
    let inv_var = log_std.map(|l| (-2.0 * l).exp());

    let mut total = 0.0;
    let mut d_mean = vec![0.0; n * ACTION_DIM];
    let mut d_log_std = [0.0; 2];
    for (b, s) in batch.iter().enumerate() {
        let m = &tape.mean[b * ACTION_DIM..(b + 1) * ACTION_DIM];
        let a = [s.action.dx, s.action.dy];
        total += s.weight * gaussian_log_prob(a, [m[0], m[1]], log_std);
        for d in 0..ACTION_DIM {
            let r = a[d] - m[d];
            d_mean[b * ACTION_DIM + d] = -s.weight * inv_n * r * inv_var[d];
            d_log_std[d] -= s.weight * inv_n * (r * r * inv_var[d] - 1.0);
        }
    }
    let loss = -total / n as f64;
    if !loss.is_finite() {
        return Err(Error::Divergence { step: 0, loss });
    }

    let mut g_policy = vec![0.0; policy.params().len()];
    let want_input = batch.iter().any(|s| s.style_index.is_some() && !s.stop_grad);
    let d_input = policy.backward(&tape, &d_mean, &mut g_policy, want_input);
    let raw = policy.raw_log_std();
    let o = policy.layout().log_std;
    for d in 0..ACTION_DIM {
        if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw[d]) {
            g_policy[o + d] = d_log_std[d];
        }
    }

    let mut g_codebook = vec![0.0; codebook.table().len()];
    if let Some(dx) = d_input {
        let d = policy.arch().input_dim();
        let dz = codebook.dim();
        for (b, s) in batch.iter().enumerate() {
            let (Some(j), false) = (s.style_index, s.stop_grad) else {
                continue;
            };
            debug_assert_eq!(j, s.data_index, "live style rows must belong to their own trajectory");
            let src = &dx[b * d + STATE_DIM..(b + 1) * d];
            for (g, v) in g_codebook[j * dz..(j + 1) * dz].iter_mut().zip(src) {
                *g += v;
            }
        }
    }
    let grads = Gradients {
        policy: g_policy,
        codebook: g_codebook,
    };
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient("weighted nll"));
    }
    Ok((loss, grads))
}
