use std::f64::consts::FRAC_1_SQRT_2;

use super::{ArchConfig, ACTION_DIM, LOG_STD_MAX, LOG_STD_MIN, STATE_DIM};
use crate::error::{Error, Result};
use crate::maze::ConditionedPolicy;
use crate::rng::RngStream;
use crate::types::{Action, State};

/// Initial weight variance is `gain / fan_in`. The first layer sees roughly
/// unit-variance inputs; later layers see rectified (and skip-mixed)
/// activations, which a gain of 1.7 keeps near unit pre-activation variance
/// at depth 10.
const FIRST_GAIN: f64 = 1.0;
const HIDDEN_GAIN: f64 = 1.7;
const OUTPUT_GAIN: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_out × fan_in`.
    pub weight: usize,
    pub bias: usize,
}

/// Parameter order: for each linear map from input to output, the weight
/// matrix (row-major, `out × in`) then its bias; the two raw log-std values
/// come last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub linears: Vec<Linear>,
    pub log_std: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(arch: &ArchConfig) -> Self {
        let mut dims = vec![arch.input_dim()];
        dims.extend(std::iter::repeat_n(arch.hidden_dim, arch.num_hidden));
        dims.push(ACTION_DIM);
        let mut off = 0;
        let linears = dims
            .windows(2)
            .map(|w| {
                let l = Linear {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight: off,
                    bias: off + w[0] * w[1],
                };
                off = l.bias + l.fan_out;
                l
            })
            .collect();
        Self {
            linears,
            log_std: off,
            len: off + ACTION_DIM,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpPolicy {
    arch: ArchConfig,
    layout: Layout,
    params: Vec<f64>,
}

/// Activations kept for the backward pass.
pub(crate) struct Tape {
    pub batch: usize,
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

/// `c = a·b + beta·c` for row-major `c` (`m × n`); `a` and `b` are given by
/// explicit strides so transposes cost nothing.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl MlpPolicy {
    pub fn from_params(arch: ArchConfig, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.len {
            return Err(Error::DimensionMismatch {
                expected: layout.len,
                got: params.len(),
            });
        }
        Ok(Self {
            arch,
            layout,
            params,
        })
    }

    pub fn zeros(arch: ArchConfig) -> Result<Self> {
        let n = Layout::new(&arch).len;
        Self::from_params(arch, vec![0.0; n])
    }

    /// Fan-in scaled Gaussian weights, zero biases, zero log-std.
    pub fn init(arch: ArchConfig, rng: &mut RngStream) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let last = p.layout.linears.len() - 1;
        for (l, lin) in p.layout.linears.iter().enumerate() {
            let gain = match l {
                0 => FIRST_GAIN,
                _ if l == last => OUTPUT_GAIN,
                _ => HIDDEN_GAIN,
            };
            let std = (gain / lin.fan_in as f64).sqrt();
            for w in &mut p.params[lin.weight..lin.bias] {
                *w = std * rng.normal();
            }
        }
        Ok(p)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    pub fn raw_log_std(&self) -> [f64; 2] {
        let o = self.layout.log_std;
        [self.params[o], self.params[o + 1]]
    }

    /// Log-std actually used by the density, clamped to its allowed range.
    pub fn log_std(&self) -> [f64; 2] {
        self.raw_log_std().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
    }

    pub(crate) fn write_input(&self, s: State, z: &[f64], row: &mut [f64]) {
        let a = &self.arch;
        row[0] = (s.x - a.input_offset[0]) * a.input_scale[0];
        row[1] = (s.y - a.input_offset[1]) * a.input_scale[1];
        row[STATE_DIM..].copy_from_slice(z);
    }

    fn check_style(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.arch.style_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.style_dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn assemble(&self, states: &[State], styles: &[&[f64]]) -> Result<Vec<f64>> {
        if states.len() != styles.len() {
            return Err(Error::LengthMismatch(states.len(), styles.len()));
        }
        let d = self.arch.input_dim();
        let mut x = vec![0.0; states.len() * d];
        for (k, (s, z)) in states.iter().zip(styles).enumerate() {
            self.check_style(z)?;
            self.write_input(*s, z, &mut x[k * d..(k + 1) * d]);
        }
        Ok(x)
    }

    pub(crate) fn forward_tape(&self, input: Vec<f64>, batch: usize) -> Tape {
        let p = &self.params;
        let n_hidden = self.arch.num_hidden;
        let mut pre = Vec::with_capacity(n_hidden);
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
        let mut mean = Vec::new();
        for (l, lin) in self.layout.linears.iter().enumerate() {
            let x: &[f64] = if l == 0 { &input } else { &hidden[l - 1] };
            let mut a = Vec::with_capacity(batch * lin.fan_out);
            for _ in 0..batch {
                a.extend_from_slice(&p[lin.bias..lin.bias + lin.fan_out]);
            }
            gemm(
                batch,
                lin.fan_in,
                lin.fan_out,
                x,
                (lin.fan_in, 1),
                &p[lin.weight..lin.bias],
                (1, lin.fan_in),
                1.0,
                &mut a,
            );
            if l == n_hidden {
                mean = a;
                break;
            }
            let mut h: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();
            if self.arch.is_residual(l) {
                let skip = &hidden[l - self.arch.residual_every];
                for (hv, sv) in h.iter_mut().zip(skip) {
                    *hv = (*hv + sv) * FRAC_1_SQRT_2;
                }
            }
            pre.push(a);
            hidden.push(h);
        }
        Tape {
            batch,
            input,
            pre,
            hidden,
            mean,
        }
    }

    /// Accumulates parameter gradients (excluding log-std) into `grad` given
    /// `d_mean = ∂L/∂mean`. Returns `∂L/∂input` when `want_input` is set.
    pub(crate) fn backward(
        &self,
        tape: &Tape,
        d_mean: &[f64],
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let p = &self.params;
        let b = tape.batch;
        let n_hidden = self.arch.num_hidden;
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; n_hidden];
        let mut upstream = d_mean.to_vec();
        for l in (0..=n_hidden).rev() {
            let lin = self.layout.linears[l];
            // `upstream` is ∂L/∂(output of linear l) on entry.
            let mut da = upstream;
            if l < n_hidden {
                if let Some(extra) = pending[l].take() {
                    for (d, e) in da.iter_mut().zip(&extra) {
                        *d += e;
                    }
                }
                let scale = if self.arch.is_residual(l) {
                    let s = da.iter().map(|v| v * FRAC_1_SQRT_2).collect::<Vec<_>>();
                    let src = l - self.arch.residual_every;
                    match &mut pending[src] {
                        Some(acc) => acc.iter_mut().zip(&s).for_each(|(a, v)| *a += v),
                        slot => *slot = Some(s),
                    }
                    FRAC_1_SQRT_2
                } else {
                    1.0
                };
                for (d, a) in da.iter_mut().zip(&tape.pre[l]) {
                    *d = if *a > 0.0 { *d * scale } else { 0.0 };
                }
            }
            let x: &[f64] = if l == 0 { &tape.input } else { &tape.hidden[l - 1] };
            // dW (out × in) += daᵀ · x
            gemm(
                lin.fan_out,
                b,
                lin.fan_in,
                &da,
                (1, lin.fan_out),
                x,
                (lin.fan_in, 1),
                1.0,
                &mut grad[lin.weight..lin.bias],
            );
            for row in da.chunks_exact(lin.fan_out) {
                for (g, d) in grad[lin.bias..lin.bias + lin.fan_out].iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            let mut dx = vec![0.0; b * lin.fan_in];
            gemm(
                b,
                lin.fan_out,
                lin.fan_in,
                &da,
                (lin.fan_out, 1),
                &p[lin.weight..lin.bias],
                (lin.fan_in, 1),
                0.0,
                &mut dx,
            );
            upstream = dx;
        }
        Some(upstream)
    }

    /// Mean action and clamped log-std for one input.
    pub fn forward(&self, s: State, z: &[f64]) -> Result<(Action, [f64; 2])> {
        let m = self.mean_batch(&[s], &[z])?;
        Ok((m[0], self.log_std()))
    }

    pub fn mean_batch(&self, states: &[State], styles: &[&[f64]]) -> Result<Vec<Action>> {
        let x = self.assemble(states, styles)?;
        let tape = self.forward_tape(x, states.len());
        Ok(tape
            .mean
            .chunks_exact(ACTION_DIM)
            .map(|m| Action::new(m[0], m[1]))
            .collect())
    }

    pub fn log_prob(&self, s: State, z: &[f64], a: Action) -> Result<f64> {
        let (mean, log_std) = self.forward(s, z)?;
        Ok(super::gaussian_log_prob([a.dx, a.dy], [mean.dx, mean.dy], log_std))
    }
}

impl ConditionedPolicy for MlpPolicy {
    fn style_dim(&self) -> usize {
        self.arch.style_dim
    }

    fn mean_actions(&self, states: &[State], styles: &[&[f64]]) -> Result<Vec<Action>> {
        self.mean_batch(states, styles)
    }

    fn action_std(&self) -> [f64; 2] {
        self.log_std().map(f64::exp)
    }
}
