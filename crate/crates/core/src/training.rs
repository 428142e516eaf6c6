//! BC, ZBC and WZBC trainers sharing one loop.
//!
//! Every batch element draws the same four random quantities regardless of
//! the algorithm: the trajectory `i`, a relabel coin, a candidate partner
//! `j != i` and a timestep. The algorithm only decides how they are used,
//! so runs with equal seeds see identical draw sequences.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{weighted_nll, Adam, ArchConfig, Checkpoint, Codebook, MlpPolicy, Sample};
use crate::rng::RngStream;
use crate::similarity::DissimilarityMatrix;
use crate::types::Dataset;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Bc,
    #[default]
    Zbc,
    Wzbc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Bc, Algorithm::Zbc, Algorithm::Wzbc];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bc => "bc",
            Algorithm::Zbc => "zbc",
            Algorithm::Wzbc => "wzbc",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm {s:?} (expected bc, zbc or wzbc)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub steps: usize,
    pub batch_size: usize,
    /// Bandwidth of the weights `exp(-beta * nu)`. WZBC only.
    pub beta: f64,
    /// Probability of relabeling a sample with another trajectory's style.
    /// WZBC only.
    pub relabel_prob: f64,
    pub lr: f64,
    pub seed: u64,
    /// Loss is logged as the mean over each window of this many steps.
    pub log_every: usize,
    /// Period of the evaluation hook; zero disables it.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Zbc,
            steps: 100_000,
            batch_size: 16,
            beta: 10.0,
            relabel_prob: 0.8,
            lr: 1e-3,
            seed: 0,
            log_every: 100,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.relabel_prob) {
            v.push(format!("relabel_prob must lie in [0, 1], got {}", self.relabel_prob));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            v.push(format!("beta must be finite and non-negative, got {}", self.beta));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            v.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.log_every == 0 {
            v.push("log_every must be at least 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v.join("; ")))
        }
    }
}

/// Draws one batch. `nu` is required for WZBC and ignored otherwise.
pub fn sample_batch(
    ds: &Dataset,
    cfg: &TrainConfig,
    nu: Option<&DissimilarityMatrix>,
    rng: &mut RngStream,
) -> Result<Vec<Sample>> {
    let n = ds.len();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let nu = match (cfg.algorithm, nu) {
        (Algorithm::Wzbc, None) => {
            return Err(Error::InvalidConfig("WZBC needs a dissimilarity matrix".into()))
        }
        (Algorithm::Wzbc, Some(m)) if m.len() != n => return Err(Error::LengthMismatch(m.len(), n)),
        (_, m) => m,
    };
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let i = rng.below(n);
        let coin = rng.uniform();
        let candidate = if n > 1 {
            let r = rng.below(n - 1);
            r + usize::from(r >= i)
        } else {
            i
        };
        let traj = &ds.trajectories[i];
        if traj.actions.is_empty() {
            return Err(Error::InvalidTrajectory {
                id: traj.id,
                reason: "no transitions to sample".into(),
            });
        }
        let t = rng.below(traj.actions.len());
        let (style_index, weight, stop_grad) = match cfg.algorithm {
            Algorithm::Bc => (None, 1.0, false),
            Algorithm::Zbc => (Some(i), 1.0, false),
            Algorithm::Wzbc => {
                let relabel = n > 1 && coin < cfg.relabel_prob;
                let j = if relabel { candidate } else { i };
                let nu = nu.expect("checked above");
                (Some(j), nu.weight(i, j, cfg.beta), relabel)
            }
        };
        batch.push(Sample {
            state: traj.states[t],
            action: traj.actions[t],
            data_index: i,
            style_index,
            weight,
            stop_grad,
        });
    }
    Ok(batch)
}

/// Parameters plus optimizer state for one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub policy: MlpPolicy,
    pub codebook: Codebook,
    algorithm: Algorithm,
    opt_policy: Adam,
    opt_codebook: Adam,
    step: usize,
}

impl Trainer {
    /// Initializes from the `"init"` stream of `cfg.seed`. BC keeps an
    /// all-zero codebook so every style it is evaluated with is the zero
    /// style it was trained on.
    pub fn new(arch: ArchConfig, n_rows: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let root = RngStream::new(cfg.seed, "init");
        let policy = MlpPolicy::init(arch, &mut root.derive("policy"))?;
        let dz = policy.arch().style_dim;
        let codebook = match cfg.algorithm {
            Algorithm::Bc => Codebook::zeros(n_rows, dz),
            _ => Codebook::init(n_rows, dz, &mut root.derive("codebook")),
        };
        Ok(Self {
            opt_policy: Adam::new(policy.params().len(), cfg.lr),
            opt_codebook: Adam::new(codebook.table().len(), cfg.lr),
            policy,
            codebook,
            algorithm: cfg.algorithm,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// One optimizer step on the batch loss; returns the loss before the
    /// update.
    pub fn step(&mut self, batch: &[Sample]) -> Result<f64> {
        self.step += 1;
        let (loss, grads) = match weighted_nll(&self.policy, &self.codebook, batch) {
            Err(Error::Divergence { loss, .. }) => {
                return Err(Error::Divergence {
                    step: self.step,
                    loss,
                })
            }
            other => other?,
        };
        self.opt_policy.step(self.policy.params_mut(), &grads.policy)?;
        if self.algorithm != Algorithm::Bc {
            self.opt_codebook.step(self.codebook.table_mut(), &grads.codebook)?;
        }
        Ok(loss)
    }

    pub fn checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            policy: self.policy.clone(),
            codebook: self.codebook.clone(),
            meta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    /// Last step of the window.
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub arch: ArchConfig,
    pub dataset_size: usize,
    pub loss_curve: Vec<LossPoint>,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().map(|p| p.loss)
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for p in &self.loss_curve {
            out.push_str(&format!("{},{}\n", p.step, p.loss));
        }
        out
    }
}

pub fn checkpoint_meta(cfg: &TrainConfig, ds: &Dataset) -> serde_json::Value {
    serde_json::json!({
        "algorithm": cfg.algorithm,
        "steps": cfg.steps,
        "seed": cfg.seed,
        "beta": cfg.beta,
        "relabel_prob": cfg.relabel_prob,
        "maze": ds.meta.maze_name,
        "dataset_size": ds.len(),
    })
}

pub fn train(
    ds: &Dataset,
    nu: Option<&DissimilarityMatrix>,
    arch: ArchConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    train_with_hook(ds, nu, arch, cfg, &mut |_, _| Ok(()))
}

/// As [`train`], calling `hook(step, trainer)` after every `eval_every`
/// steps.
pub fn train_with_hook(
    ds: &Dataset,
    nu: Option<&DissimilarityMatrix>,
    arch: ArchConfig,
    cfg: &TrainConfig,
    hook: &mut dyn FnMut(usize, &Trainer) -> Result<()>,
) -> Result<(Checkpoint, TrainReport)> {
    ds.validate()?;
    let started = Instant::now();
    let mut trainer = Trainer::new(arch.clone(), ds.len(), cfg)?;
    let root = RngStream::new(cfg.seed, "train");
    let mut curve = Vec::new();
    let mut window = (0.0, 0usize);
    for step in 1..=cfg.steps {
        let mut rng = root.derive(&format!("batch/{step}"));
        let batch = sample_batch(ds, cfg, nu, &mut rng)?;
        let loss = trainer.step(&batch)?;
        window.0 += loss;
        window.1 += 1;
        if step % cfg.log_every == 0 || step == cfg.steps {
            curve.push(LossPoint {
                step,
                loss: window.0 / window.1 as f64,
            });
            window = (0.0, 0);
        }
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            hook(step, &trainer)?;
        }
    }
    let report = TrainReport {
        config: cfg.clone(),
        arch,
        dataset_size: ds.len(),
        loss_curve: curve,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        checkpoint: None,
    };
    Ok((trainer.checkpoint(checkpoint_meta(cfg, ds)), report))
}
