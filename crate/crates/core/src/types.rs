//! Shared domain vocabulary: states, actions, trajectories, datasets and
//! behavior histograms.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A position in the maze, in cell units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct State {
    pub x: f64,
    pub y: f64,
}

impl State {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &State) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for State {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<State> for [f64; 2] {
    fn from(s: State) -> Self {
        [s.x, s.y]
    }
}

/// A displacement command, in units of the simulator's step size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
}

impl Action {
    pub const fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    /// Per-component clamp to `[-1, 1]`.
    pub fn clamped(self) -> Self {
        Self {
            dx: self.dx.clamp(-1.0, 1.0),
            dy: self.dy.clamp(-1.0, 1.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite()
    }
}

impl From<[f64; 2]> for Action {
    fn from([dx, dy]: [f64; 2]) -> Self {
        Self { dx, dy }
    }
}

impl From<Action> for [f64; 2] {
    fn from(a: Action) -> Self {
        [a.dx, a.dy]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    pub checkpoints: Vec<u8>,
    pub success: bool,
}

impl Trajectory {
    /// Number of transitions (actions).
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidTrajectory {
            id: self.id,
            reason: reason.to_owned(),
        };
        if self.states.len() < 2 {
            return Err(bad("fewer than two states"));
        }
        if self.states.len() != self.actions.len() + 1 {
            return Err(bad("states must outnumber actions by one"));
        }
        if self.success != (self.checkpoints.last() == Some(&0)) {
            return Err(bad("checkpoints end with goal iff success"));
        }
        if !self.states.iter().all(State::is_finite) || !self.actions.iter().all(Action::is_finite)
        {
            return Err(bad("non-finite value"));
        }
        Ok(())
    }
}

/// A checkpoint-sequence label such as `"6410"`, or `"FAIL"`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BehaviorId(pub String);

impl BehaviorId {
    pub const FAIL: &'static str = "FAIL";

    pub fn fail() -> Self {
        Self(Self::FAIL.to_owned())
    }

    pub fn is_fail(&self) -> bool {
        self.0 == Self::FAIL
    }

    /// Label for an ordered checkpoint list, with duplicates suppressed.
    /// Indices `>= 10` switch the whole label to `-` delimited form.
    pub fn from_checkpoints(checkpoints: &[u8]) -> Self {
        let mut seen = [false; 256];
        let mut order = Vec::with_capacity(checkpoints.len());
        for &c in checkpoints {
            if !seen[c as usize] {
                seen[c as usize] = true;
                order.push(c);
            }
        }
        if order.last() != Some(&0) {
            return Self::fail();
        }
        let sep = if order.iter().any(|&c| c >= 10) { "-" } else { "" };
        let parts: Vec<String> = order.iter().map(u8::to_string).collect();
        Self(parts.join(sep))
    }
}

impl fmt::Display for BehaviorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for BehaviorId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

pub fn behavior_of(traj: &Trajectory) -> BehaviorId {
    BehaviorId::from_checkpoints(&traj.checkpoints)
}

/// Normalized frequency distribution over behavior labels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BehaviorHistogram {
    pub bins: BTreeMap<BehaviorId, f64>,
}

impl BehaviorHistogram {
    pub fn get(&self, b: &BehaviorId) -> f64 {
        self.bins.get(b).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.bins.values().sum()
    }

    pub fn support(&self) -> impl Iterator<Item = &BehaviorId> {
        self.bins.keys()
    }

    pub fn of_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self> {
        let labels: Vec<BehaviorId> = trajs.into_iter().map(behavior_of).collect();
        histogram(&labels)
    }
}

pub fn histogram(behaviors: &[BehaviorId]) -> Result<BehaviorHistogram> {
    if behaviors.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut counts: BTreeMap<BehaviorId, usize> = BTreeMap::new();
    for b in behaviors {
        *counts.entry(b.clone()).or_default() += 1;
    }
    let n = behaviors.len() as f64;
    Ok(BehaviorHistogram {
        bins: counts
            .into_iter()
            .map(|(b, c)| (b, c as f64 / n))
            .collect(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub maze_name: String,
    pub generator: String,
    #[serde(rename = "ground_truth_K")]
    pub ground_truth_k: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, meta: DatasetMeta) -> Result<Self> {
        let ds = Self { trajectories, meta };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.id != i {
                return Err(Error::InvalidDataset(format!(
                    "trajectory at position {i} has id {}",
                    t.id
                )));
            }
            t.validate()?;
        }
        Ok(())
    }

    pub fn behaviors(&self) -> Vec<BehaviorId> {
        self.trajectories.iter().map(behavior_of).collect()
    }

    pub fn histogram(&self) -> Result<BehaviorHistogram> {
        histogram(&self.behaviors())
    }

    pub fn max_states(&self) -> usize {
        self.trajectories
            .iter()
            .map(|t| t.states.len())
            .max()
            .unwrap_or(0)
    }
}
