use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Cell, MazeSpec};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Action, State, Trajectory};

/// Displacement per unit action, in cells.
pub const DEFAULT_STEP_SIZE: f64 = 0.25;
/// Clearance kept between the agent and any wall it is pushed against.
pub const CONTACT_EPS: f64 = 1e-4;

/// Initial state distribution `p0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitMode {
    /// Center of the default start cell.
    Fixed,
    /// Uniform in a disc around the default start, rejected into free space.
    PseudoRandom { radius: f64 },
    /// Uniform over all free cells.
    FullyRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub init_mode: InitMode,
    pub transition_noise_sigma: f64,
    pub sticky_walls: bool,
    pub stick_steps: usize,
    pub max_steps: usize,
    pub checkpoint_radius: f64,
    pub goal_radius: f64,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            init_mode: InitMode::Fixed,
            transition_noise_sigma: 0.0,
            sticky_walls: false,
            stick_steps: 3,
            max_steps: 300,
            checkpoint_radius: 0.5,
            goal_radius: 0.5,
            step_size: DEFAULT_STEP_SIZE,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub const PRESETS: [&'static str; 5] = [
        "deterministic",
        "pseudo-r-init",
        "r-init",
        "noise-transi",
        "sticky",
    ];

    pub fn deterministic() -> Self {
        Self::default()
    }

    pub fn pseudo_random_init() -> Self {
        Self {
            init_mode: InitMode::PseudoRandom { radius: 1.0 },
            ..Self::default()
        }
    }

    pub fn random_init() -> Self {
        Self {
            init_mode: InitMode::FullyRandom,
            ..Self::default()
        }
    }

    pub fn noisy_transitions() -> Self {
        Self {
            transition_noise_sigma: 0.05,
            ..Self::default()
        }
    }

    pub fn sticky() -> Self {
        Self {
            sticky_walls: true,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "deterministic" => Some(Self::deterministic()),
            "pseudo-r-init" => Some(Self::pseudo_random_init()),
            "r-init" => Some(Self::random_init()),
            "noise-transi" => Some(Self::noisy_transitions()),
            "sticky" => Some(Self::sticky()),
            _ => None,
        }
    }

    /// All violated constraints, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.max_steps < 1 {
            v.push("max_steps must be >= 1".to_owned());
        }
        if !(self.checkpoint_radius > 0.0) {
            v.push("checkpoint_radius must be > 0".to_owned());
        }
        if !(self.goal_radius > 0.0) {
            v.push("goal_radius must be > 0".to_owned());
        }
        if !(self.step_size > 0.0) {
            v.push("step_size must be > 0".to_owned());
        }
        if !(self.transition_noise_sigma >= 0.0) {
            v.push("transition_noise_sigma must be >= 0".to_owned());
        }
        if let InitMode::PseudoRandom { radius } = self.init_mode {
            if !(radius >= 0.0) {
                v.push("pseudo_random radius must be >= 0".to_owned());
            }
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

    /// No randomness in `p0` or the transition kernel.
    pub fn is_deterministic(&self) -> bool {
        self.transition_noise_sigma == 0.0
            && match self.init_mode {
                InitMode::Fixed => true,
                InitMode::PseudoRandom { radius } => radius == 0.0,
                InitMode::FullyRandom => false,
            }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub position: State,
    pub visited: Vec<u8>,
    pub steps: usize,
    pub done: bool,
    pub stuck_remaining: usize,
    pub reached_goal: bool,
}

/// A maze plus its stochasticity configuration.
#[derive(Clone, Debug)]
pub struct MazeEnv {
    maze: Arc<MazeSpec>,
    cfg: EnvConfig,
}

impl MazeEnv {
    pub fn new(maze: impl Into<Arc<MazeSpec>>, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            maze: maze.into(),
            cfg,
        })
    }

    pub fn maze(&self) -> &MazeSpec {
        &self.maze
    }

    pub fn maze_arc(&self) -> Arc<MazeSpec> {
        Arc::clone(&self.maze)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn reset(&self, rng: &mut RngStream) -> EnvState {
        let start = MazeSpec::center(self.maze.default_start);
        let position = match self.cfg.init_mode {
            InitMode::Fixed => start,
            InitMode::PseudoRandom { radius } => self.sample_disc(start, radius, rng),
            InitMode::FullyRandom => self.sample_free(rng),
        };
        EnvState {
            position,
            visited: Vec::new(),
            steps: 0,
            done: false,
            stuck_remaining: 0,
            reached_goal: false,
        }
    }

    fn sample_disc(&self, center: State, radius: f64, rng: &mut RngStream) -> State {
        for _ in 0..1000 {
            let r = radius * rng.uniform().sqrt();
            let theta = std::f64::consts::TAU * rng.uniform();
            let p = State::new(center.x + r * theta.cos(), center.y + r * theta.sin());
            let (c, row) = self.maze.cell_of(p);
            if !self.maze.is_wall(c, row) {
                return p;
            }
        }
        center
    }

    fn sample_free(&self, rng: &mut RngStream) -> State {
        let free = self.maze.free_cells();
        let (c, r) = free[rng.below(free.len())];
        let span = 1.0 - 2.0 * CONTACT_EPS;
        State::new(
            c as f64 + CONTACT_EPS + span * rng.uniform(),
            r as f64 + CONTACT_EPS + span * rng.uniform(),
        )
    }

    /// Advances `state` by one transition and returns the clamped action that
    /// was applied.
    pub fn step(&self, state: &mut EnvState, action: Action, rng: &mut RngStream) -> Result<Action> {
        if state.done {
            return Err(Error::StepAfterDone);
        }
        if !action.is_finite() {
            return Err(Error::NonFiniteAction([action.dx, action.dy]));
        }
        let applied = action.clamped();
        if state.stuck_remaining > 0 {
            state.stuck_remaining -= 1;
        } else {
            let mut dx = applied.dx * self.cfg.step_size;
            let mut dy = applied.dy * self.cfg.step_size;
            if self.cfg.transition_noise_sigma > 0.0 {
                dx += self.cfg.transition_noise_sigma * rng.normal();
                dy += self.cfg.transition_noise_sigma * rng.normal();
            }
            let (pos, contact) = self.resolve(state.position, dx, dy);
            state.position = pos;
            if contact && self.cfg.sticky_walls {
                state.stuck_remaining = self.cfg.stick_steps;
            }
        }
        state.steps += 1;
        self.mark_checkpoints(state);
        if state.steps >= self.cfg.max_steps {
            state.done = true;
        }
        Ok(applied)
    }

    fn mark_checkpoints(&self, state: &mut EnvState) {
        for (&idx, &cell) in &self.maze.doors {
            if !state.visited.contains(&idx)
                && state.position.dist(&MazeSpec::center(cell)) <= self.cfg.checkpoint_radius
            {
                state.visited.push(idx);
            }
        }
        if state.position.dist(&MazeSpec::center(self.maze.goal)) <= self.cfg.goal_radius {
            state.visited.push(0);
            state.reached_goal = true;
            state.done = true;
        }
    }

    /// Axis-separated move: x first, then y, each clipped at the first wall
    /// boundary it would cross. Returns the new position and whether any
    /// clip happened.
    pub fn resolve(&self, from: State, dx: f64, dy: f64) -> (State, bool) {
        let (x, hit_x) = self.slide(from.x, dx, |col| self.maze.is_wall(col, from.y.floor() as i64));
        let (y, hit_y) = self.slide(from.y, dy, |row| self.maze.is_wall(x.floor() as i64, row));
        (State::new(x, y), hit_x || hit_y)
    }

    fn slide(&self, at: f64, delta: f64, wall: impl Fn(i64) -> bool) -> (f64, bool) {
        let target = at + delta;
        if delta > 0.0 {
            let mut boundary = at.floor() + 1.0;
            while boundary <= target {
                if wall(boundary as i64) {
                    return (boundary - CONTACT_EPS, true);
                }
                boundary += 1.0;
            }
        } else if delta < 0.0 {
            let mut boundary = at.floor();
            while boundary >= target {
                if wall(boundary as i64 - 1) {
                    return (boundary + CONTACT_EPS, true);
                }
                boundary -= 1.0;
            }
        }
        (target, false)
    }

    pub fn start_cell_of(&self, s: State) -> Cell {
        let (c, r) = self.maze.cell_of(s);
        (c.max(0) as usize, r.max(0) as usize)
    }
}

/// A policy `π(a | s, z)` that can be evaluated in batches.
pub trait ConditionedPolicy: Sync {
    fn style_dim(&self) -> usize;

    /// Mean actions for each `(states[k], styles[k])` pair.
    fn mean_actions(&self, states: &[State], styles: &[&[f64]]) -> Result<Vec<Action>>;

    /// Per-axis standard deviation used when actions are sampled.
    fn action_std(&self) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// Adapts a closure into a [`ConditionedPolicy`].
pub struct FnPolicy<F> {
    pub style_dim: usize,
    pub f: F,
}

impl<F> ConditionedPolicy for FnPolicy<F>
where
    F: Fn(State, &[f64]) -> Action + Sync,
{
    fn style_dim(&self) -> usize {
        self.style_dim
    }

    fn mean_actions(&self, states: &[State], styles: &[&[f64]]) -> Result<Vec<Action>> {
        Ok(states
            .iter()
            .zip(styles)
            .map(|(s, z)| (self.f)(*s, z))
            .collect())
    }
}

pub fn rollout(
    env: &MazeEnv,
    policy: &dyn ConditionedPolicy,
    style: &[f64],
    greedy: bool,
    rng: RngStream,
) -> Result<Trajectory> {
    Ok(rollout_batch(env, policy, &[style], greedy, vec![rng])?.remove(0))
}

/// Runs one episode per style in lockstep so the policy sees whole batches.
/// Episode `k` draws everything from `rngs[k]` (the environment) and
/// `rngs[k].derive("policy")` (action sampling), so results do not depend on
/// how episodes are grouped into batches.
pub fn rollout_batch(
    env: &MazeEnv,
    policy: &dyn ConditionedPolicy,
    styles: &[&[f64]],
    greedy: bool,
    mut rngs: Vec<RngStream>,
) -> Result<Vec<Trajectory>> {
    assert_eq!(styles.len(), rngs.len(), "one rng stream per episode");
    for z in styles {
        if z.len() != policy.style_dim() {
            return Err(Error::DimensionMismatch {
                expected: policy.style_dim(),
                got: z.len(),
            });
        }
    }
    let mut policy_rngs: Vec<RngStream> = rngs.iter().map(|r| r.derive("policy")).collect();
    let mut states: Vec<EnvState> = rngs.iter_mut().map(|r| env.reset(r)).collect();
    let mut trajs: Vec<Trajectory> = states
        .iter()
        .map(|s| Trajectory {
            id: 0,
            states: vec![s.position],
            actions: Vec::new(),
            checkpoints: Vec::new(),
            success: false,
        })
        .collect();
    let std = policy.action_std();
    let mut live: Vec<usize> = (0..styles.len()).collect();
    while !live.is_empty() {
        let positions: Vec<State> = live.iter().map(|&k| states[k].position).collect();
        let zs: Vec<&[f64]> = live.iter().map(|&k| styles[k]).collect();
        let means = policy.mean_actions(&positions, &zs)?;
        for (&k, mean) in live.iter().zip(means) {
            let action = if greedy {
                mean
            } else {
                let r = &mut policy_rngs[k];
                Action::new(mean.dx + std[0] * r.normal(), mean.dy + std[1] * r.normal())
            };
            let applied = env.step(&mut states[k], action, &mut rngs[k])?;
            trajs[k].actions.push(applied);
            trajs[k].states.push(states[k].position);
        }
        live.retain(|&k| !states[k].done);
    }
    for (t, s) in trajs.iter_mut().zip(states) {
        t.checkpoints = s.visited;
        t.success = s.reached_goal;
    }
    Ok(trajs)
}
