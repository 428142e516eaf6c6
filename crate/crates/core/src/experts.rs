//! Scripted stylized experts and dataset synthesis.
//!
//! An expert follows a route (an ordered list of checkpoints ending at the
//! goal) along breadth-first cell paths, at its own speed and with Gaussian
//! action jitter. Different routes, speeds and jitter levels stand in for
//! the behavior diversity of human demonstrators.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::{shortest_path, EnvConfig, MazeEnv, MazeSpec};
use crate::par::Exec;
use crate::rng::RngStream;
use crate::types::{behavior_of, Action, BehaviorId, Dataset, DatasetMeta, State, Trajectory};

pub const ONE_SIDE: &str = include_str!("../assets/one_side.json");
pub const ONLY_FORWARD: &str = include_str!("../assets/only_forward.json");
pub const ONLY_FORWARD_UNBALANCED: &str = include_str!("../assets/only_forward_unbalanced.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    /// Door indices in visiting order, ending with the goal `0`.
    pub waypoints: Vec<u8>,
    #[serde(default = "one")]
    pub speed_scale: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

fn one() -> f64 {
    1.0
}

impl Route {
    pub fn new(waypoints: &[u8], speed_scale: f64, noise_sigma: f64) -> Self {
        Self {
            waypoints: waypoints.to_vec(),
            speed_scale,
            noise_sigma,
        }
    }

    pub fn label(&self) -> BehaviorId {
        BehaviorId::from_checkpoints(&self.waypoints)
    }

    fn validate(&self, maze: &MazeSpec) -> Result<()> {
        let fail = |reason: &str| Error::RouteFailed {
            label: self.label().0,
            reason: reason.to_owned(),
        };
        if self.waypoints.last() != Some(&0) {
            return Err(fail("waypoints must end at the goal 0"));
        }
        if self.waypoints[..self.waypoints.len() - 1].contains(&0) {
            return Err(fail("goal may only appear last"));
        }
        if let Some(w) = self.waypoints.iter().find(|&&w| maze.checkpoint_cell(w).is_none()) {
            return Err(fail(&format!("maze has no checkpoint {w}")));
        }
        if !(self.speed_scale > 0.0 && self.speed_scale <= 1.0) {
            return Err(fail("speed_scale must be in (0, 1]"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(fail("noise_sigma must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteCount {
    pub route: Route,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecipe {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub maze_name: String,
    pub routes: Vec<RouteCount>,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetRecipe {
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "one_side" => ONE_SIDE,
            "only_forward" => ONLY_FORWARD,
            "only_forward_unbalanced" => ONLY_FORWARD_UNBALANCED,
            _ => return None,
        };
        Some(serde_json::from_str(text).expect("bundled recipe parses"))
    }

    pub fn total(&self) -> usize {
        self.routes.iter().map(|r| r.count).sum()
    }

    pub fn validate(&self, maze: &MazeSpec) -> Result<()> {
        if self.routes.is_empty() {
            return Err(Error::InvalidConfig("recipe has no routes".into()));
        }
        if let Some(rc) = self.routes.iter().find(|rc| rc.count == 0) {
            return Err(Error::InvalidConfig(format!(
                "route {} has count 0",
                rc.route.label()
            )));
        }
        if maze.name != self.maze_name {
            return Err(Error::InvalidConfig(format!(
                "recipe targets maze {:?}, got {:?}",
                self.maze_name, maze.name
            )));
        }
        for rc in &self.routes {
            rc.route.validate(maze)?;
        }
        self.env.validate()
    }
}

/// A route resolved into cell-center waypoints.
#[derive(Clone, Debug)]
pub struct ExpertPlan {
    pub path: Vec<State>,
    pub speed_scale: f64,
    pub noise_sigma: f64,
    pub step_size: f64,
}

impl ExpertPlan {
    /// Plans `route` from the cell containing `from`. Each leg is a shortest
    /// path that avoids every checkpoint cell except its own target.
    pub fn new(maze: &MazeSpec, route: &Route, from: State, step_size: f64) -> Result<Self> {
        route.validate(maze)?;
        let (c, r) = maze.cell_of(from);
        let mut at = (c.max(0) as usize, r.max(0) as usize);
        let checkpoint_cells: BTreeSet<_> = maze
            .doors
            .values()
            .copied()
            .chain(std::iter::once(maze.goal))
            .collect();
        let mut cells = vec![at];
        for &w in &route.waypoints {
            let target = maze.checkpoint_cell(w).expect("validated");
            let leg = shortest_path(maze, at, target, |c| !checkpoint_cells.contains(&c))
                .ok_or_else(|| Error::RouteFailed {
                    label: route.label().0,
                    reason: format!("no path from {at:?} to checkpoint {w}"),
                })?;
            cells.extend_from_slice(&leg[1..]);
            at = target;
        }
        Ok(Self {
            path: cells.into_iter().map(MazeSpec::center).collect(),
            speed_scale: route.speed_scale,
            noise_sigma: route.noise_sigma,
            step_size,
        })
    }

    /// Next action from `pos`. `cursor` indexes the current target waypoint
    /// and only ever moves forward.
    pub fn action(&self, pos: State, cursor: &mut usize, rng: &mut RngStream) -> Action {
        let reach = self.speed_scale * self.step_size;
        let last = self.path.len() - 1;
        while *cursor < last && pos.dist(&self.path[*cursor]) <= reach {
            *cursor += 1;
        }
        let target = self.path[*cursor];
        let (dx, dy) = (target.x - pos.x, target.y - pos.y);
        let dist = dx.hypot(dy);
        let mut mag = self.speed_scale;
        if *cursor == last {
            mag *= (dist / self.step_size).min(1.0);
        }
        let (mut ax, mut ay) = if dist > 0.0 {
            (mag * dx / dist, mag * dy / dist)
        } else {
            (0.0, 0.0)
        };
        if self.noise_sigma > 0.0 {
            ax += self.noise_sigma * rng.normal();
            ay += self.noise_sigma * rng.normal();
        }
        Action::new(ax, ay).clamped()
    }
}

/// One expert episode. `rng` drives the environment; its `"expert"` child
/// drives the action jitter.
pub fn run_expert(env: &MazeEnv, route: &Route, mut rng: RngStream) -> Result<Trajectory> {
    let mut jitter = rng.derive("expert");
    let mut state = env.reset(&mut rng);
    let plan = ExpertPlan::new(env.maze(), route, state.position, env.config().step_size)?;
    let mut cursor = 0;
    let mut states = vec![state.position];
    let mut actions = Vec::new();
    while !state.done {
        let a = plan.action(state.position, &mut cursor, &mut jitter);
        let applied = env.step(&mut state, a, &mut rng)?;
        actions.push(applied);
        states.push(state.position);
    }
    Ok(Trajectory {
        id: 0,
        states,
        actions,
        checkpoints: state.visited,
        success: state.reached_goal,
    })
}

pub fn generate_dataset(maze: &MazeSpec, recipe: &DatasetRecipe) -> Result<Dataset> {
    generate_dataset_with(maze, recipe, Exec::default())
}

/// Synthesizes `recipe`. Trajectory order is (route index, repetition), and
/// every episode owns the stream `expert/{route}/{rep}` under the recipe
/// seed, so the output is independent of the execution strategy.
pub fn generate_dataset_with(maze: &MazeSpec, recipe: &DatasetRecipe, exec: Exec) -> Result<Dataset> {
    recipe.validate(maze)?;
    let env = MazeEnv::new(maze.clone(), recipe.env.clone())?;
    let jobs: Vec<(usize, usize)> = recipe
        .routes
        .iter()
        .enumerate()
        .flat_map(|(ri, rc)| (0..rc.count).map(move |rep| (ri, rep)))
        .collect();
    let trajectories = exec.try_map_indexed(jobs.len(), |k| {
        let (ri, rep) = jobs[k];
        let route = &recipe.routes[ri].route;
        let rng = RngStream::new(recipe.seed, format!("expert/{ri}/{rep}"));
        let mut t = run_expert(&env, route, rng)?;
        let got = behavior_of(&t);
        if got != route.label() {
            return Err(Error::RouteFailed {
                label: route.label().0,
                reason: format!("repetition {rep} produced {got}"),
            });
        }
        t.id = k;
        Ok(t)
    })?;
    let labels: BTreeSet<BehaviorId> = recipe.routes.iter().map(|rc| rc.route.label()).collect();
    Dataset::new(
        trajectories,
        DatasetMeta {
            maze_name: maze.name.clone(),
            generator: format!("experts:{}", recipe.name),
            ground_truth_k: Some(labels.len()),
            seed: recipe.seed,
        },
    )
}
