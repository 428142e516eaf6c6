//! Maze layouts and the continuous navigation simulator.
//!
//! Layout grammar, one row per line, rectangular:
//!
//! ```text
//! #  wall cell        .  free cell
//! S  default start    G  goal (checkpoint 0)
//! 1-9  door checkpoints
//! ```
//!
//! Cell `(col, row)` covers `[col, col+1] x [row, row+1]`; `y` grows
//! downwards with the row index. Omitting `S` puts the start on the goal.

mod env;
mod path;

pub use env::{
    rollout, rollout_batch, ConditionedPolicy, EnvConfig, EnvState, FnPolicy, InitMode, MazeEnv,
    CONTACT_EPS, DEFAULT_STEP_SIZE,
};
pub use path::shortest_path;

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::types::State;

pub type Cell = (usize, usize);

pub const MEDIUM_MAZE: &str = include_str!("../../assets/medium_maze.txt");

#[derive(Clone, Debug, PartialEq)]
pub struct MazeSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    walls: Vec<bool>,
    /// Checkpoint index -> cell. Index 0 is the goal.
    pub doors: BTreeMap<u8, Cell>,
    pub goal: Cell,
    pub default_start: Cell,
}

impl MazeSpec {
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "medium_maze" => Some(load_maze(name, MEDIUM_MAZE).expect("bundled maze is valid")),
            _ => None,
        }
    }

    pub fn is_wall(&self, col: i64, row: i64) -> bool {
        if col < 0 || row < 0 || col as usize >= self.width || row as usize >= self.height {
            return true;
        }
        self.walls[row as usize * self.width + col as usize]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        !self.is_wall(cell.0 as i64, cell.1 as i64)
    }

    pub fn cell_of(&self, s: State) -> (i64, i64) {
        (s.x.floor() as i64, s.y.floor() as i64)
    }

    pub fn center(cell: Cell) -> State {
        State::new(cell.0 as f64 + 0.5, cell.1 as f64 + 0.5)
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (c, r)))
            .filter(|&c| self.is_free(c))
            .collect()
    }

    /// Door cells other than the goal, keyed by checkpoint index.
    pub fn checkpoint_cell(&self, index: u8) -> Option<Cell> {
        if index == 0 {
            Some(self.goal)
        } else {
            self.doors.get(&index).copied()
        }
    }

    pub fn door_at(&self, cell: Cell) -> Option<u8> {
        if cell == self.goal {
            return Some(0);
        }
        self.doors.iter().find(|(_, &c)| c == cell).map(|(&i, _)| i)
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let ch = if (c, r) == self.goal {
                    'G'
                } else if let Some(i) = self.door_at((c, r)) {
                    char::from(b'0' + i)
                } else if (c, r) == self.default_start {
                    'S'
                } else if self.is_free((c, r)) {
                    '.'
                } else {
                    '#'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for MazeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} ({}x{}), doors {:?}, goal {:?}, start {:?}",
            self.name,
            self.width,
            self.height,
            self.doors.keys().collect::<Vec<_>>(),
            self.goal,
            self.default_start
        )?;
        f.write_str(&self.render())
    }
}

pub fn load_maze(name: &str, text: &str) -> Result<MazeSpec> {
    let rows: Vec<&str> = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .collect::<Vec<_>>();
    let rows: Vec<&str> = {
        let end = rows.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
        rows[..end].to_vec()
    };
    let parse_err = |line: usize, column: usize, message: String| Error::MazeParse {
        line,
        column,
        message,
    };
    if rows.is_empty() {
        return Err(parse_err(1, 1, "empty maze".into()));
    }
    let width = rows[0].chars().count();
    let height = rows.len();
    let mut walls = vec![false; width * height];
    let mut doors = BTreeMap::new();
    let mut goal = None;
    let mut start = None;
    for (r, row) in rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(parse_err(
                r + 1,
                row.chars().count().min(width) + 1,
                format!("row has {} cells, expected {width}", row.chars().count()),
            ));
        }
        for (c, ch) in row.chars().enumerate() {
            match ch {
                '#' => walls[r * width + c] = true,
                '.' => {}
                'S' => {
                    if start.replace((c, r)).is_some() {
                        return Err(parse_err(r + 1, c + 1, "duplicate start".into()));
                    }
                }
                'G' => {
                    if goal.replace((c, r)).is_some() {
                        return Err(parse_err(r + 1, c + 1, "duplicate goal".into()));
                    }
                }
                '1'..='9' => {
                    let idx = ch as u8 - b'0';
                    if doors.insert(idx, (c, r)).is_some() {
                        return Err(parse_err(r + 1, c + 1, format!("duplicate door {idx}")));
                    }
                }
                other => {
                    return Err(parse_err(r + 1, c + 1, format!("unexpected character {other:?}")))
                }
            }
        }
    }
    let goal = goal.ok_or_else(|| parse_err(height, 1, "missing goal 'G'".into()))?;
    let spec = MazeSpec {
        name: name.to_owned(),
        width,
        height,
        walls,
        doors,
        goal,
        default_start: start.unwrap_or(goal),
    };
    spec.validate()?;
    Ok(spec)
}

impl MazeSpec {
    fn validate(&self) -> Result<()> {
        // A door walled in on all four sides sits inside solid wall.
        for (&idx, &(c, r)) in &self.doors {
            let (c, r) = (c as i64, r as i64);
            let open = [(0, -1), (0, 1), (-1, 0), (1, 0)]
                .iter()
                .any(|(dc, dr)| !self.is_wall(c + dc, r + dr));
            if !open && self.width * self.height > 1 {
                return Err(Error::DoorOnWall(idx));
            }
        }
        if shortest_path(self, self.default_start, self.goal, |_| true).is_none() {
            return Err(Error::UnreachableGoal);
        }
        Ok(())
    }
}
