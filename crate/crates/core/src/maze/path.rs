use std::collections::VecDeque;

use super::{Cell, MazeSpec};

/// Breadth-first shortest 4-connected path from `from` to `to` (inclusive),
/// visiting only free cells accepted by `allow` (the endpoints are always
/// allowed). Neighbours expand in the fixed order up, down, left, right.
pub fn shortest_path(
    maze: &MazeSpec,
    from: Cell,
    to: Cell,
    allow: impl Fn(Cell) -> bool,
) -> Option<Vec<Cell>> {
    if !maze.is_free(from) || !maze.is_free(to) {
        return None;
    }
    let idx = |c: Cell| c.1 * maze.width + c.0;
    let mut prev: Vec<Option<Cell>> = vec![None; maze.width * maze.height];
    let mut seen = vec![false; maze.width * maze.height];
    let mut queue = VecDeque::from([from]);
    seen[idx(from)] = true;
    while let Some(cur) = queue.pop_front() {
        if cur == to {
            let mut path = vec![cur];
            let mut at = cur;
            while let Some(p) = prev[idx(at)] {
                path.push(p);
                at = p;
            }
            path.reverse();
            return Some(path);
        }
        for (dc, dr) in [(0i64, -1i64), (0, 1), (-1, 0), (1, 0)] {
            let (nc, nr) = (cur.0 as i64 + dc, cur.1 as i64 + dr);
            if maze.is_wall(nc, nr) {
                continue;
            }
            let next = (nc as usize, nr as usize);
            if seen[idx(next)] || (next != to && !allow(next)) {
                continue;
            }
            seen[idx(next)] = true;
            prev[idx(next)] = Some(cur);
            queue.push_back(next);
        }
    }
    None
}
