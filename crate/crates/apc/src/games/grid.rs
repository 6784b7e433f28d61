//! Shared gridworld machinery: movement resolution, egocentric
//! observations, observability, spawning.
//!
//! Conventions shared by every gridworld here:
//! - actions 0..=4 are up, down, left, right, stay; games append their own
//!   special actions after these;
//! - movement conflicts resolve by agent-index priority, losers stay;
//! - observations are egocentric multi-channel binary windows of radius 3
//!   (7x7), flattened channel-major, with a trailing walls channel;
//! - agent j is observable to agent i iff their Chebyshev distance is at
//!   most the observation radius.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const MOVE_UP: usize = 0;
pub const MOVE_DOWN: usize = 1;
pub const MOVE_LEFT: usize = 2;
pub const MOVE_RIGHT: usize = 3;
pub const STAY: usize = 4;
pub const NUM_MOVE_ACTIONS: usize = 5;

pub const OBS_RADIUS: usize = 3;
pub const OBS_WINDOW: usize = 2 * OBS_RADIUS + 1;

pub const MOVE_LABELS: [&str; 5] = ["up", "down", "left", "right", "stay"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pos {
    pub row: i32,
    pub col: i32,
}

impl Pos {
    pub fn new(row: i32, col: i32) -> Self {
        Pos { row, col }
    }
}

pub fn chebyshev(a: Pos, b: Pos) -> i32 {
    (a.row - b.row).abs().max((a.col - b.col).abs())
}

#[derive(Clone, Copy, Debug)]
pub struct Grid {
    pub height: i32,
    pub width: i32,
}

impl Grid {
    pub fn contains(&self, p: Pos) -> bool {
        p.row >= 0 && p.row < self.height && p.col >= 0 && p.col < self.width
    }

    pub fn cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| Pos::new(r, c)))
    }
}

/// Where a move action points; non-move actions stay in place.
pub fn intended_target(pos: Pos, action: usize) -> Pos {
    match action {
        MOVE_UP => Pos::new(pos.row - 1, pos.col),
        MOVE_DOWN => Pos::new(pos.row + 1, pos.col),
        MOVE_LEFT => Pos::new(pos.row, pos.col - 1),
        MOVE_RIGHT => Pos::new(pos.row, pos.col + 1),
        _ => pos,
    }
}

/// Resolve simultaneous moves with agent-index priority.
///
/// Agents are processed in index order; a move succeeds if the target is
/// in bounds and not occupied by an already-finalized agent nor by a
/// not-yet-processed agent's current cell. Blocked movers stay.
pub fn resolve_moves(grid: Grid, positions: &[Pos], actions: &[usize]) -> Vec<Pos> {
    let n = positions.len();
    let mut finalized: Vec<Option<Pos>> = vec![None; n];
    for k in 0..n {
        let target = intended_target(positions[k], actions[k]);
        let mut ok = grid.contains(target);
        if ok && target != positions[k] {
            for other in 0..n {
                if other == k {
                    continue;
                }
                let occupied = match finalized[other] {
                    Some(p) => p == target,
                    None => positions[other] == target,
                };
                if occupied {
                    ok = false;
                    break;
                }
            }
        }
        finalized[k] = Some(if ok { target } else { positions[k] });
    }
    finalized.into_iter().map(|p| p.unwrap()).collect()
}

/// Pairwise visibility within `OBS_RADIUS` Chebyshev distance.
pub fn observability_matrix(positions: &[Pos]) -> Vec<Vec<bool>> {
    let n = positions.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| chebyshev(positions[i], positions[j]) <= OBS_RADIUS as i32)
                .collect()
        })
        .collect()
}

/// Egocentric observation: one binary plane per channel closure, plus a
/// trailing walls plane marking out-of-bounds cells.
pub fn egocentric_obs(grid: Grid, center: Pos, channels: &[&dyn Fn(Pos) -> bool]) -> Vec<f64> {
    let win = OBS_WINDOW as i32;
    let len = OBS_WINDOW * OBS_WINDOW;
    let mut obs = vec![0.0; (channels.len() + 1) * len];
    let walls_base = channels.len() * len;
    let r0 = center.row - OBS_RADIUS as i32;
    let c0 = center.col - OBS_RADIUS as i32;
    for dr in 0..win {
        for dc in 0..win {
            let cell = Pos::new(r0 + dr, c0 + dc);
            let idx = (dr * win + dc) as usize;
            if !grid.contains(cell) {
                obs[walls_base + idx] = 1.0;
                continue;
            }
            for (ch, f) in channels.iter().enumerate() {
                if f(cell) {
                    obs[ch * len + idx] = 1.0;
                }
            }
        }
    }
    obs
}

/// Uniform draw over in-bounds cells not in `occupied` (row-major order
/// keeps the draw deterministic for a given RNG state).
pub fn sample_empty_cell(grid: Grid, occupied: &[Pos], rng: &mut ChaCha8Rng) -> Pos {
    let free: Vec<Pos> = grid.cells().filter(|c| !occupied.contains(c)).collect();
    assert!(!free.is_empty(), "grid has no free cell");
    free[rng.random_range(0..free.len())]
}

/// Draw `count` distinct empty cells.
pub fn sample_empty_cells(
    grid: Grid,
    occupied: &[Pos],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Pos> {
    let mut taken: Vec<Pos> = occupied.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let cell = sample_empty_cell(grid, &taken, rng);
        taken.push(cell);
        out.push(cell);
    }
    out
}

/// Greedy move toward `goal`: shrink the larger axis gap first, rows
/// breaking ties. Returns `STAY` when already at the goal.
pub fn greedy_move_toward(from: Pos, goal: Pos) -> usize {
    let dr = goal.row - from.row;
    let dc = goal.col - from.col;
    if dr == 0 && dc == 0 {
        return STAY;
    }
    if dr.abs() >= dc.abs() {
        if dr < 0 {
            MOVE_UP
        } else {
            MOVE_DOWN
        }
    } else if dc < 0 {
        MOVE_LEFT
    } else {
        MOVE_RIGHT
    }
}

/// Nearest entry of `targets` to `from` (Chebyshev), lowest index on ties.
pub fn nearest(from: Pos, targets: &[Pos]) -> Option<(usize, Pos)> {
    targets
        .iter()
        .enumerate()
        .min_by_key(|(idx, &p)| (chebyshev(from, p), *idx))
        .map(|(idx, &p)| (idx, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    const G: Grid = Grid {
        height: 5,
        width: 5,
    };

    #[test]
    fn same_target_resolved_by_index_priority() {
        let positions = [Pos::new(0, 0), Pos::new(0, 2)];
        // Both head for (0, 1).
        let actions = [MOVE_RIGHT, MOVE_LEFT];
        let out = resolve_moves(G, &positions, &actions);
        assert_eq!(out[0], Pos::new(0, 1));
        assert_eq!(out[1], Pos::new(0, 2));
    }

    #[test]
    fn moves_off_grid_stay_put() {
        let positions = [Pos::new(0, 0), Pos::new(4, 4)];
        let actions = [MOVE_UP, MOVE_DOWN];
        let out = resolve_moves(G, &positions, &actions);
        assert_eq!(out, positions);
    }

    #[test]
    fn swaps_are_blocked() {
        let positions = [Pos::new(0, 0), Pos::new(0, 1)];
        let actions = [MOVE_RIGHT, MOVE_LEFT];
        let out = resolve_moves(G, &positions, &actions);
        assert_eq!(out, positions);
    }

    #[test]
    fn vacated_cell_usable_by_later_index() {
        let positions = [Pos::new(0, 0), Pos::new(1, 0)];
        // Agent 0 moves right, agent 1 moves up into 0's old cell.
        let actions = [MOVE_RIGHT, MOVE_UP];
        let out = resolve_moves(G, &positions, &actions);
        assert_eq!(out[0], Pos::new(0, 1));
        assert_eq!(out[1], Pos::new(0, 0));
    }

    #[test]
    fn no_two_agents_share_a_cell_after_resolution() {
        let mut rng = stream(5, Domain::Eval, 0);
        for _ in 0..500 {
            let positions = sample_empty_cells(G, &[], 4, &mut rng);
            let actions: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
            let out = resolve_moves(G, &positions, &actions);
            for i in 0..4 {
                for j in (i + 1)..4 {
                    assert_ne!(out[i], out[j]);
                }
            }
        }
    }

    #[test]
    fn walls_channel_marks_out_of_bounds() {
        let obs = egocentric_obs(G, Pos::new(0, 0), &[]);
        // Window is 7x7; the walls plane is the only plane.
        assert_eq!(obs.len(), 49);
        // Top-left of the window is far out of bounds.
        assert_eq!(obs[0], 1.0);
        // The center (the agent's own cell) is in bounds.
        assert_eq!(obs[3 * 7 + 3], 0.0);
    }

    #[test]
    fn channel_planes_mark_world_cells() {
        let coin = Pos::new(2, 3);
        let mark = |p: Pos| p == coin;
        let obs = egocentric_obs(G, Pos::new(2, 2), &[&mark]);
        assert_eq!(obs.len(), 2 * 49);
        // Coin sits one column right of center: window cell (3, 4).
        assert_eq!(obs[3 * 7 + 4], 1.0);
        assert_eq!(obs.iter().filter(|&&v| v == 1.0).count() > 1, true); // walls too
    }

    #[test]
    fn greedy_move_reduces_distance() {
        let from = Pos::new(4, 4);
        let goal = Pos::new(0, 0);
        let mut pos = from;
        for _ in 0..8 {
            let act = greedy_move_toward(pos, goal);
            let next = intended_target(pos, act);
            assert!(chebyshev(next, goal) <= chebyshev(pos, goal));
            pos = next;
            if pos == goal {
                break;
            }
        }
        assert_eq!(pos, goal);
    }

    #[test]
    fn observability_uses_chebyshev_radius() {
        let positions = [Pos::new(0, 0), Pos::new(3, 3), Pos::new(4, 4)];
        let m = observability_matrix(&positions);
        assert!(m[0][0]);
        assert!(m[0][1]); // distance 3
        assert!(!m[0][2]); // distance 4
        assert!(m[1][2]);
    }
}
