//! Sequential stag hunt. Stags pay 10 points shared among at least two
//! adjacent hunters; hares pay 1 point to a lone hunter. The graded
//! variant adds hare-hunt actions that also shave 0.2 or 0.3 points off
//! every other agent's reward on a successful capture.

use super::coin::render_grid;
use super::grid::{
    chebyshev, egocentric_obs, greedy_move_toward, nearest, observability_matrix, resolve_moves,
    sample_empty_cells, Grid, Pos, MOVE_LABELS, NUM_MOVE_ACTIONS, OBS_WINDOW,
};
use crate::env::{EnvError, Environment, GameSpec, RuleKind, StepResult};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GRID: Grid = Grid {
    height: 8,
    width: 8,
};
const NUM_AGENTS: usize = 4;
const NUM_STAGS: usize = 2;
const NUM_HARES: usize = 4;
const STAG_REWARD: f64 = 10.0;
const HARE_REWARD: f64 = 1.0;

pub const HUNT_STAG: usize = NUM_MOVE_ACTIONS;
pub const HUNT_HARE: usize = NUM_MOVE_ACTIONS + 1;
/// Graded variant only: hare hunts that also tax bystanders.
pub const HUNT_HARE_P2: usize = NUM_MOVE_ACTIONS + 2;
pub const HUNT_HARE_P3: usize = NUM_MOVE_ACTIONS + 3;

// Channels: self, others, stags, hares (+walls).
const NUM_CHANNELS: usize = 4;

fn hare_penalty(action: usize) -> f64 {
    match action {
        HUNT_HARE_P2 => 0.2,
        HUNT_HARE_P3 => 0.3,
        _ => 0.0,
    }
}

pub struct StagHuntEnv {
    graded: bool,
    spec: GameSpec,
    rng: ChaCha8Rng,
    positions: Vec<Pos>,
    stags: Vec<Pos>,
    hares: Vec<Pos>,
    timestep: usize,
    done: bool,
    stag_participations: usize,
    hare_captures: usize,
}

impl StagHuntEnv {
    pub fn new(graded: bool, horizon: usize) -> Self {
        let actions = if graded { HUNT_HARE_P3 + 1 } else { HUNT_HARE + 1 };
        let obs_dim = (NUM_CHANNELS + 1) * OBS_WINDOW * OBS_WINDOW;
        StagHuntEnv {
            graded,
            spec: GameSpec {
                num_agents: NUM_AGENTS,
                action_space_sizes: vec![actions; NUM_AGENTS],
                observation_dims: vec![obs_dim; NUM_AGENTS],
                horizon,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            positions: Vec::new(),
            stags: Vec::new(),
            hares: Vec::new(),
            timestep: 0,
            done: true,
            stag_participations: 0,
            hare_captures: 0,
        }
    }

    fn is_hare_hunt(&self, action: usize) -> bool {
        action == HUNT_HARE || (self.graded && (action == HUNT_HARE_P2 || action == HUNT_HARE_P3))
    }

    fn occupied(&self) -> Vec<Pos> {
        let mut cells = self.positions.clone();
        cells.extend_from_slice(&self.stags);
        cells.extend_from_slice(&self.hares);
        cells
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..NUM_AGENTS)
            .map(|agent| {
                let me = self.positions[agent];
                let others: Vec<Pos> = self
                    .positions
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != agent)
                    .map(|(_, &p)| p)
                    .collect();
                let self_ch = |p: Pos| p == me;
                let others_ch = |p: Pos| others.contains(&p);
                let stags_ch = |p: Pos| self.stags.contains(&p);
                let hares_ch = |p: Pos| self.hares.contains(&p);
                egocentric_obs(GRID, me, &[&self_ch, &others_ch, &stags_ch, &hares_ch])
            })
            .collect()
    }

    fn adjacent_targets(&self, agent: usize, targets: &[Pos]) -> Option<usize> {
        let me = self.positions[agent];
        targets
            .iter()
            .enumerate()
            .filter(|(_, &p)| chebyshev(me, p) <= 1)
            .min_by_key(|(idx, &p)| (chebyshev(me, p), *idx))
            .map(|(idx, _)| idx)
    }
}

impl Environment for StagHuntEnv {
    fn spec(&self) -> &GameSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.positions = sample_empty_cells(GRID, &[], NUM_AGENTS, &mut self.rng);
        self.stags = sample_empty_cells(GRID, &self.positions, NUM_STAGS, &mut self.rng);
        let taken: Vec<Pos> = self
            .positions
            .iter()
            .chain(self.stags.iter())
            .copied()
            .collect();
        self.hares = sample_empty_cells(GRID, &taken, NUM_HARES, &mut self.rng);
        self.timestep = 0;
        self.done = false;
        self.stag_participations = 0;
        self.hare_captures = 0;
        StepResult::initial(self.observations(), observability_matrix(&self.positions))
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        self.validate_actions(joint_action)?;
        self.positions = resolve_moves(GRID, &self.positions, joint_action);
        let mut rewards = vec![0.0; NUM_AGENTS];

        // Stag hunts: collect participants per stag, pay groups of >= 2.
        let mut participants: Vec<Vec<usize>> = vec![Vec::new(); self.stags.len()];
        for agent in 0..NUM_AGENTS {
            if joint_action[agent] == HUNT_STAG {
                if let Some(stag_idx) = self.adjacent_targets(agent, &self.stags) {
                    participants[stag_idx].push(agent);
                }
            }
        }
        let mut hunted: Vec<usize> = Vec::new();
        for (stag_idx, group) in participants.iter().enumerate() {
            if group.len() >= 2 {
                let share = STAG_REWARD / group.len() as f64;
                for &agent in group {
                    rewards[agent] += share;
                }
                self.stag_participations += group.len();
                hunted.push(stag_idx);
            }
        }
        for &stag_idx in hunted.iter().rev() {
            self.stags.remove(stag_idx);
        }
        for _ in 0..hunted.len() {
            let spawn = sample_empty_cells(GRID, &self.occupied(), 1, &mut self.rng)[0];
            self.stags.push(spawn);
        }

        // Hare hunts: per hare, the lowest-index adjacent hunter captures.
        let mut claims: Vec<Option<usize>> = vec![None; self.hares.len()];
        for agent in 0..NUM_AGENTS {
            if self.is_hare_hunt(joint_action[agent]) {
                if let Some(hare_idx) = self.adjacent_targets(agent, &self.hares) {
                    if claims[hare_idx].is_none() {
                        claims[hare_idx] = Some(agent);
                    }
                }
            }
        }
        let mut captured: Vec<usize> = Vec::new();
        for (hare_idx, claim) in claims.iter().enumerate() {
            if let Some(agent) = claim {
                rewards[*agent] += HARE_REWARD;
                self.hare_captures += 1;
                let penalty = hare_penalty(joint_action[*agent]);
                if penalty > 0.0 {
                    for (other, r) in rewards.iter_mut().enumerate() {
                        if other != *agent {
                            *r -= penalty;
                        }
                    }
                }
                captured.push(hare_idx);
            }
        }
        for &hare_idx in captured.iter().rev() {
            self.hares.remove(hare_idx);
        }
        for _ in 0..captured.len() {
            let spawn = sample_empty_cells(GRID, &self.occupied(), 1, &mut self.rng)[0];
            self.hares.push(spawn);
        }

        self.timestep += 1;
        self.done = self.timestep >= self.spec.horizon;
        Ok(StepResult {
            observations: self.observations(),
            raw_rewards: rewards,
            done: self.done,
            observability: observability_matrix(&self.positions),
        })
    }

    fn cooperation(&self) -> f64 {
        let total = self.stag_participations + self.hare_captures;
        if total == 0 {
            0.0
        } else {
            self.stag_participations as f64 / total as f64
        }
    }

    fn rule_action(&self, agent: usize, kind: RuleKind, rng: &mut ChaCha8Rng) -> usize {
        let me = self.positions[agent];
        let actions = self.spec.action_space_sizes[agent];
        match kind {
            RuleKind::Random => rng.random_range(0..actions),
            RuleKind::AlwaysCooperate => {
                if self.adjacent_targets(agent, &self.stags).is_some() {
                    HUNT_STAG
                } else {
                    match nearest(me, &self.stags) {
                        Some((_, stag)) => greedy_move_toward(me, stag),
                        None => rng.random_range(0..NUM_MOVE_ACTIONS),
                    }
                }
            }
            RuleKind::AlwaysDefect => {
                if self.adjacent_targets(agent, &self.hares).is_some() {
                    HUNT_HARE
                } else {
                    match nearest(me, &self.hares) {
                        Some((_, hare)) => greedy_move_toward(me, hare),
                        None => rng.random_range(0..NUM_MOVE_ACTIONS),
                    }
                }
            }
        }
    }

    fn action_label(&self, _agent: usize, action: usize) -> String {
        match action {
            HUNT_STAG => "hunt_stag".to_string(),
            HUNT_HARE => "HH".to_string(),
            HUNT_HARE_P2 => "HH-0.2".to_string(),
            HUNT_HARE_P3 => "HH-0.3".to_string(),
            _ => MOVE_LABELS[action].to_string(),
        }
    }

    fn ascii_map(&self) -> String {
        render_grid(GRID, |p| {
            if let Some(k) = self.positions.iter().position(|&q| q == p) {
                return (b'0' + k as u8) as char;
            }
            if self.stags.contains(&p) {
                return 'S';
            }
            if self.hares.contains(&p) {
                return 'h';
            }
            '.'
        })
    }

    fn name(&self) -> &'static str {
        if self.graded {
            "mssh"
        } else {
            "ssh"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::grid::STAY;

    fn scripted_env(graded: bool) -> StagHuntEnv {
        let mut env = StagHuntEnv::new(graded, 50);
        env.reset(1);
        env.positions = vec![
            Pos::new(0, 0),
            Pos::new(0, 2),
            Pos::new(5, 5),
            Pos::new(7, 7),
        ];
        env.stags = vec![Pos::new(0, 1), Pos::new(7, 0)];
        env.hares = vec![Pos::new(5, 6), Pos::new(2, 6), Pos::new(6, 2), Pos::new(3, 3)];
        env
    }

    #[test]
    fn two_participants_split_the_stag() {
        let mut env = scripted_env(false);
        let res = env.step(&[HUNT_STAG, HUNT_STAG, STAY, STAY]).unwrap();
        assert_eq!(res.raw_rewards, vec![5.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn lone_stag_hunter_gets_nothing_and_stag_remains() {
        let mut env = scripted_env(false);
        let stag = env.stags[0];
        let res = env.step(&[HUNT_STAG, STAY, STAY, STAY]).unwrap();
        assert_eq!(res.raw_rewards, vec![0.0; 4]);
        assert!(env.stags.contains(&stag));
    }

    #[test]
    fn hare_capture_pays_one_to_the_capturer() {
        let mut env = scripted_env(false);
        let res = env.step(&[STAY, STAY, HUNT_HARE, STAY]).unwrap();
        assert_eq!(res.raw_rewards, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn graded_capture_taxes_bystanders() {
        let mut env = scripted_env(true);
        let res = env.step(&[STAY, STAY, HUNT_HARE_P3, STAY]).unwrap();
        assert_eq!(res.raw_rewards, vec![-0.3, -0.3, 1.0, -0.3]);
    }

    #[test]
    fn plain_hh_in_graded_env_matches_standard() {
        let mut env = scripted_env(true);
        let res = env.step(&[STAY, STAY, HUNT_HARE, STAY]).unwrap();
        assert_eq!(res.raw_rewards, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn simultaneous_graded_captures_stack_on_bystanders() {
        let mut env = scripted_env(true);
        // Agent 1 next to hare at (2, 6)? Chebyshev((0,2),(2,6)) = 4: move it.
        env.positions[1] = Pos::new(2, 5);
        let res = env
            .step(&[STAY, HUNT_HARE_P2, HUNT_HARE_P3, STAY])
            .unwrap();
        // Agent 0 and 3: -0.2 - 0.3; capturers: +1 minus the other's tax.
        assert_eq!(res.raw_rewards, vec![-0.5, 0.7, 0.8, -0.5]);
    }

    #[test]
    fn graded_restricted_to_ssh_actions_matches_ssh() {
        let mut plain = scripted_env(false);
        let mut graded = scripted_env(true);
        let joint = [HUNT_STAG, HUNT_STAG, HUNT_HARE, STAY];
        let a = plain.step(&joint).unwrap();
        let b = graded.step(&joint).unwrap();
        assert_eq!(a.raw_rewards, b.raw_rewards);
    }

    #[test]
    fn contested_hare_goes_to_lowest_index() {
        let mut env = scripted_env(false);
        env.positions = vec![
            Pos::new(3, 2),
            Pos::new(3, 4),
            Pos::new(7, 7),
            Pos::new(0, 7),
        ];
        // Hare at (3, 3) is adjacent to both agents 0 and 1.
        let res = env.step(&[HUNT_HARE, HUNT_HARE, STAY, STAY]).unwrap();
        assert_eq!(res.raw_rewards, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cooperation_is_stag_participation_fraction() {
        let mut env = scripted_env(false);
        env.step(&[HUNT_STAG, HUNT_STAG, HUNT_HARE, STAY]).unwrap();
        // Two stag participants, one hare capture.
        assert!((env.cooperation() - 2.0 / 3.0).abs() < 1e-12);
    }
}
