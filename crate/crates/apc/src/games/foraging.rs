//! Foraging with a resource-degradation externality. Common berries pay 3
//! points; the two special agents can also harvest forbidden berries for
//! 4 points, permanently (within the episode) degrading common berries to
//! 1 point.

use super::coin::render_grid;
use super::grid::{
    egocentric_obs, greedy_move_toward, nearest, observability_matrix, resolve_moves,
    sample_empty_cells, Grid, Pos, MOVE_LABELS, NUM_MOVE_ACTIONS, OBS_WINDOW,
};
use crate::env::{EnvError, Environment, GameSpec, RuleKind, StepResult};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GRID: Grid = Grid {
    height: 10,
    width: 10,
};
const NUM_AGENTS: usize = 12;
const NUM_SPECIAL: usize = 2;
const NUM_COMMON_BERRIES: usize = 20;
const NUM_FORBIDDEN_BERRIES: usize = 4;
const COMMON_REWARD: f64 = 3.0;
const DEGRADED_REWARD: f64 = 1.0;
const FORBIDDEN_REWARD: f64 = 4.0;
// Channels: self, others, common berries, forbidden berries (+walls).
const NUM_CHANNELS: usize = 4;

pub struct ForagingEnv {
    spec: GameSpec,
    rng: ChaCha8Rng,
    positions: Vec<Pos>,
    common: Vec<Pos>,
    forbidden: Vec<Pos>,
    degraded: bool,
    timestep: usize,
    done: bool,
    forbidden_harvested: usize,
}

impl ForagingEnv {
    pub fn new(horizon: usize) -> Self {
        let obs_dim = (NUM_CHANNELS + 1) * OBS_WINDOW * OBS_WINDOW;
        ForagingEnv {
            spec: GameSpec {
                num_agents: NUM_AGENTS,
                action_space_sizes: vec![NUM_MOVE_ACTIONS; NUM_AGENTS],
                observation_dims: vec![obs_dim; NUM_AGENTS],
                horizon,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            positions: Vec::new(),
            common: Vec::new(),
            forbidden: Vec::new(),
            degraded: false,
            timestep: 0,
            done: true,
            forbidden_harvested: 0,
        }
    }

    pub fn is_special(agent: usize) -> bool {
        agent < NUM_SPECIAL
    }

    fn occupied(&self) -> Vec<Pos> {
        let mut cells = self.positions.clone();
        cells.extend_from_slice(&self.common);
        cells.extend_from_slice(&self.forbidden);
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
                let common_ch = |p: Pos| self.common.contains(&p);
                let forbidden_ch = |p: Pos| self.forbidden.contains(&p);
                egocentric_obs(GRID, me, &[&self_ch, &others_ch, &common_ch, &forbidden_ch])
            })
            .collect()
    }
}

impl Environment for ForagingEnv {
    fn spec(&self) -> &GameSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.positions = sample_empty_cells(GRID, &[], NUM_AGENTS, &mut self.rng);
        self.common = sample_empty_cells(GRID, &self.positions, NUM_COMMON_BERRIES, &mut self.rng);
        let taken: Vec<Pos> = self
            .positions
            .iter()
            .chain(self.common.iter())
            .copied()
            .collect();
        self.forbidden = sample_empty_cells(GRID, &taken, NUM_FORBIDDEN_BERRIES, &mut self.rng);
        // Degradation resets per episode.
        self.degraded = false;
        self.timestep = 0;
        self.done = false;
        self.forbidden_harvested = 0;
        StepResult::initial(self.observations(), observability_matrix(&self.positions))
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        self.validate_actions(joint_action)?;
        self.positions = resolve_moves(GRID, &self.positions, joint_action);
        let mut rewards = vec![0.0; NUM_AGENTS];
        // Forbidden harvests first: degradation applies from the moment it
        // is triggered, so common pickups in the same step already pay 1.
        for agent in 0..NUM_AGENTS {
            if !Self::is_special(agent) {
                continue;
            }
            if let Some(idx) = self.forbidden.iter().position(|&p| p == self.positions[agent]) {
                self.forbidden.remove(idx);
                self.forbidden_harvested += 1;
                self.degraded = true;
                rewards[agent] += FORBIDDEN_REWARD;
            }
        }
        for agent in 0..NUM_AGENTS {
            if let Some(idx) = self.common.iter().position(|&p| p == self.positions[agent]) {
                self.common.remove(idx);
                rewards[agent] += if self.degraded {
                    DEGRADED_REWARD
                } else {
                    COMMON_REWARD
                };
                let spawn = sample_empty_cells(GRID, &self.occupied(), 1, &mut self.rng)[0];
                self.common.push(spawn);
            }
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
        1.0 - self.forbidden_harvested as f64 / NUM_FORBIDDEN_BERRIES as f64
    }

    fn rule_action(&self, agent: usize, kind: RuleKind, rng: &mut ChaCha8Rng) -> usize {
        let me = self.positions[agent];
        let chase_common = |rng: &mut ChaCha8Rng| match nearest(me, &self.common) {
            Some((_, berry)) => greedy_move_toward(me, berry),
            None => rng.random_range(0..NUM_MOVE_ACTIONS),
        };
        match kind {
            RuleKind::Random => rng.random_range(0..NUM_MOVE_ACTIONS),
            RuleKind::AlwaysCooperate => chase_common(rng),
            RuleKind::AlwaysDefect => {
                if Self::is_special(agent) && !self.forbidden.is_empty() {
                    match nearest(me, &self.forbidden) {
                        Some((_, berry)) => greedy_move_toward(me, berry),
                        None => chase_common(rng),
                    }
                } else {
                    chase_common(rng)
                }
            }
        }
    }

    fn action_label(&self, _agent: usize, action: usize) -> String {
        MOVE_LABELS[action].to_string()
    }

    fn ascii_map(&self) -> String {
        render_grid(GRID, |p| {
            if let Some(k) = self.positions.iter().position(|&q| q == p) {
                return if Self::is_special(k) { 'X' } else { 'o' };
            }
            if self.common.contains(&p) {
                return 'b';
            }
            if self.forbidden.contains(&p) {
                return 'F';
            }
            '.'
        })
    }

    fn name(&self) -> &'static str {
        "foraging"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::grid::{MOVE_RIGHT, STAY};

    fn scripted() -> ForagingEnv {
        let mut env = ForagingEnv::new(100);
        env.reset(2);
        // Line the relevant agents up next to known berries.
        env.positions[0] = Pos::new(0, 0); // special
        env.positions[2] = Pos::new(5, 0); // common agent
        env.forbidden[0] = Pos::new(0, 1);
        env.common[0] = Pos::new(5, 1);
        env
    }

    fn stay_all() -> Vec<usize> {
        vec![STAY; NUM_AGENTS]
    }

    #[test]
    fn common_berry_pays_three_before_degradation() {
        let mut env = scripted();
        let mut actions = stay_all();
        actions[2] = MOVE_RIGHT;
        let res = env.step(&actions).unwrap();
        assert_eq!(res.raw_rewards[2], COMMON_REWARD);
    }

    #[test]
    fn forbidden_harvest_pays_four_and_degrades() {
        let mut env = scripted();
        let mut actions = stay_all();
        actions[0] = MOVE_RIGHT;
        let res = env.step(&actions).unwrap();
        assert_eq!(res.raw_rewards[0], FORBIDDEN_REWARD);
        assert!(env.degraded);
        assert!((env.cooperation() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn common_berry_pays_one_after_degradation() {
        let mut env = scripted();
        let mut actions = stay_all();
        actions[0] = MOVE_RIGHT;
        env.step(&actions).unwrap();
        // Re-stage a berry next to the common agent.
        env.common[0] = Pos::new(5, 1);
        env.positions[2] = Pos::new(5, 0);
        let mut actions = stay_all();
        actions[2] = MOVE_RIGHT;
        let res = env.step(&actions).unwrap();
        assert_eq!(res.raw_rewards[2], DEGRADED_REWARD);
    }

    #[test]
    fn common_agent_cannot_harvest_forbidden() {
        let mut env = scripted();
        env.positions[2] = Pos::new(0, 2);
        let mut actions = stay_all();
        actions[2] = super::super::grid::MOVE_LEFT;
        let res = env.step(&actions).unwrap();
        assert_eq!(res.raw_rewards[2], 0.0);
        assert!(!env.degraded);
        assert_eq!(env.forbidden.len(), NUM_FORBIDDEN_BERRIES);
    }

    #[test]
    fn degradation_is_monotone_within_episode() {
        let mut env = scripted();
        let mut actions = stay_all();
        actions[0] = MOVE_RIGHT;
        env.step(&actions).unwrap();
        assert!(env.degraded);
        for _ in 0..10 {
            env.step(&stay_all()).unwrap();
            assert!(env.degraded);
        }
        // A fresh episode clears the flag.
        env.reset(3);
        assert!(!env.degraded);
    }

    #[test]
    fn partial_observability_on_the_big_map() {
        let mut env = ForagingEnv::new(100);
        env.positions = sample_empty_cells(GRID, &[], NUM_AGENTS, &mut env.rng);
        env.positions[0] = Pos::new(0, 0);
        env.positions[1] = Pos::new(9, 9);
        let m = observability_matrix(&env.positions);
        assert!(!m[0][1]);
    }
}
