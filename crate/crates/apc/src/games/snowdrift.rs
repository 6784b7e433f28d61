//! Sequential snowdrift: clearing a snow pile pays every agent 6 points
//! while costing the clearer 4, so everyone prefers someone else to clear.

use super::coin::render_grid;
use super::grid::{
    egocentric_obs, greedy_move_toward, nearest, observability_matrix, resolve_moves,
    sample_empty_cells, Grid, Pos, MOVE_LABELS, NUM_MOVE_ACTIONS, OBS_WINDOW, STAY,
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
const NUM_PILES: usize = 6;
const CLEAR_BONUS: f64 = 6.0;
const CLEAR_COST: f64 = 4.0;
// Channels: self, others, piles (+walls).
const NUM_CHANNELS: usize = 3;

pub struct SnowdriftEnv {
    spec: GameSpec,
    rng: ChaCha8Rng,
    positions: Vec<Pos>,
    piles: Vec<Pos>,
    timestep: usize,
    done: bool,
    cleared: usize,
}

impl SnowdriftEnv {
    pub fn new(horizon: usize) -> Self {
        let obs_dim = (NUM_CHANNELS + 1) * OBS_WINDOW * OBS_WINDOW;
        SnowdriftEnv {
            spec: GameSpec {
                num_agents: NUM_AGENTS,
                action_space_sizes: vec![NUM_MOVE_ACTIONS; NUM_AGENTS],
                observation_dims: vec![obs_dim; NUM_AGENTS],
                horizon,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            positions: Vec::new(),
            piles: Vec::new(),
            timestep: 0,
            done: true,
            cleared: 0,
        }
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
                let piles_ch = |p: Pos| self.piles.contains(&p);
                egocentric_obs(GRID, me, &[&self_ch, &others_ch, &piles_ch])
            })
            .collect()
    }
}

impl Environment for SnowdriftEnv {
    fn spec(&self) -> &GameSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.positions = sample_empty_cells(GRID, &[], NUM_AGENTS, &mut self.rng);
        self.piles = sample_empty_cells(GRID, &self.positions, NUM_PILES, &mut self.rng);
        self.timestep = 0;
        self.done = false;
        self.cleared = 0;
        StepResult::initial(self.observations(), observability_matrix(&self.positions))
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        self.validate_actions(joint_action)?;
        self.positions = resolve_moves(GRID, &self.positions, joint_action);
        let mut rewards = vec![0.0; NUM_AGENTS];
        for agent in 0..NUM_AGENTS {
            if let Some(idx) = self.piles.iter().position(|&p| p == self.positions[agent]) {
                self.piles.remove(idx);
                self.cleared += 1;
                for r in rewards.iter_mut() {
                    *r += CLEAR_BONUS;
                }
                rewards[agent] -= CLEAR_COST;
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
        self.cleared as f64 / NUM_PILES as f64
    }

    fn rule_action(&self, agent: usize, kind: RuleKind, rng: &mut ChaCha8Rng) -> usize {
        let me = self.positions[agent];
        match kind {
            RuleKind::Random => rng.random_range(0..NUM_MOVE_ACTIONS),
            RuleKind::AlwaysCooperate => match nearest(me, &self.piles) {
                Some((_, pile)) => greedy_move_toward(me, pile),
                None => rng.random_range(0..NUM_MOVE_ACTIONS),
            },
            // Defect: free-ride, never step onto a pile.
            RuleKind::AlwaysDefect => {
                for _ in 0..8 {
                    let action = rng.random_range(0..NUM_MOVE_ACTIONS);
                    let target = super::grid::intended_target(me, action);
                    if !self.piles.contains(&target) {
                        return action;
                    }
                }
                STAY
            }
        }
    }

    fn action_label(&self, _agent: usize, action: usize) -> String {
        MOVE_LABELS[action].to_string()
    }

    fn ascii_map(&self) -> String {
        render_grid(GRID, |p| {
            if let Some(k) = self.positions.iter().position(|&q| q == p) {
                return (b'0' + k as u8) as char;
            }
            if self.piles.contains(&p) {
                return '*';
            }
            '.'
        })
    }

    fn name(&self) -> &'static str {
        "ssg"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_with_pile_ahead() -> SnowdriftEnv {
        let mut env = SnowdriftEnv::new(50);
        env.reset(1);
        env.positions = vec![
            Pos::new(0, 0),
            Pos::new(7, 7),
            Pos::new(4, 1),
            Pos::new(7, 0),
        ];
        env.piles = vec![Pos::new(4, 2), Pos::new(0, 7)];
        env
    }

    #[test]
    fn clearing_pays_everyone_and_charges_the_clearer() {
        let mut env = env_with_pile_ahead();
        // Agent 2 steps right onto the pile at (4, 2).
        let res = env.step(&[STAY, STAY, super::super::grid::MOVE_RIGHT, STAY]).unwrap();
        assert_eq!(res.raw_rewards, vec![6.0, 6.0, 2.0, 6.0]);
    }

    #[test]
    fn two_clears_in_one_step_are_additive() {
        let mut env = env_with_pile_ahead();
        env.positions[0] = Pos::new(0, 6);
        // Agent 0 clears (0,7) while agent 2 clears (4,2).
        let res = env
            .step(&[
                super::super::grid::MOVE_RIGHT,
                STAY,
                super::super::grid::MOVE_RIGHT,
                STAY,
            ])
            .unwrap();
        assert_eq!(res.raw_rewards, vec![8.0, 12.0, 8.0, 12.0]);
        assert!(env.piles.is_empty());
    }

    #[test]
    fn no_clear_means_zero_rewards() {
        let mut env = env_with_pile_ahead();
        let res = env.step(&[STAY, STAY, STAY, STAY]).unwrap();
        assert_eq!(res.raw_rewards, vec![0.0; 4]);
    }

    #[test]
    fn reset_places_six_piles() {
        let mut env = SnowdriftEnv::new(50);
        env.reset(9);
        assert_eq!(env.piles.len(), NUM_PILES);
        assert_eq!(env.cooperation(), 0.0);
    }
}
