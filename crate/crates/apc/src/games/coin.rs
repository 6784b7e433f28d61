//! Coin game: a spatial iterated prisoner's dilemma. Two agents on a 5x5
//! map collect a single coin; any pickup pays 1 point, but picking up the
//! other agent's color costs that agent 2 points.

use super::grid::{
    egocentric_obs, greedy_move_toward, observability_matrix, resolve_moves, sample_empty_cell,
    Grid, Pos, MOVE_LABELS, NUM_MOVE_ACTIONS, OBS_WINDOW,
};
use crate::env::{EnvError, Environment, GameSpec, RuleKind, StepResult};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GRID: Grid = Grid {
    height: 5,
    width: 5,
};
const NUM_AGENTS: usize = 2;
// Channels: self, other agents, own-color coin, other-color coin (+walls).
const NUM_CHANNELS: usize = 4;

pub struct CoinGameEnv {
    spec: GameSpec,
    rng: ChaCha8Rng,
    positions: Vec<Pos>,
    coin_pos: Pos,
    coin_color: usize,
    timestep: usize,
    done: bool,
    own_pickups: usize,
    total_pickups: usize,
}

impl CoinGameEnv {
    pub fn new(horizon: usize) -> Self {
        let obs_dim = (NUM_CHANNELS + 1) * OBS_WINDOW * OBS_WINDOW;
        CoinGameEnv {
            spec: GameSpec {
                num_agents: NUM_AGENTS,
                action_space_sizes: vec![NUM_MOVE_ACTIONS; NUM_AGENTS],
                observation_dims: vec![obs_dim; NUM_AGENTS],
                horizon,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            positions: vec![Pos::new(1, 1), Pos::new(3, 3)],
            coin_pos: Pos::new(0, 0),
            coin_color: 0,
            timestep: 0,
            done: true,
            own_pickups: 0,
            total_pickups: 0,
        }
    }

    fn spawn_coin(&mut self) {
        self.coin_pos = sample_empty_cell(GRID, &self.positions, &mut self.rng);
        self.coin_color = self.rng.random_range(0..NUM_AGENTS);
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
                let own_coin = self.coin_color == agent;
                let coin = self.coin_pos;
                let self_ch = |p: Pos| p == me;
                let others_ch = |p: Pos| others.contains(&p);
                let own_coin_ch = move |p: Pos| own_coin && p == coin;
                let other_coin_ch = move |p: Pos| !own_coin && p == coin;
                egocentric_obs(
                    GRID,
                    me,
                    &[&self_ch, &others_ch, &own_coin_ch, &other_coin_ch],
                )
            })
            .collect()
    }
}

impl Environment for CoinGameEnv {
    fn spec(&self) -> &GameSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        // Fixed spawns keep both agents mutually visible at reset.
        self.positions = vec![Pos::new(1, 1), Pos::new(3, 3)];
        self.timestep = 0;
        self.done = false;
        self.own_pickups = 0;
        self.total_pickups = 0;
        self.spawn_coin();
        StepResult::initial(self.observations(), observability_matrix(&self.positions))
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        self.validate_actions(joint_action)?;
        self.positions = resolve_moves(GRID, &self.positions, joint_action);
        let mut rewards = vec![0.0; NUM_AGENTS];
        if let Some(collector) = self.positions.iter().position(|&p| p == self.coin_pos) {
            rewards[collector] += 1.0;
            self.total_pickups += 1;
            if self.coin_color == collector {
                self.own_pickups += 1;
            } else {
                rewards[self.coin_color] -= 2.0;
            }
            self.spawn_coin();
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
        if self.total_pickups == 0 {
            1.0
        } else {
            self.own_pickups as f64 / self.total_pickups as f64
        }
    }

    fn rule_action(&self, agent: usize, kind: RuleKind, rng: &mut ChaCha8Rng) -> usize {
        let me = self.positions[agent];
        match kind {
            RuleKind::Random => rng.random_range(0..NUM_MOVE_ACTIONS),
            // Cooperate: chase only own-color coins, otherwise wander.
            RuleKind::AlwaysCooperate => {
                if self.coin_color == agent {
                    greedy_move_toward(me, self.coin_pos)
                } else {
                    rng.random_range(0..NUM_MOVE_ACTIONS)
                }
            }
            // Defect: chase every coin regardless of color.
            RuleKind::AlwaysDefect => greedy_move_toward(me, self.coin_pos),
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
            if p == self.coin_pos {
                return if self.coin_color == 0 { 'a' } else { 'b' };
            }
            '.'
        })
    }

    fn name(&self) -> &'static str {
        "coin_game"
    }
}

pub(super) fn render_grid(grid: Grid, cell: impl Fn(Pos) -> char) -> String {
    let mut out = String::new();
    for r in 0..grid.height {
        for c in 0..grid.width {
            out.push(cell(Pos::new(r, c)));
        }
        out.push('\n');
    }
    out
}
