//! Partially observable Markov game core: episode contract, transition
//! records, and the shared replay buffer.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;
use thiserror::Error;

/// Action id used in records; -1 marks an unobservable agent's action.
pub const PLACEHOLDER_ACTION: i64 = -1;

/// Static description of a game instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameSpec {
    pub num_agents: usize,
    /// Per-agent action-space size |A^i|.
    pub action_space_sizes: Vec<usize>,
    /// Per-agent flattened observation length.
    pub observation_dims: Vec<usize>,
    /// Episode length H in timesteps.
    pub horizon: usize,
}

impl GameSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.num_agents < 2 {
            return Err(EnvError::BadSpec("num_agents must be >= 2".into()));
        }
        if self.action_space_sizes.len() != self.num_agents
            || self.observation_dims.len() != self.num_agents
        {
            return Err(EnvError::BadSpec(
                "per-agent vectors must have num_agents entries".into(),
            ));
        }
        if self.action_space_sizes.iter().any(|&a| a < 2) {
            return Err(EnvError::BadSpec("every action space needs >= 2 actions".into()));
        }
        if self.horizon == 0 {
            return Err(EnvError::BadSpec("horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// One environment transition as seen by all agents.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    /// Environment reward before any punishment shaping.
    pub raw_rewards: Vec<f64>,
    pub done: bool,
    /// observability[i][j]: j is within i's observation range. Diagonal true.
    pub observability: Vec<Vec<bool>>,
}

impl StepResult {
    pub fn initial(observations: Vec<Vec<f64>>, observability: Vec<Vec<bool>>) -> Self {
        let n = observations.len();
        StepResult {
            observations,
            raw_rewards: vec![0.0; n],
            done: false,
            observability,
        }
    }
}

/// One (focal, target) training atom for the harm model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub focal_agent: usize,
    pub target_agent: usize,
    /// Focal observation o^i at the time the joint action was taken.
    pub observation: Vec<f64>,
    /// Fixed length N-1: actions of all agents except the target, in agent
    /// order, -1 where the owner was outside the focal agent's view.
    pub non_target_actions: Vec<i64>,
    /// Target action, or -1 if the target was unobservable.
    pub target_action: i64,
    pub raw_reward: f64,
}

impl TransitionRecord {
    /// Records with an unobserved target are kept for accounting but
    /// excluded from harm-model fitting.
    pub fn eligible_for_fitting(&self) -> bool {
        self.target_action != PLACEHOLDER_ACTION
    }
}

/// Everything needed to turn one env step into transition records.
pub struct StepContext<'a> {
    /// Observations the agents acted on (pre-step).
    pub observations: &'a [Vec<f64>],
    pub actions: &'a [usize],
    pub raw_rewards: &'a [f64],
    /// Observability at action time (pre-step).
    pub observability: &'a [Vec<bool>],
}

/// Bounded FIFO of transition records, oldest evicted first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    records: VecDeque<TransitionRecord>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            records: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, record: TransitionRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.records.iter()
    }

    /// Fitting view for one directed pair: observable-target records only.
    pub fn pair_records(&self, focal: usize, target: usize) -> Vec<&TransitionRecord> {
        self.records
            .iter()
            .filter(|r| {
                r.focal_agent == focal && r.target_agent == target && r.eligible_for_fitting()
            })
            .collect()
    }
}

/// Append one record per ordered agent pair (i, j), i != j.
pub fn record_transitions(buffer: &mut ReplayBuffer, ctx: &StepContext) {
    let n = ctx.actions.len();
    for focal in 0..n {
        for target in 0..n {
            if focal == target {
                continue;
            }
            let non_target_actions: Vec<i64> = (0..n)
                .filter(|&k| k != target)
                .map(|k| {
                    if ctx.observability[focal][k] {
                        ctx.actions[k] as i64
                    } else {
                        PLACEHOLDER_ACTION
                    }
                })
                .collect();
            let target_action = if ctx.observability[focal][target] {
                ctx.actions[target] as i64
            } else {
                PLACEHOLDER_ACTION
            };
            buffer.push(TransitionRecord {
                focal_agent: focal,
                target_agent: target,
                observation: ctx.observations[focal].clone(),
                non_target_actions,
                target_action,
                raw_reward: ctx.raw_rewards[focal],
            });
        }
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid game spec: {0}")]
    BadSpec(String),
    #[error("agent {agent} chose action {action}, valid range is 0..{valid}")]
    InvalidAction {
        agent: usize,
        action: usize,
        valid: usize,
    },
    #[error("step called after the episode finished")]
    EpisodeDone,
}

/// Behavioral archetypes for scripted opponents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    AlwaysDefect,
    AlwaysCooperate,
    Random,
}

/// A simultaneous-move partially observable Markov game.
pub trait Environment {
    fn spec(&self) -> &GameSpec;

    /// Start a fresh episode. Identical seeds give bit-identical states.
    fn reset(&mut self, seed: u64) -> StepResult;

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError>;

    /// Episode-to-date cooperation rate under this game's own definition.
    fn cooperation(&self) -> f64;

    /// Scripted action for a rule-based agent (greedy pathing in
    /// gridworlds, fixed choice in matrix games).
    fn rule_action(&self, agent: usize, kind: RuleKind, rng: &mut ChaCha8Rng) -> usize;

    /// Human-readable action label for telemetry, e.g. "D" or "hunt_hare".
    fn action_label(&self, agent: usize, action: usize) -> String;

    /// Text dump of the current state for debugging.
    fn ascii_map(&self) -> String;

    fn name(&self) -> &'static str;

    fn validate_actions(&self, joint_action: &[usize]) -> Result<(), EnvError> {
        let spec = self.spec();
        for (agent, &action) in joint_action.iter().enumerate() {
            let valid = spec.action_space_sizes[agent];
            if action >= valid {
                return Err(EnvError::InvalidAction {
                    agent,
                    action,
                    valid,
                });
            }
        }
        Ok(())
    }
}

/// One line of a debugging episode trace (JSONL).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub timestep: usize,
    pub actions: Vec<usize>,
    pub raw_rewards: Vec<f64>,
    pub total_rewards: Vec<f64>,
    pub done: bool,
}

pub fn write_trace<W: Write>(out: &mut W, rows: &[TraceRow]) -> std::io::Result<()> {
    for row in rows {
        let line = serde_json::to_string(row).expect("trace rows serialize");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_fixture<'a>(
        obs: &'a [Vec<f64>],
        actions: &'a [usize],
        rewards: &'a [f64],
        observability: &'a [Vec<bool>],
    ) -> StepContext<'a> {
        StepContext {
            observations: obs,
            actions,
            raw_rewards: rewards,
            observability,
        }
    }

    #[test]
    fn records_one_per_ordered_pair() {
        let obs = vec![vec![0.0]; 2];
        let actions = [1usize, 0];
        let rewards = [0.5, -0.5];
        let observability = vec![vec![true, true], vec![true, true]];
        let mut buffer = ReplayBuffer::new(16);
        record_transitions(
            &mut buffer,
            &ctx_fixture(&obs, &actions, &rewards, &observability),
        );
        assert_eq!(buffer.len(), 2);

        let obs5 = vec![vec![0.0]; 5];
        let actions5 = [0usize, 1, 0, 1, 0];
        let rewards5 = [0.0; 5];
        let observability5 = vec![vec![true; 5]; 5];
        let mut buffer5 = ReplayBuffer::new(64);
        record_transitions(
            &mut buffer5,
            &ctx_fixture(&obs5, &actions5, &rewards5, &observability5),
        );
        assert_eq!(buffer5.len(), 20);
    }

    #[test]
    fn unobservable_target_gets_placeholder_and_is_excluded() {
        let obs = vec![vec![0.0]; 3];
        let actions = [2usize, 1, 0];
        let rewards = [0.0; 3];
        // Agent 0 cannot see agent 2.
        let observability = vec![
            vec![true, true, false],
            vec![true, true, true],
            vec![false, true, true],
        ];
        let mut buffer = ReplayBuffer::new(16);
        record_transitions(
            &mut buffer,
            &ctx_fixture(&obs, &actions, &rewards, &observability),
        );
        let rec: Vec<&TransitionRecord> = buffer
            .iter()
            .filter(|r| r.focal_agent == 0 && r.target_agent == 2)
            .collect();
        assert_eq!(rec.len(), 1);
        assert_eq!(rec[0].target_action, PLACEHOLDER_ACTION);
        assert!(!rec[0].eligible_for_fitting());
        // Record (0 -> 1): non-target vector covers agents {0, 2}; 2 is hidden.
        let rec01: Vec<&TransitionRecord> = buffer
            .iter()
            .filter(|r| r.focal_agent == 0 && r.target_agent == 1)
            .collect();
        assert_eq!(rec01[0].non_target_actions, vec![2, PLACEHOLDER_ACTION]);
        assert!(rec01[0].eligible_for_fitting());
    }

    #[test]
    fn non_target_vector_has_fixed_length() {
        let n = 4;
        let obs = vec![vec![0.0]; n];
        let actions = [0usize, 1, 0, 1];
        let rewards = [0.0; 4];
        let observability = vec![vec![true; n]; n];
        let mut buffer = ReplayBuffer::new(64);
        record_transitions(
            &mut buffer,
            &ctx_fixture(&obs, &actions, &rewards, &observability),
        );
        for r in buffer.iter() {
            assert_eq!(r.non_target_actions.len(), n - 1);
        }
    }

    #[test]
    fn buffer_evicts_oldest_first() {
        let mut buffer = ReplayBuffer::new(2);
        for k in 0..3 {
            buffer.push(TransitionRecord {
                focal_agent: k,
                target_agent: 0,
                observation: vec![],
                non_target_actions: vec![],
                target_action: 0,
                raw_reward: 0.0,
            });
        }
        assert_eq!(buffer.len(), 2);
        let focals: Vec<usize> = buffer.iter().map(|r| r.focal_agent).collect();
        assert_eq!(focals, vec![1, 2]);
    }

    #[test]
    fn spec_validation_catches_degenerate_games() {
        let bad = GameSpec {
            num_agents: 1,
            action_space_sizes: vec![2],
            observation_dims: vec![1],
            horizon: 10,
        };
        assert!(bad.validate().is_err());
        let good = GameSpec {
            num_agents: 2,
            action_space_sizes: vec![2, 2],
            observation_dims: vec![4, 4],
            horizon: 10,
        };
        assert!(good.validate().is_ok());
    }
}
