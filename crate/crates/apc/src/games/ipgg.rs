//! Iterated public goods game, plain and graded-contribution variants.
//!
//! Each round every agent chooses a contribution level; the pooled
//! contribution is multiplied by `r` and split equally, while each
//! contributor pays its own share of the endowment:
//! `reward_i = r*e*sum(frac)/n - e*frac_i`.

use crate::env::{EnvError, Environment, GameSpec, RuleKind, StepResult};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpggParams {
    pub n: usize,
    /// Endowment e, in reward units.
    pub e: f64,
    /// Pool multiplier r; the dilemma needs 1 < r < n.
    pub r: f64,
}

impl IpggParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n < 2 {
            return Err(EnvError::BadSpec("public goods game needs n >= 2".into()));
        }
        if self.e <= 0.0 {
            return Err(EnvError::BadSpec("endowment must be positive".into()));
        }
        if self.r <= 1.0 || self.r >= self.n as f64 {
            return Err(EnvError::BadSpec(format!(
                "multiplier must satisfy 1 < r < n, got r={} n={}",
                self.r, self.n
            )));
        }
        Ok(())
    }
}

/// A named contribution fraction. Action ids index these in order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContributionLevel {
    pub label: &'static str,
    pub fraction: f64,
}

/// Plain game: full contribution or none.
pub const IPGG_LEVELS: [ContributionLevel; 2] = [
    ContributionLevel {
        label: "C",
        fraction: 1.0,
    },
    ContributionLevel {
        label: "D",
        fraction: 0.0,
    },
];

/// Graded variant: partial contributions between full cooperation and
/// defection. "C-x" contributes fraction x.
pub const MIPGG_LEVELS: [ContributionLevel; 4] = [
    ContributionLevel {
        label: "C",
        fraction: 1.0,
    },
    ContributionLevel {
        label: "C-0.1",
        fraction: 0.1,
    },
    ContributionLevel {
        label: "C-0.2",
        fraction: 0.2,
    },
    ContributionLevel {
        label: "D",
        fraction: 0.0,
    },
];

/// Per-agent rewards for one round given contribution fractions.
pub fn ipgg_rewards(fractions: &[f64], params: &IpggParams) -> Vec<f64> {
    debug_assert_eq!(fractions.len(), params.n);
    debug_assert!(fractions.iter().all(|f| (0.0..=1.0).contains(f)));
    let total: f64 = fractions.iter().sum();
    let share = params.r * params.e * total / params.n as f64;
    fractions.iter().map(|f| share - params.e * f).collect()
}

/// Graded-level wrapper over [`ipgg_rewards`].
pub fn mipgg_rewards(levels: &[ContributionLevel], params: &IpggParams) -> Vec<f64> {
    let fractions: Vec<f64> = levels.iter().map(|l| l.fraction).collect();
    ipgg_rewards(&fractions, params)
}

/// Fully observable repeated public goods game. The observation is the
/// one-hot encoding of the previous round's joint action (zeros in the
/// first round).
pub struct PublicGoodsEnv {
    params: IpggParams,
    levels: &'static [ContributionLevel],
    spec: GameSpec,
    timestep: usize,
    done: bool,
    prev_joint: Option<Vec<usize>>,
    contribution_sum: f64,
    steps_seen: usize,
}

impl PublicGoodsEnv {
    pub fn new(params: IpggParams, graded: bool, horizon: usize) -> Self {
        let levels: &'static [ContributionLevel] = if graded { &MIPGG_LEVELS } else { &IPGG_LEVELS };
        let obs_dim = params.n * levels.len();
        let spec = GameSpec {
            num_agents: params.n,
            action_space_sizes: vec![levels.len(); params.n],
            observation_dims: vec![obs_dim; params.n],
            horizon,
        };
        PublicGoodsEnv {
            params,
            levels,
            spec,
            timestep: 0,
            done: true,
            prev_joint: None,
            contribution_sum: 0.0,
            steps_seen: 0,
        }
    }

    pub fn cooperate_action(&self) -> usize {
        0
    }

    pub fn defect_action(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &'static [ContributionLevel] {
        self.levels
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        let n = self.params.n;
        let a = self.levels.len();
        let mut obs = vec![0.0; n * a];
        if let Some(joint) = &self.prev_joint {
            for (agent, &action) in joint.iter().enumerate() {
                obs[agent * a + action] = 1.0;
            }
        }
        vec![obs; n]
    }

    fn full_observability(&self) -> Vec<Vec<bool>> {
        vec![vec![true; self.params.n]; self.params.n]
    }
}

impl Environment for PublicGoodsEnv {
    fn spec(&self) -> &GameSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.timestep = 0;
        self.done = false;
        self.prev_joint = None;
        self.contribution_sum = 0.0;
        self.steps_seen = 0;
        StepResult::initial(self.observations(), self.full_observability())
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        self.validate_actions(joint_action)?;
        let fractions: Vec<f64> = joint_action
            .iter()
            .map(|&a| self.levels[a].fraction)
            .collect();
        let rewards = ipgg_rewards(&fractions, &self.params);
        self.contribution_sum += fractions.iter().sum::<f64>() / self.params.n as f64;
        self.steps_seen += 1;
        self.prev_joint = Some(joint_action.to_vec());
        self.timestep += 1;
        self.done = self.timestep >= self.spec.horizon;
        Ok(StepResult {
            observations: self.observations(),
            raw_rewards: rewards,
            done: self.done,
            observability: self.full_observability(),
        })
    }

    fn cooperation(&self) -> f64 {
        if self.steps_seen == 0 {
            0.0
        } else {
            self.contribution_sum / self.steps_seen as f64
        }
    }

    fn rule_action(&self, _agent: usize, kind: RuleKind, rng: &mut ChaCha8Rng) -> usize {
        match kind {
            RuleKind::AlwaysCooperate => self.cooperate_action(),
            RuleKind::AlwaysDefect => self.defect_action(),
            RuleKind::Random => rng.random_range(0..self.levels.len()),
        }
    }

    fn action_label(&self, _agent: usize, action: usize) -> String {
        self.levels[action].label.to_string()
    }

    fn ascii_map(&self) -> String {
        match &self.prev_joint {
            None => "round 0 (no history)".to_string(),
            Some(joint) => joint
                .iter()
                .map(|&a| self.levels[a].label)
                .collect::<Vec<_>>()
                .join(" "),
        }
    }

    fn name(&self) -> &'static str {
        if self.levels.len() == 2 {
            "ipgg"
        } else {
            "mipgg"
        }
    }
}
