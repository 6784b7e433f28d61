//! Decentralized policy learning: a tabular contribution policy for the
//! public goods game, small independent actor-critic learners for the
//! gridworlds, and rule-based controllers.

use crate::env::{Environment, RuleKind};
use crate::nn::{softmax, Adam, Mlp};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One-step temporal difference error with terminal masking.
pub fn td_error(r_tot: f64, v_t: f64, v_next: f64, gamma: f64, terminal: bool) -> f64 {
    let bootstrap = if terminal { 0.0 } else { v_next };
    r_tot + gamma * bootstrap - v_t
}

/// Expected drift of the contribution probability in the public goods
/// game under full punishment: `e*r/n - e + (n-1)*delta`. The sign is the
/// contract; the learning-rate factor is excluded.
pub fn expected_coop_gradient(n: usize, e: f64, r: f64, delta: f64) -> f64 {
    e * r / n as f64 - e + (n - 1) as f64 * delta
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Single-parameter Bernoulli contribution policy. The logit moves by the
/// scaled difference between empirical cooperate and defect returns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub theta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub cooperate_action: usize,
    pub defect_action: usize,
}

impl TabularPolicy {
    pub fn new(alpha: f64, gamma: f64, cooperate_action: usize, defect_action: usize) -> Self {
        TabularPolicy {
            theta: 0.0,
            alpha,
            gamma,
            cooperate_action,
            defect_action,
        }
    }

    pub fn contribution_probability(&self) -> f64 {
        sigmoid(self.theta)
    }

    pub fn act(&self, rng: &mut ChaCha8Rng) -> usize {
        if rng.random::<f64>() < self.contribution_probability() {
            self.cooperate_action
        } else {
            self.defect_action
        }
    }

    /// Episode update from empirical per-action mean total rewards. Skipped
    /// when either side went unsampled (the estimate would be undefined).
    pub fn update_episode(&mut self, actions: &[usize], totals: &[f64]) {
        let mean_for = |target: usize| {
            let vals: Vec<f64> = actions
                .iter()
                .zip(totals.iter())
                .filter(|(a, _)| **a == target)
                .map(|(_, r)| *r)
                .collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        if let (Some(r_c), Some(r_d)) = (mean_for(self.cooperate_action), mean_for(self.defect_action))
        {
            self.update_from_estimates(r_c, r_d);
        }
    }

    pub fn update_from_estimates(&mut self, r_c_hat: f64, r_d_hat: f64) {
        self.theta += self.alpha / (1.0 - self.gamma) * (r_c_hat - r_d_hat);
        // Keep the logit finite; the probability remains inside (0, 1).
        self.theta = self.theta.clamp(-60.0, 60.0);
    }
}

/// A2C hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct A2cConfig {
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub entropy_coeff: f64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        A2cConfig {
            hidden: 64,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            gamma: 0.99,
            entropy_coeff: 0.01,
        }
    }
}

/// Independent advantage actor-critic with per-agent parameters. The
/// critic conditions on the agent's own observation.
#[derive(Clone, Debug)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub config: A2cConfig,
}

/// One trajectory step as consumed by the episode update.
#[derive(Clone, Debug)]
pub struct StepSample {
    pub observation: Vec<f64>,
    pub action: usize,
    pub total_reward: f64,
}

impl ActorCritic {
    pub fn new(obs_dim: usize, num_actions: usize, config: A2cConfig, rng: &mut ChaCha8Rng) -> Self {
        let actor = Mlp::new(&[obs_dim, config.hidden, config.hidden, num_actions], rng);
        let critic = Mlp::new(&[obs_dim, config.hidden, config.hidden, 1], rng);
        let actor_opt = Adam::new(config.actor_lr, actor.num_params());
        let critic_opt = Adam::new(config.critic_lr, critic.num_params());
        ActorCritic {
            actor,
            critic,
            actor_opt,
            critic_opt,
            config,
        }
    }

    pub fn action_probabilities(&self, observation: &[f64]) -> Vec<f64> {
        softmax(&self.actor.forward(observation))
    }

    pub fn act(&self, observation: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let probs = self.action_probabilities(observation);
        let mut u = rng.random::<f64>();
        for (a, p) in probs.iter().enumerate() {
            if u < *p {
                return a;
            }
            u -= p;
        }
        probs.len() - 1
    }

    pub fn value(&self, observation: &[f64]) -> f64 {
        self.critic.forward(observation)[0]
    }

    /// One episode of advantage actor-critic: the actor ascends
    /// `td * grad log pi` plus an entropy bonus, the critic descends the
    /// squared TD error against a fixed bootstrap target.
    pub fn update_episode(&mut self, trajectory: &[StepSample]) {
        if trajectory.is_empty() {
            return;
        }
        let values: Vec<f64> = trajectory
            .iter()
            .map(|s| self.value(&s.observation))
            .collect();
        let last = trajectory.len() - 1;
        let mut actor_batch = Vec::with_capacity(trajectory.len());
        let mut critic_batch = Vec::with_capacity(trajectory.len());
        for (t, sample) in trajectory.iter().enumerate() {
            let terminal = t == last;
            let v_next = if terminal { 0.0 } else { values[t + 1] };
            let delta = td_error(sample.total_reward, values[t], v_next, self.config.gamma, terminal);
            actor_batch.push((sample.observation.as_slice(), sample.action, delta));
            let target = sample.total_reward + self.config.gamma * if terminal { 0.0 } else { values[t + 1] };
            critic_batch.push((sample.observation.as_slice(), target));
        }
        let actor_grad = actor_gradient(&self.actor, &actor_batch, self.config.entropy_coeff);
        let mut params = self.actor.params().to_vec();
        if self.actor_opt.step(&mut params, &actor_grad) {
            self.actor.params_mut().copy_from_slice(&params);
        } else {
            eprintln!("warning: non-finite actor gradient, update skipped");
        }
        let critic_grad = critic_gradient(&self.critic, &critic_batch);
        let mut params = self.critic.params().to_vec();
        if self.critic_opt.step(&mut params, &critic_grad) {
            self.critic.params_mut().copy_from_slice(&params);
        } else {
            eprintln!("warning: non-finite critic gradient, update skipped");
        }
    }
}

/// Surrogate the actor descends: mean over the batch of
/// `-(advantage * log pi(a|o) + entropy_coeff * H(pi(.|o)))`.
pub fn actor_surrogate_loss(actor: &Mlp, batch: &[(&[f64], usize, f64)], entropy_coeff: f64) -> f64 {
    let mut loss = 0.0;
    for (obs, action, advantage) in batch {
        let probs = softmax(&actor.forward(obs));
        let entropy: f64 = probs
            .iter()
            .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
            .sum();
        loss -= advantage * probs[*action].ln() + entropy_coeff * entropy;
    }
    loss / batch.len() as f64
}

/// Analytic gradient of [`actor_surrogate_loss`].
pub fn actor_gradient(actor: &Mlp, batch: &[(&[f64], usize, f64)], entropy_coeff: f64) -> Vec<f64> {
    let mut grad = vec![0.0; actor.num_params()];
    let scale = 1.0 / batch.len() as f64;
    for (obs, action, advantage) in batch {
        let cache = actor.forward_cache(obs);
        let probs = softmax(cache.output());
        let entropy: f64 = probs
            .iter()
            .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
            .sum();
        let mut dout = vec![0.0; probs.len()];
        for (k, p) in probs.iter().enumerate() {
            let indicator = if k == *action { 1.0 } else { 0.0 };
            // d(-adv * log pi_a)/dz_k = -adv * (1{k=a} - pi_k)
            let policy_term = -advantage * (indicator - p);
            // d(-coeff * H)/dz_k = coeff * pi_k * (log pi_k + H)
            let entropy_term = entropy_coeff * p * (p.ln() + entropy);
            dout[k] = (policy_term + entropy_term) * scale;
        }
        actor.backward(&cache, &dout, &mut grad);
    }
    grad
}

/// Mean squared error of the critic against fixed targets.
pub fn critic_surrogate_loss(critic: &Mlp, batch: &[(&[f64], f64)]) -> f64 {
    let mut loss = 0.0;
    for (obs, target) in batch {
        let v = critic.forward(obs)[0];
        loss += (v - target) * (v - target);
    }
    loss / batch.len() as f64
}

/// Analytic gradient of [`critic_surrogate_loss`].
pub fn critic_gradient(critic: &Mlp, batch: &[(&[f64], f64)]) -> Vec<f64> {
    let mut grad = vec![0.0; critic.num_params()];
    let scale = 1.0 / batch.len() as f64;
    for (obs, target) in batch {
        let cache = critic.forward_cache(obs);
        let v = cache.output()[0];
        let dout = vec![2.0 * (v - target) * scale];
        critic.backward(&cache, &dout, &mut grad);
    }
    grad
}

/// Stateless scripted controller; the environment supplies the behavior.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RulePolicy {
    pub kind: RuleKind,
}

impl RulePolicy {
    pub fn act(&self, env: &dyn Environment, agent: usize, rng: &mut ChaCha8Rng) -> usize {
        env.rule_action(agent, self.kind, rng)
    }
}

/// Punishment-mechanism ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Fitted predictor plus adaptive probability.
    Full,
    /// Predictor replaced by a frozen randomly initialized one.
    NoDpn,
    /// Punishment probability pinned to 1.
    NoApr,
    /// Mechanism disabled entirely (plain independent learners).
    NoPunishment,
}

impl Variant {
    pub fn punishes(&self) -> bool {
        !matches!(self, Variant::NoPunishment)
    }

    pub fn uses_fitted_predictor(&self) -> bool {
        matches!(self, Variant::Full | Variant::NoApr)
    }

    pub fn adaptive_probability(&self) -> bool {
        matches!(self, Variant::Full | Variant::NoDpn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    #[test]
    fn td_error_hand_values() {
        assert!((td_error(1.0, 0.5, 0.5, 0.99, false) - 0.995).abs() < 1e-12);
        assert_eq!(td_error(0.0, 0.0, 0.0, 0.9, false), 0.0);
        // Terminal step masks the bootstrap.
        assert!((td_error(1.0, 0.2, 123.0, 0.99, true) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn coop_gradient_hand_values() {
        assert!((expected_coop_gradient(5, 1.0, 3.0, 0.7) - 2.4).abs() < 1e-12);
        assert_eq!(expected_coop_gradient(5, 1.0, 3.0, 0.1), 0.0);
        assert!((expected_coop_gradient(5, 1.0, 3.0, 0.05) - -0.2).abs() < 1e-12);
        // r = n removes the dilemma.
        assert!(expected_coop_gradient(5, 1.0, 5.0, 0.0).abs() < 1e-12);
    }

    #[test]
    fn tabular_update_moves_with_return_difference() {
        let mut policy = TabularPolicy::new(0.05, 0.99, 0, 1);
        assert_eq!(policy.contribution_probability(), 0.5);
        policy.update_episode(&[0, 1, 0, 1], &[2.0, 0.0, 2.0, 0.0]);
        assert!(policy.theta > 0.0);
        let mut down = TabularPolicy::new(0.05, 0.99, 0, 1);
        down.update_episode(&[0, 1], &[0.0, 1.0]);
        assert!(down.theta < 0.0);
        // One-sided episodes leave the parameter untouched.
        let mut stuck = TabularPolicy::new(0.05, 0.99, 0, 1);
        stuck.update_episode(&[0, 0], &[1.0, 1.0]);
        assert_eq!(stuck.theta, 0.0);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = stream(21, Domain::Init, 0);
        let actor = Mlp::new(&[3, 8, 4], &mut rng);
        let obs1 = vec![0.2, -0.4, 0.8];
        let obs2 = vec![-0.6, 0.1, 0.3];
        let batch: Vec<(&[f64], usize, f64)> =
            vec![(&obs1, 1, 0.7), (&obs2, 3, -0.4), (&obs1, 0, 0.1)];
        let analytic = actor_gradient(&actor, &batch, 0.01);
        for i in (0..actor.num_params()).step_by(7) {
            let h = 1e-6;
            let mut plus = actor.clone();
            plus.params_mut()[i] += h;
            let mut minus = actor.clone();
            minus.params_mut()[i] -= h;
            let fd = (actor_surrogate_loss(&plus, &batch, 0.01)
                - actor_surrogate_loss(&minus, &batch, 0.01))
                / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            assert!(
                ((analytic[i] - fd) / denom).abs() < 1e-4,
                "param {i}: analytic {} vs fd {}",
                analytic[i],
                fd
            );
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = stream(22, Domain::Init, 0);
        let critic = Mlp::new(&[3, 8, 1], &mut rng);
        let obs1 = vec![0.2, -0.4, 0.8];
        let obs2 = vec![-0.6, 0.1, 0.3];
        let batch: Vec<(&[f64], f64)> = vec![(&obs1, 1.3), (&obs2, -0.2)];
        let analytic = critic_gradient(&critic, &batch);
        for i in (0..critic.num_params()).step_by(5) {
            let h = 1e-6;
            let mut plus = critic.clone();
            plus.params_mut()[i] += h;
            let mut minus = critic.clone();
            minus.params_mut()[i] -= h;
            let fd = (critic_surrogate_loss(&plus, &batch)
                - critic_surrogate_loss(&minus, &batch))
                / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            assert!(((analytic[i] - fd) / denom).abs() < 1e-4);
        }
    }

    #[test]
    fn a2c_solves_a_two_armed_bandit() {
        let mut rng = stream(23, Domain::Init, 0);
        let config = A2cConfig {
            hidden: 16,
            actor_lr: 0.02,
            critic_lr: 0.05,
            gamma: 0.99,
            entropy_coeff: 0.001,
        };
        let mut learner = ActorCritic::new(2, 2, config, &mut rng);
        let obs = vec![1.0, 0.0];
        let mut action_rng = stream(23, Domain::Policy, 0);
        for _ in 0..2_000 {
            let action = learner.act(&obs, &mut action_rng);
            let reward = if action == 0 { 1.0 } else { 0.0 };
            learner.update_episode(&[StepSample {
                observation: obs.clone(),
                action,
                total_reward: reward,
            }]);
        }
        assert!(
            learner.action_probabilities(&obs)[0] > 0.95,
            "pi(0) = {}",
            learner.action_probabilities(&obs)[0]
        );
    }

    #[test]
    fn zero_reward_environment_keeps_entropy() {
        let mut rng = stream(24, Domain::Init, 0);
        let config = A2cConfig {
            hidden: 16,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            gamma: 0.99,
            entropy_coeff: 0.01,
        };
        let mut learner = ActorCritic::new(2, 4, config, &mut rng);
        let obs = vec![0.5, 0.5];
        let initial_entropy: f64 = learner
            .action_probabilities(&obs)
            .iter()
            .map(|&p| -p * p.ln())
            .sum();
        let mut action_rng = stream(24, Domain::Policy, 0);
        for _ in 0..1_000 {
            let action = learner.act(&obs, &mut action_rng);
            learner.update_episode(&[StepSample {
                observation: obs.clone(),
                action,
                total_reward: 0.0,
            }]);
        }
        let entropy: f64 = learner
            .action_probabilities(&obs)
            .iter()
            .map(|&p| -p * p.ln())
            .sum();
        assert!(
            (entropy - initial_entropy).abs() / initial_entropy < 0.1,
            "entropy drifted from {initial_entropy} to {entropy}"
        );
    }

    #[test]
    fn variant_capability_table() {
        assert!(Variant::Full.punishes() && Variant::Full.uses_fitted_predictor());
        assert!(Variant::NoDpn.punishes() && !Variant::NoDpn.uses_fitted_predictor());
        assert!(!Variant::NoApr.adaptive_probability());
        assert!(!Variant::NoPunishment.punishes());
    }
}
