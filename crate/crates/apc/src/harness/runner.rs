//! Run orchestration: seed fan-out, the collect -> fit -> freeze -> train
//! phase schedule, punishment wiring, metric logging, and checkpoints.

use crate::defection::{classify, DefectionFlag, FitConfig, HarmModel, HarmModelSnapshot};
use crate::env::{
    record_transitions, Environment, EnvError, ReplayBuffer, RuleKind, StepContext, StepResult,
    PLACEHOLDER_ACTION,
};
use crate::games::{build_env, GameKind};
use crate::harness::config::{
    AgentConfig, ConfigError, ExperimentConfig, LearnerKind, MechanismConfig,
};
use crate::harness::metrics::{mean_std, write_metrics_csv, write_windows_csv, MetricRow, WindowRow};
use crate::learners::{
    A2cConfig, ActorCritic, RulePolicy, StepSample, TabularPolicy, Variant,
};
use crate::nn::Mlp;
use crate::parallel::par_map;
use crate::punishment::{piw, shape_rewards, PiwVector, PunishmentState};
use crate::rng::{derive_seed, stream, Domain};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("io failure at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------
// Agent runtime
// ---------------------------------------------------------------------

pub enum PolicyRuntime {
    Tabular(TabularPolicy),
    A2c(ActorCritic),
    Rule(RulePolicy),
}

impl PolicyRuntime {
    fn act(&self, env: &dyn Environment, agent: usize, obs: &[f64], rng: &mut ChaCha8Rng) -> usize {
        match self {
            PolicyRuntime::Tabular(p) => p.act(rng),
            PolicyRuntime::A2c(p) => p.act(obs, rng),
            PolicyRuntime::Rule(p) => p.act(env, agent, rng),
        }
    }
}

pub struct AgentRuntime {
    pub policy: PolicyRuntime,
    pub variant: Variant,
    /// Per-target harm models; self slot stays None.
    pub harm: Vec<Option<HarmModel>>,
    /// Per-target punishment statistics; self slot stays None.
    pub punish: Vec<Option<PunishmentState>>,
    pub action_rng: ChaCha8Rng,
    pub punish_rng: ChaCha8Rng,
    /// Whether the policy updates during shaped episodes.
    pub learning: bool,
}

impl AgentRuntime {
    fn punishes(&self) -> bool {
        self.variant.punishes() && self.harm.iter().any(|h| h.is_some())
    }

    /// Probability in force for pair (self -> target).
    fn probability(&self, target: usize) -> f64 {
        if !self.variant.adaptive_probability() {
            return 1.0;
        }
        self.punish[target]
            .as_ref()
            .map(|s| s.probability())
            .unwrap_or(1.0)
    }
}

fn build_agents(
    cfg: &ExperimentConfig,
    roster: &[AgentConfig],
    env: &dyn Environment,
    master: u64,
) -> Vec<AgentRuntime> {
    let spec = env.spec();
    let n = spec.num_agents;
    roster
        .iter()
        .enumerate()
        .map(|(i, agent_cfg)| {
            let mut init_rng = stream(master, Domain::Init, i as u64);
            let policy = match agent_cfg.learner {
                LearnerKind::Tabular => PolicyRuntime::Tabular(TabularPolicy::new(
                    cfg.training.tabular_alpha,
                    cfg.training.gamma,
                    0,
                    spec.action_space_sizes[i] - 1,
                )),
                LearnerKind::A2c => PolicyRuntime::A2c(ActorCritic::new(
                    spec.observation_dims[i],
                    spec.action_space_sizes[i],
                    A2cConfig {
                        hidden: cfg.training.hidden,
                        actor_lr: cfg.training.actor_lr,
                        critic_lr: cfg.training.critic_lr,
                        gamma: cfg.training.gamma,
                        entropy_coeff: cfg.training.entropy_coeff,
                    },
                    &mut init_rng,
                )),
                LearnerKind::Rule => PolicyRuntime::Rule(RulePolicy {
                    kind: agent_cfg.rule.unwrap_or(RuleKind::Random),
                }),
            };
            let learning = agent_cfg.learner != LearnerKind::Rule;
            AgentRuntime {
                policy,
                variant: agent_cfg.variant,
                harm: (0..n).map(|_| None).collect(),
                punish: (0..n).map(|_| None).collect(),
                action_rng: stream(master, Domain::Policy, i as u64),
                punish_rng: stream(master, Domain::Punish, i as u64),
                learning,
            }
        })
        .collect()
}

/// Attach punishment machinery to every mechanism-bearing agent:
/// fitted, random, or absent harm models per the ablation variant.
fn install_mechanisms(
    cfg: &ExperimentConfig,
    agents: &mut [AgentRuntime],
    env: &dyn Environment,
    buffer: &ReplayBuffer,
    master: u64,
    window_length: usize,
) {
    let spec = env.spec();
    let n = spec.num_agents;
    let tabular = cfg.environment.name.is_tabular();
    let fit_cfg = FitConfig {
        steps: cfg.training.fit_steps,
        batch_size: cfg.training.fit_batch,
        learning_rate: cfg.training.fit_lr,
    };
    for i in 0..n {
        if !agents[i].variant.punishes() {
            continue;
        }
        // Rule agents act as opponents, not punishers.
        if matches!(agents[i].policy, PolicyRuntime::Rule(_)) {
            continue;
        }
        for j in 0..n {
            if i == j {
                continue;
            }
            let pair_idx = (i * n + j) as u64;
            let model = if agents[i].variant.uses_fitted_predictor() {
                let mut model = if tabular {
                    HarmModel::tabular(spec.action_space_sizes[j], cfg.mechanism.beta)
                } else {
                    let mut init_rng = stream(master, Domain::Init, 100 + pair_idx);
                    let max_other_actions =
                        *spec.action_space_sizes.iter().max().expect("agents exist");
                    HarmModel::mlp(
                        spec.observation_dims[i],
                        n - 1,
                        max_other_actions,
                        spec.action_space_sizes[j],
                        cfg.training.hidden,
                        cfg.mechanism.beta,
                        &mut init_rng,
                    )
                };
                let records = buffer.pair_records(i, j);
                let mut fit_rng = stream(master, Domain::Fit, pair_idx);
                model.fit(&records, &fit_cfg, &mut fit_rng);
                model
            } else {
                HarmModel::random(
                    derive_seed(master, Domain::Init, 10_000 + pair_idx),
                    cfg.training.random_harm_amplitude,
                    spec.action_space_sizes[j],
                    cfg.mechanism.beta,
                )
            };
            agents[i].harm[j] = Some(model);
            agents[i].punish[j] = Some(PunishmentState::new(
                window_length,
                cfg.mechanism.tolerance,
            ));
        }
    }
}

// ---------------------------------------------------------------------
// Episode execution
// ---------------------------------------------------------------------

/// Actions of everyone but `target`, masked by the focal agent's view.
fn non_target_vector(actions: &[usize], visible: &[bool], target: usize) -> Vec<i64> {
    (0..actions.len())
        .filter(|&k| k != target)
        .map(|k| {
            if visible[k] {
                actions[k] as i64
            } else {
                PLACEHOLDER_ACTION
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct EpisodeStats {
    pub raw_returns: Vec<f64>,
    pub total_returns: Vec<f64>,
    pub cooperation: f64,
    pub punish_events: usize,
    pub piw_event_sum: f64,
    /// c * sum of drawn outgoing weights, per punisher.
    pub outgoing_cost: Vec<f64>,
    /// delta * sum of drawn incoming weights, per target.
    pub incoming_penalty: Vec<f64>,
}

enum Phase<'a> {
    Collect(&'a mut ReplayBuffer),
    Shaped,
}

struct WindowSink<'a> {
    rows: &'a mut Vec<WindowRow>,
    run_id: &'a str,
    episode: usize,
}

/// Mean punishment intensity (draw-independent) per target action label.
#[derive(Clone, Debug, Default)]
pub struct LabelIntensity {
    pub by_label: std::collections::BTreeMap<String, (f64, usize)>,
}

impl LabelIntensity {
    fn record(&mut self, label: String, intensity: f64) {
        let entry = self.by_label.entry(label).or_insert((0.0, 0));
        entry.0 += intensity;
        entry.1 += 1;
    }

    pub fn mean(&self, label: &str) -> Option<f64> {
        self.by_label
            .get(label)
            .map(|(sum, count)| if *count == 0 { 0.0 } else { sum / *count as f64 })
    }
}

#[allow(clippy::too_many_arguments)]
fn run_episode(
    env: &mut dyn Environment,
    agents: &mut [AgentRuntime],
    mech: &MechanismConfig,
    episode_seed: u64,
    mut phase: Phase,
    mut windows: Option<WindowSink>,
    mut intensity: Option<&mut LabelIntensity>,
) -> Result<EpisodeStats, EnvError> {
    let n = agents.len();
    let horizon = env.spec().horizon;
    let mut prev = env.reset(episode_seed);
    let mut stats = EpisodeStats {
        raw_returns: vec![0.0; n],
        total_returns: vec![0.0; n],
        ..Default::default()
    };
    stats.outgoing_cost = vec![0.0; n];
    stats.incoming_penalty = vec![0.0; n];
    let mut trajectories: Vec<Vec<StepSample>> = vec![Vec::with_capacity(horizon); n];

    for _t in 0..horizon {
        let actions: Vec<usize> = (0..n)
            .map(|i| {
                let obs = &prev.observations[i];
                // Split borrow: the policy reads the env immutably.
                let (policy, rng) = (&agents[i].policy, &mut agents[i].action_rng);
                policy.act(&*env, i, obs, rng)
            })
            .collect();
        let next = env.step(&actions)?;

        match &mut phase {
            Phase::Collect(buffer) => {
                record_transitions(
                    buffer,
                    &StepContext {
                        observations: &prev.observations,
                        actions: &actions,
                        raw_rewards: &next.raw_rewards,
                        observability: &prev.observability,
                    },
                );
                for i in 0..n {
                    stats.raw_returns[i] += next.raw_rewards[i];
                    stats.total_returns[i] += next.raw_rewards[i];
                }
            }
            Phase::Shaped => {
                let mut piw_rows: Vec<PiwVector> = (0..n)
                    .map(|_| PiwVector::zeros(n, mech.cost, mech.penalty))
                    .collect();
                for i in 0..n {
                    if !agents[i].punishes() {
                        continue;
                    }
                    for j in 0..n {
                        if i == j || agents[i].harm[j].is_none() {
                            continue;
                        }
                        let visible = prev.observability[i][j];
                        let flag = if visible {
                            let non_target =
                                non_target_vector(&actions, &prev.observability[i], j);
                            let dist = agents[i].harm[j]
                                .as_ref()
                                .expect("checked above")
                                .sigma(&prev.observations[i], &non_target);
                            if let Some(sink) = intensity.as_deref_mut() {
                                sink.record(
                                    env.action_label(j, actions[j]),
                                    piw(&dist, actions[j] as i64, true),
                                );
                            }
                            let flag = classify(&dist, actions[j] as i64);
                            if flag.is_defection {
                                let p = agents[i].probability(j);
                                let draw = agents[i].punish_rng.random::<f64>() < p;
                                let weight = piw(&dist, actions[j] as i64, draw);
                                if weight > 0.0 {
                                    piw_rows[i].weights[j] = weight;
                                    stats.punish_events += 1;
                                    stats.piw_event_sum += weight;
                                    if let Some(state) = agents[i].punish[j].as_mut() {
                                        state.record_punishment(weight);
                                    }
                                }
                            }
                            flag
                        } else {
                            DefectionFlag::unobserved()
                        };
                        if let Some(state) = agents[i].punish[j].as_mut() {
                            state.record_step(&flag, visible);
                            if state.window_full() {
                                let summary = state.close_window();
                                if let Some(sink) = windows.as_mut() {
                                    sink.rows.push(WindowRow {
                                        run_id: sink.run_id.to_string(),
                                        episode: sink.episode,
                                        window_index: summary.window_index,
                                        punisher: i,
                                        target: j,
                                        frequency: summary.frequency,
                                        ineffective: summary.ineffective,
                                        probability: summary.probability,
                                        punish_count: summary.punish_count,
                                        mean_weight: summary.mean_weight,
                                    });
                                }
                            }
                        }
                    }
                }
                let totals = shape_rewards(&next.raw_rewards, &piw_rows);
                for i in 0..n {
                    stats.raw_returns[i] += next.raw_rewards[i];
                    stats.total_returns[i] += totals[i];
                    let outgoing: f64 = piw_rows[i]
                        .weights
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, w)| w)
                        .sum();
                    stats.outgoing_cost[i] += mech.cost * outgoing;
                    let incoming: f64 = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| piw_rows[j].weights[i])
                        .sum();
                    stats.incoming_penalty[i] += mech.penalty * incoming;
                    if agents[i].learning {
                        trajectories[i].push(StepSample {
                            observation: prev.observations[i].clone(),
                            action: actions[i],
                            total_reward: totals[i],
                        });
                    }
                }
            }
        }
        prev = next;
        if prev.done {
            break;
        }
    }

    if matches!(phase, Phase::Shaped) {
        for (agent, trajectory) in agents.iter_mut().zip(trajectories.iter()) {
            if !agent.learning || trajectory.is_empty() {
                continue;
            }
            match &mut agent.policy {
                PolicyRuntime::Tabular(policy) => {
                    let actions: Vec<usize> = trajectory.iter().map(|s| s.action).collect();
                    let totals: Vec<f64> = trajectory.iter().map(|s| s.total_reward).collect();
                    policy.update_episode(&actions, &totals);
                }
                PolicyRuntime::A2c(policy) => policy.update_episode(trajectory),
                PolicyRuntime::Rule(_) => {}
            }
        }
    }
    stats.cooperation = env.cooperation();
    Ok(stats)
}

// ---------------------------------------------------------------------
// Single-seed run
// ---------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub record_episodes: bool,
    pub record_windows: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            record_episodes: true,
            record_windows: true,
        }
    }
}

pub struct SeedOutcome {
    pub run_id: String,
    pub seed: u64,
    pub num_agents: usize,
    pub episodes: Vec<MetricRow>,
    pub windows: Vec<WindowRow>,
    /// Mean cooperation rate over the final tenth of training episodes.
    pub final_cooperation: f64,
    /// Mean collective environment reward over the same tail.
    pub final_collective: f64,
    /// Tabular policies' mean contribution probability at the end.
    pub final_contribution_probability: Option<f64>,
    /// Total punisher-side cost c * w summed over the whole run.
    pub cumulative_punishment_cost: f64,
    pub checkpoint: Checkpoint,
}

fn pair_count(agents: &[AgentRuntime]) -> usize {
    let n = agents.len();
    agents
        .iter()
        .map(|a| a.punish.iter().filter(|s| s.is_some()).count())
        .sum::<usize>()
        .max(1)
        .min(n * (n - 1))
}

fn mean_probability(agents: &[AgentRuntime]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for agent in agents {
        for (j, state) in agent.punish.iter().enumerate() {
            if let Some(state) = state {
                let p = if agent.variant.adaptive_probability() {
                    state.probability()
                } else {
                    1.0
                };
                let _ = j;
                sum += p;
                count += 1;
            }
        }
    }
    if count == 0 {
        1.0
    } else {
        sum / count as f64
    }
}

pub fn run_single(cfg: &ExperimentConfig, seed: u64, options: RunOptions) -> Result<SeedOutcome, RunError> {
    let mut env = build_env(&cfg.environment)?;
    let spec = env.spec().clone();
    let n = spec.num_agents;
    let roster = cfg.roster(n)?;
    let run_id = format!("{}-s{seed}", cfg.name);
    let window_length = cfg.window_length(spec.horizon);
    let mut agents = build_agents(cfg, &roster, env.as_ref(), seed);

    // Phase 1: collect trajectories under untrained policies.
    let needs_fit = roster
        .iter()
        .any(|a| a.variant.uses_fitted_predictor() && a.learner != LearnerKind::Rule);
    let mut buffer = ReplayBuffer::new(cfg.training.buffer_capacity);
    if needs_fit {
        for episode in 0..cfg.training.collect_episodes {
            let episode_seed = derive_seed(seed, Domain::Env, episode as u64);
            run_episode(
                env.as_mut(),
                &mut agents,
                &cfg.mechanism,
                episode_seed,
                Phase::Collect(&mut buffer),
                None,
                None,
            )?;
        }
    }

    // Fit, then freeze: harm models never change past this point.
    install_mechanisms(cfg, &mut agents, env.as_ref(), &buffer, seed, window_length);

    // Phase 2: policy training with punishment shaping.
    let mut episodes = Vec::new();
    let mut windows = Vec::new();
    let mut coop_curve = Vec::with_capacity(cfg.training.episodes);
    let mut collective_curve = Vec::with_capacity(cfg.training.episodes);
    let mut cumulative_cost = 0.0;
    for episode in 0..cfg.training.episodes {
        let episode_seed =
            derive_seed(seed, Domain::Env, (cfg.training.collect_episodes + episode) as u64);
        let sink = if options.record_windows {
            Some(WindowSink {
                rows: &mut windows,
                run_id: &run_id,
                episode,
            })
        } else {
            None
        };
        let stats = run_episode(
            env.as_mut(),
            &mut agents,
            &cfg.mechanism,
            episode_seed,
            Phase::Shaped,
            sink,
            None,
        )?;
        let collective: f64 = stats.raw_returns.iter().sum();
        coop_curve.push(stats.cooperation);
        collective_curve.push(collective);
        cumulative_cost += stats.outgoing_cost.iter().sum::<f64>();
        if options.record_episodes && episode % cfg.outputs.log_every == 0 {
            let opportunities = (pair_count(&agents) * spec.horizon).max(1);
            episodes.push(MetricRow {
                run_id: run_id.clone(),
                seed,
                episode,
                raw_returns: stats.raw_returns.clone(),
                total_returns: stats.total_returns.clone(),
                collective_env_reward: collective,
                cooperation_rate: stats.cooperation,
                punishment_frequency: stats.punish_events as f64 / opportunities as f64,
                mean_probability: mean_probability(&agents),
                mean_piw: if stats.punish_events > 0 {
                    stats.piw_event_sum / stats.punish_events as f64
                } else {
                    0.0
                },
            });
        }
    }

    let tail = (cfg.training.episodes / 10).max(1).min(coop_curve.len());
    let final_cooperation =
        coop_curve[coop_curve.len() - tail..].iter().sum::<f64>() / tail as f64;
    let final_collective =
        collective_curve[collective_curve.len() - tail..].iter().sum::<f64>() / tail as f64;
    let contribution: Vec<f64> = agents
        .iter()
        .filter_map(|a| match &a.policy {
            PolicyRuntime::Tabular(p) => Some(p.contribution_probability()),
            _ => None,
        })
        .collect();
    let final_contribution_probability = if contribution.is_empty() {
        None
    } else {
        Some(contribution.iter().sum::<f64>() / contribution.len() as f64)
    };

    let checkpoint = make_checkpoint(cfg, seed, &agents);
    Ok(SeedOutcome {
        run_id,
        seed,
        num_agents: n,
        episodes,
        windows,
        final_cooperation,
        final_collective,
        final_contribution_probability,
        cumulative_punishment_cost: cumulative_cost,
        checkpoint,
    })
}

// ---------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum PolicyCheckpoint {
    Tabular(TabularPolicy),
    A2c {
        actor_dims: Vec<usize>,
        actor_params: Vec<f64>,
        critic_dims: Vec<usize>,
        critic_params: Vec<f64>,
        config: A2cConfig,
    },
    Rule(RulePolicy),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub variant: Variant,
    pub policy: PolicyCheckpoint,
    pub harm: Vec<Option<HarmModelSnapshot>>,
}

/// Versioned bundle of trained policies and frozen harm models.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_name: String,
    pub env: GameKind,
    pub seed: u64,
    pub agents: Vec<AgentCheckpoint>,
}

fn make_checkpoint(cfg: &ExperimentConfig, seed: u64, agents: &[AgentRuntime]) -> Checkpoint {
    let agents = agents
        .iter()
        .map(|agent| {
            let policy = match &agent.policy {
                PolicyRuntime::Tabular(p) => PolicyCheckpoint::Tabular(p.clone()),
                PolicyRuntime::A2c(p) => PolicyCheckpoint::A2c {
                    actor_dims: p.actor.dims().to_vec(),
                    actor_params: p.actor.params().to_vec(),
                    critic_dims: p.critic.dims().to_vec(),
                    critic_params: p.critic.params().to_vec(),
                    config: p.config,
                },
                PolicyRuntime::Rule(p) => PolicyCheckpoint::Rule(*p),
            };
            AgentCheckpoint {
                variant: agent.variant,
                policy,
                harm: agent
                    .harm
                    .iter()
                    .map(|h| h.as_ref().map(|m| m.to_snapshot()))
                    .collect(),
            }
        })
        .collect();
    Checkpoint {
        version: CHECKPOINT_VERSION,
        config_name: cfg.name.clone(),
        env: cfg.environment.name,
        seed,
        agents,
    }
}

/// Rebuild one agent's runtime from a checkpoint entry.
pub fn restore_agent(
    entry: &AgentCheckpoint,
    master: u64,
    index: usize,
    window_length: usize,
    tolerance: f64,
    learning: bool,
) -> Result<AgentRuntime, RunError> {
    let policy = match &entry.policy {
        PolicyCheckpoint::Tabular(p) => PolicyRuntime::Tabular(p.clone()),
        PolicyCheckpoint::A2c {
            actor_dims,
            actor_params,
            critic_dims,
            critic_params,
            config,
        } => {
            let mut init_rng = stream(master, Domain::Init, index as u64);
            let mut learner = ActorCritic::new(
                actor_dims[0],
                *actor_dims.last().unwrap(),
                *config,
                &mut init_rng,
            );
            if learner.actor.num_params() != actor_params.len()
                || learner.critic.num_params() != critic_params.len()
            {
                return Err(RunError::Checkpoint(
                    "actor/critic parameter count mismatch".to_string(),
                ));
            }
            learner.actor = Mlp::from_params(actor_dims.clone(), actor_params.clone());
            learner.critic = Mlp::from_params(critic_dims.clone(), critic_params.clone());
            PolicyRuntime::A2c(learner)
        }
        PolicyCheckpoint::Rule(p) => PolicyRuntime::Rule(*p),
    };
    let harm: Vec<Option<HarmModel>> = entry
        .harm
        .iter()
        .map(|h| {
            h.as_ref()
                .map(|snap| HarmModel::from_snapshot(snap).map_err(RunError::Checkpoint))
                .transpose()
        })
        .collect::<Result<_, _>>()?;
    let punish = harm
        .iter()
        .map(|h| {
            h.as_ref()
                .map(|_| PunishmentState::new(window_length, tolerance))
        })
        .collect();
    Ok(AgentRuntime {
        policy,
        variant: entry.variant,
        harm,
        punish,
        action_rng: stream(master, Domain::Eval, index as u64),
        punish_rng: stream(master, Domain::Punish, 1_000 + index as u64),
        learning,
    })
}

// ---------------------------------------------------------------------
// Experiment-level run (all seeds, with files)
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl StatSummary {
    fn from_values(values: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&values);
        StatSummary {
            mean,
            std,
            per_seed: values,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub environment: GameKind,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub final_cooperation: StatSummary,
    pub final_collective: StatSummary,
    pub final_contribution_probability: Option<StatSummary>,
    pub cumulative_punishment_cost: StatSummary,
}

pub struct ExperimentOutput {
    pub outcomes: Vec<SeedOutcome>,
    pub summary: RunSummary,
}

/// Run every seed (in parallel when enabled) without touching the
/// filesystem.
pub fn run_all_seeds(cfg: &ExperimentConfig, options: RunOptions) -> Result<ExperimentOutput, RunError> {
    let results = par_map(cfg.training.seeds.clone(), |seed| {
        run_single(cfg, seed, options)
    });
    let mut outcomes = Vec::with_capacity(results.len());
    for result in results {
        outcomes.push(result?);
    }
    let summary = summarize(cfg, &outcomes);
    Ok(ExperimentOutput { outcomes, summary })
}

fn summarize(cfg: &ExperimentConfig, outcomes: &[SeedOutcome]) -> RunSummary {
    let contribution: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.final_contribution_probability)
        .collect();
    RunSummary {
        name: cfg.name.clone(),
        environment: cfg.environment.name,
        seeds: cfg.training.seeds.clone(),
        episodes: cfg.training.episodes,
        final_cooperation: StatSummary::from_values(
            outcomes.iter().map(|o| o.final_cooperation).collect(),
        ),
        final_collective: StatSummary::from_values(
            outcomes.iter().map(|o| o.final_collective).collect(),
        ),
        final_contribution_probability: if contribution.is_empty() {
            None
        } else {
            Some(StatSummary::from_values(contribution))
        },
        cumulative_punishment_cost: StatSummary::from_values(
            outcomes.iter().map(|o| o.cumulative_punishment_cost).collect(),
        ),
    }
}

/// Run the experiment and write one metrics CSV per seed, window
/// telemetry, checkpoints, and a cross-seed summary.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<ExperimentOutput, RunError> {
    let options = RunOptions {
        record_episodes: true,
        record_windows: cfg.outputs.windows,
    };
    let output = run_all_seeds(cfg, options)?;
    let dir = out_root.join(&cfg.outputs.dir);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for outcome in &output.outcomes {
        let metrics_path = dir.join(format!("metrics-s{}.csv", outcome.seed));
        let mut file = std::fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
        write_metrics_csv(&mut file, outcome.num_agents, &outcome.episodes)
            .map_err(io_err(&metrics_path))?;
        if cfg.outputs.windows {
            let windows_path = dir.join(format!("windows-s{}.csv", outcome.seed));
            let mut file = std::fs::File::create(&windows_path).map_err(io_err(&windows_path))?;
            write_windows_csv(&mut file, &outcome.windows).map_err(io_err(&windows_path))?;
        }
        let ckpt_path = dir.join(format!("checkpoint-s{}.json", outcome.seed));
        let json = serde_json::to_string(&outcome.checkpoint)
            .map_err(|e| RunError::Checkpoint(e.to_string()))?;
        let mut file = std::fs::File::create(&ckpt_path).map_err(io_err(&ckpt_path))?;
        file.write_all(json.as_bytes()).map_err(io_err(&ckpt_path))?;
    }
    let summary_path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&output.summary)
        .map_err(|e| RunError::Checkpoint(e.to_string()))?;
    let mut file = std::fs::File::create(&summary_path).map_err(io_err(&summary_path))?;
    file.write_all(json.as_bytes()).map_err(io_err(&summary_path))?;
    file.write_all(b"\n").map_err(io_err(&summary_path))?;
    Ok(output)
}

pub fn checkpoint_path(out_root: &Path, cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    out_root
        .join(&cfg.outputs.dir)
        .join(format!("checkpoint-s{seed}.json"))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, RunError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| RunError::Checkpoint(e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(RunError::Checkpoint(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    Ok(ckpt)
}

// Internal episode driver shared with matchup evaluation.
pub(crate) fn run_shaped_episode(
    env: &mut dyn Environment,
    agents: &mut [AgentRuntime],
    mech: &MechanismConfig,
    episode_seed: u64,
    windows: Option<(&mut Vec<WindowRow>, &str, usize)>,
) -> Result<EpisodeStats, EnvError> {
    let sink = windows.map(|(rows, run_id, episode)| WindowSink {
        rows,
        run_id,
        episode,
    });
    run_episode(env, agents, mech, episode_seed, Phase::Shaped, sink)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
            name = "tiny"
            [environment]
            name = "ipgg"
            num_agents = 5
            horizon = 10

            [[agents]]
            learner = "tabular"

            [mechanism]
            cost = 0.7
            penalty = 0.7

            [training]
            episodes = 40
            collect_episodes = 40
            seeds = [0]
            fit_steps = 400
            fit_batch = 32
            fit_lr = 0.05

            [outputs]
            dir = "tiny"
            "#,
        )
        .unwrap()
    }

    #[test]
    fn identical_seeds_give_identical_outcomes() {
        let cfg = tiny_config();
        let a = run_single(&cfg, 3, RunOptions::default()).unwrap();
        let b = run_single(&cfg, 3, RunOptions::default()).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.windows, b.windows);
        assert_eq!(a.final_cooperation, b.final_cooperation);
        let c = run_single(&cfg, 4, RunOptions::default()).unwrap();
        assert_ne!(a.episodes, c.episodes);
    }

    #[test]
    fn accounting_identity_holds_per_row() {
        let cfg = tiny_config();
        let outcome = run_single(&cfg, 1, RunOptions::default()).unwrap();
        for row in &outcome.episodes {
            let collective: f64 = row.raw_returns.iter().sum();
            assert!((collective - row.collective_env_reward).abs() < 1e-9);
        }
    }

    #[test]
    fn punishment_drives_cooperation_in_the_tiny_run() {
        let cfg = tiny_config();
        let outcome = run_single(&cfg, 0, RunOptions::default()).unwrap();
        assert!(
            outcome.final_cooperation > 0.9,
            "cooperation = {}",
            outcome.final_cooperation
        );
    }

    #[test]
    fn no_punishment_variant_defects() {
        let mut cfg = tiny_config();
        cfg.agents[0].variant = Variant::NoPunishment;
        let outcome = run_single(&cfg, 0, RunOptions::default()).unwrap();
        assert!(
            outcome.final_cooperation < 0.2,
            "cooperation = {}",
            outcome.final_cooperation
        );
        // Without mechanisms there is no punishment telemetry.
        assert!(outcome.windows.is_empty());
        assert_eq!(outcome.cumulative_punishment_cost, 0.0);
    }

    #[test]
    fn total_return_equals_raw_minus_costs() {
        let cfg = tiny_config();
        let outcome = run_single(&cfg, 2, RunOptions::default()).unwrap();
        // Spot-check the relation on logged rows: totals never exceed raws
        // and the punishment mass reconciles at episode grain.
        for row in &outcome.episodes {
            for i in 0..outcome.num_agents {
                assert!(row.total_returns[i] <= row.raw_returns[i] + 1e-9);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_restores_policies() {
        let cfg = tiny_config();
        let outcome = run_single(&cfg, 0, RunOptions::default()).unwrap();
        let json = serde_json::to_string(&outcome.checkpoint).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let agent = restore_agent(&back.agents[0], 9, 0, 10, 0.05, false).unwrap();
        match (&agent.policy, &back.agents[0].policy) {
            (PolicyRuntime::Tabular(p), PolicyCheckpoint::Tabular(q)) => {
                assert_eq!(p.theta, q.theta);
            }
            _ => panic!("expected tabular policy"),
        }
        assert_eq!(agent.harm.iter().filter(|h| h.is_some()).count(), 4);
    }
}
