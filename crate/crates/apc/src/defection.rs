//! Defection awareness: per-pair harm models and the defection
//! distribution derived from them.
//!
//! For a directed pair (i, j) the harm model regresses q(context, a^j)
//! toward E[-r^i | context, a^j], where the context is agent i's
//! observation plus the joint action of all non-target agents. The
//! defection distribution is then the exact maximizer of the
//! entropy-regularized objective `E_sigma[q] + beta * H(sigma)`, i.e. the
//! softmax of q at temperature beta. An action is classified as a
//! defection when its probability strictly exceeds the uniform level
//! 1 / |A^j|.

use crate::env::{TransitionRecord, PLACEHOLDER_ACTION};
use crate::nn::{softmax, Adam, Mlp};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Checkpoint format version for serialized harm models.
pub const HARM_MODEL_VERSION: u32 = 1;

/// FNV-1a over the context so table lookups and telemetry share one key.
fn fnv1a(bytes: impl Iterator<Item = u8>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

pub fn context_hash(observation: &[f64], non_target_actions: &[i64]) -> u64 {
    let obs_bytes = observation.iter().flat_map(|v| v.to_bits().to_le_bytes());
    let act_bytes = non_target_actions.iter().flat_map(|a| a.to_le_bytes());
    fnv1a(obs_bytes.chain(act_bytes))
}

/// sigma^{ij}: probability over the target's action space.
#[derive(Clone, Debug, PartialEq)]
pub struct DefectionDistribution {
    pub probs: Vec<f64>,
    pub entropy_coeff: f64,
    pub context_hash: u64,
}

impl DefectionDistribution {
    pub fn num_actions(&self) -> usize {
        self.probs.len()
    }
}

/// Verdict for one observed target action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefectionFlag {
    pub is_defection: bool,
    /// sigma(a^j), 0 when the target was unobservable.
    pub severity: f64,
    pub observed: bool,
}

impl DefectionFlag {
    pub fn unobserved() -> Self {
        DefectionFlag {
            is_defection: false,
            severity: 0.0,
            observed: false,
        }
    }
}

/// Strict-threshold defection test: sigma(a) > 1/|A|.
pub fn classify(dist: &DefectionDistribution, action: i64) -> DefectionFlag {
    if action == PLACEHOLDER_ACTION || action < 0 {
        return DefectionFlag::unobserved();
    }
    let severity = dist.probs[action as usize];
    DefectionFlag {
        is_defection: severity > 1.0 / dist.num_actions() as f64,
        severity,
        observed: true,
    }
}

/// Value of the entropy-regularized objective for a candidate sigma;
/// test-facing only.
pub fn objective_value(probs: &[f64], q: &[f64], beta: f64) -> f64 {
    let linear: f64 = probs.iter().zip(q.iter()).map(|(p, v)| p * v).sum();
    let entropy: f64 = probs
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum();
    linear + beta * entropy
}

/// Exact-context table; value is a running SGD estimate of E[-r] per
/// target action.
#[derive(Clone, Debug, Default)]
pub struct TableHarm {
    cells: HashMap<u64, Vec<f64>>,
}

/// Function approximator over (observation ++ non-target action one-hots).
/// Placeholder actions get a dedicated "unknown" slot per agent.
#[derive(Clone, Debug)]
pub struct MlpHarm {
    net: Mlp,
    opt: Adam,
    obs_dim: usize,
    num_others: usize,
    slots_per_other: usize,
}

impl MlpHarm {
    fn encode(&self, observation: &[f64], non_target_actions: &[i64]) -> Vec<f64> {
        debug_assert_eq!(observation.len(), self.obs_dim);
        debug_assert_eq!(non_target_actions.len(), self.num_others);
        let mut x = Vec::with_capacity(self.net.input_dim());
        x.extend_from_slice(observation);
        for &a in non_target_actions {
            let mut slot = vec![0.0; self.slots_per_other];
            if a == PLACEHOLDER_ACTION {
                slot[self.slots_per_other - 1] = 1.0;
            } else {
                slot[a as usize] = 1.0;
            }
            x.extend_from_slice(&slot);
        }
        x
    }
}

/// Frozen pseudo-random harm function for the predictor-free ablation:
/// an arbitrary but deterministic map from (context, action) to a value
/// in [-amplitude, amplitude], standing in for an untrained network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomHarm {
    pub seed: u64,
    pub amplitude: f64,
}

impl RandomHarm {
    fn value(&self, ctx: u64, action: usize) -> f64 {
        let mixed = fnv1a(
            self.seed
                .to_le_bytes()
                .into_iter()
                .chain(ctx.to_le_bytes())
                .chain((action as u64).to_le_bytes()),
        );
        // Map the top 53 bits to [-1, 1).
        let unit = (mixed >> 11) as f64 / (1u64 << 53) as f64;
        (unit * 2.0 - 1.0) * self.amplitude
    }
}

#[derive(Clone, Debug)]
pub enum HarmBackend {
    Table(TableHarm),
    Mlp(MlpHarm),
    Random(RandomHarm),
}

/// Trainable state of one directed pair's defection predictor.
#[derive(Clone, Debug)]
pub struct HarmModel {
    backend: HarmBackend,
    beta: f64,
    num_actions: usize,
}

/// Fitting hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 20_000,
            batch_size: 64,
            learning_rate: 1e-2,
        }
    }
}

/// What a fit call did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FitReport {
    /// No eligible records; model untouched.
    SkippedEmpty,
    Fitted { steps: usize, final_loss: f64 },
}

impl HarmModel {
    pub fn tabular(num_actions: usize, beta: f64) -> Self {
        HarmModel {
            backend: HarmBackend::Table(TableHarm::default()),
            beta,
            num_actions,
        }
    }

    pub fn mlp(
        obs_dim: usize,
        num_others: usize,
        max_other_actions: usize,
        num_actions: usize,
        hidden: usize,
        beta: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let slots = max_other_actions + 1;
        let input = obs_dim + num_others * slots;
        let net = Mlp::new(&[input, hidden, hidden, num_actions], rng);
        let opt = Adam::new(1e-2, net.num_params());
        HarmModel {
            backend: HarmBackend::Mlp(MlpHarm {
                net,
                opt,
                obs_dim,
                num_others,
                slots_per_other: slots,
            }),
            beta,
            num_actions,
        }
    }

    pub fn random(seed: u64, amplitude: f64, num_actions: usize, beta: f64) -> Self {
        HarmModel {
            backend: HarmBackend::Random(RandomHarm { seed, amplitude }),
            beta,
            num_actions,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Estimated harm per target action for one context.
    pub fn q_values(&self, observation: &[f64], non_target_actions: &[i64]) -> Vec<f64> {
        match &self.backend {
            HarmBackend::Table(table) => {
                let key = context_hash(observation, non_target_actions);
                table
                    .cells
                    .get(&key)
                    .cloned()
                    .unwrap_or_else(|| vec![0.0; self.num_actions])
            }
            HarmBackend::Mlp(mlp) => mlp.net.forward(&mlp.encode(observation, non_target_actions)),
            HarmBackend::Random(random) => {
                let ctx = context_hash(observation, non_target_actions);
                (0..self.num_actions).map(|a| random.value(ctx, a)).collect()
            }
        }
    }

    /// The defection distribution: softmax(q / beta), the exact maximizer
    /// of the entropy-regularized harm objective for fixed q.
    pub fn sigma(&self, observation: &[f64], non_target_actions: &[i64]) -> DefectionDistribution {
        let q = self.q_values(observation, non_target_actions);
        let logits: Vec<f64> = q.iter().map(|v| v / self.beta).collect();
        DefectionDistribution {
            probs: softmax(&logits),
            entropy_coeff: self.beta,
            context_hash: context_hash(observation, non_target_actions),
        }
    }

    /// Minibatch squared-error regression of q toward -r over the given
    /// records. Records with an unobserved target are ignored.
    pub fn fit(
        &mut self,
        records: &[&TransitionRecord],
        cfg: &FitConfig,
        rng: &mut ChaCha8Rng,
    ) -> FitReport {
        let eligible: Vec<&TransitionRecord> = records
            .iter()
            .copied()
            .filter(|r| r.eligible_for_fitting())
            .collect();
        if eligible.is_empty() {
            eprintln!("warning: harm-model fit skipped, no eligible records");
            return FitReport::SkippedEmpty;
        }
        match &mut self.backend {
            HarmBackend::Random(_) => FitReport::Fitted {
                steps: 0,
                final_loss: f64::NAN,
            },
            HarmBackend::Table(table) => {
                let n = self.num_actions;
                for _ in 0..cfg.steps {
                    for _ in 0..cfg.batch_size {
                        let rec = eligible[rng.random_range(0..eligible.len())];
                        let key = context_hash(&rec.observation, &rec.non_target_actions);
                        let cell = table.cells.entry(key).or_insert_with(|| vec![0.0; n]);
                        let slot = &mut cell[rec.target_action as usize];
                        *slot += cfg.learning_rate * (-rec.raw_reward - *slot);
                    }
                }
                FitReport::Fitted {
                    steps: cfg.steps,
                    final_loss: self.loss(&eligible),
                }
            }
            HarmBackend::Mlp(mlp) => {
                if (mlp.opt.learning_rate() - cfg.learning_rate).abs() > 0.0 {
                    mlp.opt = Adam::new(cfg.learning_rate, mlp.net.num_params());
                }
                let mut grad = vec![0.0; mlp.net.num_params()];
                for _ in 0..cfg.steps {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for _ in 0..cfg.batch_size {
                        let rec = eligible[rng.random_range(0..eligible.len())];
                        let x = mlp.encode(&rec.observation, &rec.non_target_actions);
                        let cache = mlp.net.forward_cache(&x);
                        let predicted = cache.output()[rec.target_action as usize];
                        let mut dout = vec![0.0; self.num_actions];
                        dout[rec.target_action as usize] =
                            2.0 * (predicted - -rec.raw_reward) / cfg.batch_size as f64;
                        mlp.net.backward(&cache, &dout, &mut grad);
                    }
                    let mut params = mlp.net.params().to_vec();
                    if mlp.opt.step(&mut params, &grad) {
                        mlp.net.params_mut().copy_from_slice(&params);
                    }
                }
                FitReport::Fitted {
                    steps: cfg.steps,
                    final_loss: self.loss(&eligible),
                }
            }
        }
    }

    /// Mean squared error of q against -r over eligible records.
    pub fn loss(&self, records: &[&TransitionRecord]) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for rec in records.iter().filter(|r| r.eligible_for_fitting()) {
            let q = self.q_values(&rec.observation, &rec.non_target_actions);
            let err = q[rec.target_action as usize] - -rec.raw_reward;
            sum += err * err;
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    pub fn to_snapshot(&self) -> HarmModelSnapshot {
        let (kind, table, mlp, random) = match &self.backend {
            HarmBackend::Table(t) => {
                let mut entries: Vec<(u64, Vec<f64>)> =
                    t.cells.iter().map(|(k, v)| (*k, v.clone())).collect();
                entries.sort_by_key(|(k, _)| *k);
                ("table", Some(entries), None, None)
            }
            HarmBackend::Mlp(m) => (
                "mlp",
                None,
                Some(MlpSnapshot {
                    dims: m.net.dims().to_vec(),
                    params: m.net.params().to_vec(),
                    obs_dim: m.obs_dim,
                    num_others: m.num_others,
                    slots_per_other: m.slots_per_other,
                }),
                None,
            ),
            HarmBackend::Random(r) => ("random", None, None, Some(r.clone())),
        };
        HarmModelSnapshot {
            version: HARM_MODEL_VERSION,
            kind: kind.to_string(),
            beta: self.beta,
            num_actions: self.num_actions,
            table,
            mlp,
            random,
        }
    }

    pub fn from_snapshot(snap: &HarmModelSnapshot) -> Result<Self, String> {
        if snap.version != HARM_MODEL_VERSION {
            return Err(format!(
                "harm model version {} unsupported (expected {})",
                snap.version, HARM_MODEL_VERSION
            ));
        }
        let backend = match snap.kind.as_str() {
            "table" => {
                let entries = snap.table.as_ref().ok_or("missing table payload")?;
                HarmBackend::Table(TableHarm {
                    cells: entries.iter().cloned().collect(),
                })
            }
            "mlp" => {
                let m = snap.mlp.as_ref().ok_or("missing mlp payload")?;
                let net = Mlp::from_params(m.dims.clone(), m.params.clone());
                let opt = Adam::new(1e-2, net.num_params());
                HarmBackend::Mlp(MlpHarm {
                    net,
                    opt,
                    obs_dim: m.obs_dim,
                    num_others: m.num_others,
                    slots_per_other: m.slots_per_other,
                })
            }
            "random" => {
                HarmBackend::Random(snap.random.clone().ok_or("missing random payload")?)
            }
            other => return Err(format!("unknown harm model kind {other}")),
        };
        Ok(HarmModel {
            backend,
            beta: snap.beta,
            num_actions: snap.num_actions,
        })
    }
}

/// Serializable form: version header, dims, then parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarmModelSnapshot {
    pub version: u32,
    pub kind: String,
    pub beta: f64,
    pub num_actions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(u64, Vec<f64>)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpSnapshot>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomHarm>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpSnapshot {
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
    pub obs_dim: usize,
    pub num_others: usize,
    pub slots_per_other: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn record(obs: Vec<f64>, nt: Vec<i64>, action: i64, reward: f64) -> TransitionRecord {
        TransitionRecord {
            focal_agent: 0,
            target_agent: 1,
            observation: obs,
            non_target_actions: nt,
            target_action: action,
            raw_reward: reward,
        }
    }

    #[test]
    fn table_regresses_to_conditional_means() {
        // Action 0 always coincides with r = -1, action 1 with r = +1.
        let recs: Vec<TransitionRecord> = (0..200)
            .map(|k| {
                let action = (k % 2) as i64;
                let reward = if action == 0 { -1.0 } else { 1.0 };
                record(vec![0.0, 1.0], vec![0], action, reward)
            })
            .collect();
        let refs: Vec<&TransitionRecord> = recs.iter().collect();
        let mut model = HarmModel::tabular(2, 0.1);
        let mut rng = stream(1, Domain::Fit, 0);
        let cfg = FitConfig {
            steps: 500,
            batch_size: 16,
            learning_rate: 0.05,
        };
        model.fit(&refs, &cfg, &mut rng);
        let q = model.q_values(&[0.0, 1.0], &[0]);
        assert!((q[0] - 1.0).abs() < 0.05, "q[0] = {}", q[0]);
        assert!((q[1] - -1.0).abs() < 0.05, "q[1] = {}", q[1]);
    }

    #[test]
    fn zero_rewards_fit_to_zero() {
        let recs: Vec<TransitionRecord> = (0..50)
            .map(|k| record(vec![1.0], vec![1], (k % 2) as i64, 0.0))
            .collect();
        let refs: Vec<&TransitionRecord> = recs.iter().collect();
        let mut model = HarmModel::tabular(2, 0.1);
        let mut rng = stream(2, Domain::Fit, 0);
        model.fit(&refs, &FitConfig::default(), &mut rng);
        let q = model.q_values(&[1.0], &[1]);
        assert!(q.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn single_record_fits_its_own_negated_reward() {
        let rec = record(vec![0.5], vec![2], 1, 0.7);
        let refs = vec![&rec];
        let mut model = HarmModel::tabular(3, 0.1);
        let mut rng = stream(3, Domain::Fit, 0);
        model.fit(
            &refs,
            &FitConfig {
                steps: 2_000,
                batch_size: 8,
                learning_rate: 0.05,
            },
            &mut rng,
        );
        let q = model.q_values(&[0.5], &[2]);
        assert!((q[1] - -0.7).abs() < 1e-6);
    }

    #[test]
    fn empty_buffer_fit_is_a_noop() {
        let rec = record(vec![0.0], vec![PLACEHOLDER_ACTION], PLACEHOLDER_ACTION, 1.0);
        let refs = vec![&rec];
        let mut model = HarmModel::tabular(2, 0.1);
        let mut rng = stream(4, Domain::Fit, 0);
        assert_eq!(
            model.fit(&refs, &FitConfig::default(), &mut rng),
            FitReport::SkippedEmpty
        );
    }

    #[test]
    fn sigma_matches_hand_computed_softmax() {
        let mut model = HarmModel::tabular(2, 1.0);
        if let HarmBackend::Table(t) = &mut model.backend {
            t.cells
                .insert(context_hash(&[0.0], &[0]), vec![-1.0, -2.0]);
        }
        let dist = model.sigma(&[0.0], &[0]);
        assert!((dist.probs[0] - 0.7311).abs() < 1e-4);
        assert!((dist.probs[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn sigma_is_uniform_for_equal_harm() {
        let model = HarmModel::tabular(4, 0.1);
        let dist = model.sigma(&[0.0], &[1, 2]);
        for p in &dist.probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn temperature_limits_flatten_or_sharpen() {
        let make = |beta: f64| {
            let mut model = HarmModel::tabular(3, beta);
            if let HarmBackend::Table(t) = &mut model.backend {
                t.cells
                    .insert(context_hash(&[1.0], &[0]), vec![0.3, 0.1, -0.2]);
            }
            model.sigma(&[1.0], &[0])
        };
        let flat = make(1000.0);
        for p in &flat.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-3);
        }
        let sharp = make(1e-3);
        assert!(sharp.probs[0] > 0.999);
    }

    #[test]
    fn classification_respects_strict_threshold() {
        let dist = DefectionDistribution {
            probs: vec![0.5, 0.3, 0.1, 0.1],
            entropy_coeff: 0.1,
            context_hash: 0,
        };
        let flag = classify(&dist, 0);
        assert!(flag.is_defection);
        assert_eq!(flag.severity, 0.5);
        assert!(!classify(&dist, 2).is_defection);

        let uniform = DefectionDistribution {
            probs: vec![0.25; 4],
            entropy_coeff: 0.1,
            context_hash: 0,
        };
        for a in 0..4 {
            assert!(!classify(&uniform, a).is_defection);
        }
    }

    #[test]
    fn unobservable_action_is_never_a_defection() {
        let dist = DefectionDistribution {
            probs: vec![0.9, 0.1],
            entropy_coeff: 0.1,
            context_hash: 0,
        };
        let flag = classify(&dist, PLACEHOLDER_ACTION);
        assert!(!flag.is_defection);
        assert!(!flag.observed);
        assert_eq!(flag.severity, 0.0);
    }

    #[test]
    fn objective_value_of_uniform_is_pure_entropy() {
        let val = objective_value(&[0.5, 0.5], &[0.0, 0.0], 1.0);
        assert!((val - std::f64::consts::LN_2).abs() < 1e-12);
        // One-hot has zero entropy.
        let one_hot = objective_value(&[1.0, 0.0], &[0.7, -3.0], 1.0);
        assert!((one_hot - 0.7).abs() < 1e-12);
    }

    #[test]
    fn random_backend_is_frozen_and_seed_dependent() {
        let a = HarmModel::random(1, 1.0, 4, 0.1);
        let b = HarmModel::random(2, 1.0, 4, 0.1);
        let qa = a.q_values(&[0.0, 1.0], &[0, 2]);
        let qa2 = a.q_values(&[0.0, 1.0], &[0, 2]);
        let qb = b.q_values(&[0.0, 1.0], &[0, 2]);
        assert_eq!(qa, qa2);
        assert_ne!(qa, qb);
        assert!(qa.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn snapshot_roundtrip_preserves_sigma() {
        let recs: Vec<TransitionRecord> = (0..100)
            .map(|k| {
                let action = (k % 3) as i64;
                record(vec![1.0, 0.0], vec![1], action, action as f64 * 0.3)
            })
            .collect();
        let refs: Vec<&TransitionRecord> = recs.iter().collect();
        let mut model = HarmModel::tabular(3, 0.2);
        let mut rng = stream(5, Domain::Fit, 0);
        model.fit(
            &refs,
            &FitConfig {
                steps: 200,
                batch_size: 8,
                learning_rate: 0.05,
            },
            &mut rng,
        );
        let snap = model.to_snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let back: HarmModelSnapshot = serde_json::from_str(&json).unwrap();
        let restored = HarmModel::from_snapshot(&back).unwrap();
        assert_eq!(
            model.sigma(&[1.0, 0.0], &[1]).probs,
            restored.sigma(&[1.0, 0.0], &[1]).probs
        );
    }

    #[test]
    fn mlp_backend_learns_action_conditioned_harm() {
        let mut rng = stream(6, Domain::Fit, 0);
        let recs: Vec<TransitionRecord> = (0..400)
            .map(|k| {
                let action = (k % 2) as i64;
                let reward = if action == 0 { -0.8 } else { 0.4 };
                record(vec![0.3, -0.2, 0.9], vec![1, PLACEHOLDER_ACTION], action, reward)
            })
            .collect();
        let refs: Vec<&TransitionRecord> = recs.iter().collect();
        let mut model = HarmModel::mlp(3, 2, 3, 2, 16, 0.1, &mut rng);
        let cfg = FitConfig {
            steps: 800,
            batch_size: 16,
            learning_rate: 5e-3,
        };
        model.fit(&refs, &cfg, &mut rng);
        let q = model.q_values(&[0.3, -0.2, 0.9], &[1, PLACEHOLDER_ACTION]);
        assert!((q[0] - 0.8).abs() < 0.1, "q = {q:?}");
        assert!((q[1] - -0.4).abs() < 0.1, "q = {q:?}");
    }
}
