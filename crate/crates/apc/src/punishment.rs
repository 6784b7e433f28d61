//! Adaptive punishment: windowed defection frequencies, the
//! ineffectiveness condition, the adaptive punishment probability, and
//! reward shaping.
//!
//! Windows span a fixed number of timesteps. The defection frequency of
//! window s is measured over observable steps only; a window with no
//! observable steps carries the previous frequency forward. Punishment in
//! window s is ineffective when
//! `((f_s >= f_{s-1}) or (|f_s - mean(f_0..f_{s-1})| < eps)) and f_s >= eps`;
//! windows 0 and 1 count as effective by default. The punishment
//! probability in window m is `1 - mean(ineffective flags over windows
//! 1..m-1)`, initialized to 1 for windows 0 and 1.

use crate::defection::{DefectionDistribution, DefectionFlag};
use crate::env::PLACEHOLDER_ACTION;
use serde::{Deserialize, Serialize};

/// Eq.-level predicate: was punishment in the final window of `freqs`
/// ineffective? `freqs` must contain windows 0..=s with s >= 2.
pub fn is_ineffective(freqs: &[f64], tolerance: f64) -> bool {
    assert!(
        freqs.len() >= 3,
        "windows 0 and 1 are effective by default; need s >= 2"
    );
    let s = freqs.len() - 1;
    let f_s = freqs[s];
    let f_prev = freqs[s - 1];
    let mean_past: f64 = freqs[..s].iter().sum::<f64>() / s as f64;
    ((f_s >= f_prev) || (f_s - mean_past).abs() < tolerance) && f_s >= tolerance
}

/// Adaptive punishment probability at window m = flags.len() + 1, where
/// `flags` holds the ineffectiveness indicators of windows 1..=m-1.
pub fn punish_probability(flags_from_window1: &[bool]) -> f64 {
    if flags_from_window1.is_empty() {
        return 1.0;
    }
    let ineffective = flags_from_window1.iter().filter(|&&b| b).count();
    1.0 - ineffective as f64 / flags_from_window1.len() as f64
}

/// Punishment intensity weight for one observed action.
///
/// Zero when the action is not a defection (at or below the uniform
/// level) or the target was unobservable; otherwise the Bernoulli draw
/// gates the severity normalized by the distribution's peak.
pub fn piw(dist: &DefectionDistribution, action: i64, bernoulli_draw: bool) -> f64 {
    if action == PLACEHOLDER_ACTION || action < 0 {
        return 0.0;
    }
    let severity = dist.probs[action as usize];
    if severity <= 1.0 / dist.num_actions() as f64 {
        return 0.0;
    }
    if !bernoulli_draw {
        return 0.0;
    }
    let peak = dist.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    severity / peak
}

/// One agent's outgoing punishment weights for a single timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct PiwVector {
    /// weights[j] in [0, 1]; the self slot stays 0.
    pub weights: Vec<f64>,
    /// Unit cost c paid by the punisher per weight unit.
    pub cost_unit: f64,
    /// Unit penalty delta borne by the target per weight unit.
    pub penalty_unit: f64,
}

impl PiwVector {
    pub fn zeros(n: usize, cost_unit: f64, penalty_unit: f64) -> Self {
        PiwVector {
            weights: vec![0.0; n],
            cost_unit,
            penalty_unit,
        }
    }
}

/// Total rewards after punishment shaping:
/// `r_tot_i = r_i - c * sum_j w[i][j] - delta * sum_j w[j][i]`.
pub fn shape_rewards(raw_rewards: &[f64], piw_rows: &[PiwVector]) -> Vec<f64> {
    let n = raw_rewards.len();
    debug_assert_eq!(piw_rows.len(), n);
    (0..n)
        .map(|i| {
            let outgoing: f64 = piw_rows[i]
                .weights
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, w)| w)
                .sum();
            let incoming: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| piw_rows[j].weights[i])
                .sum();
            raw_rewards[i] - piw_rows[i].cost_unit * outgoing - piw_rows[i].penalty_unit * incoming
        })
        .collect()
}

/// Closed-window telemetry emitted by [`PunishmentState::close_window`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    /// Index of the window just closed (0-based).
    pub window_index: usize,
    /// Defection frequency f of that window.
    pub frequency: f64,
    /// Ineffectiveness indicator for that window (false for windows 0, 1).
    pub ineffective: bool,
    /// Punishment probability in force for the next window.
    pub probability: f64,
    /// Punishment events that fired during the window.
    pub punish_count: usize,
    /// Mean weight over those events (0 if none).
    pub mean_weight: f64,
}

/// Windowed punishment statistics for one directed pair (i -> j).
#[derive(Clone, Debug)]
pub struct PunishmentState {
    window_length: usize,
    tolerance: f64,
    steps_in_window: usize,
    observable_steps: usize,
    defections: usize,
    frequency_history: Vec<f64>,
    /// Ineffectiveness flags for windows 1..; window 0 never gets one.
    ineffective_flags: Vec<bool>,
    probability: f64,
    window_punish_count: usize,
    window_weight_sum: f64,
}

impl PunishmentState {
    pub fn new(window_length: usize, tolerance: f64) -> Self {
        assert!(window_length >= 1);
        PunishmentState {
            window_length,
            tolerance,
            steps_in_window: 0,
            observable_steps: 0,
            defections: 0,
            frequency_history: Vec::new(),
            ineffective_flags: Vec::new(),
            probability: 1.0,
            window_punish_count: 0,
            window_weight_sum: 0.0,
        }
    }

    /// Probability in force for the current window.
    pub fn probability(&self) -> f64 {
        self.probability
    }

    /// Index of the window currently being filled.
    pub fn current_window(&self) -> usize {
        self.frequency_history.len()
    }

    pub fn frequency_history(&self) -> &[f64] {
        &self.frequency_history
    }

    pub fn ineffective_flags(&self) -> &[bool] {
        &self.ineffective_flags
    }

    /// Record one timestep. Unobservable steps advance the window clock
    /// but do not enter the frequency numerator or denominator.
    pub fn record_step(&mut self, flag: &DefectionFlag, observable: bool) {
        self.steps_in_window += 1;
        if observable {
            self.observable_steps += 1;
            if flag.is_defection {
                self.defections += 1;
            }
        }
    }

    /// Record a punishment event (for telemetry only).
    pub fn record_punishment(&mut self, weight: f64) {
        self.window_punish_count += 1;
        self.window_weight_sum += weight;
    }

    pub fn window_full(&self) -> bool {
        self.steps_in_window >= self.window_length
    }

    /// Running frequency of the window being filled.
    pub fn running_frequency(&self) -> f64 {
        if self.observable_steps == 0 {
            0.0
        } else {
            self.defections as f64 / self.observable_steps as f64
        }
    }

    /// Close the current window: fix its frequency, evaluate
    /// ineffectiveness, refresh the probability.
    pub fn close_window(&mut self) -> WindowSummary {
        let window_index = self.frequency_history.len();
        let frequency = if self.observable_steps > 0 {
            self.defections as f64 / self.observable_steps as f64
        } else {
            // No evidence: carry the previous window's frequency forward.
            self.frequency_history.last().copied().unwrap_or(0.0)
        };
        self.frequency_history.push(frequency);
        let ineffective = if window_index >= 2 {
            is_ineffective(&self.frequency_history, self.tolerance)
        } else {
            false
        };
        if window_index >= 1 {
            self.ineffective_flags.push(ineffective);
        }
        self.probability = punish_probability(&self.ineffective_flags);
        let punish_count = self.window_punish_count;
        let mean_weight = if punish_count > 0 {
            self.window_weight_sum / punish_count as f64
        } else {
            0.0
        };
        self.steps_in_window = 0;
        self.observable_steps = 0;
        self.defections = 0;
        self.window_punish_count = 0;
        self.window_weight_sum = 0.0;
        WindowSummary {
            window_index,
            frequency,
            ineffective,
            probability: self.probability,
            punish_count,
            mean_weight,
        }
    }
}
