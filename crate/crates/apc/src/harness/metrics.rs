//! Metric rows and CSV/JSON emission. All files are UTF-8 with `\n` line
//! endings; the header row is mandatory.

use serde::{Deserialize, Serialize};
use std::io::Write;

/// Per-episode metrics for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub seed: u64,
    pub episode: usize,
    pub raw_returns: Vec<f64>,
    pub total_returns: Vec<f64>,
    /// Sum of raw returns across agents; punishment excluded.
    pub collective_env_reward: f64,
    pub cooperation_rate: f64,
    /// Punishment events over pair-step opportunities, in [0, 1].
    pub punishment_frequency: f64,
    /// Mean punishment probability across directed pairs at episode end.
    pub mean_probability: f64,
    /// Mean intensity weight over this episode's punishment events.
    pub mean_piw: f64,
}

impl MetricRow {
    pub fn header(num_agents: usize) -> String {
        let mut cols = vec!["run_id".to_string(), "seed".to_string(), "episode".to_string()];
        for i in 0..num_agents {
            cols.push(format!("raw_return_{i}"));
        }
        for i in 0..num_agents {
            cols.push(format!("total_return_{i}"));
        }
        cols.extend(
            [
                "collective_env_reward",
                "cooperation_rate",
                "punishment_frequency",
                "mean_probability",
                "mean_piw",
            ]
            .map(String::from),
        );
        cols.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![
            self.run_id.clone(),
            self.seed.to_string(),
            self.episode.to_string(),
        ];
        cols.extend(self.raw_returns.iter().map(|v| v.to_string()));
        cols.extend(self.total_returns.iter().map(|v| v.to_string()));
        cols.push(self.collective_env_reward.to_string());
        cols.push(self.cooperation_rate.to_string());
        cols.push(self.punishment_frequency.to_string());
        cols.push(self.mean_probability.to_string());
        cols.push(self.mean_piw.to_string());
        cols.join(",")
    }
}

/// Per-window punishment telemetry for one directed pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub run_id: String,
    pub episode: usize,
    pub window_index: usize,
    pub punisher: usize,
    pub target: usize,
    pub frequency: f64,
    pub ineffective: bool,
    pub probability: f64,
    pub punish_count: usize,
    pub mean_weight: f64,
}

impl WindowRow {
    pub fn header() -> &'static str {
        "run_id,episode,window_index,punisher,target,frequency,ineffective,probability,punish_count,mean_weight"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.episode,
            self.window_index,
            self.punisher,
            self.target,
            self.frequency,
            self.ineffective as u8,
            self.probability,
            self.punish_count,
            self.mean_weight
        )
    }
}

pub fn write_metrics_csv<W: Write>(out: &mut W, num_agents: usize, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(out, "{}", MetricRow::header(num_agents))?;
    for row in rows {
        writeln!(out, "{}", row.to_csv_row())?;
    }
    Ok(())
}

pub fn write_windows_csv<W: Write>(out: &mut W, rows: &[WindowRow]) -> std::io::Result<()> {
    writeln!(out, "{}", WindowRow::header())?;
    for row in rows {
        writeln!(out, "{}", row.to_csv_row())?;
    }
    Ok(())
}

/// Mean and (population) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}
