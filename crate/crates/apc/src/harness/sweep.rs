//! Cost/penalty parameter sweep over the punishment mechanism.

use crate::harness::config::ExperimentConfig;
use crate::harness::runner::{run_single, RunError, RunOptions};
use crate::parallel::par_map;
use std::io::Write;
use std::path::Path;

/// Desk-scale default grid; the full 0..=1.4 grid in 0.1 steps is
/// available behind a flag.
pub const COARSE_GRID: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 0.7, 1.1, 1.4];

pub fn full_grid() -> Vec<f64> {
    (0..=14).map(|k| k as f64 * 0.1).collect()
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub c_grid: Vec<f64>,
    pub d_grid: Vec<f64>,
    /// rates[i][j]: seed-mean converged cooperation rate at
    /// (c = c_grid[i], delta = d_grid[j]).
    pub rates: Vec<Vec<f64>>,
}

impl SweepOutput {
    pub fn rate_at(&self, c: f64, d: f64) -> Option<f64> {
        let i = self.c_grid.iter().position(|&v| (v - c).abs() < 1e-9)?;
        let j = self.d_grid.iter().position(|&v| (v - d).abs() < 1e-9)?;
        Some(self.rates[i][j])
    }
}

/// One converged cooperation rate per (c, delta) cell, averaged over the
/// config's seeds. Every (cell, seed) run is independent and fans out
/// over the worker pool.
pub fn sweep_cd(
    base: &ExperimentConfig,
    c_grid: &[f64],
    d_grid: &[f64],
) -> Result<SweepOutput, RunError> {
    assert!(!c_grid.is_empty() && !d_grid.is_empty(), "grids must be non-empty");
    let mut jobs = Vec::new();
    for (i, &c) in c_grid.iter().enumerate() {
        for (j, &d) in d_grid.iter().enumerate() {
            for &seed in &base.training.seeds {
                jobs.push((i, j, c, d, seed));
            }
        }
    }
    let lean = RunOptions {
        record_episodes: false,
        record_windows: false,
    };
    let results = par_map(jobs, |(i, j, c, d, seed)| {
        let mut cfg = base.clone();
        cfg.mechanism.cost = c;
        cfg.mechanism.penalty = d;
        cfg.name = format!("{}-c{c}-d{d}", base.name);
        run_single(&cfg, seed, lean).map(|outcome| (i, j, outcome.final_cooperation))
    });
    let seeds = base.training.seeds.len() as f64;
    let mut rates = vec![vec![0.0; d_grid.len()]; c_grid.len()];
    for result in results {
        let (i, j, rate) = result?;
        rates[i][j] += rate / seeds;
    }
    Ok(SweepOutput {
        c_grid: c_grid.to_vec(),
        d_grid: d_grid.to_vec(),
        rates,
    })
}

/// Matrix CSV: rows are c values, columns are delta values.
pub fn write_sweep_csv<W: Write>(out: &mut W, sweep: &SweepOutput) -> std::io::Result<()> {
    let header: Vec<String> = std::iter::once("c\\delta".to_string())
        .chain(sweep.d_grid.iter().map(|d| d.to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (i, c) in sweep.c_grid.iter().enumerate() {
        let row: Vec<String> = std::iter::once(c.to_string())
            .chain(sweep.rates[i].iter().map(|r| r.to_string()))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_sweep_to_dir(out_root: &Path, cfg: &ExperimentConfig, sweep: &SweepOutput) -> Result<std::path::PathBuf, RunError> {
    let dir = out_root.join(&cfg.outputs.dir);
    std::fs::create_dir_all(&dir).map_err(|source| RunError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join("sweep_matrix.csv");
    let mut file = std::fs::File::create(&path).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_sweep_csv(&mut file, sweep).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}
