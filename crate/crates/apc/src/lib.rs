//! Decentralized multi-agent workbench for adaptive peer punishment in
//! mixed-motive games.
//!
//! Self-interested learners play repeated social dilemmas (public goods,
//! coin game, snowdrift, stag hunt, foraging). Each agent trains a
//! defection predictor from its own replay data, classifies opponents'
//! actions against a uniform threshold, and shapes rewards with graded,
//! probabilistic peer punishment whose probability adapts to whether past
//! sanctions actually reduced defections. The harness reproduces
//! convergence, sweep, matchup, and ablation experiments from seeded,
//! fully deterministic runs.

pub mod defection;
pub mod env;
pub mod games;
pub mod harness;
pub mod learners;
pub mod nn;
pub mod parallel;
pub mod punishment;
pub mod rng;
