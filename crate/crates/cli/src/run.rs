//! `run`: every (strategy, seed) cell of a plan.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lcsfla_core::flsim::{time_to_accuracy, RoundMetrics, Simulation, Strategy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::output::{json_bytes, real, write_atomic};
use crate::plan::ExperimentPlan;
use crate::{CliError, Result};

pub const CSV_HEADER: &str = "round,strategy,accuracy,A,welfare,energy_round,energy_cum,n_selected";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetHit {
    pub target: f64,
    pub toa: Option<u64>,
    /// Energy spent when the target was first met, or in total if never.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub strategy: Strategy,
    pub seed: u64,
    pub csv: String,
    pub rounds: u64,
    pub final_accuracy: f64,
    pub final_a: f64,
    pub mean_welfare: f64,
    pub energy_total: f64,
    pub targets: Vec<TargetHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub plan: ExperimentPlan,
    pub cells: Vec<CellSummary>,
}

pub fn cell_name(strategy: Strategy, seed: u64) -> String {
    format!("{}_seed{seed}.csv", strategy.name())
}

pub fn metrics_csv(metrics: &[RoundMetrics]) -> String {
    let mut s = String::with_capacity(64 * (metrics.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for m in metrics {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.round,
            m.strategy.name(),
            real(m.accuracy),
            real(m.a),
            real(m.welfare),
            real(m.energy_round),
            real(m.energy_cum),
            m.selected.len()
        );
    }
    s
}

fn summarize(strategy: Strategy, seed: u64, metrics: &[RoundMetrics], targets: &[f64]) -> CellSummary {
    let last = metrics.last();
    CellSummary {
        strategy,
        seed,
        csv: cell_name(strategy, seed),
        rounds: metrics.len() as u64,
        final_accuracy: last.map_or(f64::NAN, |m| m.accuracy),
        final_a: last.map_or(f64::NAN, |m| m.a),
        mean_welfare: metrics.iter().map(|m| m.welfare).sum::<f64>() / metrics.len().max(1) as f64,
        energy_total: last.map_or(0.0, |m| m.energy_cum),
        targets: targets
            .iter()
            .map(|&target| {
                let (toa, energy) = time_to_accuracy(metrics, target);
                TargetHit { target, toa, energy }
            })
            .collect(),
    }
}

/// Execute the plan and write one CSV per cell plus `summary.json`.
pub fn cmd_run(plan: &ExperimentPlan) -> Result<RunSummary> {
    plan.validate()?;
    let dir: &Path = &plan.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let cells: Vec<(Strategy, u64)> = plan.strategies.iter().flat_map(|&s| plan.seeds.iter().map(move |&seed| (s, seed))).collect();
    let summaries = cells
        .par_iter()
        .map(|&(strategy, seed)| {
            let metrics = Simulation::new(plan.sim.clone(), strategy, seed)?
                .run()
                .map_err(|e| CliError::Runtime(format!("{} seed {seed}: {e}", strategy.name())))?;
            let path: PathBuf = dir.join(cell_name(strategy, seed));
            write_atomic(&path, metrics_csv(&metrics).as_bytes())?;
            Ok(summarize(strategy, seed, &metrics, &plan.targets))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = RunSummary { plan: plan.clone(), cells: summaries };
    write_atomic(&dir.join(SUMMARY_FILE), &json_bytes(&summary)?)?;
    Ok(summary)
}
