//! `report`: ToA and energy-to-accuracy tables from a finished run.
//!
//! Unreached targets print as `NaN(y)`, where `y` is the energy spent over the
//! whole run.

use std::fmt::Write as _;
use std::path::Path;

use crate::run::{RunSummary, CSV_HEADER, SUMMARY_FILE};
use crate::{CliError, Result};

/// `(accuracy, energy_cum)` per round from a cell CSV.
pub fn read_cell(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(CliError::Validation(format!("{}: unexpected header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            let num = |k: usize| {
                cols.get(k)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| CliError::Validation(format!("{}: line {}: bad column {k}", path.display(), i + 2)))
            };
            Ok((num(2)?, num(6)?))
        })
        .collect()
}

/// First round at or above `target` plus energy then, else `None` and total energy.
pub fn toa(rows: &[(f64, f64)], target: f64) -> (Option<usize>, f64) {
    match rows.iter().position(|r| r.0 >= target) {
        Some(i) => (Some(i + 1), rows[i].1),
        None => (None, rows.last().map_or(0.0, |r| r.1)),
    }
}

pub fn cmd_report(run_dir: &Path, targets: Option<&[f64]>) -> Result<String> {
    let path = run_dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let summary: RunSummary = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let targets = targets.unwrap_or(&summary.plan.targets);

    let mut out = String::new();
    let _ = write!(out, "{:<12} {:>6}", "strategy", "seed");
    for t in targets {
        let _ = write!(out, " {:>20} {:>14}", format!("ToA@{t}"), format!("E@{t} (J)"));
    }
    out.push('\n');

    let mut per_strategy: Vec<(String, Vec<Option<usize>>)> = Vec::new();
    for cell in &summary.cells {
        let rows = read_cell(&run_dir.join(&cell.csv))?;
        let name = cell.strategy.name().to_string();
        let _ = write!(out, "{:<12} {:>6}", name, cell.seed);
        let mut hits = Vec::new();
        for &t in targets {
            let (round, energy) = toa(&rows, t);
            let (a, b) = match round {
                Some(r) => (r.to_string(), format!("{energy:.4}")),
                None => (format!("NaN({energy:.4})"), format!("NaN({energy:.4})")),
            };
            let _ = write!(out, " {a:>20} {b:>14}");
            hits.push(round);
        }
        out.push('\n');
        match per_strategy.iter_mut().find(|(s, _)| *s == name) {
            Some((_, v)) => v.extend(hits),
            None => per_strategy.push((name, hits)),
        }
    }

    out.push('\n');
    for (name, hits) in per_strategy {
        let per_target = hits.len() / targets.len().max(1);
        for (k, t) in targets.iter().enumerate() {
            let reached: Vec<usize> = hits.iter().skip(k).step_by(targets.len()).flatten().copied().collect();
            let mean = if reached.is_empty() { "NaN".to_string() } else { format!("{:.2}", reached.iter().sum::<usize>() as f64 / reached.len() as f64) };
            let _ = writeln!(out, "{name:<12} ToA@{t}: reached {}/{per_target}, mean {mean}", reached.len());
        }
    }
    Ok(out)
}
