//! Experiment plan files.
//!
//! A plan is TOML. Top-level keys pick the grid of cells; the `[sim]` table
//! and its `[sim.hyper]` and `[sim.generator]` children configure each run.
//! Every key has a default, so an empty file is a valid plan.

use std::path::{Path, PathBuf};

use lcsfla_core::flsim::{SimConfig, Strategy};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    pub output_dir: PathBuf,
    /// Accuracy thresholds reported as ToA.
    pub targets: Vec<f64>,
    pub sim: SimConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            strategies: vec![Strategy::Lcsfla, Strategy::Random],
            output_dir: PathBuf::from("runs"),
            targets: vec![0.9],
            sim: SimConfig::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| CliError::Validation(format!("{origin}: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    /// Read a plan; a relative `output_dir` is resolved against the plan's folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let mut plan = Self::parse(&text, &path.display().to_string())?;
        if plan.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                plan.output_dir = dir.join(&plan.output_dir);
            }
        }
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(CliError::Validation("plan: strategies must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Validation("plan: at least one seed is required".into()));
        }
        if let Some(t) = self.targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(CliError::Validation(format!("plan: target {t} outside [0, 1]")));
        }
        self.sim.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_plan() {
        assert_eq!(ExperimentPlan::parse("", "t").unwrap(), ExperimentPlan::default());
    }

    #[test]
    fn nested_tables() {
        let p = ExperimentPlan::parse(
            "seeds = [3, 4]\nstrategies = [\"lcsfla-bias\"]\n[sim]\nrounds = 7\n[sim.hyper]\nm = 20\n[sim.generator]\nkind = \"case1\"\npool_per_client = 100\ndirichlet_alpha = 0.5\n",
            "t",
        )
        .unwrap();
        assert_eq!(p.seeds, vec![3, 4]);
        assert_eq!(p.strategies, vec![Strategy::LcsflaBias]);
        assert_eq!(p.sim.rounds, 7);
        assert_eq!(p.sim.hyper.m, 20);
    }

    #[test]
    fn errors_name_the_key() {
        let e = ExperimentPlan::parse("[sim]\nroundz = 3\n", "plan.toml").unwrap_err();
        assert!(e.to_string().contains("roundz"), "{e}");
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = ExperimentPlan::parse("strategies = []\n", "t").unwrap_err();
        assert_eq!(e.exit_code(), crate::EXIT_VALIDATION);
    }
}
