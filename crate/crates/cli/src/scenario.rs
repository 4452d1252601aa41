//! `scenario dump`: the population, channels and quality parameters a plan produces.

use lcsfla_core::quality::udq_params;
use lcsfla_core::scenario::sample_channels;
use serde_json::{json, Value};

use crate::plan::ExperimentPlan;
use crate::Result;

pub fn cmd_scenario_dump(plan: &ExperimentPlan, seed: u64, round: u64) -> Result<Value> {
    let sim = &plan.sim;
    let profiles = sim.population(seed)?;
    let ledger = sim.initial_ledger();
    let declared: Vec<&[u32]> = profiles.iter().map(|p| p.dist.as_slice()).collect();
    let params = udq_params(&ledger, &declared, &sim.hyper)?;
    let channels = sample_channels(profiles.len(), round, seed);
    Ok(json!({
        "seed": seed,
        "round": round,
        "hyper": sim.hyper,
        "generator": sim.generator,
        "ledger": ledger,
        "udq": params,
        "channels": channels.h,
        "clients": profiles,
    }))
}
