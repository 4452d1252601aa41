//! `audit`: IR and IC sweeps over seeded oracle-scale markets.

use lcsfla_core::auction::{audit_ic, audit_ir, AuditConfig};
use serde_json::{json, Value};

use crate::{CliError, Result};

/// Run both audits; a failed audit is returned as [`CliError::AuditFailed`] carrying the report.
pub fn cmd_audit(cfg: &AuditConfig) -> Result<Value> {
    let ir = audit_ir(cfg)?;
    let ic = audit_ic(cfg)?;
    let passed = ir.passed() && ic.passed();
    let report = json!({
        "config": {
            "scenarios": cfg.scenarios,
            "first_seed": cfg.first_seed,
            "max_m": cfg.max_m,
            "max_n": cfg.max_n,
            "l_max": cfg.l_max,
            "rule": cfg.rule,
            "recalibrate": cfg.recalibrate,
            "strategies": cfg.strategies.iter().map(|s| s.label()).collect::<Vec<_>>(),
        },
        "ir": ir,
        "ic": ic,
        "passed": passed,
    });
    if passed {
        Ok(report)
    } else {
        Err(CliError::AuditFailed(report))
    }
}
