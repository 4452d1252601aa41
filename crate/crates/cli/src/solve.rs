//! `solve`: one SWM instance from a CSV file.
//!
//! ```text
//! # n=2
//! # l_max=3
//! # b_max=1e7
//! c_check,e1,e2
//! 40.0,0.5,4e-6
//! ```
//!
//! Missing `#` keys (`n`, `l_max`, `b_max`, `b_min`, `s_rate`, `e_budget`)
//! fall back to the hyperparameter defaults; `e_budget` is off unless given.

use lcsfla_core::scenario::Hyperparameters;
use lcsfla_core::swm::{oracle_swm, solve_swm, SwmProblem};
use serde_json::{json, Value};

use crate::{CliError, Result};

pub fn parse_problem(text: &str) -> Result<SwmProblem> {
    let d = Hyperparameters::default();
    let (mut n, mut l_max, mut b_max, mut b_min, mut s_rate, mut e_budget) = (d.n, d.l_max, d.b_max, d.b_min, d.s_rate, None);
    let (mut c, mut e1, mut e2) = (Vec::new(), Vec::new(), Vec::new());
    let mut header = false;
    let bad = |line: usize, msg: String| CliError::Validation(format!("line {line}: {msg}"));
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let no = i + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(kv) = line.strip_prefix('#') {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(no, format!("expected key=value, got `{kv}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let real = || v.parse::<f64>().map_err(|e| bad(no, format!("{k}: {e}")));
            let int = || v.parse::<u64>().map_err(|e| bad(no, format!("{k}: {e}")));
            match k {
                "n" => n = int()? as usize,
                "l_max" => l_max = int()? as u32,
                "b_max" => b_max = real()?,
                "b_min" => b_min = real()?,
                "s_rate" => s_rate = real()?,
                "e_budget" => e_budget = Some(real()?),
                _ => return Err(bad(no, format!("unknown key `{k}`"))),
            }
            continue;
        }
        if !header {
            if line.replace(' ', "") != "c_check,e1,e2" {
                return Err(bad(no, "expected header `c_check,e1,e2`".into()));
            }
            header = true;
            continue;
        }
        let cols: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| bad(no, format!("`{v}`: {e}"))))
            .collect::<Result<_>>()?;
        if cols.len() != 3 {
            return Err(bad(no, format!("expected 3 columns, got {}", cols.len())));
        }
        c.push(cols[0]);
        e1.push(cols[1]);
        e2.push(cols[2]);
    }
    if c.is_empty() {
        return Err(CliError::Validation("no clients in problem file".into()));
    }
    let mut p = SwmProblem::new(c, e1, e2, n, l_max, b_max, b_min, s_rate);
    p.e_budget = e_budget;
    p.validate()?;
    Ok(p)
}

/// Solve, optionally cross-checking with exhaustive enumeration.
pub fn cmd_solve(text: &str, oracle: bool) -> Result<Value> {
    let p = parse_problem(text)?;
    let sol = solve_swm(&p)?;
    let check = if oracle {
        match oracle_swm(&p) {
            Ok(o) => json!({
                "welfare": o.welfare,
                "matches": (o.welfare - sol.welfare).abs() <= 1e-6 * o.welfare.abs().max(1.0),
            }),
            Err(e) => json!({ "skipped": e.to_string() }),
        }
    } else {
        Value::Null
    };
    Ok(json!({
        "status": sol.status,
        "welfare": sol.welfare,
        "relaxation_bound": sol.relaxation_bound,
        "gap": sol.gap,
        "nodes": sol.nodes,
        "selected": sol.selected().collect::<Vec<_>>(),
        "iterations": sol.l,
        "bandwidth": sol.b,
        "oracle": check,
    }))
}
