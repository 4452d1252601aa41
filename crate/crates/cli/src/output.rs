//! Real formatting and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{CliError, Result};

/// 17 significant digits, so a value survives a text round trip.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn json_bytes(v: &impl serde::Serialize) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v).map_err(|e| CliError::Runtime(format!("json: {e}")))?;
    out.push(b'\n');
    Ok(out)
}
