//! Experiment plans, subcommands and byte-stable output for the `lcsfla` tool.

pub mod audit;
pub mod output;
pub mod plan;
pub mod report;
pub mod run;
pub mod scenario;
pub mod solve;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("audit failed")]
    AuditFailed(serde_json::Value),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::AuditFailed(_) => EXIT_AUDIT,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
            CliError::AuditFailed(_) => "audit",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
    }
}

impl From<lcsfla_core::Error> for CliError {
    fn from(e: lcsfla_core::Error) -> Self {
        use lcsfla_core::Error as E;
        match e {
            E::Parameter { .. } | E::Dimension(_) | E::Infeasible(_) | E::OracleSize(_) => CliError::Validation(e.to_string()),
            E::Degenerate(_) | E::BandwidthFloor { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Run `f` on a pool of `threads` workers, or the global pool when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
