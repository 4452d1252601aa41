use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lcsfla_core::auction::{AuditConfig, PaymentRule};
use lcsfla_cli::plan::ExperimentPlan;
use lcsfla_cli::{audit, output, report, run, scenario, solve, with_threads, CliError, Result};

#[derive(Parser)]
#[command(name = "lcsfla", version, about = "Long-term client selection for federated learning")]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Vcg,
    PayAsBid,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every strategy and seed of a plan.
    Run { plan: PathBuf },
    /// Solve one welfare-maximization instance.
    Solve {
        problem: PathBuf,
        /// Cross-check against exhaustive enumeration when small enough.
        #[arg(long)]
        oracle: bool,
    },
    /// Audit individual rationality and incentive compatibility.
    Audit {
        #[arg(long, default_value_t = 200)]
        scenarios: usize,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = 6)]
        max_m: usize,
        #[arg(long, default_value_t = 3)]
        max_n: usize,
        #[arg(long, default_value_t = 3)]
        l_max: u32,
        #[arg(long, value_enum, default_value_t = Rule::Vcg)]
        rule: Rule,
        /// Let misreports move the shared quality calibration.
        #[arg(long)]
        recalibrate: bool,
    },
    /// Summarize ToA and energy-to-accuracy of a finished run.
    Report {
        run_dir: PathBuf,
        /// Override the plan's targets.
        #[arg(long = "target")]
        targets: Vec<f64>,
    },
    /// Inspect generated scenarios.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Print the clients, channels and quality parameters of one seed.
    Dump {
        plan: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        round: u64,
    },
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    print!("{}", String::from_utf8_lossy(&output::json_bytes(v)?));
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run { plan } => {
            let plan = ExperimentPlan::load(&plan)?;
            let s = run::cmd_run(&plan)?;
            eprintln!("wrote {} cells to {}", s.cells.len(), plan.output_dir.display());
            Ok(())
        }
        Cmd::Solve { problem, oracle } => {
            let text = std::fs::read_to_string(&problem).map_err(|e| CliError::Validation(format!("{}: {e}", problem.display())))?;
            print_json(&solve::cmd_solve(&text, oracle)?)
        }
        Cmd::Audit { scenarios, first_seed, max_m, max_n, l_max, rule, recalibrate } => {
            let cfg = AuditConfig {
                scenarios,
                first_seed,
                max_m,
                max_n,
                l_max,
                rule: match rule {
                    Rule::Vcg => PaymentRule::Vcg,
                    Rule::PayAsBid => PaymentRule::PayAsBid,
                },
                recalibrate,
                ..AuditConfig::default()
            };
            print_json(&audit::cmd_audit(&cfg)?)
        }
        Cmd::Report { run_dir, targets } => {
            let t = (!targets.is_empty()).then_some(targets.as_slice());
            print!("{}", report::cmd_report(&run_dir, t)?);
            Ok(())
        }
        Cmd::Scenario { cmd: ScenarioCmd::Dump { plan, seed, round } } => {
            let plan = ExperimentPlan::load(&plan)?;
            print_json(&scenario::cmd_scenario_dump(&plan, seed, round)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let structured = matches!(cli.cmd, Cmd::Solve { .. });
    let result = with_threads(cli.threads, || dispatch(cli.cmd)).and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::AuditFailed(report) => {
                    let _ = print_json(report);
                    eprintln!("audit failed");
                }
                _ if structured => {
                    let _ = print_json(&e.to_json());
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
