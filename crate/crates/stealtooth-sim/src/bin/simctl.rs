use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use stealtooth_sim::devices::{bundled_catalog, load_catalog, DeviceCatalog};
use stealtooth_sim::protocol::AuthMode;
use stealtooth_sim::simctl::{
    load_scenario_file, run_scenario, verdict_matrix, write_trace, RunOptions, SimctlError,
};

/// Deterministic Bluetooth Classic pairing simulator: run attack scenarios,
/// grade device behavior profiles, and audit the traces.
#[derive(Parser)]
#[command(name = "simctl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and print its report as JSON.
    Run {
        /// Scenario JSON document.
        scenario: PathBuf,
        /// Also write the full event trace to this path as JSONL.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Override which defenses are in force.
        #[arg(long, value_enum)]
        defense: Option<DefenseArg>,
        /// Override the authentication mode.
        #[arg(long, value_enum)]
        auth: Option<AuthArg>,
        /// Force the stub codec whose re-encode step fails.
        #[arg(long)]
        paper_codec_mode: bool,
        /// Device catalog to resolve the sink model against.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Run every catalog model through the attack repertoire and print the
    /// verdict table.
    Matrix {
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Check a scenario file against the schema and semantic rules.
    Validate {
        scenario: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DefenseArg {
    None,
    Notify,
    Protocol,
    Both,
}

impl DefenseArg {
    fn overrides(self) -> (Option<bool>, Option<bool>) {
        match self {
            DefenseArg::None => (Some(false), Some(false)),
            DefenseArg::Notify => (Some(true), Some(false)),
            DefenseArg::Protocol => (Some(false), Some(true)),
            DefenseArg::Both => (Some(true), Some(true)),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AuthArg {
    Legacy,
    Secure,
}

impl From<AuthArg> for AuthMode {
    fn from(arg: AuthArg) -> Self {
        match arg {
            AuthArg::Legacy => AuthMode::LegacyUnilateral,
            AuthArg::Secure => AuthMode::SecureMutual,
        }
    }
}

fn load_catalog_arg(path: Option<&PathBuf>) -> Result<DeviceCatalog, SimctlError> {
    match path {
        None => Ok(bundled_catalog()),
        Some(p) => Ok(load_catalog(&std::fs::read_to_string(p)?)?),
    }
}

// 0 = ran and matched, 1 = ran but contradicted expectations, 2 = bad input.
fn run_command(cli: Cli) -> Result<u8, SimctlError> {
    match cli.command {
        Command::Run {
            scenario,
            trace,
            defense,
            auth,
            paper_codec_mode,
            catalog,
        } => {
            let scenario = load_scenario_file(&scenario)?;
            let catalog = load_catalog_arg(catalog.as_ref())?;
            let (defense_notify, defense_protocol) =
                defense.map(DefenseArg::overrides).unwrap_or((None, None));
            let options = RunOptions {
                auth_mode: auth.map(AuthMode::from),
                defense_notify,
                defense_protocol,
                paper_codec_mode: paper_codec_mode.then_some(true),
            };
            let (report, world) = run_scenario(&scenario, &catalog, options)?;
            if let Some(path) = trace {
                write_trace(&world, &path)?;
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(if report.matches_expected == Some(false) { 1 } else { 0 })
        }
        Command::Matrix { catalog } => {
            let catalog = load_catalog_arg(catalog.as_ref())?;
            let report = verdict_matrix(&catalog, RunOptions::default())?;
            println!("{report}");
            Ok(if report.all_match { 0 } else { 1 })
        }
        Command::Validate { scenario } => {
            let scenario = load_scenario_file(&scenario)?;
            println!("ok: {}", scenario.name);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run_command(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
