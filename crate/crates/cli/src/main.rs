mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rtdispatch::ErrorKind;

#[derive(Parser, Debug)]
#[command(
    name = "rtdispatch",
    version,
    about = "Incident prediction, responder dispatch and routing"
)]
pub struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the scenario's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write a JSON-lines record of every planner decision.
    #[arg(long, global = true)]
    pub trace: bool,
    /// Directory for outputs given as relative paths.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Scenario override, `key=value` with dotted keys (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// More progress output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

/// Region for commands that read incident logs without a scenario file.
#[derive(Args, Debug, Clone)]
pub struct RegionArgs {
    /// `min_lat,min_lon,max_lat,max_lon`
    #[arg(long, value_name = "BOX")]
    pub region: Option<String>,
    #[arg(long, default_value_t = 1609.344)]
    pub cell_size: f64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit an incident model by maximum likelihood.
    FitIncidents {
        /// Incident log or observation table.
        incidents: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated feature names; the standard set by default.
        #[arg(long)]
        features: Option<String>,
        #[command(flatten)]
        region: RegionArgs,
    },
    /// Update a fitted model on a stream of new incidents.
    UpdateIncidents {
        model: PathBuf,
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[command(flatten)]
        region: RegionArgs,
    },
    /// Fit weekly speed profiles from observed segment speeds.
    FitSpeeds {
        #[arg(long)]
        graph: PathBuf,
        observations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        bin_width: u32,
    },
    /// Select routing landmarks for a road graph.
    BuildLandmarks {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fastest route between two coordinates.
    Route {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        speeds: Option<PathBuf>,
        #[arg(long)]
        landmarks: Option<PathBuf>,
        /// `lat,lon`
        #[arg(long, allow_hyphen_values = true)]
        from: String,
        /// `lat,lon`
        #[arg(long, allow_hyphen_values = true)]
        to: String,
        /// ISO-8601 departure time.
        #[arg(long)]
        time: String,
    },
    /// Replay a scenario under one policy.
    Simulate {
        #[arg(long, value_enum, default_value_t = PolicyArg::Planner)]
        policy: PolicyArg,
    },
    /// Replay a scenario under the base policy and the planner.
    Compare,
    /// Generate a synthetic city as a scenario directory.
    GenCity(GenCityArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyArg {
    Planner,
    Base,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GenCityArgs {
    /// TOML file of city parameters; flags override it.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub depots: Option<usize>,
    #[arg(long)]
    pub responders: Option<usize>,
    /// City-wide incidents per hour.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub incidents: Option<usize>,
    #[arg(long)]
    pub replay: Option<usize>,
    #[arg(long)]
    pub hotspots: Option<usize>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
