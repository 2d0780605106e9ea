//! `adn`: power flow, RMS simulation and fault survivability studies on the
//! bundled 12-bus medium-voltage grid or a user-supplied one.
//!
//! Exit status: 0 on success, 1 when the analysis itself fails (power flow
//! does not converge, simulation breaks down, validation out of tolerance),
//! 2 on usage or input errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use adn_core::network::LoadModel;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "adn", version, about = "Fault survivability of actively controlled distribution grids")]
struct Cli {
    /// Directory for result files.
    #[arg(long, global = true, env = "ADN_OUT_DIR", default_value = "adn-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the steady-state power flow and write the bus table.
    Powerflow(PowerflowArgs),
    /// Run a time-domain scenario and write the trajectory.
    Simulate(SimulateArgs),
    /// Single-node survivability at one bus.
    SurviveNode(SurviveNodeArgs),
    /// Single-node survivability at every MV bus.
    SurviveAll(SurviveAllArgs),
    /// Survivability map over interconnection set points.
    SurviveEnvelope(EnvelopeArgs),
    /// Compare power flow voltages with a reference CSV.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LoadModelArg {
    Pq,
    Z,
}

impl From<LoadModelArg> for LoadModel {
    fn from(a: LoadModelArg) -> Self {
        match a {
            LoadModelArg::Pq => LoadModel::ConstantPq,
            LoadModelArg::Z => LoadModel::ConstantImpedance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LoadModelsArg {
    Pq,
    Z,
    Both,
}

#[derive(Debug, Args)]
struct PowerflowArgs {
    /// Grid JSON; the bundled 12-bus grid when omitted.
    grid: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pq")]
    load_model: LoadModelArg,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario JSON; the bundled reference-step and bus-8 fault scenario when omitted.
    scenario: Option<PathBuf>,
    /// Override the scenario's load model.
    #[arg(long, value_enum)]
    load_model: Option<LoadModelArg>,
    /// Also write an SVG chart of the MV bus voltage magnitudes.
    #[arg(long)]
    plot: bool,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Grid JSON; the bundled 12-bus grid when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Limiting curve JSON; the bundled curve when omitted.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads; 0 uses all available cores. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Args)]
struct SurviveNodeArgs {
    #[arg(long)]
    bus: String,
    #[arg(long, value_enum, default_value = "pq")]
    load_model: LoadModelArg,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Debug, Args)]
struct SurviveAllArgs {
    #[arg(long, value_enum, default_value = "both")]
    load_model: LoadModelsArg,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Debug, Args)]
struct EnvelopeArgs {
    #[arg(long, default_value = "MV-03")]
    bus: String,
    #[arg(long, value_enum, default_value = "pq")]
    load_model: LoadModelArg,
    /// Half-width of the active power sampling range around the base flow, MW.
    #[arg(long, default_value_t = 15.0)]
    p_range: f64,
    /// Half-width of the reactive power sampling range, Mvar.
    #[arg(long, default_value_t = 10.0)]
    q_range: f64,
    /// Cell edge, MW and Mvar.
    #[arg(long, default_value_t = 0.5)]
    cell_size: f64,
    /// Cell spacing; half the cell size when omitted.
    #[arg(long)]
    stride: Option<f64>,
    #[arg(long, default_value_t = 100)]
    min_count: usize,
    /// Relative control error above which a set point is discarded.
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    /// Apply the threshold to the active power error only.
    #[arg(long)]
    p_only_filter: bool,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Reference CSV with columns bus_id, v_mag_pu, v_angle_deg.
    reference: PathBuf,
    /// Grid JSON; the bundled 12-bus grid when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pq")]
    load_model: LoadModelArg,
    #[arg(long, default_value_t = adn_core::validate::DEFAULT_TOL_MAG)]
    tol_mag: f64,
    #[arg(long, default_value_t = adn_core::validate::DEFAULT_TOL_ANG_DEG)]
    tol_ang: f64,
}

/// Error chain on one line; causes already quoted by their parent are skipped.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Analysis(e)) => {
            eprintln!("analysis failed: {}", describe(&e));
            ExitCode::from(1)
        }
        Err(commands::Failure::Input(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
