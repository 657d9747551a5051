//! `warehouse-twin`: headless runs, experiments and the live API server.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "warehouse-twin", version, about = "Warehouse AMR safety twin")]
struct Cli {
    /// TOML file whose keys (e.g. `seed`, `candidates`) override the matching flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write the event log, metrics and histogram.
    Run(RunArgs),
    /// Two-phase arrival-rate experiment over several seeds.
    TwoPhase(TwoPhaseArgs),
    /// What-if sweep over slow-zone radii at snapshots of the two-phase run.
    Sweep(SweepArgs),
    /// Check a scenario and/or goal model and report problems.
    Validate(ValidateArgs),
    /// Run the physical loop in real time and serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file; the bundled two-phase scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Seed; the scenario's own when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds.
    #[arg(long, default_value_t = 7200.0)]
    duration: f64,
    /// Slow-zone radius override in meters.
    #[arg(long)]
    y: Option<f64>,
}

#[derive(Debug, Args)]
struct TwoPhaseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    seeds: Vec<u64>,
    /// Slow-zone radius in meters.
    #[arg(long, default_value_t = 5.0)]
    y: f64,
    /// Seconds per phase; the scenario's second phase start when omitted.
    #[arg(long)]
    phase_duration: Option<f64>,
    /// Phase-1 orders arriving before this many seconds are warm-up.
    #[arg(long, default_value_t = 600.0)]
    warmup: f64,
    /// Phase-2 completions averaged at the end of the run.
    #[arg(long, default_value_t = 20)]
    tail: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Slow-zone radius of the physical run.
    #[arg(long, default_value_t = 5.0)]
    y: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4.5,5")]
    candidates: Vec<f64>,
    /// Simulated times of the snapshots analysed.
    #[arg(long, value_delimiter = ',', default_value = "1800,5400")]
    snapshot_times: Vec<f64>,
    /// What-if horizon in simulated seconds.
    #[arg(long, default_value_t = 600.0)]
    horizon: f64,
    #[arg(long, default_value_t = 5)]
    replications: usize,
    /// First replication seed; replication r uses seed + r.
    #[arg(long, default_value_t = 1)]
    seed_base: u64,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    goal: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Goal model; the bundled one when omitted.
    #[arg(long)]
    goal: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Simulated seconds per wall second; 0 runs unpaced.
    #[arg(long, default_value_t = 10.0)]
    time_scale: f64,
    /// Enact the selected alternative after each phase change without asking.
    #[arg(long)]
    auto_enact: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: Option<PathBuf>,
    goal: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    duration: Option<f64>,
    y: Option<f64>,
    phase_duration: Option<f64>,
    warmup: Option<f64>,
    tail: Option<usize>,
    candidates: Option<Vec<f64>>,
    snapshot_times: Option<Vec<f64>>,
    horizon: Option<f64>,
    replications: Option<usize>,
    seed_base: Option<u64>,
    addr: Option<String>,
    time_scale: Option<f64>,
    auto_enact: Option<bool>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

impl ConfigFile {
    fn apply(self, cmd: &mut Command) {
        match cmd {
            Command::Run(a) => {
                set_opt(&mut a.common.scenario, self.scenario);
                set(&mut a.common.out, self.out);
                set_opt(&mut a.seed, self.seed);
                set(&mut a.duration, self.duration);
                set_opt(&mut a.y, self.y);
            }
            Command::TwoPhase(a) => {
                set_opt(&mut a.common.scenario, self.scenario);
                set(&mut a.common.out, self.out);
                set(&mut a.seeds, self.seeds);
                set(&mut a.y, self.y);
                set_opt(&mut a.phase_duration, self.phase_duration);
                set(&mut a.warmup, self.warmup);
                set(&mut a.tail, self.tail);
            }
            Command::Sweep(a) => {
                set_opt(&mut a.common.scenario, self.scenario);
                set(&mut a.common.out, self.out);
                set(&mut a.seed, self.seed);
                set(&mut a.y, self.y);
                set(&mut a.candidates, self.candidates);
                set(&mut a.snapshot_times, self.snapshot_times);
                set(&mut a.horizon, self.horizon);
                set(&mut a.replications, self.replications);
                set(&mut a.seed_base, self.seed_base);
            }
            Command::Validate(a) => {
                set_opt(&mut a.scenario, self.scenario);
                set_opt(&mut a.goal, self.goal);
            }
            Command::Serve(a) => {
                set_opt(&mut a.scenario, self.scenario);
                set_opt(&mut a.goal, self.goal);
                set(&mut a.addr, self.addr);
                set(&mut a.time_scale, self.time_scale);
                set(&mut a.auto_enact, self.auto_enact);
            }
        }
    }
}

fn load_config(path: &std::path::Path) -> Result<ConfigFile, commands::CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| commands::CliError::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| commands::CliError::Input(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    let result = cli
        .config
        .as_deref()
        .map(load_config)
        .transpose()
        .and_then(|cfg| {
            if let Some(cfg) = cfg {
                cfg.apply(&mut cli.command);
            }
            match cli.command {
                Command::Run(a) => commands::run(a),
                Command::TwoPhase(a) => commands::two_phase(a),
                Command::Sweep(a) => commands::sweep(a),
                Command::Validate(a) => commands::validate(a),
                Command::Serve(a) => commands::serve(a),
            }
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
