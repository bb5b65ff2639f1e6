//! Argument parsing and the exit-code contract.
//!
//! | code | meaning                                              |
//! |------|------------------------------------------------------|
//! | 0    | every run finished and none ended in a collision     |
//! | 1    | at least one collision, or a sweep run that failed   |
//! | 2    | invalid arguments or scenario file                   |
//! | 3    | the run could not be carried out (I/O, numerics)     |

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use safebrake_core::sim::{Clock, NoClock};

use crate::clock::WallClock;
use crate::config::{load_scenario_file, ScenarioFile};
use crate::error::{AppError, Result};
use crate::sweep::{execute_run, run_sweep, SweepPlan};

pub const EXIT_OK: u8 = 0;
pub const EXIT_COLLISION: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "safebrake", version, about = "Safety-aware MPC braking of an automated vehicle behind human-driven traffic at a red light")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write its tables.
    Run(RunArgs),
    /// Simulate one scenario per seed, in parallel.
    Sweep(SweepArgs),
    /// Validate a scenario file and print it with every default filled in.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Scenario file; built-in defaults when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Prediction horizon in steps.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Simulated time in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
}

impl Overrides {
    fn load(&self) -> Result<ScenarioFile> {
        let mut file = match &self.scenario {
            Some(path) => load_scenario_file(path)?,
            None => ScenarioFile::default(),
        };
        if let Some(h) = self.horizon {
            file.controller.horizon = h;
        }
        if let Some(d) = self.duration {
            file.scenario.duration = d;
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Vehicle count, automated vehicle included.
    #[arg(long)]
    pub vehicles: Option<usize>,
    /// Write 0 instead of measured solve times, for byte-identical reruns.
    #[arg(long)]
    pub no_timing: bool,
    /// Also dump the QP built at this step to `qp.txt`.
    #[arg(long, value_name = "STEP")]
    pub dump_qp: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed list such as `1-50` or `1,4,9`.
    #[arg(long)]
    pub seeds: SeedList,
    /// Vehicle counts assigned to the runs in turn, such as `3-6`.
    #[arg(long)]
    pub vehicles: Option<CountList>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub scenario: PathBuf,
}

fn parse_ranges(text: &str) -> std::result::Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        if part.is_empty() {
            return Err(format!("empty entry in `{text}`"));
        }
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: u64 = lo.trim().parse().map_err(|_| format!("bad range start in `{part}`"))?;
                let hi: u64 = hi.trim().parse().map_err(|_| format!("bad range end in `{part}`"))?;
                if lo > hi {
                    return Err(format!("range `{part}` is reversed"));
                }
                out.extend(lo..=hi);
            }
            None => out.push(part.parse().map_err(|_| format!("`{part}` is not a non-negative integer"))?),
        }
    }
    Ok(out)
}

/// Comma-separated integers and inclusive ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_ranges(s).map(SeedList)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountList(pub Vec<usize>);

impl FromStr for CountList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let values = parse_ranges(s)?;
        if values.len() > 1000 {
            return Err("too many vehicle counts".into());
        }
        Ok(CountList(values.into_iter().map(|v| v as usize).collect()))
    }
}

fn exit_code_for(err: &AppError) -> u8 {
    match err {
        AppError::Parse { .. } | AppError::Invalid { .. } | AppError::Usage(_) => EXIT_CONFIG,
        AppError::Core(safebrake_core::Error::InvalidConfig { .. }) => EXIT_CONFIG,
        AppError::Io { .. } | AppError::Csv { .. } | AppError::Core(_) => EXIT_RUNTIME,
    }
}

fn run(args: &RunArgs) -> Result<u8> {
    let mut file = args.overrides.load()?;
    if let Some(seed) = args.seed {
        file.scenario.seed = seed;
    }
    if let Some(n) = args.vehicles {
        file.set_vehicle_count(n);
    }
    let mut config = file.build()?;
    config.capture_qp_at = args.dump_qp;
    let wall = WallClock::new();
    let clock: &dyn Clock = if args.no_timing { &NoClock } else { &wall };
    let record = execute_run(&config, &args.out, clock)?;
    println!(
        "seed {}: {} at t = {:.1} s, violations {}, min gap {:.3} m, outputs in {}",
        record.seed,
        record.outcome,
        record.final_time,
        record.hard_violations,
        record.min_bumper_gap,
        record.dir.display()
    );
    Ok(if record.collision { EXIT_COLLISION } else { EXIT_OK })
}

fn sweep(args: &SweepArgs) -> Result<u8> {
    let plan = SweepPlan {
        base: args.overrides.load()?,
        seeds: args.seeds.0.clone(),
        vehicles: args.vehicles.clone().map(|v| v.0).unwrap_or_default(),
        out: args.out.clone(),
        jobs: args.jobs,
        timing: !args.no_timing,
    };
    let report = run_sweep(&plan)?;
    let a = &report.aggregate;
    println!(
        "{} runs: {} collisions, {} failed, {} hard violations, worst slack {:.3e} m, min gap {:.3} m",
        a.runs, a.collisions, a.errors, a.hard_violations, a.worst_slack, a.min_gap_min
    );
    Ok(if a.success() { EXIT_OK } else { EXIT_COLLISION })
}

fn check(args: &CheckArgs) -> Result<u8> {
    let file = load_scenario_file(&args.scenario)?;
    let config = file.build()?;
    print!("{}", ScenarioFile::from_config(&config).to_toml());
    Ok(EXIT_OK)
}

/// Carry out `cli` and return the process exit code.
pub fn execute(cli: &Cli) -> u8 {
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Check(a) => check(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code_for(&e)
    })
}
