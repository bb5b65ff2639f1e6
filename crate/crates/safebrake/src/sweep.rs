//! Seeded batches of scenarios.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use safebrake_core::sim::{run_simulation, CavMode, Clock, NoClock, ScenarioConfig};

use crate::clock::WallClock;
use crate::config::ScenarioFile;
use crate::error::{AppError, Result};
use crate::output::{fmt_num, outcome_name, write_outputs};

pub const SWEEP_TABLE: &str = "sweep.csv";
pub const AGGREGATE_FILE: &str = "aggregate.toml";

pub const SWEEP_COLUMNS: [&str; 13] = [
    "seed",
    "n_vehicles",
    "outcome",
    "hard_violations",
    "max_slack",
    "min_bumper_gap",
    "min_headway_margin",
    "final_cav_gap",
    "final_time",
    "solver_fallbacks",
    "solve_time_median",
    "solve_time_p95",
    "error",
];

/// What one run of a batch produced. `error` is set when the run could
/// not be completed; the numeric fields are then meaningless.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub n_vehicles: usize,
    pub dir: PathBuf,
    pub outcome: &'static str,
    pub collision: bool,
    pub all_stopped: bool,
    pub hard_violations: usize,
    pub max_slack: f64,
    pub min_bumper_gap: f64,
    pub min_headway_margin: f64,
    pub final_cav_gap: Option<f64>,
    pub final_time: f64,
    pub solver_fallbacks: usize,
    pub min_u: f64,
    pub max_u: f64,
    pub min_v: f64,
    pub max_v: f64,
    pub solve_time_median: f64,
    pub solve_time_p95: f64,
    /// Solve times of the steps the controller was active.
    pub solve_times: Vec<f64>,
    pub error: Option<String>,
}

impl RunRecord {
    fn failed(seed: u64, n_vehicles: usize, dir: PathBuf, error: String) -> Self {
        RunRecord {
            seed,
            n_vehicles,
            dir,
            outcome: "error",
            collision: false,
            all_stopped: false,
            hard_violations: 0,
            max_slack: f64::NAN,
            min_bumper_gap: f64::NAN,
            min_headway_margin: f64::NAN,
            final_cav_gap: None,
            final_time: f64::NAN,
            solver_fallbacks: 0,
            min_u: f64::NAN,
            max_u: f64::NAN,
            min_v: f64::NAN,
            max_v: f64::NAN,
            solve_time_median: f64::NAN,
            solve_time_p95: f64::NAN,
            solve_times: Vec::new(),
            error: Some(error),
        }
    }

    pub fn completed(&self) -> bool {
        self.error.is_none()
    }
}

/// Simulate `config` and write its tables into `dir`.
pub fn execute_run(config: &ScenarioConfig, dir: &Path, clock: &dyn Clock) -> Result<RunRecord> {
    let (trace, metrics) = run_simulation(config, clock)?;
    write_outputs(dir, config, &trace, &metrics)?;
    Ok(RunRecord {
        seed: config.seed,
        n_vehicles: config.n_vehicles(),
        dir: dir.to_path_buf(),
        outcome: outcome_name(&trace.outcome),
        collision: metrics.collision,
        all_stopped: metrics.all_stopped,
        hard_violations: metrics.hard_violations,
        max_slack: metrics.max_slack,
        min_bumper_gap: metrics.min_bumper_gap,
        min_headway_margin: metrics.min_headway_margin,
        final_cav_gap: metrics.final_cav_gap,
        final_time: metrics.final_time,
        solver_fallbacks: metrics.solver_fallbacks,
        min_u: metrics.min_u,
        max_u: metrics.max_u,
        min_v: metrics.min_v,
        max_v: metrics.max_v,
        solve_time_median: metrics.solve_time_median,
        solve_time_p95: metrics.solve_time_p95,
        solve_times: trace
            .cav
            .iter()
            .filter(|r| matches!(r.mode, CavMode::Mpc(_)))
            .map(|r| r.solve_time)
            .collect(),
        error: None,
    })
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: ScenarioFile,
    pub seeds: Vec<u64>,
    /// Vehicle counts assigned to the runs in turn; empty keeps the base
    /// layout.
    pub vehicles: Vec<usize>,
    pub out: PathBuf,
    /// Worker threads; 0 picks one per core.
    pub jobs: usize,
    pub timing: bool,
}

impl SweepPlan {
    /// Scenario of the `index`-th run.
    pub fn scenario(&self, index: usize) -> Result<ScenarioConfig> {
        let mut file = self.base.clone();
        file.scenario.seed = self.seeds[index];
        if !self.vehicles.is_empty() {
            file.set_vehicle_count(self.vehicles[index % self.vehicles.len()]);
        }
        file.build()
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed_{seed}"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(AppError::Usage("a sweep needs at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(AppError::Usage(format!("seed {} listed twice", w[0])));
        }
        // surface configuration errors before any work starts
        for i in 0..self.seeds.len().min(self.vehicles.len().max(1)) {
            self.scenario(i)?;
        }
        Ok(())
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub runs: usize,
    pub completed: usize,
    pub errors: usize,
    pub collisions: usize,
    pub stopped: usize,
    pub hard_violations: usize,
    pub worst_slack: f64,
    pub min_gap_min: f64,
    pub min_gap_p5: f64,
    pub min_gap_median: f64,
    pub min_gap_max: f64,
    pub final_gap_min: f64,
    pub final_gap_max: f64,
    pub solver_fallbacks: usize,
    pub min_u: f64,
    pub max_u: f64,
    pub min_v: f64,
    pub max_v: f64,
    /// Pooled over every controller step of every completed run.
    pub solve_time_median: f64,
    pub solve_time_p95: f64,
    pub solve_time_max: f64,
}

impl Aggregate {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let done: Vec<&RunRecord> = records.iter().filter(|r| r.completed()).collect();
        let fold = |f: fn(&RunRecord) -> f64, init: f64, pick: fn(f64, f64) -> f64| {
            done.iter().map(|r| f(r)).fold(init, pick)
        };
        let mut gaps: Vec<f64> = done.iter().map(|r| r.min_bumper_gap).collect();
        gaps.sort_by(f64::total_cmp);
        let final_gaps: Vec<f64> = done.iter().filter_map(|r| r.final_cav_gap).collect();
        let mut times: Vec<f64> = done.iter().flat_map(|r| r.solve_times.iter().copied()).collect();
        times.sort_by(f64::total_cmp);
        Aggregate {
            runs: records.len(),
            completed: done.len(),
            errors: records.len() - done.len(),
            collisions: done.iter().filter(|r| r.collision).count(),
            stopped: done.iter().filter(|r| r.all_stopped).count(),
            hard_violations: done.iter().map(|r| r.hard_violations).sum(),
            worst_slack: fold(|r| r.max_slack, 0.0, f64::max),
            min_gap_min: percentile(&gaps, 0.0),
            min_gap_p5: percentile(&gaps, 0.05),
            min_gap_median: percentile(&gaps, 0.5),
            min_gap_max: gaps.last().copied().unwrap_or(f64::NAN),
            final_gap_min: final_gaps.iter().copied().fold(f64::INFINITY, f64::min),
            final_gap_max: final_gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            solver_fallbacks: done.iter().map(|r| r.solver_fallbacks).sum(),
            min_u: fold(|r| r.min_u, f64::INFINITY, f64::min),
            max_u: fold(|r| r.max_u, f64::NEG_INFINITY, f64::max),
            min_v: fold(|r| r.min_v, f64::INFINITY, f64::min),
            max_v: fold(|r| r.max_v, f64::NEG_INFINITY, f64::max),
            solve_time_median: percentile(&times, 0.5),
            solve_time_p95: percentile(&times, 0.95),
            solve_time_max: times.last().copied().unwrap_or(f64::NAN),
        }
    }

    /// Every run finished and none ended in a collision.
    pub fn success(&self) -> bool {
        self.errors == 0 && self.collisions == 0
    }

    pub fn document(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "runs = {}", self.runs);
        let _ = writeln!(out, "completed = {}", self.completed);
        let _ = writeln!(out, "errors = {}", self.errors);
        let _ = writeln!(out, "collisions = {}", self.collisions);
        let _ = writeln!(out, "stopped = {}", self.stopped);
        let _ = writeln!(out, "hard_violations = {}", self.hard_violations);
        let _ = writeln!(out, "solver_fallbacks = {}", self.solver_fallbacks);
        for (key, x) in [
            ("worst_slack", self.worst_slack),
            ("min_gap_min", self.min_gap_min),
            ("min_gap_p5", self.min_gap_p5),
            ("min_gap_median", self.min_gap_median),
            ("min_gap_max", self.min_gap_max),
            ("final_gap_min", self.final_gap_min),
            ("final_gap_max", self.final_gap_max),
            ("min_u", self.min_u),
            ("max_u", self.max_u),
            ("min_v", self.min_v),
            ("max_v", self.max_v),
            ("solve_time_median", self.solve_time_median),
            ("solve_time_p95", self.solve_time_p95),
            ("solve_time_max", self.solve_time_max),
        ] {
            let _ = writeln!(out, "{key} = {}", fmt_num(x));
        }
        out
    }
}

fn write_sweep_table(path: &Path, records: &[RunRecord]) -> Result<()> {
    let csv_err = |source| AppError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SWEEP_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.seed.to_string(),
            r.n_vehicles.to_string(),
            r.outcome.to_string(),
            r.hard_violations.to_string(),
            fmt_num(r.max_slack),
            fmt_num(r.min_bumper_gap),
            fmt_num(r.min_headway_margin),
            r.final_cav_gap.map(fmt_num).unwrap_or_default(),
            fmt_num(r.final_time),
            r.solver_fallbacks.to_string(),
            fmt_num(r.solve_time_median),
            fmt_num(r.solve_time_p95),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// In seed-list order.
    pub records: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

/// Run every seed of the plan, each into its own subdirectory, then write
/// `sweep.csv` and `aggregate.toml`. A failed run is recorded and the
/// others continue.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepReport> {
    plan.validate()?;
    fs::create_dir_all(&plan.out).map_err(|e| AppError::io(&plan.out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs)
        .build()
        .map_err(|e| AppError::Usage(format!("cannot start {} workers: {e}", plan.jobs)))?;
    let records: Vec<RunRecord> = pool.install(|| {
        (0..plan.seeds.len())
            .into_par_iter()
            .map(|i| {
                let seed = plan.seeds[i];
                let dir = plan.run_dir(seed);
                let config = match plan.scenario(i) {
                    Ok(c) => c,
                    Err(e) => return RunRecord::failed(seed, 0, dir, e.to_string()),
                };
                let wall = WallClock::new();
                let clock: &dyn Clock = if plan.timing { &wall } else { &NoClock };
                match execute_run(&config, &dir, clock) {
                    Ok(record) => {
                        log::info!("seed {seed}: {} after {:.1} s", record.outcome, record.final_time);
                        record
                    }
                    Err(e) => {
                        log::warn!("seed {seed}: {e}");
                        RunRecord::failed(seed, config.n_vehicles(), dir, e.to_string())
                    }
                }
            })
            .collect()
    });
    let aggregate = Aggregate::from_records(&records);
    write_sweep_table(&plan.out.join(SWEEP_TABLE), &records)?;
    let agg_path = plan.out.join(AGGREGATE_FILE);
    fs::write(&agg_path, aggregate.document()).map_err(|e| AppError::io(&agg_path, e))?;
    Ok(SweepReport { records, aggregate })
}
