//! Output tables.
//!
//! | file             | columns                                                        |
//! |------------------|----------------------------------------------------------------|
//! | `trajectory.csv` | `t,id,p,v,u,delta_p,delta_v`                                   |
//! | `cav.csv`        | `t,e_p,e_v,s1,slack,solver_status,solve_time`                  |
//! | `estimates.csv`  | `t,hdv_id,gamma1,gamma2,gamma3,eta,nu,rho,residual`            |
//! | `metrics.toml`   | flat `key = value` summary                                     |
//!
//! Numbers are written in fixed decimal notation with at least nine
//! significant digits. Quantities that do not exist at a step (no vehicle
//! ahead, an estimate that cannot be inverted) are left empty.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use safebrake_core::qp::QpProblem;
use safebrake_core::sim::{Metrics, Outcome, ScenarioConfig, SimTrace};

use crate::error::{AppError, Result};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CAV_FILE: &str = "cav.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const METRICS_FILE: &str = "metrics.toml";
pub const SCENARIO_FILE: &str = "scenario.toml";
pub const QP_FILE: &str = "qp.txt";

pub const TRAJECTORY_COLUMNS: [&str; 7] = ["t", "id", "p", "v", "u", "delta_p", "delta_v"];
pub const CAV_COLUMNS: [&str; 7] = ["t", "e_p", "e_v", "s1", "slack", "solver_status", "solve_time"];
pub const ESTIMATE_COLUMNS: [&str; 9] = ["t", "hdv_id", "gamma1", "gamma2", "gamma3", "eta", "nu", "rho", "residual"];

const MIN_DECIMALS: i32 = 9;
const MAX_DECIMALS: i32 = 40;

/// Fixed decimal with at least nine significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let decimals = if x == 0.0 {
        MIN_DECIMALS
    } else {
        (8 - x.abs().log10().floor() as i32).clamp(MIN_DECIMALS, MAX_DECIMALS)
    };
    let s = format!("{x:.*}", decimals as usize);
    // avoid "-0.000000000"
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |source| AppError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_table<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn write_trajectory(path: &Path, trace: &SimTrace) -> Result<()> {
    write_table(
        path,
        &TRAJECTORY_COLUMNS,
        trace.vehicles.iter().map(|r| {
            vec![
                fmt_num(r.t),
                r.id.to_string(),
                fmt_num(r.p),
                fmt_num(r.v),
                fmt_num(r.u),
                fmt_num(r.delta_p),
                fmt_num(r.delta_v),
            ]
        }),
    )
}

pub fn write_cav(path: &Path, trace: &SimTrace) -> Result<()> {
    write_table(
        path,
        &CAV_COLUMNS,
        trace.cav.iter().map(|r| {
            vec![
                fmt_num(r.t),
                fmt_opt(r.e_p),
                fmt_opt(r.e_v),
                fmt_num(r.s1),
                fmt_num(r.slack),
                r.mode.as_str().to_string(),
                fmt_num(r.solve_time),
            ]
        }),
    )
}

pub fn write_estimates(path: &Path, trace: &SimTrace) -> Result<()> {
    write_table(
        path,
        &ESTIMATE_COLUMNS,
        trace.estimates.iter().map(|r| {
            vec![
                fmt_num(r.t),
                r.hdv_id.to_string(),
                fmt_num(r.gamma[0]),
                fmt_num(r.gamma[1]),
                fmt_num(r.gamma[2]),
                fmt_opt(r.params.map(|p| p.eta)),
                fmt_opt(r.params.map(|p| p.nu)),
                fmt_opt(r.params.map(|p| p.rho)),
                fmt_num(r.residual),
            ]
        }),
    )
}

pub fn outcome_name(outcome: &Outcome) -> &'static str {
    match outcome {
        Outcome::Completed => "completed",
        Outcome::Stopped => "stopped",
        Outcome::Collision { .. } => "collision",
    }
}

/// Flat `key = value` document. Per-vehicle values get the id as a suffix.
pub fn metrics_document(config: &ScenarioConfig, trace: &SimTrace, metrics: &Metrics) -> String {
    let mut out = String::new();
    let num = |out: &mut String, key: &str, x: f64| {
        let _ = writeln!(out, "{key} = {}", fmt_num(x));
    };
    let _ = writeln!(out, "seed = {}", config.seed);
    let _ = writeln!(out, "n_vehicles = {}", config.n_vehicles());
    let _ = writeln!(out, "horizon = {}", config.mpc.horizon);
    let _ = writeln!(out, "outcome = \"{}\"", outcome_name(&trace.outcome));
    if let Outcome::Collision { t, follower, leader } = trace.outcome {
        num(&mut out, "collision_time", t);
        let _ = writeln!(out, "collision_follower = {follower}");
        let _ = writeln!(out, "collision_leader = {leader}");
    }
    let _ = writeln!(out, "collision = {}", metrics.collision);
    let _ = writeln!(out, "all_stopped = {}", metrics.all_stopped);
    let _ = writeln!(out, "steps = {}", metrics.steps);
    num(&mut out, "final_time", metrics.final_time);
    let _ = writeln!(out, "hard_violations = {}", metrics.hard_violations);
    num(&mut out, "max_slack", metrics.max_slack);
    num(&mut out, "min_headway_margin", metrics.min_headway_margin);
    num(&mut out, "min_bumper_gap", metrics.min_bumper_gap);
    if let Some(gap) = metrics.final_cav_gap {
        num(&mut out, "final_cav_gap", gap);
    }
    num(&mut out, "control_effort", metrics.control_effort);
    num(&mut out, "min_u", metrics.min_u);
    num(&mut out, "max_u", metrics.max_u);
    num(&mut out, "min_v", metrics.min_v);
    num(&mut out, "max_v", metrics.max_v);
    num(&mut out, "solve_time_median", metrics.solve_time_median);
    num(&mut out, "solve_time_p95", metrics.solve_time_p95);
    let _ = writeln!(out, "solver_fallbacks = {}", metrics.solver_fallbacks);
    for (id, v) in &metrics.terminal_speeds {
        num(&mut out, &format!("terminal_speed_{id}"), *v);
    }
    for (id, u) in &metrics.max_abs_u {
        num(&mut out, &format!("max_abs_u_{id}"), *u);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFiles {
    pub trajectory: PathBuf,
    pub cav: PathBuf,
    pub estimates: PathBuf,
    pub metrics: PathBuf,
    pub scenario: PathBuf,
    pub qp: Option<PathBuf>,
}

impl OutputFiles {
    pub fn in_dir(dir: &Path) -> Self {
        OutputFiles {
            trajectory: dir.join(TRAJECTORY_FILE),
            cav: dir.join(CAV_FILE),
            estimates: dir.join(ESTIMATES_FILE),
            metrics: dir.join(METRICS_FILE),
            scenario: dir.join(SCENARIO_FILE),
            qp: None,
        }
    }
}

pub fn write_qp(path: &Path, problem: &QpProblem) -> Result<()> {
    let mut text = String::new();
    problem.write_text(&mut text).expect("writing to a String cannot fail");
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Write every table of one run into `dir`, creating it if needed. The
/// resolved scenario goes alongside so the run can be repeated.
pub fn write_outputs(dir: &Path, config: &ScenarioConfig, trace: &SimTrace, metrics: &Metrics) -> Result<OutputFiles> {
    if trace.cav.is_empty() {
        return Err(AppError::Core(safebrake_core::Error::EmptyTrace));
    }
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let mut files = OutputFiles::in_dir(dir);
    write_trajectory(&files.trajectory, trace)?;
    write_cav(&files.cav, trace)?;
    write_estimates(&files.estimates, trace)?;
    fs::write(&files.metrics, metrics_document(config, trace, metrics)).map_err(|e| AppError::io(&files.metrics, e))?;
    crate::config::write_scenario(&files.scenario, config)?;
    if let Some(problem) = &trace.captured_qp {
        let path = dir.join(QP_FILE);
        write_qp(&path, problem)?;
        files.qp = Some(path);
    }
    Ok(files)
}
