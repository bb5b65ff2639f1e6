//! Closed-loop scenario engine.
//!
//! Vehicles are identified by the index they receive at the start of the
//! red phase: the one closest to the stop line gets the largest number and
//! the automated vehicle, always last, is number 1. Identifiers are stable
//! for the whole run, so estimators follow the physical vehicle when the
//! set of vehicles ahead changes.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{gamma_to_cthrv, make_regressor, Regressor, RlsConfig, RlsEstimator};
use crate::hdv::{observe_neighbor, ovm_accel, perturb_params, CthRvParams, NeighborObservation, OvmParams};
use crate::mpc::{cruise_hold, MpcConfig, MpcController, TrackedHdv};
use crate::predictor::LeaderBoundary;
use crate::qp::{QpProblem, QpStatus};
use crate::vehicle::{step_dynamics, VehicleState};

/// Identifier of the automated vehicle.
pub const CAV_ID: u32 = 1;

/// Slack above this (m) counts as a hard safety violation.
pub const VIOLATION_SLACK: f64 = 1e-3;

/// Wall-clock source for solve-time measurements, in seconds.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Reports zero for every reading; solve times come out as 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Who drives vehicle 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CavDriver {
    #[default]
    Mpc,
    /// Another human model with the nominal parameters; the baseline.
    Ovm,
}

/// A human-driven vehicle leaving the lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Departure {
    pub id: u32,
    /// Removed from the sets from the first step at or after this time (s).
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Initial positions front to back; the last entry is the automated
    /// vehicle (m).
    pub positions: Vec<f64>,
    /// Initial speeds in the same order (m/s).
    pub speeds: Vec<f64>,
    /// Stop line position (m).
    pub stop_line: f64,
    pub ovm: OvmParams,
    /// Relative spread of the per-driver parameter draws.
    pub perturbation: f64,
    pub seed: u64,
    /// Simulated time (s).
    pub duration: f64,
    /// Controller settings; `limits` and `l_c` apply to every vehicle.
    pub mpc: MpcConfig,
    pub rls: RlsConfig,
    /// Look-ahead distance (m).
    pub look_ahead: f64,
    pub departures: Vec<Departure>,
    /// Speed below which a vehicle counts as stopped (m/s).
    pub stop_speed: f64,
    /// How long every vehicle must stay stopped before the run ends (s).
    pub stop_hold: f64,
    pub cav_driver: CavDriver,
    /// Keep a copy of the QP built at this step.
    pub capture_qp_at: Option<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::with_vehicles(3)
    }
}

impl ScenarioConfig {
    /// Evenly spaced platoon of `n` vehicles (automated one included): the
    /// leader 60 m before the stop line, all at 12 m/s, bumper gaps of
    /// [`DEFAULT_GAP`] m.
    pub fn with_vehicles(n: usize) -> Self {
        let mpc = MpcConfig::default();
        let spacing = DEFAULT_GAP + mpc.l_c;
        ScenarioConfig {
            positions: (0..n).map(|i| -60.0 - spacing * i as f64).collect(),
            speeds: alloc::vec![12.0; n],
            stop_line: 0.0,
            ovm: OvmParams::default(),
            perturbation: 0.2,
            seed: 0,
            duration: 300.0,
            mpc,
            rls: RlsConfig::default(),
            look_ahead: 100.0,
            departures: Vec::new(),
            stop_speed: 0.01,
            stop_hold: 2.0,
            cav_driver: CavDriver::Mpc,
            capture_qp_at: None,
        }
    }

    pub fn n_vehicles(&self) -> usize {
        self.positions.len()
    }

    /// Identifier of the vehicle at `index` in the front-to-back order.
    pub fn id_at(&self, index: usize) -> u32 {
        (self.n_vehicles() - index) as u32
    }

    pub fn steps(&self) -> usize {
        libm::round(self.duration / self.mpc.limits.tau) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |key, reason| Err(Error::InvalidConfig { key, reason });
        self.mpc.validate()?;
        self.rls.validate()?;
        self.ovm.validate()?;
        if gamma_to_cthrv(&self.rls.gamma0, self.mpc.limits.tau).is_err() {
            return invalid("gamma0", "second component must be non-zero");
        }
        let n = self.positions.len();
        if n < 2 {
            return invalid("positions", "need the automated vehicle and at least one vehicle ahead");
        }
        if self.speeds.len() != n {
            return invalid("speeds", "must have one entry per vehicle");
        }
        if self.positions.iter().chain(&self.speeds).any(|x| !x.is_finite()) {
            return invalid("positions", "must be finite");
        }
        let lim = &self.mpc.limits;
        if self.speeds.iter().any(|&v| v < lim.v_min || v > lim.v_max) {
            return invalid("speeds", "must lie within [v_min, v_max]");
        }
        if self.positions.windows(2).any(|w| w[0] - w[1] - self.mpc.l_c <= 0.0) {
            return invalid("positions", "vehicles must be ordered front to back with positive gaps");
        }
        if !self.stop_line.is_finite() {
            return invalid("stop_line", "must be finite");
        }
        if !(0.0..1.0).contains(&self.perturbation) {
            return invalid("perturbation", "must lie in [0, 1)");
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return invalid("duration", "must be a non-negative number of seconds");
        }
        if !(self.look_ahead > 0.0) {
            return invalid("look_ahead", "must be positive");
        }
        if !(self.stop_speed > 0.0) {
            return invalid("stop_speed", "must be positive");
        }
        if !(self.stop_hold >= 0.0) {
            return invalid("stop_hold", "must be non-negative");
        }
        for d in &self.departures {
            if d.id < 2 || d.id as usize > n {
                return invalid("departure", "id must name a human-driven vehicle");
            }
            if !(d.time >= 0.0) {
                return invalid("departure", "time must be non-negative");
            }
        }
        Ok(())
    }
}

/// Bumper gap of [`ScenarioConfig::with_vehicles`] (m).
pub const DEFAULT_GAP: f64 = 30.0;

/// Per-driver parameters, keyed by identifier. Each human-driven vehicle
/// gets its own stream seeded from the scenario seed, drawn front to back.
pub fn driver_params(config: &ScenarioConfig) -> Result<BTreeMap<u32, OvmParams>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = BTreeMap::new();
    for index in 0..config.n_vehicles() - 1 {
        let sub_seed = rng.next_u64();
        out.insert(config.id_at(index), perturb_params(&config.ovm, config.perturbation, sub_seed)?);
    }
    Ok(out)
}

/// Vehicle identity and position, as needed for set maintenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetMember {
    pub id: u32,
    pub p: f64,
}

/// Drop vehicles that have left the lane or whose rear has crossed the stop
/// line. Returns the surviving identifiers in their original order.
pub fn update_vehicle_sets(members: &[SetMember], stop_line: f64, l_c: f64, departed: &[u32]) -> Vec<u32> {
    members
        .iter()
        .filter(|m| !departed.contains(&m.id) && m.p - l_c <= stop_line)
        .map(|m| m.id)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleRow {
    pub t: f64,
    pub id: u32,
    pub p: f64,
    pub v: f64,
    /// Input applied from this instant.
    pub u: f64,
    pub delta_p: f64,
    pub delta_v: f64,
    /// Identifier of the vehicle directly ahead, if any.
    pub predecessor: Option<u32>,
}

/// How vehicle 1 chose its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CavMode {
    Mpc(QpStatus),
    /// Nothing ahead; speed held.
    Cruise,
    Human,
}

impl CavMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CavMode::Mpc(s) => s.as_str(),
            CavMode::Cruise => "cruise",
            CavMode::Human => "human",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavRow {
    pub t: f64,
    /// Bumper gap and speed difference to the vehicle ahead.
    pub e_p: Option<f64>,
    pub e_v: Option<f64>,
    /// Required safe headway at the current speed.
    pub s1: f64,
    pub slack: f64,
    pub mode: CavMode,
    pub iterations: usize,
    pub kkt: f64,
    pub fallback: bool,
    pub solve_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorRow {
    pub t: f64,
    pub hdv_id: u32,
    pub gamma: [f64; 3],
    /// `None` while the estimate cannot be inverted.
    pub params: Option<CthRvParams>,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    /// Ran for the full duration.
    Completed,
    /// Every vehicle stayed stopped for the hold time.
    Stopped,
    /// Bumper contact between `follower` and `leader` at time `t`.
    Collision { t: f64, follower: u32, leader: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub tau: f64,
    pub l_c: f64,
    /// Grouped by step, front to back within a step.
    pub vehicles: Vec<VehicleRow>,
    pub cav: Vec<CavRow>,
    pub estimates: Vec<EstimatorRow>,
    pub outcome: Outcome,
    pub captured_qp: Option<QpProblem>,
}

impl SimTrace {
    pub fn steps(&self) -> usize {
        self.cav.len()
    }

    pub fn rows_at(&self, t: f64) -> impl Iterator<Item = &VehicleRow> {
        self.vehicles.iter().filter(move |r| r.t == t)
    }
}

struct Agent {
    id: u32,
    state: VehicleState,
}

struct Tracker {
    rls: RlsEstimator,
    last_regressor: Option<Regressor>,
}

pub fn run_simulation(config: &ScenarioConfig, clock: &dyn Clock) -> Result<(SimTrace, Metrics)> {
    let trace = simulate(config, clock)?;
    let metrics = compute_metrics(&trace)?;
    Ok((trace, metrics))
}

/// Step the scenario to completion and return the raw trace.
pub fn simulate(config: &ScenarioConfig, clock: &dyn Clock) -> Result<SimTrace> {
    config.validate()?;
    let lim = config.mpc.limits;
    let tau = lim.tau;
    let l_c = config.mpc.l_c;
    let drivers = driver_params(config)?;
    let initial = gamma_to_cthrv(&config.rls.gamma0, tau)?;
    let mut controller = MpcController::new(config.mpc, initial);
    let mut trackers: BTreeMap<u32, Tracker> = BTreeMap::new();
    let mut agents: Vec<Agent> = (0..config.n_vehicles())
        .map(|i| Agent {
            id: config.id_at(i),
            state: VehicleState::new(config.positions[i], config.speeds[i]),
        })
        .collect();

    let mut trace = SimTrace {
        tau,
        l_c,
        vehicles: Vec::new(),
        cav: Vec::new(),
        estimates: Vec::new(),
        outcome: Outcome::Completed,
        captured_qp: None,
    };
    let n_steps = config.steps();
    let mut still_since: Option<usize> = None;
    let hold_steps = libm::round(config.stop_hold / tau) as usize;

    for k in 0..=n_steps {
        let t = k as f64 * tau;
        let observations: Vec<NeighborObservation> = (0..agents.len())
            .map(|i| {
                let ahead = if i == 0 { None } else { Some(&agents[i - 1].state) };
                observe_neighbor(&agents[i].state, ahead, Some(config.stop_line), l_c, config.look_ahead)
            })
            .collect();

        let mut inputs = Vec::with_capacity(agents.len());
        for (agent, obs) in agents.iter().zip(&observations) {
            if agent.id == CAV_ID {
                inputs.push(0.0);
                continue;
            }
            let u = ovm_accel(&drivers[&agent.id], obs, agent.state.v, &lim);
            inputs.push(lim.admissible_input(agent.state.v, u));
        }

        let cav_index = agents.len() - 1;
        let cav = agents[cav_index].state;
        let ahead = if cav_index > 0 { Some(&agents[cav_index - 1]) } else { None };
        let gap = ahead.map(|a| (a.state.p - cav.p - l_c, a.state.v - cav.v));
        let s1 = config.mpc.policy.headway_at(cav.v);
        let mut row = CavRow {
            t,
            e_p: gap.map(|g| g.0),
            e_v: gap.map(|g| g.1),
            s1,
            slack: 0.0,
            mode: CavMode::Human,
            iterations: 0,
            kkt: 0.0,
            fallback: false,
            solve_time: 0.0,
        };

        match config.cav_driver {
            CavDriver::Ovm => {
                let u = ovm_accel(&config.ovm, &observations[cav_index], cav.v, &lim);
                inputs[cav_index] = lim.admissible_input(cav.v, u);
            }
            CavDriver::Mpc => {
                let mut platoon = Vec::with_capacity(cav_index);
                for (agent, obs) in agents[..cav_index].iter().zip(&observations) {
                    let tracker = trackers.entry(agent.id).or_insert_with(|| Tracker {
                        rls: RlsEstimator::new(config.rls),
                        last_regressor: None,
                    });
                    let residual = match tracker.last_regressor {
                        Some(phi) => tracker.rls.update(&phi, agent.state.v)?.residual,
                        None => 0.0,
                    };
                    let v = agent.state.v;
                    tracker.last_regressor = Some(make_regressor(v, obs.delta_p, obs.leader_speed(v))?);
                    let gamma = tracker.rls.gamma();
                    trace.estimates.push(EstimatorRow {
                        t,
                        hdv_id: agent.id,
                        gamma,
                        params: gamma_to_cthrv(&gamma, tau).ok(),
                        residual,
                    });
                    platoon.push(TrackedHdv {
                        id: agent.id,
                        state: agent.state,
                        gamma,
                    });
                }
                if platoon.is_empty() {
                    inputs[cav_index] = cruise_hold(&cav, &lim);
                    row.mode = CavMode::Cruise;
                } else {
                    let boundary = LeaderBoundary::StopLine {
                        position: config.stop_line,
                        margin: config.mpc.policy.s0,
                    };
                    let start = clock.now();
                    let step = controller.step(&cav, &platoon, boundary)?;
                    row.solve_time = clock.now() - start;
                    inputs[cav_index] = step.u;
                    row.slack = step.solution.slack_max;
                    row.mode = CavMode::Mpc(step.diagnostics.status);
                    row.iterations = step.diagnostics.iterations;
                    row.kkt = step.diagnostics.kkt.max();
                    row.fallback = step.diagnostics.fallback;
                    if config.capture_qp_at == Some(k) {
                        trace.captured_qp = controller.last_qp().map(|q| q.problem.clone());
                    }
                }
            }
        }
        trace.cav.push(row);

        for (i, (agent, obs)) in agents.iter().zip(&observations).enumerate() {
            trace.vehicles.push(VehicleRow {
                t,
                id: agent.id,
                p: agent.state.p,
                v: agent.state.v,
                u: inputs[i],
                delta_p: obs.delta_p,
                delta_v: obs.delta_v,
                predecessor: if i == 0 { None } else { Some(agents[i - 1].id) },
            });
        }

        if let Some(i) = (1..agents.len()).find(|&i| agents[i - 1].state.p - agents[i].state.p - l_c <= 0.0) {
            trace.outcome = Outcome::Collision {
                t,
                follower: agents[i].id,
                leader: agents[i - 1].id,
            };
            log::warn!("bumper contact between {} and {} at t = {t:.1}", agents[i].id, agents[i - 1].id);
            break;
        }
        if agents.iter().all(|a| a.state.v < config.stop_speed) {
            let since = *still_since.get_or_insert(k);
            if k - since >= hold_steps {
                trace.outcome = Outcome::Stopped;
                break;
            }
        } else {
            still_since = None;
        }
        if k == n_steps {
            break;
        }

        for (agent, &u) in agents.iter_mut().zip(&inputs) {
            agent.state = step_dynamics(&agent.state, u, &lim)?;
        }

        let t_next = (k + 1) as f64 * tau;
        let departed: Vec<u32> = config
            .departures
            .iter()
            .filter(|d| d.time <= t_next + 1e-9)
            .map(|d| d.id)
            .collect();
        let members: Vec<SetMember> = agents.iter().map(|a| SetMember { id: a.id, p: a.state.p }).collect();
        let mut kept = update_vehicle_sets(&members, config.stop_line, l_c, &departed);
        if !kept.contains(&CAV_ID) {
            log::info!("automated vehicle cleared the stop line at t = {t_next:.1}");
            kept.push(CAV_ID);
        }
        if kept.len() != agents.len() {
            agents.retain(|a| kept.contains(&a.id));
            trackers.retain(|id, _| kept.contains(id));
            controller.clear_warm_start();
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub steps: usize,
    pub final_time: f64,
    /// Smallest `e_p - s1` of the automated vehicle (m).
    pub min_headway_margin: f64,
    /// Smallest bumper gap between any two consecutive vehicles (m).
    pub min_bumper_gap: f64,
    /// `(id, speed)` at the final step, front to back.
    pub terminal_speeds: Vec<(u32, f64)>,
    pub final_cav_gap: Option<f64>,
    /// Steps whose safety slack exceeded [`VIOLATION_SLACK`].
    pub hard_violations: usize,
    pub max_slack: f64,
    /// Sum of `u^2 tau` over the automated vehicle's inputs.
    pub control_effort: f64,
    /// `(id, max |u|)`, ordered by id.
    pub max_abs_u: Vec<(u32, f64)>,
    pub min_u: f64,
    pub max_u: f64,
    pub min_v: f64,
    pub max_v: f64,
    pub solve_time_median: f64,
    pub solve_time_p95: f64,
    pub solver_fallbacks: usize,
    pub collision: bool,
    /// Every vehicle ends at or below 0.01 m/s.
    pub all_stopped: bool,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = libm::ceil(q * sorted.len() as f64) as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn compute_metrics(trace: &SimTrace) -> Result<Metrics> {
    let last = trace.cav.last().ok_or(Error::EmptyTrace)?;
    let final_t = last.t;

    let mut min_gap = f64::INFINITY;
    let mut prev: Option<&VehicleRow> = None;
    let mut max_abs: BTreeMap<u32, f64> = BTreeMap::new();
    let (mut min_u, mut max_u) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_v, mut max_v) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut effort = 0.0;
    for r in &trace.vehicles {
        if let (Some(ahead), Some(p)) = (r.predecessor, prev) {
            if p.id == ahead && p.t == r.t {
                min_gap = min_gap.min(p.p - r.p - trace.l_c);
            }
        }
        let m = max_abs.entry(r.id).or_insert(0.0);
        *m = m.max(r.u.abs());
        min_u = min_u.min(r.u);
        max_u = max_u.max(r.u);
        min_v = min_v.min(r.v);
        max_v = max_v.max(r.v);
        if r.id == CAV_ID {
            effort += r.u * r.u * trace.tau;
        }
        prev = Some(r);
    }

    let terminal_speeds: Vec<(u32, f64)> = trace.rows_at(final_t).map(|r| (r.id, r.v)).collect();
    let mut times: Vec<f64> = trace
        .cav
        .iter()
        .filter(|r| matches!(r.mode, CavMode::Mpc(_)))
        .map(|r| r.solve_time)
        .collect();
    times.sort_by(f64::total_cmp);

    Ok(Metrics {
        steps: trace.cav.len(),
        final_time: final_t,
        min_headway_margin: trace
            .cav
            .iter()
            .filter_map(|r| r.e_p.map(|e| e - r.s1))
            .fold(f64::INFINITY, f64::min),
        min_bumper_gap: min_gap,
        all_stopped: terminal_speeds.iter().all(|&(_, v)| v <= 0.01),
        terminal_speeds,
        final_cav_gap: last.e_p,
        hard_violations: trace.cav.iter().filter(|r| r.slack > VIOLATION_SLACK).count(),
        max_slack: trace.cav.iter().fold(0.0, |m, r| r.slack.max(m)),
        control_effort: effort,
        max_abs_u: max_abs.into_iter().collect(),
        min_u,
        max_u,
        min_v,
        max_v,
        solve_time_median: percentile(&times, 0.5),
        solve_time_p95: percentile(&times, 0.95),
        solver_fallbacks: trace.cav.iter().filter(|r| r.fallback).count(),
        collision: matches!(trace.outcome, Outcome::Collision { .. }),
    })
}
