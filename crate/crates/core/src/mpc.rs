//! Receding-horizon controller for the automated vehicle.
//!
//! The optimal control problem over `T` steps is condensed onto the
//! decision vector `x = [u(0..T), sigma(1..=T)]`: the vehicle's own
//! positions and speeds are affine in the inputs under piecewise-constant
//! acceleration, and the vehicle ahead follows an exogenous prediction. The
//! rear-end constraint `e_p >= rho v + s0` is softened by the per-step
//! slacks `sigma`, penalized both linearly and quadratically.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::estimator::gamma_to_cthrv;
use crate::hdv::CthRvParams;
use crate::predictor::{hdv2_reference_trajectory, predict_platoon, HdvPrediction, LeaderBoundary};
use crate::qp::{solve_qp_factored, solve_qp_warm, HessianFactor, KktResiduals, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::vehicle::{HeadwayPolicy, Limits, VehicleState, DEFAULT_VEHICLE_LENGTH};

/// Time constant of the comfortable fallback deceleration (s).
pub const FALLBACK_BRAKE_TIME: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcWeights {
    pub w_ep: f64,
    pub w_ev: f64,
    pub w_u: f64,
    /// Penalty on squared safety slack.
    pub w_slack: f64,
    /// Penalty on the slack itself. Any value above the largest safety
    /// multiplier keeps the slack at zero whenever a safe input exists.
    pub w_slack_linear: f64,
}

impl Default for MpcWeights {
    fn default() -> Self {
        MpcWeights {
            w_ep: 1.0,
            w_ev: 0.1,
            w_u: 1.0,
            w_slack: 1e6,
            w_slack_linear: 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    /// Prediction horizon in steps.
    pub horizon: usize,
    pub limits: Limits,
    /// Controller-side time headway and standstill distance.
    pub policy: HeadwayPolicy,
    pub l_c: f64,
    pub weights: MpcWeights,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 50,
            limits: Limits::default(),
            policy: HeadwayPolicy::default(),
            l_c: DEFAULT_VEHICLE_LENGTH,
            weights: MpcWeights::default(),
            qp: QpSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        self.limits.validate()?;
        let invalid = |key, reason| Err(Error::InvalidConfig { key, reason });
        if self.horizon == 0 {
            return invalid("horizon", "must be at least 1");
        }
        if !(self.policy.rho > 0.0) {
            return invalid("rho", "must be positive");
        }
        if !(self.policy.s0 > 0.0) {
            return invalid("s0", "must be positive");
        }
        if !(self.l_c >= 0.0) {
            return invalid("vehicle_length", "must be non-negative");
        }
        let w = &self.weights;
        if !(w.w_ep >= 0.0) {
            return invalid("w_ep", "must be non-negative");
        }
        if !(w.w_ev >= 0.0) {
            return invalid("w_ev", "must be non-negative");
        }
        if !(w.w_u >= 0.0) {
            return invalid("w_u", "must be non-negative");
        }
        if w.w_ep + w.w_ev + w.w_u <= 0.0 {
            return invalid("w_u", "tracking and input weights cannot all be zero");
        }
        if !(w.w_slack > 0.0) {
            return invalid("w_slack", "must be positive");
        }
        if !(w.w_slack_linear >= 0.0) {
            return invalid("w_slack_linear", "must be non-negative");
        }
        if !(self.qp.tol > 0.0) {
            return invalid("tol", "must be positive");
        }
        if self.qp.max_iter == 0 {
            return invalid("max_iter", "must be at least 1");
        }
        Ok(())
    }
}

/// QP plus the affine maps that recover the vehicle's predicted states.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedQp {
    pub problem: QpProblem,
    pub horizon: usize,
    /// Constant part of the objective, so `objective + constant` is the
    /// full stage cost sum.
    pub constant: f64,
    tau: f64,
    p0: f64,
    v0: f64,
    lead_p: Vec<f64>,
    lead_v: Vec<f64>,
    l_c: f64,
}

impl CondensedQp {
    pub fn inputs<'x>(&self, x: &'x [f64]) -> &'x [f64] {
        &x[..self.horizon]
    }

    pub fn slacks<'x>(&self, x: &'x [f64]) -> &'x [f64] {
        &x[self.horizon..]
    }

    /// Own positions and speeds at instants `1..=T`.
    pub fn own_trajectory(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let tau = self.tau;
        let mut p = self.p0;
        let mut v = self.v0;
        let mut ps = Vec::with_capacity(self.horizon);
        let mut vs = Vec::with_capacity(self.horizon);
        for &u in self.inputs(x) {
            p += v * tau + 0.5 * u * tau * tau;
            v += u * tau;
            ps.push(p);
            vs.push(v);
        }
        (ps, vs)
    }

    /// `(e_p, e_v)` at instants `1..=T`.
    pub fn tracking_states(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (ps, vs) = self.own_trajectory(x);
        let e_p = (0..self.horizon).map(|k| self.lead_p[k + 1] - ps[k] - self.l_c).collect();
        let e_v = (0..self.horizon).map(|k| self.lead_v[k + 1] - vs[k]).collect();
        (e_p, e_v)
    }

    /// Previous solution advanced by one step, last input repeated.
    pub fn shift(&self, x: &[f64]) -> Vec<f64> {
        let t = self.horizon;
        let mut out = Vec::with_capacity(2 * t);
        out.extend_from_slice(&x[1..t]);
        out.push(x[t - 1]);
        out.extend_from_slice(&x[t + 1..]);
        out.push(0.0);
        out
    }
}

pub fn build_qp(cav: &VehicleState, lead: &HdvPrediction, config: &MpcConfig) -> Result<CondensedQp> {
    let t = config.horizon;
    if lead.positions.len() != t + 1 || lead.speeds.len() != t + 1 {
        return Err(Error::DimensionMismatch {
            what: "lead prediction",
            expected: t + 1,
            found: lead.positions.len().min(lead.speeds.len()),
        });
    }
    if !cav.p.is_finite() || !cav.v.is_finite() {
        return Err(Error::NonFinite("vehicle state"));
    }
    let tau = config.limits.tau;
    let rho = config.policy.rho;
    let s0 = config.policy.s0;
    let w = config.weights;
    let nx = 2 * t;

    // For instant n (1-based), headway error d_n = c_n - g_n'u and speed
    // error e_v,n = c'_n - tau * sum_{k<n} u_k.
    let mut g = vec![0.0; t * t];
    let mut c = vec![0.0; t];
    let mut cv = vec![0.0; t];
    for n in 1..=t {
        let row = &mut g[(n - 1) * t..n * t];
        for (k, gk) in row.iter_mut().enumerate().take(n) {
            *gk = tau * tau * ((n - k) as f64 - 0.5) + rho * tau;
        }
        let free_p = cav.p + cav.v * tau * n as f64;
        c[n - 1] = lead.positions[n] - free_p - config.l_c - rho * cav.v - s0;
        cv[n - 1] = lead.speeds[n] - cav.v;
    }

    let mut h = vec![0.0; nx * nx];
    let mut f = vec![0.0; nx];
    let mut constant = 0.0;
    for n in 1..=t {
        let gn = &g[(n - 1) * t..n * t];
        for i in 0..n {
            f[i] -= w.w_ep * c[n - 1] * gn[i] + w.w_ev * cv[n - 1] * tau;
            for j in 0..n {
                h[i * nx + j] += w.w_ep * gn[i] * gn[j] + w.w_ev * tau * tau;
            }
        }
        constant += 0.5 * (w.w_ep * c[n - 1] * c[n - 1] + w.w_ev * cv[n - 1] * cv[n - 1]);
    }
    for i in 0..t {
        h[i * nx + i] += w.w_u;
        h[(t + i) * nx + t + i] = 2.0 * w.w_slack;
        f[t + i] = w.w_slack_linear;
    }

    let mut problem = QpProblem::unconstrained(h, f);
    let lim = &config.limits;
    for i in 0..t {
        problem.lb[i] = lim.u_min;
        problem.ub[i] = lim.u_max;
        problem.lb[t + i] = 0.0;
    }
    let mut row = vec![0.0; nx];
    for n in 1..=t {
        // safety: g_n'u - sigma_n <= c_n
        row.iter_mut().for_each(|r| *r = 0.0);
        row[..t].copy_from_slice(&g[(n - 1) * t..n * t]);
        row[t + n - 1] = -1.0;
        problem.push_row(&row, c[n - 1]);
    }
    for n in 1..=t {
        row.iter_mut().for_each(|r| *r = 0.0);
        row[..n].iter_mut().for_each(|r| *r = tau);
        problem.push_row(&row, lim.v_max - cav.v);
        row[..n].iter_mut().for_each(|r| *r = -tau);
        problem.push_row(&row, cav.v - lim.v_min);
    }

    Ok(CondensedQp {
        problem,
        horizon: t,
        constant,
        tau,
        p0: cav.p,
        v0: cav.v,
        lead_p: lead.positions.clone(),
        lead_v: lead.speeds.clone(),
        l_c: config.l_c,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub u_sequence: Vec<f64>,
    pub e_p: Vec<f64>,
    pub e_v: Vec<f64>,
    pub slacks: Vec<f64>,
    pub slack_max: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktResiduals,
    /// Full stage-cost sum at the returned inputs.
    pub cost: f64,
}

/// Solve the condensed problem once.
pub fn solve_condensed(qp: &CondensedQp, settings: &QpSettings, warm: Option<&[f64]>) -> Result<(MpcSolution, Vec<f64>)> {
    let sol = solve_qp_warm(&qp.problem, settings, warm)?;
    Ok(unpack(qp, sol))
}

fn unpack(qp: &CondensedQp, sol: QpSolution) -> (MpcSolution, Vec<f64>) {
    let (e_p, e_v) = qp.tracking_states(&sol.x);
    let slacks = qp.slacks(&sol.x).to_vec();
    let slack_max = slacks.iter().fold(0.0f64, |m, s| m.max(*s));
    let out = MpcSolution {
        u_sequence: qp.inputs(&sol.x).to_vec(),
        e_p,
        e_v,
        slacks,
        slack_max,
        status: sol.status,
        iterations: sol.iterations,
        kkt: sol.kkt,
        cost: sol.objective + qp.constant,
    };
    (out, sol.x)
}

/// Strongest comfortable deceleration `max(u_min, -v / 1 s)`, never
/// pushing the speed below `v_min`.
pub fn fallback_brake(cav: &VehicleState, config: &MpcConfig) -> f64 {
    let lim = &config.limits;
    let u = lim.u_min.max(-cav.v / FALLBACK_BRAKE_TIME);
    u.max((lim.v_min - cav.v) / lim.tau).min(lim.u_max)
}

/// Stand-in for adaptive cruise control when nothing is ahead: hold speed.
pub fn cruise_hold(cav: &VehicleState, limits: &Limits) -> f64 {
    limits.admissible_input(cav.v, 0.0)
}

/// A preceding human-driven vehicle as seen by the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedHdv {
    pub id: u32,
    pub state: VehicleState,
    /// Current regression estimate.
    pub gamma: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktResiduals,
    pub slack_max: f64,
    /// The QP did not return an optimal point and [`fallback_brake`] was
    /// applied.
    pub fallback: bool,
    /// Vehicles whose estimate could not be inverted this step.
    pub degenerate: Vec<u32>,
    pub collision_predicted: bool,
    /// Parameters used for prediction, front to back.
    pub params: Vec<CthRvParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcStep {
    /// Input to apply now.
    pub u: f64,
    pub solution: MpcSolution,
    pub diagnostics: StepDiagnostics,
    pub prediction: HdvPrediction,
}

/// Stateful wrapper: remembers the last usable parameters per vehicle and
/// the previous solution for warm starts.
#[derive(Debug, Clone)]
pub struct MpcController {
    config: MpcConfig,
    initial_params: CthRvParams,
    last_valid: BTreeMap<u32, CthRvParams>,
    warm: Option<Vec<f64>>,
    /// `H` depends only on the configuration, so its factor is kept.
    factor: Option<HessianFactor>,
    last_qp: Option<CondensedQp>,
}

impl MpcController {
    /// `initial_params` is used for a vehicle whose estimate is degenerate
    /// before any valid one has been seen.
    pub fn new(config: MpcConfig, initial_params: CthRvParams) -> Self {
        MpcController {
            config,
            initial_params,
            last_valid: BTreeMap::new(),
            warm: None,
            factor: None,
            last_qp: None,
        }
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    /// The most recently built QP.
    pub fn last_qp(&self) -> Option<&CondensedQp> {
        self.last_qp.as_ref()
    }

    pub fn clear_warm_start(&mut self) {
        self.warm = None;
    }

    /// `platoon` is ordered front to back; its last member is directly
    /// ahead. Errs with [`Error::EmptyPlatoon`] when it is empty.
    pub fn step(&mut self, cav: &VehicleState, platoon: &[TrackedHdv], boundary: LeaderBoundary) -> Result<MpcStep> {
        if platoon.is_empty() {
            self.warm = None;
            return Err(Error::EmptyPlatoon);
        }
        let tau = self.config.limits.tau;
        let mut params = Vec::with_capacity(platoon.len());
        let mut degenerate = Vec::new();
        for hdv in platoon {
            match gamma_to_cthrv(&hdv.gamma, tau) {
                Ok(p) => {
                    self.last_valid.insert(hdv.id, p);
                    params.push(p);
                }
                Err(Error::DegenerateEstimate { .. }) => {
                    log::debug!("degenerate estimate for vehicle {}; using fallback parameters", hdv.id);
                    degenerate.push(hdv.id);
                    params.push(*self.last_valid.get(&hdv.id).unwrap_or(&self.initial_params));
                }
                Err(e) => return Err(e),
            }
        }
        let states: Vec<VehicleState> = platoon.iter().map(|h| h.state).collect();
        let preds = predict_platoon(&states, &params, boundary, self.config.l_c, self.config.horizon, &self.config.limits)?;
        let collision_predicted = preds.iter().any(|p| p.collision_predicted);
        let lead = hdv2_reference_trajectory(&preds)?.clone();

        let qp = build_qp(cav, &lead, &self.config)?;
        let warm = self.warm.take();
        if !self.factor.as_ref().is_some_and(|f| f.matches(&qp.problem)) {
            self.factor = Some(HessianFactor::new(&qp.problem.h, qp.problem.n)?);
        }
        let factor = self.factor.as_ref().expect("factor set above");
        let sol = solve_qp_factored(&qp.problem, factor, &self.config.qp, warm.as_deref())?;
        let (solution, x) = unpack(&qp, sol);
        let fallback = solution.status != QpStatus::Optimal;
        let u = if fallback {
            log::warn!("QP status {:?}; applying fallback braking", solution.status);
            fallback_brake(cav, &self.config)
        } else {
            self.warm = Some(qp.shift(&x));
            self.config.limits.admissible_input(cav.v, solution.u_sequence[0])
        };
        let diagnostics = StepDiagnostics {
            status: solution.status,
            iterations: solution.iterations,
            kkt: solution.kkt,
            slack_max: solution.slack_max,
            fallback,
            degenerate,
            collision_predicted,
            params,
        };
        self.last_qp = Some(qp);
        Ok(MpcStep {
            u,
            solution,
            diagnostics,
            prediction: lead,
        })
    }
}
