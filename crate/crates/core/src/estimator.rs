//! Online identification of the linear car-following model.
//!
//! Each human-driven vehicle gets its own recursive least squares estimator
//! on the regression `v(t+1) = g1 v(t) + g2 dp(t) + g3 v_pred(t)`.

use crate::error::{Error, Result};
use crate::hdv::CthRvParams;

/// `|gamma_2|` at or below this cannot be inverted into model parameters.
pub const GAMMA2_EPS: f64 = 1e-6;

/// Relative pivot floor for the covariance positive-definiteness check.
const PD_RELATIVE_FLOOR: f64 = 1e-15;

pub type Matrix3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlsConfig {
    pub gamma0: [f64; 3],
    /// `P(0) = p0_scale * I`.
    pub p0_scale: f64,
    /// Forgetting factor in `(0, 1]`.
    pub forgetting: f64,
}

impl Default for RlsConfig {
    fn default() -> Self {
        RlsConfig {
            gamma0: [0.67, 0.1, 0.18],
            p0_scale: 0.01,
            forgetting: 1.0,
        }
    }
}

impl RlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma0.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidConfig {
                key: "gamma0",
                reason: "must be finite",
            });
        }
        if !(self.p0_scale > 0.0) || !self.p0_scale.is_finite() {
            return Err(Error::InvalidConfig {
                key: "p0",
                reason: "must be positive",
            });
        }
        if !(self.forgetting > 0.0 && self.forgetting <= 1.0) {
            return Err(Error::InvalidConfig {
                key: "forgetting",
                reason: "must lie in (0, 1]",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlsState {
    pub gamma_hat: [f64; 3],
    /// Symmetric positive definite covariance-like matrix.
    pub p: Matrix3,
    pub xi: f64,
}

/// `[v, dp, v_pred]` in (m/s, m, m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regressor(pub [f64; 3]);

pub fn make_regressor(v: f64, delta_p: f64, v_pred: f64) -> Result<Regressor> {
    if !(v.is_finite() && delta_p.is_finite() && v_pred.is_finite()) {
        return Err(Error::NonFinite("regressor"));
    }
    Ok(Regressor([v, delta_p, v_pred]))
}

pub fn initial_rls_state(config: &RlsConfig) -> RlsState {
    let s = config.p0_scale;
    RlsState {
        gamma_hat: config.gamma0,
        p: [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]],
        xi: config.forgetting,
    }
}

fn mat_vec3(m: &Matrix3, x: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row[0] * x[0] + row[1] * x[1] + row[2] * x[2];
    }
    out
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Cholesky-based check with a pivot floor relative to the largest diagonal.
pub fn is_positive_definite(p: &Matrix3) -> bool {
    let mut flat = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            flat[i * 3 + j] = p[i][j];
        }
    }
    let scale = p[0][0].max(p[1][1]).max(p[2][2]);
    if !(scale > 0.0) || !scale.is_finite() {
        return false;
    }
    if crate::linalg::cholesky_lower(&mut flat, 3).is_err() {
        return false;
    }
    (0..3).all(|i| flat[i * 3 + i] * flat[i * 3 + i] > PD_RELATIVE_FLOOR * scale)
}

/// One functional update. Returns the new state and the a-priori residual
/// `v_measured_next - gamma_hat^T phi`.
pub fn rls_update(state: &RlsState, phi: &Regressor, v_measured_next: f64) -> Result<(RlsState, f64)> {
    if !v_measured_next.is_finite() {
        return Err(Error::NonFinite("measured speed"));
    }
    let phi = &phi.0;
    let xi = state.xi;
    let prediction = dot3(&state.gamma_hat, phi);
    let residual = v_measured_next - prediction;

    let p_phi = mat_vec3(&state.p, phi);
    let denom = xi + dot3(phi, &p_phi);
    let gain = [p_phi[0] / denom, p_phi[1] / denom, p_phi[2] / denom];

    let mut gamma_hat = state.gamma_hat;
    for (g, l) in gamma_hat.iter_mut().zip(gain) {
        *g += l * residual;
    }

    let mut p = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            p[i][j] = (state.p[i][j] - p_phi[i] * p_phi[j] / denom) / xi;
        }
    }
    for i in 0..3 {
        for j in i + 1..3 {
            let avg = 0.5 * (p[i][j] + p[j][i]);
            p[i][j] = avg;
            p[j][i] = avg;
        }
    }
    if !is_positive_definite(&p) {
        return Err(Error::LostPositiveDefiniteness);
    }
    Ok((RlsState { gamma_hat, p, xi }, residual))
}

/// Invert the regression coefficients into model parameters.
pub fn gamma_to_cthrv(gamma: &[f64; 3], tau: f64) -> Result<CthRvParams> {
    if !(tau > 0.0) {
        return Err(Error::Domain("sampling time must be positive"));
    }
    if !(gamma[1].abs() > GAMMA2_EPS) {
        return Err(Error::DegenerateEstimate { gamma2: gamma[1] });
    }
    Ok(CthRvParams {
        eta: gamma[1] / tau,
        nu: gamma[2] / tau,
        rho: (1.0 - gamma[0] - gamma[2]) / gamma[1],
    })
}

/// Estimator that owns its initial configuration so it can restart after a
/// numerical breakdown.
#[derive(Debug, Clone)]
pub struct RlsEstimator {
    config: RlsConfig,
    state: RlsState,
    resets: usize,
}

/// Result of feeding one sample to an [`RlsEstimator`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlsStep {
    pub residual: f64,
    /// The covariance broke down and the estimator restarted from its
    /// initial state.
    pub reset: bool,
}

impl RlsEstimator {
    pub fn new(config: RlsConfig) -> Self {
        RlsEstimator {
            config,
            state: initial_rls_state(&config),
            resets: 0,
        }
    }

    pub fn state(&self) -> &RlsState {
        &self.state
    }

    pub fn gamma(&self) -> [f64; 3] {
        self.state.gamma_hat
    }

    pub fn resets(&self) -> usize {
        self.resets
    }

    pub fn update(&mut self, phi: &Regressor, v_measured_next: f64) -> Result<RlsStep> {
        match rls_update(&self.state, phi, v_measured_next) {
            Ok((next, residual)) => {
                self.state = next;
                Ok(RlsStep {
                    residual,
                    reset: false,
                })
            }
            Err(Error::LostPositiveDefiniteness) => {
                let residual = v_measured_next - dot3(&self.state.gamma_hat, &phi.0);
                log::warn!("rls covariance lost positive definiteness; resetting estimator");
                self.state = initial_rls_state(&self.config);
                self.resets += 1;
                Ok(RlsStep {
                    residual,
                    reset: true,
                })
            }
            Err(e) => Err(e),
        }
    }
}
