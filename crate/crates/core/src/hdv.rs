//! Human-driven vehicle models.
//!
//! [`OvmParams`] drive the simulated humans (optimal velocity model with a
//! tanh-shaped desired speed). [`CthRvParams`] is the linear
//! constant-time-headway / relative-velocity model the controller fits to
//! them online; it maps one-to-one onto the regression vector used by the
//! estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vehicle::{Limits, VehicleState};

/// Optimal velocity model parameters of one simulated driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OvmParams {
    /// Sensitivity to the speed error (1/s).
    pub alpha: f64,
    /// Sensitivity to the approach rate (1/s).
    pub beta: f64,
    /// Desired speed (m/s).
    pub v_d: f64,
    /// Time headway (s).
    pub rho: f64,
    /// Standstill distance (m).
    pub s0: f64,
}

impl Default for OvmParams {
    fn default() -> Self {
        OvmParams {
            alpha: 0.8,
            beta: 0.6,
            v_d: 15.0,
            rho: 2.0,
            s0: 5.0,
        }
    }
}

impl OvmParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::InvalidConfig {
                key: "alpha",
                reason: "must be positive",
            });
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidConfig {
                key: "beta",
                reason: "must be non-negative",
            });
        }
        if self.v_d <= 0.0 {
            return Err(Error::InvalidConfig {
                key: "v_d",
                reason: "must be positive",
            });
        }
        if self.rho <= 0.0 {
            return Err(Error::InvalidConfig {
                key: "rho",
                reason: "must be positive",
            });
        }
        if self.s0 <= 0.0 {
            return Err(Error::InvalidConfig {
                key: "s0",
                reason: "must be positive",
            });
        }
        Ok(())
    }
}

/// Linear car-following model
/// `v(t+1) = v + eta (dp - rho v) tau + nu (v_pred - v) tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CthRvParams {
    /// Gain on the headway error (1/s).
    pub eta: f64,
    /// Gain on the approach rate (1/s).
    pub nu: f64,
    /// Desired time headway (s).
    pub rho: f64,
}

impl CthRvParams {
    /// Regression coefficients on `[v, dp, v_pred]`.
    pub fn to_gamma(&self, tau: f64) -> [f64; 3] {
        [
            1.0 - (self.eta * self.rho + self.nu) * tau,
            self.eta * tau,
            self.nu * tau,
        ]
    }
}

/// Headway and approach rate as perceived by one driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborObservation {
    /// Distance to whatever is ahead (m).
    pub delta_p: f64,
    /// Speed of whatever is ahead minus own speed (m/s).
    pub delta_v: f64,
}

impl NeighborObservation {
    /// Speed of the thing ahead implied by the observation.
    pub fn leader_speed(&self, own_speed: f64) -> f64 {
        own_speed + self.delta_v
    }
}

/// What a driver reacts to: the predecessor when it is within `look_ahead`
/// and not farther than an active stop line, the stop line (treated as a
/// stationary obstacle) when that is closer, and open road otherwise.
///
/// A negative `delta_p` is returned unchanged when vehicles overlap.
pub fn observe_neighbor(
    ego: &VehicleState,
    predecessor: Option<&VehicleState>,
    stop_line: Option<f64>,
    l_c: f64,
    look_ahead: f64,
) -> NeighborObservation {
    let vehicle_gap = predecessor
        .map(|pred| (pred.p - ego.p - l_c, pred.v - ego.v))
        .filter(|&(gap, _)| gap <= look_ahead);
    let line_gap = stop_line.map(|p0| p0 - ego.p).filter(|&d| d >= 0.0);

    match (vehicle_gap, line_gap) {
        (Some((gap, _)), Some(d_s)) if d_s < gap => NeighborObservation {
            delta_p: d_s,
            delta_v: -ego.v,
        },
        (Some((gap, dv)), _) => NeighborObservation {
            delta_p: gap,
            delta_v: dv,
        },
        (None, Some(d_s)) => NeighborObservation {
            delta_p: d_s,
            delta_v: -ego.v,
        },
        (None, None) => NeighborObservation {
            delta_p: look_ahead,
            delta_v: 0.0,
        },
    }
}

/// Desired speed `V = v_d/2 (tanh(dp - s) + tanh(s))`, `s = rho v + s0`.
pub fn optimal_velocity(params: &OvmParams, delta_p: f64, v: f64) -> f64 {
    let s = params.rho * v + params.s0;
    0.5 * params.v_d * (libm::tanh(delta_p - s) + libm::tanh(s))
}

pub fn ovm_accel(params: &OvmParams, obs: &NeighborObservation, v: f64, limits: &Limits) -> f64 {
    let target = optimal_velocity(params, obs.delta_p, v);
    let u = params.alpha * (target - v) + params.beta * obs.delta_v;
    u.clamp(limits.u_min, limits.u_max)
}

/// One step of the linear model. With `limits`, the result is clamped to
/// the speed box.
pub fn cthrv_speed_next(
    params: &CthRvParams,
    v: f64,
    delta_p: f64,
    v_pred: f64,
    tau: f64,
    limits: Option<&Limits>,
) -> f64 {
    let next = v + params.eta * (delta_p - params.rho * v) * tau + params.nu * (v_pred - v) * tau;
    match limits {
        Some(l) => next.clamp(l.v_min, l.v_max),
        None => next,
    }
}

/// Scale every field of `nominal` by an independent factor drawn uniformly
/// from `[1 - fraction, 1 + fraction]`. Fields are drawn in declaration
/// order from a ChaCha8 stream seeded with `seed`.
pub fn perturb_params(nominal: &OvmParams, fraction: f64, seed: u64) -> Result<OvmParams> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Domain("perturbation fraction must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = || 1.0 + fraction * (2.0 * rng.random::<f64>() - 1.0);
    Ok(OvmParams {
        alpha: nominal.alpha * factor(),
        beta: nominal.beta * factor(),
        v_d: nominal.v_d * factor(),
        rho: nominal.rho * factor(),
        s0: nominal.s0 * factor(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn stop_line_observation_for_leader() {
        let ego = VehicleState::new(-40.0, 9.0);
        let obs = observe_neighbor(&ego, None, Some(0.0), 5.0, 100.0);
        assert_eq!(obs.delta_p, 40.0);
        assert_eq!(obs.delta_v, -9.0);
    }

    #[test]
    fn open_road_observation() {
        let ego = VehicleState::new(-40.0, 9.0);
        let obs = observe_neighbor(&ego, None, None, 5.0, 100.0);
        assert_eq!(obs, NeighborObservation { delta_p: 100.0, delta_v: 0.0 });
        let far = VehicleState::new(200.0, 9.0);
        let obs = observe_neighbor(&ego, Some(&far), None, 5.0, 100.0);
        assert_eq!(obs.delta_p, 100.0);
    }

    #[test]
    fn predecessor_observation() {
        let ego = VehicleState::new(-60.0, 10.0);
        let pred = VehicleState::new(-30.0, 10.0);
        let obs = observe_neighbor(&ego, Some(&pred), Some(0.0), 5.0, 100.0);
        assert_eq!(obs, NeighborObservation { delta_p: 25.0, delta_v: 0.0 });
    }

    #[test]
    fn stop_line_closer_than_predecessor() {
        let ego = VehicleState::new(-10.0, 4.0);
        let pred = VehicleState::new(20.0, 4.0);
        let obs = observe_neighbor(&ego, Some(&pred), Some(0.0), 5.0, 100.0);
        assert_eq!(obs.delta_p, 10.0);
        assert_eq!(obs.delta_v, -4.0);
    }

    #[test]
    fn stop_line_behind_is_ignored() {
        let ego = VehicleState::new(3.0, 4.0);
        let obs = observe_neighbor(&ego, None, Some(0.0), 5.0, 100.0);
        assert_eq!(obs.delta_p, 100.0);
    }

    #[test]
    fn ovm_equilibrium_is_zero_input() {
        let p = OvmParams::default();
        let l = Limits::default();
        let dp = 32.0;
        // find v with V(dp, v) = v by bisection
        let (mut lo, mut hi) = (0.0, p.v_d);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if optimal_velocity(&p, dp, mid) > mid {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v = 0.5 * (lo + hi);
        let obs = NeighborObservation { delta_p: dp, delta_v: 0.0 };
        assert_abs_diff_eq!(ovm_accel(&p, &obs, v, &l), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn ovm_at_standstill_gap() {
        let p = OvmParams::default();
        let l = Limits { u_max: 100.0, ..Limits::default() };
        let obs = NeighborObservation { delta_p: p.s0, delta_v: 0.0 };
        let expected_v = 0.5 * p.v_d * libm::tanh(p.s0);
        assert_abs_diff_eq!(optimal_velocity(&p, p.s0, 0.0), expected_v, epsilon = 1e-12);
        assert_abs_diff_eq!(ovm_accel(&p, &obs, 0.0, &l), p.alpha * expected_v, epsilon = 1e-12);
        // clamped with the default bounds
        assert_eq!(ovm_accel(&p, &obs, 0.0, &Limits::default()), 3.0);
    }

    #[test]
    fn ovm_saturates_at_desired_speed() {
        // tanh(s0) ~ 1 so the asymptote is v_d itself
        let p = OvmParams { alpha: 0.1, s0: 30.0, ..OvmParams::default() };
        let obs = NeighborObservation { delta_p: 1e6, delta_v: 0.0 };
        let u = ovm_accel(&p, &obs, 0.0, &Limits::default());
        assert_abs_diff_eq!(u, (p.alpha * p.v_d).min(3.0), epsilon = 1e-9);
    }

    #[test]
    fn cthrv_examples() {
        let c = CthRvParams { eta: 1.0, nu: 1.8, rho: 1.5 };
        assert_abs_diff_eq!(cthrv_speed_next(&c, 10.0, 15.0, 10.0, 0.1, None), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cthrv_speed_next(&c, 10.0, 20.0, 10.0, 0.1, None), 10.5, epsilon = 1e-12);
        let decoupled = CthRvParams { nu: 0.0, ..c };
        assert_eq!(
            cthrv_speed_next(&decoupled, 10.0, 20.0, 3.0, 0.1, None),
            cthrv_speed_next(&decoupled, 10.0, 20.0, 14.0, 0.1, None)
        );
        let l = Limits::default();
        assert_eq!(cthrv_speed_next(&c, 14.9, 200.0, 14.9, 0.1, Some(&l)), 15.0);
    }

    #[test]
    fn perturbation_identity_bounds_determinism() {
        let nom = OvmParams::default();
        assert_eq!(perturb_params(&nom, 0.0, 7).unwrap(), nom);
        for seed in 0..200 {
            let p = perturb_params(&nom, 0.2, seed).unwrap();
            assert!(p.alpha >= 0.64 - 1e-12 && p.alpha <= 0.96 + 1e-12);
            assert!(p.s0 >= 4.0 - 1e-12 && p.s0 <= 6.0 + 1e-12);
        }
        assert_eq!(perturb_params(&nom, 0.2, 42).unwrap(), perturb_params(&nom, 0.2, 42).unwrap());
        assert_ne!(perturb_params(&nom, 0.2, 42).unwrap(), perturb_params(&nom, 0.2, 43).unwrap());
        assert!(perturb_params(&nom, 1.0, 1).is_err());
        assert!(perturb_params(&nom, -0.1, 1).is_err());
    }

    proptest! {
        #[test]
        fn ovm_output_within_input_bounds(dp in -10.0..300.0f64, v in 0.0..15.0f64, dv in -15.0..15.0f64) {
            let l = Limits::default();
            let u = ovm_accel(&OvmParams::default(), &NeighborObservation { delta_p: dp, delta_v: dv }, v, &l);
            prop_assert!(u >= l.u_min && u <= l.u_max);
        }

        #[test]
        fn optimal_velocity_bounded_and_monotone(dp in 0.01..200.0f64, extra in 0.01..50.0f64, v in 0.0..15.0f64) {
            let p = OvmParams::default();
            let s = p.rho * v + p.s0;
            let vel = optimal_velocity(&p, dp, v);
            // strictly positive in exact arithmetic; tanh saturates to an exact cancellation in f64
            prop_assert!(vel >= 0.0);
            prop_assert!(vel <= p.v_d * (1.0 + libm::tanh(s)) / 2.0);
            prop_assert!(optimal_velocity(&p, dp + extra, v) >= vel);
        }

        #[test]
        fn cthrv_matches_regression_form(v in 0.0..15.0f64, dp in 0.0..80.0f64, vp in 0.0..15.0f64,
                                         eta in 0.1..3.0f64, nu in 0.0..3.0f64, rho in 0.5..3.0f64) {
            let c = CthRvParams { eta, nu, rho };
            let g = c.to_gamma(0.1);
            let direct = cthrv_speed_next(&c, v, dp, vp, 0.1, None);
            let linear = g[0] * v + g[1] * dp + g[2] * vp;
            prop_assert!((direct - linear).abs() <= 1e-10 * (1.0 + direct.abs()));
        }
    }
}
