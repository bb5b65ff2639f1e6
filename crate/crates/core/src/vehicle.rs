//! Longitudinal kinematics shared by every vehicle.
//!
//! Positions increase toward the stop line. Acceleration is held constant
//! over one sampling interval, so a step is exact double integration.

use crate::error::{Error, Result};

/// Bumper-to-bumper offset between consecutive vehicle positions (m).
pub const DEFAULT_VEHICLE_LENGTH: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    /// Position (m).
    pub p: f64,
    /// Speed (m/s).
    pub v: f64,
    /// Acceleration applied over the last step (m/s²).
    pub u: f64,
}

impl VehicleState {
    pub fn new(p: f64, v: f64) -> Self {
        VehicleState { p, v, u: 0.0 }
    }
}

/// Input and speed bounds plus the sampling time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Sampling time (s).
    pub tau: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            u_min: -5.0,
            u_max: 3.0,
            v_min: 0.0,
            v_max: 15.0,
            tau: 0.1,
        }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.u_min, self.u_max, self.v_min, self.v_max, self.tau];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("limits"));
        }
        if self.tau <= 0.0 {
            return Err(Error::InvalidConfig {
                key: "tau",
                reason: "must be positive",
            });
        }
        if self.u_min >= 0.0 {
            return Err(Error::InvalidConfig {
                key: "u_min",
                reason: "must be negative",
            });
        }
        if self.u_max <= 0.0 {
            return Err(Error::InvalidConfig {
                key: "u_max",
                reason: "must be positive",
            });
        }
        if self.v_min < 0.0 {
            return Err(Error::InvalidConfig {
                key: "v_min",
                reason: "must be non-negative",
            });
        }
        if self.v_min >= self.v_max {
            return Err(Error::InvalidConfig {
                key: "v_min",
                reason: "must be below v_max",
            });
        }
        Ok(())
    }

    /// Clamp `u` to the input box, then shrink it so one step lands inside
    /// the speed box.
    pub fn admissible_input(&self, v: f64, u: f64) -> f64 {
        let mut u = u.clamp(self.u_min, self.u_max);
        let v_next = v + u * self.tau;
        if v_next > self.v_max {
            u = (self.v_max - v) / self.tau;
        } else if v_next < self.v_min {
            u = (self.v_min - v) / self.tau;
        }
        // only matters when v itself starts outside [v_min, v_max]
        u.clamp(self.u_min, self.u_max)
    }
}

/// Headway to the predecessor and the rate at which it opens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapState {
    /// Bumper-to-bumper distance (m).
    pub e_p: f64,
    /// Predecessor speed minus own speed (m/s).
    pub e_v: f64,
}

/// Constant time headway policy `rho * v + s0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadwayPolicy {
    /// Desired time headway (s).
    pub rho: f64,
    /// Standstill distance (m).
    pub s0: f64,
}

impl Default for HeadwayPolicy {
    fn default() -> Self {
        HeadwayPolicy { rho: 2.0, s0: 3.0 }
    }
}

impl HeadwayPolicy {
    /// `rho * v + s0` without the domain check, for use inside affine maps.
    #[inline]
    pub fn headway_at(&self, v: f64) -> f64 {
        self.rho * v + self.s0
    }
}

pub fn step_dynamics(state: &VehicleState, u: f64, limits: &Limits) -> Result<VehicleState> {
    if !u.is_finite() {
        return Err(Error::NonFinite("acceleration"));
    }
    if !state.p.is_finite() || !state.v.is_finite() {
        return Err(Error::NonFinite("vehicle state"));
    }
    if !(limits.tau > 0.0) {
        return Err(Error::Domain("sampling time must be positive"));
    }
    let tau = limits.tau;
    let u = limits.admissible_input(state.v, u);
    Ok(VehicleState {
        p: state.p + state.v * tau + 0.5 * u * tau * tau,
        v: state.v + u * tau,
        u,
    })
}

pub fn safe_headway(v: f64, policy: &HeadwayPolicy) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::NonFinite("speed"));
    }
    if v < 0.0 {
        return Err(Error::Domain("speed must be non-negative"));
    }
    Ok(policy.headway_at(v))
}

pub fn gap_states(follower: &VehicleState, leader: &VehicleState, l_c: f64) -> GapState {
    GapState {
        e_p: leader.p - follower.p - l_c,
        e_v: leader.v - follower.v,
    }
}

/// Rear-end constraint `e_p >= rho * v + s0`.
pub fn is_safe(gap: &GapState, follower_v: f64, policy: &HeadwayPolicy) -> bool {
    gap.e_p >= policy.headway_at(follower_v)
}
