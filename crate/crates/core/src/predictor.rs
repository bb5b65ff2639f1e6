//! Horizon roll-out of the identified human-driven platoon.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hdv::{cthrv_speed_next, CthRvParams};
use crate::vehicle::{Limits, VehicleState};

/// Predicted positions and speeds over `horizon + 1` instants; index 0 is
/// the measured state.
#[derive(Debug, Clone, PartialEq)]
pub struct HdvPrediction {
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
    /// Some predicted headway of this vehicle dropped to zero or below.
    pub collision_predicted: bool,
}

impl HdvPrediction {
    pub fn horizon(&self) -> usize {
        self.positions.len().saturating_sub(1)
    }

    /// A vehicle holding its current speed.
    pub fn constant_speed(p: f64, v: f64, horizon: usize, tau: f64) -> Self {
        HdvPrediction {
            positions: (0..=horizon).map(|n| p + v * tau * n as f64).collect(),
            speeds: alloc::vec![v; horizon + 1],
            collision_predicted: false,
        }
    }
}

/// What the front vehicle of the platoon reacts to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeaderBoundary {
    /// Red signal: a stationary wall at `position - margin`.
    StopLine { position: f64, margin: f64 },
    /// Nothing ahead within the look-ahead distance; the leader sees a
    /// constant headway and no approach rate.
    OpenRoad { look_ahead: f64 },
}

/// Roll the linear car-following models forward.
///
/// `hdvs` and `params` are ordered front to back (the leader first, the
/// vehicle directly ahead of the controlled one last). Speeds are clamped
/// to `[0, v_max]`; positions advance by forward Euler `p + v tau`.
pub fn predict_platoon(
    hdvs: &[VehicleState],
    params: &[CthRvParams],
    boundary: LeaderBoundary,
    l_c: f64,
    horizon: usize,
    limits: &Limits,
) -> Result<Vec<HdvPrediction>> {
    if hdvs.len() != params.len() {
        return Err(Error::DimensionMismatch {
            what: "model parameters",
            expected: hdvs.len(),
            found: params.len(),
        });
    }
    let tau = limits.tau;
    let speed_box = Limits {
        v_min: 0.0,
        ..*limits
    };
    let mut out: Vec<HdvPrediction> = hdvs
        .iter()
        .map(|s| {
            let mut positions = Vec::with_capacity(horizon + 1);
            let mut speeds = Vec::with_capacity(horizon + 1);
            positions.push(s.p);
            speeds.push(s.v);
            HdvPrediction {
                positions,
                speeds,
                collision_predicted: false,
            }
        })
        .collect();

    for n in 0..horizon {
        for i in 0..out.len() {
            let (p, v) = (out[i].positions[n], out[i].speeds[n]);
            let (delta_p, v_pred) = if i == 0 {
                match boundary {
                    LeaderBoundary::StopLine { position, margin } => (position - margin - p, 0.0),
                    LeaderBoundary::OpenRoad { look_ahead } => (look_ahead, v),
                }
            } else {
                let ahead = &out[i - 1];
                (ahead.positions[n] - p - l_c, ahead.speeds[n])
            };
            if i > 0 && delta_p <= 0.0 {
                out[i].collision_predicted = true;
            }
            let v_next = cthrv_speed_next(&params[i], v, delta_p, v_pred, tau, Some(&speed_box));
            out[i].positions.push(p + v * tau);
            out[i].speeds.push(v_next);
        }
    }
    for i in 1..out.len() {
        let gap = out[i - 1].positions[horizon] - out[i].positions[horizon] - l_c;
        if gap <= 0.0 {
            out[i].collision_predicted = true;
        }
        if out[i].collision_predicted {
            log::warn!("predicted headway collapse for platoon member {i}");
        }
    }
    Ok(out)
}

/// The prediction of the vehicle directly ahead of the controlled one.
pub fn hdv2_reference_trajectory(predictions: &[HdvPrediction]) -> Result<&HdvPrediction> {
    predictions.last().ok_or(Error::EmptyPlatoon)
}
