//! Scenario files.
//!
//! TOML with four flat sections plus an optional array of departures:
//!
//! ```toml
//! [scenario]
//! n_vehicles = 3          # automated vehicle included
//! seed = 7
//!
//! [hdv]
//! perturbation = 0.2
//!
//! [controller]
//! horizon = 50
//!
//! [estimator]
//! p0 = 0.01
//!
//! [[departure]]
//! id = 3
//! time = 12.5
//! ```
//!
//! Every key is optional. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use safebrake_core::estimator::RlsConfig;
use safebrake_core::hdv::OvmParams;
use safebrake_core::mpc::{MpcConfig, MpcWeights};
use safebrake_core::qp::QpSettings;
use safebrake_core::sim::{CavDriver, Departure, ScenarioConfig, DEFAULT_GAP};
use safebrake_core::vehicle::{HeadwayPolicy, Limits, DEFAULT_VEHICLE_LENGTH};
use safebrake_core::Error as CoreError;

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub hdv: HdvSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default, rename = "departure", skip_serializing_if = "Vec::is_empty")]
    pub departures: Vec<DepartureEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverName {
    #[default]
    Mpc,
    Ovm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_vehicles: Option<usize>,
    /// Front to back, automated vehicle last (m).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speeds: Option<Vec<f64>>,
    /// Layout used when `positions` is absent.
    pub leader_position: f64,
    pub initial_gap: f64,
    pub initial_speed: f64,
    pub stop_line: f64,
    pub duration: f64,
    pub seed: u64,
    pub look_ahead: f64,
    pub vehicle_length: f64,
    pub stop_speed: f64,
    pub stop_hold: f64,
    pub cav_driver: DriverName,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let d = ScenarioConfig::default();
        ScenarioSection {
            n_vehicles: None,
            positions: None,
            speeds: None,
            leader_position: -60.0,
            initial_gap: DEFAULT_GAP,
            initial_speed: 12.0,
            stop_line: d.stop_line,
            duration: d.duration,
            seed: d.seed,
            look_ahead: d.look_ahead,
            vehicle_length: DEFAULT_VEHICLE_LENGTH,
            stop_speed: d.stop_speed,
            stop_hold: d.stop_hold,
            cav_driver: DriverName::Mpc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HdvSection {
    pub alpha: f64,
    pub beta: f64,
    pub v_d: f64,
    pub rho: f64,
    pub s0: f64,
    pub perturbation: f64,
}

impl Default for HdvSection {
    fn default() -> Self {
        let o = OvmParams::default();
        HdvSection {
            alpha: o.alpha,
            beta: o.beta,
            v_d: o.v_d,
            rho: o.rho,
            s0: o.s0,
            perturbation: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub tau: f64,
    pub horizon: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub rho: f64,
    pub s0: f64,
    pub w_ep: f64,
    pub w_ev: f64,
    pub w_u: f64,
    pub w_slack: f64,
    pub w_slack_linear: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let m = MpcConfig::default();
        ControllerSection {
            tau: m.limits.tau,
            horizon: m.horizon,
            u_min: m.limits.u_min,
            u_max: m.limits.u_max,
            v_min: m.limits.v_min,
            v_max: m.limits.v_max,
            rho: m.policy.rho,
            s0: m.policy.s0,
            w_ep: m.weights.w_ep,
            w_ev: m.weights.w_ev,
            w_u: m.weights.w_u,
            w_slack: m.weights.w_slack,
            w_slack_linear: m.weights.w_slack_linear,
            qp_tol: m.qp.tol,
            qp_max_iter: m.qp.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub gamma0: [f64; 3],
    pub p0: f64,
    pub forgetting: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let r = RlsConfig::default();
        EstimatorSection {
            gamma0: r.gamma0,
            p0: r.p0_scale,
            forgetting: r.forgetting,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepartureEntry {
    pub id: u32,
    pub time: f64,
}

/// Qualify a key reported by the core crate with its file section.
fn qualify(section: &str, err: CoreError) -> AppError {
    match err {
        CoreError::InvalidConfig { key, reason } => {
            let key = match (section, key) {
                ("controller", "tol") => "qp_tol",
                ("controller", "max_iter") => "qp_max_iter",
                (_, k) => k,
            };
            let section = match key {
                "vehicle_length" => "scenario",
                "gamma0" => "estimator",
                _ => section,
            };
            AppError::Invalid {
                key: format!("{section}.{key}"),
                reason: reason.to_string(),
            }
        }
        other => AppError::Core(other),
    }
}

fn invalid(key: &str, reason: &str) -> AppError {
    AppError::Invalid {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    /// Replace the layout with an evenly spaced one of `n` vehicles.
    pub fn set_vehicle_count(&mut self, n: usize) {
        self.scenario.n_vehicles = Some(n);
        self.scenario.positions = None;
        self.scenario.speeds = None;
    }

    pub fn mpc_config(&self) -> MpcConfig {
        let c = &self.controller;
        MpcConfig {
            horizon: c.horizon,
            limits: Limits {
                u_min: c.u_min,
                u_max: c.u_max,
                v_min: c.v_min,
                v_max: c.v_max,
                tau: c.tau,
            },
            policy: HeadwayPolicy { rho: c.rho, s0: c.s0 },
            l_c: self.scenario.vehicle_length,
            weights: MpcWeights {
                w_ep: c.w_ep,
                w_ev: c.w_ev,
                w_u: c.w_u,
                w_slack: c.w_slack,
                w_slack_linear: c.w_slack_linear,
            },
            qp: QpSettings {
                tol: c.qp_tol,
                max_iter: c.qp_max_iter,
                record_history: false,
            },
        }
    }

    /// Validate and convert. Errors name the offending key as
    /// `section.key`.
    pub fn build(&self) -> Result<ScenarioConfig> {
        let s = &self.scenario;
        let h = &self.hdv;
        let ovm = OvmParams {
            alpha: h.alpha,
            beta: h.beta,
            v_d: h.v_d,
            rho: h.rho,
            s0: h.s0,
        };
        ovm.validate().map_err(|e| qualify("hdv", e))?;
        let mpc = self.mpc_config();
        mpc.validate().map_err(|e| qualify("controller", e))?;
        let rls = RlsConfig {
            gamma0: self.estimator.gamma0,
            p0_scale: self.estimator.p0,
            forgetting: self.estimator.forgetting,
        };
        rls.validate().map_err(|e| qualify("estimator", e))?;

        let positions = match &s.positions {
            Some(p) => {
                if s.n_vehicles.is_some_and(|n| n != p.len()) {
                    return Err(invalid("scenario.n_vehicles", "does not match the number of positions"));
                }
                p.clone()
            }
            None => {
                let n = s.n_vehicles.unwrap_or(3);
                if !(s.initial_gap > 0.0) {
                    return Err(invalid("scenario.initial_gap", "must be positive"));
                }
                let spacing = s.initial_gap + s.vehicle_length;
                (0..n).map(|i| s.leader_position - spacing * i as f64).collect()
            }
        };
        if positions.len() < 2 {
            return Err(invalid("scenario.n_vehicles", "need the automated vehicle and at least one vehicle ahead"));
        }
        let speeds = match &s.speeds {
            Some(v) => v.clone(),
            None => vec![s.initial_speed; positions.len()],
        };

        let config = ScenarioConfig {
            positions,
            speeds,
            stop_line: s.stop_line,
            ovm,
            perturbation: h.perturbation,
            seed: s.seed,
            duration: s.duration,
            mpc,
            rls,
            look_ahead: s.look_ahead,
            departures: self.departures.iter().map(|d| Departure { id: d.id, time: d.time }).collect(),
            stop_speed: s.stop_speed,
            stop_hold: s.stop_hold,
            cav_driver: match s.cav_driver {
                DriverName::Mpc => CavDriver::Mpc,
                DriverName::Ovm => CavDriver::Ovm,
            },
            capture_qp_at: None,
        };
        config.validate().map_err(|e| match e {
            CoreError::InvalidConfig { key: "perturbation", reason } => invalid("hdv.perturbation", reason),
            CoreError::InvalidConfig { key: "departure", reason } => invalid("departure", reason),
            other => qualify("scenario", other),
        })?;
        Ok(config)
    }

    /// File whose [`build`](Self::build) reproduces `config` with an
    /// explicit layout.
    pub fn from_config(config: &ScenarioConfig) -> Self {
        let m = &config.mpc;
        ScenarioFile {
            scenario: ScenarioSection {
                n_vehicles: Some(config.n_vehicles()),
                positions: Some(config.positions.clone()),
                speeds: Some(config.speeds.clone()),
                stop_line: config.stop_line,
                duration: config.duration,
                seed: config.seed,
                look_ahead: config.look_ahead,
                vehicle_length: m.l_c,
                stop_speed: config.stop_speed,
                stop_hold: config.stop_hold,
                cav_driver: match config.cav_driver {
                    CavDriver::Mpc => DriverName::Mpc,
                    CavDriver::Ovm => DriverName::Ovm,
                },
                ..ScenarioSection::default()
            },
            hdv: HdvSection {
                alpha: config.ovm.alpha,
                beta: config.ovm.beta,
                v_d: config.ovm.v_d,
                rho: config.ovm.rho,
                s0: config.ovm.s0,
                perturbation: config.perturbation,
            },
            controller: ControllerSection {
                tau: m.limits.tau,
                horizon: m.horizon,
                u_min: m.limits.u_min,
                u_max: m.limits.u_max,
                v_min: m.limits.v_min,
                v_max: m.limits.v_max,
                rho: m.policy.rho,
                s0: m.policy.s0,
                w_ep: m.weights.w_ep,
                w_ev: m.weights.w_ev,
                w_u: m.weights.w_u,
                w_slack: m.weights.w_slack,
                w_slack_linear: m.weights.w_slack_linear,
                qp_tol: m.qp.tol,
                qp_max_iter: m.qp.max_iter,
            },
            estimator: EstimatorSection {
                gamma0: config.rls.gamma0,
                p0: config.rls.p0_scale,
                forgetting: config.rls.forgetting,
            },
            departures: config
                .departures
                .iter()
                .map(|d| DepartureEntry { id: d.id, time: d.time })
                .collect(),
        }
    }
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioFile> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    ScenarioFile::from_toml(&text).map_err(|e| AppError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Read, validate and convert a scenario file.
pub fn parse_scenario(path: &Path) -> Result<ScenarioConfig> {
    load_scenario_file(path)?.build()
}

pub fn write_scenario(path: &Path, config: &ScenarioConfig) -> Result<()> {
    fs::write(path, ScenarioFile::from_config(config).to_toml()).map_err(|e| AppError::io(path, e))
}
