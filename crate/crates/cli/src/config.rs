//! Scenario file format.
//!
//! A TOML document with optional sections; every key has a default taken from
//! the benchmark preset, so an empty file is a valid configuration. Speeds may
//! be written as plain numbers (m/s) or as strings with an explicit unit, e.g.
//! `v_max = "160 km/h"`.

use std::fmt;
use std::path::Path;

use adaptive_cbf::acc::{default_overrides, default_scenario, AccParams, LeadScenario, LeadSegment, KMH};
use adaptive_cbf::bounds::{BoundOverrides, DEFAULT_GRID_DENSITY};
use adaptive_cbf::controllers::{ControllerVariant, InfeasibilityPolicy};
use adaptive_cbf::simulator::SimConfig;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.into(),
    }
}

/// A speed in m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speed(pub f64);

impl Speed {
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        let (number, factor) = if let Some(n) = text.strip_suffix("km/h") {
            (n, KMH)
        } else if let Some(n) = text.strip_suffix("m/s") {
            (n, 1.0)
        } else {
            return Err(format!("speed `{text}` needs a `km/h` or `m/s` suffix"));
        };
        let value: f64 = number
            .trim()
            .parse()
            .map_err(|_| format!("cannot parse speed `{text}`"))?;
        Ok(Speed(value * factor))
    }
}

impl Serialize for Speed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Speed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct SpeedVisitor;

        impl Visitor<'_> for SpeedVisitor {
            type Value = Speed;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a speed in m/s or a string such as \"160 km/h\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Speed, E> {
                Ok(Speed(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Speed, E> {
                Ok(Speed(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Speed, E> {
                Ok(Speed(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Speed, E> {
                Speed::parse(v).map_err(E::custom)
            }
        }

        d.deserialize_any(SpeedVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleSection {
    pub mass: f64,
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
    pub gravity: f64,
    pub tau_d: f64,
    pub v_d: Speed,
    pub v_max: Speed,
    pub distance_max: f64,
    /// `[v_l, v_f, D]` in SI units.
    pub x0: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceSection {
    pub amplitude: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub variant: ControllerVariant,
    /// Variants run by `compare`.
    pub variants: Vec<ControllerVariant>,
    pub c_alpha: f64,
    pub c_beta: f64,
    pub slack_penalty: f64,
    pub control_period: f64,
    pub infeasibility_policy: InfeasibilityPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub period: f64,
    pub gain: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub grid_density: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub t_end: f64,
    pub substeps: usize,
    pub seed: u64,
    pub assertions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentEntry {
    pub duration: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub segments: Vec<SegmentEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_min: Option<Speed>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_max: Option<Speed>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub periods: Vec<f64>,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub vehicle: VehicleSection,
    pub disturbance: DisturbanceSection,
    pub controller: ControllerSection,
    pub estimator: EstimatorSection,
    pub bounds: BoundsSection,
    pub simulation: SimulationSection,
    pub scenario: ScenarioSection,
    pub sweep: SweepSection,
}

impl Default for VehicleSection {
    fn default() -> Self {
        let p = AccParams::default();
        Self {
            mass: p.mass,
            f0: p.f0,
            f1: p.f1,
            f2: p.f2,
            gravity: p.gravity,
            tau_d: p.tau_d,
            v_d: Speed(p.v_d),
            v_max: Speed(p.v_max),
            distance_max: p.distance_max,
            x0: p.x0,
        }
    }
}

impl Default for DisturbanceSection {
    fn default() -> Self {
        let p = AccParams::default();
        Self {
            amplitude: p.dist_amp,
            frequency: p.dist_freq,
        }
    }
}

impl Default for ControllerSection {
    fn default() -> Self {
        let p = AccParams::default();
        Self {
            variant: ControllerVariant::AdaptiveRobust,
            variants: ControllerVariant::ALL.to_vec(),
            c_alpha: p.c_alpha,
            c_beta: p.c_beta,
            slack_penalty: p.slack_penalty,
            control_period: p.control_period,
            infeasibility_policy: InfeasibilityPolicy::Error,
        }
    }
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let p = AccParams::default();
        Self {
            period: p.estimator_period,
            gain: p.gain,
            xi: p.xi,
        }
    }
}

impl Default for BoundsSection {
    fn default() -> Self {
        let o = default_overrides();
        Self {
            grid_density: DEFAULT_GRID_DENSITY,
            theta: o.theta,
            phi: o.phi,
            eta: o.eta,
        }
    }
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            t_end: default_scenario().total_duration(),
            substeps: 10,
            seed: 0,
            assertions: false,
        }
    }
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = default_scenario();
        Self {
            segments: s
                .segments
                .iter()
                .map(|seg| SegmentEntry {
                    duration: seg.duration,
                    accel: seg.accel,
                })
                .collect(),
            v_min: s.v_min.map(Speed),
            v_max: s.v_max.map(Speed),
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            periods: vec![1e-2, 1e-3, 1e-4, 1e-5],
            t_end: 2.0,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses and validates a configuration; `origin` labels error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }

    pub fn acc_params(&self) -> AccParams {
        let v = &self.vehicle;
        AccParams {
            mass: v.mass,
            f0: v.f0,
            f1: v.f1,
            f2: v.f2,
            tau_d: v.tau_d,
            v_d: v.v_d.0,
            gravity: v.gravity,
            c_alpha: self.controller.c_alpha,
            c_beta: self.controller.c_beta,
            slack_penalty: self.controller.slack_penalty,
            x0: v.x0,
            estimator_period: self.estimator.period,
            control_period: self.controller.control_period,
            gain: self.estimator.gain,
            xi: self.estimator.xi,
            v_max: v.v_max.0,
            distance_max: v.distance_max,
            dist_amp: self.disturbance.amplitude,
            dist_freq: self.disturbance.frequency,
            bound_overrides: BoundOverrides {
                theta: self.bounds.theta,
                phi: self.bounds.phi,
                eta: self.bounds.eta,
            },
        }
    }

    pub fn scenario(&self) -> LeadScenario {
        LeadScenario {
            segments: self
                .scenario
                .segments
                .iter()
                .map(|s| LeadSegment {
                    duration: s.duration,
                    accel: s.accel,
                })
                .collect(),
            v_min: self.scenario.v_min.map(|s| s.0),
            v_max: self.scenario.v_max.map(|s| s.0),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            t_end: self.simulation.t_end,
            estimator_period: self.estimator.period,
            control_period: self.controller.control_period,
            substeps: self.simulation.substeps,
            seed: self.simulation.seed,
            assertions_on: self.simulation.assertions,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be positive, got {v}")))
            }
        };
        positive("vehicle.mass", self.vehicle.mass)?;
        positive("vehicle.gravity", self.vehicle.gravity)?;
        positive("vehicle.tau_d", self.vehicle.tau_d)?;
        positive("vehicle.v_d", self.vehicle.v_d.0)?;
        positive("vehicle.v_max", self.vehicle.v_max.0)?;
        positive("vehicle.distance_max", self.vehicle.distance_max)?;
        positive("disturbance.frequency", self.disturbance.frequency)?;
        positive("controller.c_alpha", self.controller.c_alpha)?;
        positive("controller.c_beta", self.controller.c_beta)?;
        positive("controller.slack_penalty", self.controller.slack_penalty)?;
        positive("controller.control_period", self.controller.control_period)?;
        positive("estimator.period", self.estimator.period)?;
        positive("estimator.gain", self.estimator.gain)?;
        positive("simulation.t_end", self.simulation.t_end)?;
        positive("sweep.t_end", self.sweep.t_end)?;
        for (key, v) in [
            ("vehicle.f0", self.vehicle.f0),
            ("vehicle.f1", self.vehicle.f1),
            ("vehicle.f2", self.vehicle.f2),
            ("disturbance.amplitude", self.disturbance.amplitude),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(key, format!("must be nonnegative, got {v}")));
            }
        }
        if !(self.estimator.xi >= 1.0) {
            return Err(invalid("estimator.xi", format!("must be at least 1, got {}", self.estimator.xi)));
        }
        if self.bounds.grid_density == 0 {
            return Err(invalid("bounds.grid_density", "must be at least 1"));
        }
        for (key, v) in [
            ("bounds.theta", self.bounds.theta),
            ("bounds.phi", self.bounds.phi),
            ("bounds.eta", self.bounds.eta),
        ] {
            if let Some(v) = v {
                positive(key, v)?;
            }
        }
        if self.simulation.substeps == 0 {
            return Err(invalid("simulation.substeps", "must be at least 1"));
        }
        if self.controller.variants.is_empty() {
            return Err(invalid("controller.variants", "must list at least one variant"));
        }
        if self.sweep.periods.is_empty() {
            return Err(invalid("sweep.periods", "must list at least one period"));
        }
        for &t in &self.sweep.periods {
            positive("sweep.periods", t)?;
        }
        let mut sim = self.sim_config();
        sim.t_end = 0.0;
        sim.grid().map_err(|e| {
            invalid(
                "controller.control_period",
                format!("{e} (estimator.period = {})", self.estimator.period),
            )
        })?;
        sim.t_end = self.simulation.t_end;
        sim.grid().map_err(|e| invalid("simulation.t_end", e.to_string()))?;
        let params = self.acc_params();
        if !params.state_box().map_err(|e| invalid("vehicle.v_max", e.to_string()))?.contains(&params.initial_state()) {
            return Err(invalid("vehicle.x0", format!("{:?} lies outside the state box", params.x0)));
        }
        self.scenario()
            .validate(params.x0[0])
            .map_err(|e| invalid("scenario.segments", e.to_string()))?;
        Ok(())
    }
}
