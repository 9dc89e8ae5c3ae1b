//! Adaptive cruise control benchmark.
//!
//! State `x = [v_l, v_f, D]` (lead speed, follower speed, gap):
//!
//! ```text
//! ẋ = [a_l(t), 0, v_l − v_f] + [0, 1/m, 0]·u + [0, −F_r(v_f)/m + d₀(t), 0]
//! F_r = f0 + f1·v_f + f2·v_f²,   d₀(t) = A·sin(2π·ν·t)
//! ```
//!
//! with `V = (v_f − v_d)²` and `h = D − τ_d·v_f`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundOverrides, BoundsOptions, UncertaintyBounds};
use crate::certificates::{Cbf, Clf, ComparisonFn};
use crate::controllers::{ControllerConfig, ControllerVariant, InfeasibilityPolicy};
use crate::error::{Error, Result};
use crate::model::{BoxSet, ControlAffineModel, LipschitzData, Matrix, Vector};
use crate::simulator::{ClosedLoopSystem, SimConfig};

pub const KMH: f64 = 1.0 / 3.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccParams {
    pub mass: f64,
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
    pub tau_d: f64,
    pub v_d: f64,
    pub gravity: f64,
    pub c_alpha: f64,
    pub c_beta: f64,
    pub slack_penalty: f64,
    pub x0: [f64; 3],
    pub estimator_period: f64,
    pub control_period: f64,
    pub gain: f64,
    pub xi: f64,
    pub v_max: f64,
    pub distance_max: f64,
    pub dist_amp: f64,
    pub dist_freq: f64,
    pub bound_overrides: BoundOverrides,
}

impl Default for AccParams {
    fn default() -> Self {
        let gravity = 9.81;
        Self {
            mass: 1650.0,
            f0: 0.1,
            f1: 5.0,
            f2: 0.25,
            tau_d: 1.8,
            v_d: 22.0,
            gravity,
            c_alpha: 5.0,
            c_beta: 1.0,
            slack_penalty: 100.0,
            x0: [18.0, 12.0, 80.0],
            estimator_period: 1e-3,
            control_period: 0.01,
            gain: 1.0,
            xi: 2.0,
            v_max: 160.0 * KMH,
            distance_max: 300.0,
            dist_amp: 0.2 * gravity,
            dist_freq: 10.0,
            bound_overrides: default_overrides(),
        }
    }
}

/// `θ` slightly above `ξ·max‖d‖` over the default state box, and `η` chosen so
/// that `γ(1 ms) = 0.298`.
pub fn default_overrides() -> BoundOverrides {
    BoundOverrides {
        theta: Some(4.8),
        phi: None,
        eta: Some(83.63),
    }
}

impl AccParams {
    /// Defaults with a 1 Hz disturbance, slow enough for the unmodelled term
    /// to push the nominal controller across the safety boundary.
    pub fn stress() -> Self {
        Self {
            dist_freq: 1.0,
            ..Self::default()
        }
    }

    pub fn u_max(&self) -> f64 {
        0.4 * self.mass * self.gravity
    }

    pub fn initial_state(&self) -> Vector {
        Vector::from_row_slice(&self.x0)
    }

    pub fn state_box(&self) -> Result<BoxSet> {
        BoxSet::new(
            vec![0.0, 0.0, 0.0],
            vec![self.v_max, self.v_max, self.distance_max],
        )
    }

    pub fn input_box(&self) -> Result<BoxSet> {
        BoxSet::symmetric(&[self.u_max()])
    }

    /// `l_t = A·2πν·ξ`, `l_d = (f1 + 2 f2 v_max)·ξ`, `b_d = A·ξ`.
    pub fn lipschitz(&self) -> Result<LipschitzData> {
        LipschitzData::new(
            self.f1 + 2.0 * self.f2 * self.v_max,
            self.dist_amp * 2.0 * PI * self.dist_freq,
            self.dist_amp,
        )?
        .scaled(self.xi)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("tau_d", self.tau_d),
            ("v_d", self.v_d),
            ("gravity", self.gravity),
            ("c_alpha", self.c_alpha),
            ("c_beta", self.c_beta),
            ("slack_penalty", self.slack_penalty),
            ("estimator_period", self.estimator_period),
            ("control_period", self.control_period),
            ("gain", self.gain),
            ("v_max", self.v_max),
            ("distance_max", self.distance_max),
            ("dist_freq", self.dist_freq),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonnegative = [
            ("f0", self.f0),
            ("f1", self.f1),
            ("f2", self.f2),
            ("dist_amp", self.dist_amp),
        ];
        for (name, v) in nonnegative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(self.xi >= 1.0) {
            return Err(Error::Config(format!("xi must be at least 1, got {}", self.xi)));
        }
        if !self.state_box()?.contains(&self.initial_state()) {
            return Err(Error::Config(format!(
                "x0 = {:?} lies outside the state box",
                self.x0
            )));
        }
        Ok(())
    }

    /// Uncertainty `d(t,x)`.
    pub fn uncertainty(&self, t: f64, x: &Vector) -> Vector {
        let v_f = x[1];
        let drag = self.f0 + self.f1 * v_f + self.f2 * v_f * v_f;
        let d0 = self.dist_amp * (2.0 * PI * self.dist_freq * t).sin();
        Vector::from_vec(vec![0.0, -drag / self.mass + d0, 0.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadSegment {
    pub duration: f64,
    pub accel: f64,
}

/// Piecewise-constant lead acceleration; zero after the last segment. The
/// optional limits stop the lead car from braking below `v_min` or
/// accelerating above `v_max`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadScenario {
    pub segments: Vec<LeadSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
}

/// Cruise, brake, cruise, accelerate past `v_d`, cruise. The braking level is
/// the strongest round value at which every controller variant stays feasible
/// under the default disturbance.
pub fn default_scenario() -> LeadScenario {
    let seg = |duration, accel| LeadSegment { duration, accel };
    LeadScenario {
        segments: vec![seg(5.0, 0.0), seg(5.0, -0.5), seg(10.0, 0.0), seg(5.0, 2.0), seg(15.0, 0.0)],
        v_min: None,
        v_max: None,
    }
}

impl LeadScenario {
    pub fn constant_speed() -> Self {
        Self::default()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Start time of every segment.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let start = t;
                t += s.duration;
                start
            })
            .collect()
    }

    /// Scheduled acceleration at `t`, ignoring the speed limits.
    pub fn scheduled_accel(&self, t: f64) -> f64 {
        let mut end = 0.0;
        for s in &self.segments {
            end += s.duration;
            if t < end {
                return s.accel;
            }
        }
        0.0
    }

    /// Applied acceleration at `t` for lead speed `v_l`.
    pub fn accel(&self, t: f64, v_l: f64) -> f64 {
        let a = self.scheduled_accel(t);
        if a < 0.0 && self.v_min.is_some_and(|lo| v_l <= lo) {
            return 0.0;
        }
        if a > 0.0 && self.v_max.is_some_and(|hi| v_l >= hi) {
            return 0.0;
        }
        a
    }

    /// Lead speed after the full schedule from `v0`, without the limits.
    pub fn final_speed(&self, v0: f64) -> f64 {
        v0 + self.segments.iter().map(|s| s.duration * s.accel).sum::<f64>()
    }

    /// Checks positive durations, consistent limits and that the lead speed
    /// stays nonnegative from `v0`.
    pub fn validate(&self, v0: f64) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration > 0.0) || !s.duration.is_finite() || !s.accel.is_finite() {
                return Err(Error::Config(format!(
                    "scenario segment {i} needs a positive duration and finite acceleration"
                )));
            }
        }
        if let (Some(lo), Some(hi)) = (self.v_min, self.v_max) {
            if lo > hi {
                return Err(Error::Config(format!("scenario v_min {lo} exceeds v_max {hi}")));
            }
        }
        let floor = self.v_min.unwrap_or(f64::NEG_INFINITY);
        let mut v = v0;
        for s in &self.segments {
            let before = v;
            v += s.duration * s.accel;
            if s.accel < 0.0 {
                v = v.max(floor.min(before));
            }
            if v < 0.0 {
                return Err(Error::Config(format!(
                    "lead speed becomes negative ({v} m/s) under the scenario"
                )));
            }
        }
        Ok(())
    }
}

pub fn build_acc_model(
    params: &AccParams,
    scenario: &LeadScenario,
) -> Result<(ControlAffineModel, LipschitzData)> {
    params.validate()?;
    scenario.validate(params.x0[0])?;
    let lead = scenario.clone();
    let drift = Arc::new(move |t: f64, x: &Vector| {
        Vector::from_vec(vec![lead.accel(t, x[0]), 0.0, x[0] - x[1]])
    });
    let mass = params.mass;
    let input_map = Arc::new(move |_: &Vector| Matrix::from_column_slice(3, 1, &[0.0, 1.0 / mass, 0.0]));
    let p = params.clone();
    let uncertainty = Arc::new(move |t: f64, x: &Vector| p.uncertainty(t, x));
    let mut times = scenario.breakpoints();
    if times.is_empty() {
        times.push(0.0);
    }
    times.push(scenario.total_duration());
    let quarter = 0.25 / params.dist_freq;
    times.extend([quarter, 3.0 * quarter]);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let model = ControlAffineModel::new(
        drift,
        input_map,
        uncertainty,
        params.state_box()?,
        params.input_box()?,
    )?
    .with_time_samples(times)?;
    Ok((model, params.lipschitz()?))
}

pub fn build_acc_certificates(params: &AccParams) -> Result<(Clf, Cbf)> {
    let v_d = params.v_d;
    let tau = params.tau_d;
    let clf = Clf::new(
        Arc::new(move |x: &Vector| (x[1] - v_d).powi(2)),
        Arc::new(move |x: &Vector| Vector::from_vec(vec![0.0, 2.0 * (x[1] - v_d), 0.0])),
        ComparisonFn::linear(params.c_alpha),
    )?;
    let cbf = Cbf::new(
        Arc::new(move |x: &Vector| x[2] - tau * x[1]),
        Arc::new(move |_: &Vector| Vector::from_vec(vec![0.0, -tau, 1.0])),
        ComparisonFn::linear(params.c_beta),
    )?;
    Ok((clf, cbf))
}

pub fn acc_bounds(
    params: &AccParams,
    model: &ControlAffineModel,
    lip: &LipschitzData,
    grid_density: usize,
) -> Result<UncertaintyBounds> {
    UncertaintyBounds::derive(
        model,
        lip,
        params.gain,
        params.estimator_period,
        &BoundsOptions {
            grid_density,
            overrides: params.bound_overrides,
        },
    )
}

pub fn build_acc_system(
    params: &AccParams,
    scenario: &LeadScenario,
    grid_density: usize,
) -> Result<ClosedLoopSystem> {
    let (model, lip) = build_acc_model(params, scenario)?;
    let (clf, cbf) = build_acc_certificates(params)?;
    let bounds = acc_bounds(params, &model, &lip, grid_density)?;
    Ok(ClosedLoopSystem {
        model,
        clf,
        cbf,
        bounds,
    })
}

/// Controller with `H = 1/m²`.
pub fn acc_controller(
    params: &AccParams,
    variant: ControllerVariant,
    policy: InfeasibilityPolicy,
) -> Result<ControllerConfig> {
    let h = 1.0 / (params.mass * params.mass);
    ControllerConfig::new(
        ControllerConfig::constant_cost(Matrix::from_element(1, 1, h)),
        params.slack_penalty,
        variant,
        params.control_period,
        policy,
    )
}

pub fn acc_sim_config(params: &AccParams, t_end: f64, substeps: usize) -> SimConfig {
    SimConfig {
        t_end,
        estimator_period: params.estimator_period,
        control_period: params.control_period,
        substeps,
        seed: 0,
        assertions_on: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::lie_data;
    use approx::assert_relative_eq;

    #[test]
    fn table_constants() {
        let p = AccParams::default();
        assert_relative_eq!(p.u_max(), 6474.6, epsilon = 1e-9);
        assert_relative_eq!(p.v_max, 44.444, epsilon = 1e-3);
        let lip = p.lipschitz().unwrap();
        assert_relative_eq!(lip.l_t, 0.2 * 9.81 * 2.0 * PI * 10.0 * 2.0, epsilon = 1e-12);
        assert_relative_eq!(lip.l_t, 246.552, epsilon = 1e-3);
        assert_relative_eq!(lip.l_d, 54.444, epsilon = 1e-3);
        assert_relative_eq!(lip.b_d, 3.924, epsilon = 1e-12);
    }

    #[test]
    fn input_box_saturates() {
        let b = AccParams::default().input_box().unwrap();
        assert_relative_eq!(b.clamp(&Vector::from_element(1, 1e4))[0], 6474.6, epsilon = 1e-9);
    }

    #[test]
    fn initial_certificate_values() {
        let p = AccParams::default();
        let (model, _) = build_acc_model(&p, &default_scenario()).unwrap();
        let (clf, cbf) = build_acc_certificates(&p).unwrap();
        let x = p.initial_state();
        let lie = lie_data(&clf, &cbf, &model, 0.0, &x);
        assert_relative_eq!(lie.v, 100.0);
        assert_relative_eq!(lie.h, 58.4, epsilon = 1e-12);
        assert_eq!(lie.v_x.as_slice(), &[0.0, -20.0, 0.0]);
        assert_eq!(lie.h_x.as_slice(), &[0.0, -1.8, 1.0]);
        assert_relative_eq!(lie.lf_h, 6.0);
        assert_relative_eq!(lie.lg_h[0], -1.0909090909e-3, epsilon = 1e-12);
        assert!(cbf.has_relative_degree_one(&model, 5));
    }

    #[test]
    fn target_speed_zeroes_clf() {
        let (clf, _) = build_acc_certificates(&AccParams::default()).unwrap();
        let x = Vector::from_vec(vec![18.0, 22.0, 80.0]);
        assert_eq!(clf.value(&x), 0.0);
        assert_eq!(clf.gradient(&x), Vector::zeros(3));
    }

    #[test]
    fn default_schedule() {
        let s = default_scenario();
        assert_eq!(s.total_duration(), 40.0);
        assert_relative_eq!(s.final_speed(18.0), 25.5);
        assert_eq!(s.breakpoints(), vec![0.0, 5.0, 10.0, 20.0, 25.0]);
        assert_eq!(s.scheduled_accel(4.999), 0.0);
        assert_eq!(s.scheduled_accel(5.0), -0.5);
        assert_eq!(s.scheduled_accel(24.0), 2.0);
        assert_eq!(s.scheduled_accel(26.0), 0.0);
        assert_eq!(s.scheduled_accel(41.0), 0.0);
        assert!(s.validate(18.0).is_ok());
        assert_eq!(LeadScenario::constant_speed().final_speed(18.0), 18.0);
    }

    #[test]
    fn scenario_rejects_reversing_lead() {
        let s = LeadScenario {
            segments: vec![LeadSegment { duration: 10.0, accel: -3.0 }],
            v_min: None,
            v_max: None,
        };
        assert!(s.validate(18.0).is_err());
        let floored = LeadScenario { v_min: Some(0.0), ..s };
        assert!(floored.validate(18.0).is_ok());
        assert_eq!(floored.accel(1.0, 0.0), 0.0);
        assert_eq!(floored.accel(1.0, 5.0), -3.0);
    }

    #[test]
    fn uncertainty_bounds_and_structure() {
        let p = AccParams::default();
        let bound = (p.f0 + p.f1 * p.v_max + p.f2 * p.v_max * p.v_max) / p.mass + p.dist_amp;
        for k in 0..=20 {
            let v = p.v_max * k as f64 / 20.0;
            for t in [0.0, 0.013, 0.025, 0.07] {
                let d = p.uncertainty(t, &Vector::from_vec(vec![3.0, v, 10.0]));
                assert_eq!(d[0], 0.0);
                assert_eq!(d[2], 0.0);
                assert!(d[1].abs() <= bound + 1e-15);
            }
        }
        assert!(2.0 * bound < default_overrides().theta.unwrap());
    }

    #[test]
    fn lipschitz_data_is_consistent() {
        let p = AccParams::default();
        let (model, lip) = build_acc_model(&p, &default_scenario()).unwrap();
        assert!(lip.check_consistency(&model, 15).consistent());
        // The state derivative of d₂ is (f1 + 2 f2 v_f)/m, far below l_d.
        let worst = (p.f1 + 2.0 * p.f2 * p.v_max) / p.mass;
        assert!(worst <= lip.l_d);
    }

    #[test]
    fn gamma_matches_table_with_overrides() {
        let p = AccParams::default();
        let system = build_acc_system(&p, &default_scenario(), 10).unwrap();
        assert_relative_eq!(system.bounds.gamma, 0.298, epsilon = 1e-3);
        assert!(system.bounds.phi >= system.bounds.theta);
    }

    #[test]
    fn rejects_invalid_params() {
        let p = AccParams { mass: -1.0, ..AccParams::default() };
        assert!(p.validate().is_err());
        let p = AccParams { x0: [18.0, 12.0, 400.0], ..AccParams::default() };
        assert!(p.validate().is_err());
        let p = AccParams { xi: 0.5, ..AccParams::default() };
        assert!(p.validate().is_err());
    }
}
