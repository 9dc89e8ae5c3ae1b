//! Multirate closed-loop simulation.
//!
//! The plant `ẋ = f(t,x) + g(x)u + d(t,x)` and the state predictor are
//! integrated jointly by classical RK4 with a fixed step `T/k`. The time
//! argument of the drift is frozen at the start of each integration step, so
//! piecewise-constant exogenous signals in `f` are held over the step; the
//! uncertainty is evaluated at the true stage times.
//!
//! At every instant `iT` the estimator is updated (for `i ≥ 1`), then the
//! controller when `iT` is a multiple of `T_qp`, and the row logged afterwards
//! holds the state together with the freshly updated `d̂` and `u`.

use std::collections::BTreeMap;
use std::thread;

use crate::bounds::UncertaintyBounds;
use crate::certificates::{lie_data, psi_h, Cbf, Clf};
use crate::controllers::{
    control_step, gamma_at, row_values, ComparisonValues, ControlContext, ControlDecision,
    ControllerConfig, ControllerVariant, DecisionStatus, UncertaintyInfo,
};
use crate::error::{check_dim, Error, Result};
use crate::estimator::EstimatorState;
use crate::invariants::{check_trace, InvariantReport};
use crate::model::{ControlAffineModel, Vector};

/// Relative tolerance when checking that periods divide each other.
const GRID_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub t_end: f64,
    pub estimator_period: f64,
    pub control_period: f64,
    pub substeps: usize,
    pub seed: u64,
    pub assertions_on: bool,
}

impl SimConfig {
    /// `(N, q)` with `t_end = N·T` and `T_qp = q·T`.
    pub fn grid(&self) -> Result<(u64, u64)> {
        let period = self.estimator_period;
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::Config(format!(
                "estimator period T must be positive, got {period}"
            )));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        let q = integer_ratio("control period T_qp", self.control_period, period)?;
        if q == 0 {
            return Err(Error::Config("control period T_qp must be positive".into()));
        }
        let steps = integer_ratio("horizon t_end", self.t_end, period)?;
        Ok((steps, q))
    }
}

fn integer_ratio(what: &str, value: f64, period: f64) -> Result<u64> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(Error::Config(format!("{what} must be nonnegative, got {value}")));
    }
    let ratio = value / period;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > GRID_TOLERANCE * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "{what} = {value} is not an integer multiple of T = {period}"
        )));
    }
    Ok(rounded as u64)
}

/// Model, certificates and frozen bounds of one closed-loop problem.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    pub model: ControlAffineModel,
    pub clf: Clf,
    pub cbf: Cbf,
    pub bounds: UncertaintyBounds,
}

impl ClosedLoopSystem {
    pub fn context(&self) -> ControlContext<'_> {
        ControlContext {
            model: &self.model,
            clf: &self.clf,
            cbf: &self.cbf,
            bounds: &self.bounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: Vector,
    pub u: Vector,
    pub delta: f64,
    pub d_true: Vector,
    pub d_hat: Vector,
    pub est_err_norm: f64,
    pub h: f64,
    pub v: f64,
    /// Controller CLF row `A_i z − b_i` at the current state and held input.
    pub clf_row: f64,
    /// Controller CBF row `A_i z − b_i` at the current state and held input.
    pub cbf_row: f64,
    pub status: DecisionStatus,
    /// `Ψ_h + β(h)` with the current `d̂` and error bound.
    pub robust_cbf: f64,
    /// `L_fh + L_gh·u + h_x·d + β(h)` with the true uncertainty.
    pub true_cbf: f64,
    /// `‖f + gu + d‖` at the logged instant.
    pub xdot_norm: f64,
    /// CBF multiplier of the most recent QP.
    pub cbf_multiplier: f64,
    pub estimator_sample: bool,
    pub control_step: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Infeasible,
    HeldPrevious,
    ExitedAdmissibleSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub t: f64,
    pub kind: EventKind,
    pub x: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    ExitedAdmissibleSet { t: f64 },
    Infeasible { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub variant: ControllerVariant,
    pub rows: Vec<TraceRow>,
    pub events: Vec<SimEvent>,
    pub termination: Termination,
    /// Present when runtime assertions were enabled.
    pub invariants: Option<InvariantReport>,
}

impl SimulationTrace {
    pub fn completed(&self) -> bool {
        self.termination == Termination::Completed
    }

    pub fn min_h(&self) -> f64 {
        self.rows.iter().map(|r| r.h).fold(f64::INFINITY, f64::min)
    }
}

struct Loop<'a> {
    system: &'a ClosedLoopSystem,
    controller: &'a ControllerConfig,
}

impl Loop<'_> {
    fn model(&self) -> &ControlAffineModel {
        &self.system.model
    }

    /// One RK4 step of the stacked plant and predictor.
    fn rk4(
        &self,
        t: f64,
        h: f64,
        x: &Vector,
        x_hat: &Vector,
        u: &Vector,
        est: &EstimatorState,
    ) -> (Vector, Vector) {
        let model = self.model();
        let d_hat = est.d_hat();
        let gain = est.gain();
        let rhs = |tau: f64, x: &Vector, x_hat: &Vector| {
            let nominal = model.drift(t, x) + model.input_map(x) * u;
            let plant = &nominal + model.true_uncertainty(tau, x);
            let mut predictor = nominal + d_hat;
            predictor.axpy(-gain, &(x_hat - x), 1.0);
            (plant, predictor)
        };
        let (k1, p1) = rhs(t, x, x_hat);
        let (k2, p2) = rhs(t + 0.5 * h, &(x + &k1 * (0.5 * h)), &(x_hat + &p1 * (0.5 * h)));
        let (k3, p3) = rhs(t + 0.5 * h, &(x + &k2 * (0.5 * h)), &(x_hat + &p2 * (0.5 * h)));
        let (k4, p4) = rhs(t + h, &(x + &k3 * h), &(x_hat + &p3 * h));
        let x_next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let x_hat_next = x_hat + (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (h / 6.0);
        (x_next, x_hat_next)
    }

    fn row(
        &self,
        t: f64,
        x: &Vector,
        est: &EstimatorState,
        decision: &ControlDecision,
        estimator_sample: bool,
        control_step: bool,
    ) -> Result<TraceRow> {
        let system = self.system;
        let model = self.model();
        let lie = lie_data(&system.clf, &system.cbf, model, t, x);
        let comparison = ComparisonValues {
            alpha_v: system.clf.alpha(lie.v),
            beta_h: system.cbf.beta(lie.h),
        };
        let d_true = model.true_uncertainty(t, x);
        let gamma = gamma_at(&system.bounds, t);
        let info = UncertaintyInfo {
            d_hat: est.d_hat(),
            gamma,
            theta: system.bounds.theta,
            d_true: Some(&d_true),
        };
        let (clf_row, cbf_row) = row_values(
            self.controller.variant(),
            &lie,
            comparison,
            &info,
            &decision.u,
            decision.delta,
        )?;
        let u = &decision.u;
        let robust_cbf = psi_h(&lie, u, est.d_hat(), gamma) + comparison.beta_h;
        let true_cbf = lie.lf_h + lie.lg_h.dot(u) + lie.h_x.dot(&d_true) + comparison.beta_h;
        let xdot_norm = model.eval_rhs(t, x, u, &d_true)?.norm();
        Ok(TraceRow {
            t,
            x: x.clone(),
            u: u.clone(),
            delta: decision.delta,
            est_err_norm: (est.d_hat() - &d_true).norm(),
            d_hat: est.d_hat().clone(),
            d_true,
            h: lie.h,
            v: lie.v,
            clf_row,
            cbf_row,
            status: decision.status,
            robust_cbf,
            true_cbf,
            xdot_norm,
            cbf_multiplier: decision.cbf_multiplier,
            estimator_sample,
            control_step,
        })
    }
}

/// Runs one closed-loop simulation from `x0`.
pub fn run_simulation(
    system: &ClosedLoopSystem,
    controller: &ControllerConfig,
    sim: &SimConfig,
    x0: &Vector,
) -> Result<SimulationTrace> {
    let model = &system.model;
    check_dim("initial state", model.n(), x0.len())?;
    let (steps, q) = sim.grid()?;
    let period = sim.estimator_period;
    if (controller.control_period() - sim.control_period).abs()
        > GRID_TOLERANCE * sim.control_period
    {
        return Err(Error::Config(format!(
            "controller period {} differs from simulation control period {}",
            controller.control_period(),
            sim.control_period
        )));
    }
    if (system.bounds.sample_time - period).abs() > GRID_TOLERANCE * period {
        return Err(Error::Config(format!(
            "bounds were computed for T = {} but the simulation uses T = {period}",
            system.bounds.sample_time
        )));
    }
    if !model.state_box().contains(x0) {
        return Err(Error::Config(format!(
            "initial state {:?} lies outside the state box",
            x0.as_slice()
        )));
    }

    let lp = Loop { system, controller };
    let ctx = system.context();
    let mut est = EstimatorState::new(x0, system.bounds.gain, period)?;
    let mut x = x0.clone();
    let mut x_hat = x0.clone();
    let mut rows = Vec::with_capacity(steps as usize + 1);
    let mut events = Vec::new();
    let mut termination = Termination::Completed;

    let mut decision = control_step(controller, &ctx, 0.0, &x, est.d_hat(), None)?;
    note_decision(&decision, 0.0, &x, &mut events);
    rows.push(lp.row(0.0, &x, &est, &decision, false, true)?);
    if decision.status == DecisionStatus::Infeasible {
        termination = Termination::Infeasible { t: 0.0 };
    }

    let h = period / sim.substeps as f64;
    let mut i = 0u64;
    while termination == Termination::Completed && i < steps {
        let t_start = i as f64 * period;
        for j in 0..sim.substeps {
            let tau = t_start + j as f64 * h;
            let (xn, xhn) = lp.rk4(tau, h, &x, &x_hat, &decision.u, &est);
            x = xn;
            x_hat = xhn;
        }
        i += 1;
        let t = i as f64 * period;
        est.set_x_hat(x_hat.clone());
        est.sample_update(t, &x)?;

        if !model.state_box().contains(&x) {
            events.push(SimEvent {
                t,
                kind: EventKind::ExitedAdmissibleSet,
                x: x.clone(),
            });
            termination = Termination::ExitedAdmissibleSet { t };
            break;
        }

        let is_control = i.is_multiple_of(q);
        if is_control {
            decision = control_step(controller, &ctx, t, &x, est.d_hat(), Some(&decision))?;
            note_decision(&decision, t, &x, &mut events);
            if decision.status == DecisionStatus::Infeasible {
                termination = Termination::Infeasible { t };
            }
        }
        rows.push(lp.row(t, &x, &est, &decision, true, is_control)?);
    }

    let mut trace = SimulationTrace {
        variant: controller.variant(),
        rows,
        events,
        termination,
        invariants: None,
    };
    if sim.assertions_on {
        trace.invariants = Some(check_trace(&trace, &system.bounds));
    }
    Ok(trace)
}

fn note_decision(decision: &ControlDecision, t: f64, x: &Vector, events: &mut Vec<SimEvent>) {
    let kind = match decision.status {
        DecisionStatus::Optimal => return,
        DecisionStatus::Infeasible => EventKind::Infeasible,
        DecisionStatus::HeldPrevious => EventKind::HeldPrevious,
    };
    events.push(SimEvent { t, kind, x: x.clone() });
}

/// Runs every variant under identical conditions, concurrently.
pub fn compare_variants(
    system: &ClosedLoopSystem,
    controller: &ControllerConfig,
    sim: &SimConfig,
    x0: &Vector,
    variants: &[ControllerVariant],
) -> Result<BTreeMap<ControllerVariant, SimulationTrace>> {
    let results: Vec<Result<SimulationTrace>> = thread::scope(|scope| {
        let handles: Vec<_> = variants
            .iter()
            .map(|&variant| {
                let cfg = controller.with_variant(variant);
                scope.spawn(move || run_simulation(system, &cfg, sim, x0))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    variants
        .iter()
        .zip(results)
        .map(|(&v, r)| r.map(|trace| (v, trace)))
        .collect()
}
