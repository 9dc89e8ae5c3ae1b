//! Trace-level checks of the uncertainty and estimation bounds and of robust
//! CBF sufficiency.

use serde::Serialize;

use crate::bounds::{before_first_sample, UncertaintyBounds};
use crate::simulator::SimulationTrace;

/// Relative slack on the uncertainty and derivative bounds.
pub const BOUND_REL_TOL: f64 = 1e-9;
/// Absolute slack on the estimation-error bound for integrator error.
pub const ESTIMATION_ABS_TOL: f64 = 1e-6;
/// Absolute slack on the true CBF expression.
pub const SUFFICIENCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvariantKind {
    /// `‖d(t,x)‖ ≤ θ` at every logged step.
    UncertaintyBound,
    /// `‖ẋ‖ ≤ φ` at every logged step.
    DerivativeBound,
    /// `‖d̂ − d‖ ≤ θ` on `[0,T)` and `≤ γ(T)` afterwards.
    EstimationError,
    /// Robust CBF row satisfied implies true CBF condition satisfied, `t ≥ T`.
    RobustSufficiency,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub kind: InvariantKind,
    pub rows_checked: usize,
    pub violations: usize,
    /// Largest amount by which the checked quantity exceeded its bound
    /// (negative when every row holds with room to spare).
    pub worst_excess: f64,
    pub worst_t: f64,
    pub first_violation_t: Option<f64>,
}

impl InvariantCheck {
    fn new(kind: InvariantKind) -> Self {
        Self {
            kind,
            rows_checked: 0,
            violations: 0,
            worst_excess: f64::NEG_INFINITY,
            worst_t: f64::NAN,
            first_violation_t: None,
        }
    }

    /// Records `excess = value − bound`; positive beyond `tol` is a violation.
    fn record(&mut self, t: f64, excess: f64, tol: f64) {
        self.rows_checked += 1;
        if excess > self.worst_excess || self.worst_t.is_nan() {
            self.worst_excess = excess;
            self.worst_t = t;
        }
        if excess > tol || excess.is_nan() {
            self.violations += 1;
            self.first_violation_t.get_or_insert(t);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub checks: Vec<InvariantCheck>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(InvariantCheck::passed)
    }

    pub fn get(&self, kind: InvariantKind) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| c.kind == kind)
    }
}

pub fn check_trace(trace: &SimulationTrace, bounds: &UncertaintyBounds) -> InvariantReport {
    let mut theta = InvariantCheck::new(InvariantKind::UncertaintyBound);
    let mut phi = InvariantCheck::new(InvariantKind::DerivativeBound);
    let mut estimation = InvariantCheck::new(InvariantKind::EstimationError);
    let mut sufficiency = InvariantCheck::new(InvariantKind::RobustSufficiency);
    for row in &trace.rows {
        let t = row.t;
        theta.record(t, row.d_true.norm() - bounds.theta, BOUND_REL_TOL * bounds.theta);
        phi.record(t, row.xdot_norm - bounds.phi, BOUND_REL_TOL * bounds.phi);
        estimation.record(t, row.est_err_norm - bounds.error_bound_at(t), ESTIMATION_ABS_TOL);
        if !before_first_sample(t, bounds.sample_time) && row.robust_cbf >= 0.0 {
            sufficiency.record(t, -row.true_cbf, SUFFICIENCY_TOL);
        }
    }
    InvariantReport {
        checks: vec![theta, phi, estimation, sufficiency],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_tracks_worst_and_first_violation() {
        let mut c = InvariantCheck::new(InvariantKind::EstimationError);
        c.record(0.0, -1.0, 0.0);
        assert!(c.passed());
        c.record(1.0, 0.5, 0.0);
        c.record(2.0, 0.25, 0.0);
        assert_eq!(c.violations, 2);
        assert_eq!(c.first_violation_t, Some(1.0));
        assert_eq!(c.worst_excess, 0.5);
        assert_eq!(c.worst_t, 1.0);
        assert_eq!(c.rows_checked, 3);
    }

    #[test]
    fn tolerance_absorbs_small_excess() {
        let mut c = InvariantCheck::new(InvariantKind::UncertaintyBound);
        c.record(0.0, 1e-12, 1e-9);
        assert!(c.passed());
    }
}
