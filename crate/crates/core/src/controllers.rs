//! CLF-CBF quadratic-program controllers.
//!
//! Every variant solves
//!
//! ```text
//! minimize    ½uᵀH(x)u + pδ²
//! subject to  L_fV + L_gV·u + c_V + α(V) − δ ≤ 0
//!             −(L_fh + L_gh·u + c_h + β(h)) ≤ 0
//!             u_lo ≤ u ≤ u_hi
//! ```
//!
//! over `z = (u, δ)`, and the variants differ only in the uncertainty offsets
//! `(c_V, c_h)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{before_first_sample, UncertaintyBounds};
use crate::certificates::{lie_data, Cbf, Clf, LieData};
use crate::error::{check_dim, Error, Result};
use crate::model::{BoxSet, ControlAffineModel, Matrix, Vector};
use crate::qp::{solve_qp, DenseQp, QpStatus};

/// Row index of the CLF constraint in the assembled QP.
pub const CLF_ROW: usize = 0;
/// Row index of the CBF constraint in the assembled QP.
pub const CBF_ROW: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerVariant {
    /// Ideal controller with access to the true uncertainty.
    TrueUncertainty,
    /// Ignores the uncertainty.
    Nominal,
    /// Worst-case bound `θ` with `d̂ ≡ 0`.
    RobustWorstCase,
    /// Estimate `d̂` with error bound `γ(T)`.
    AdaptiveRobust,
}

impl ControllerVariant {
    pub const ALL: [ControllerVariant; 4] = [
        ControllerVariant::TrueUncertainty,
        ControllerVariant::Nominal,
        ControllerVariant::RobustWorstCase,
        ControllerVariant::AdaptiveRobust,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerVariant::TrueUncertainty => "true-uncertainty",
            ControllerVariant::Nominal => "nominal",
            ControllerVariant::RobustWorstCase => "robust-worst-case",
            ControllerVariant::AdaptiveRobust => "adaptive-robust",
        }
    }
}

impl fmt::Display for ControllerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfeasibilityPolicy {
    /// Abort the run.
    #[default]
    Error,
    /// Keep applying the previous input.
    HoldPrevious,
}

pub type CostFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

#[derive(Clone)]
pub struct ControllerConfig {
    cost: CostFn,
    slack_penalty: f64,
    variant: ControllerVariant,
    control_period: f64,
    infeasibility_policy: InfeasibilityPolicy,
}

impl fmt::Debug for ControllerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControllerConfig")
            .field("slack_penalty", &self.slack_penalty)
            .field("variant", &self.variant)
            .field("control_period", &self.control_period)
            .field("infeasibility_policy", &self.infeasibility_policy)
            .finish_non_exhaustive()
    }
}

impl ControllerConfig {
    pub fn new(
        cost: CostFn,
        slack_penalty: f64,
        variant: ControllerVariant,
        control_period: f64,
        infeasibility_policy: InfeasibilityPolicy,
    ) -> Result<Self> {
        if !(slack_penalty > 0.0) || !slack_penalty.is_finite() {
            return Err(Error::Config(format!(
                "slack penalty must be positive, got {slack_penalty}"
            )));
        }
        if !(control_period > 0.0) || !control_period.is_finite() {
            return Err(Error::Config(format!(
                "control period must be positive, got {control_period}"
            )));
        }
        Ok(Self {
            cost,
            slack_penalty,
            variant,
            control_period,
            infeasibility_policy,
        })
    }

    /// Constant cost matrix `H`.
    pub fn constant_cost(h: Matrix) -> CostFn {
        Arc::new(move |_| h.clone())
    }

    pub fn with_variant(&self, variant: ControllerVariant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn cost(&self, x: &Vector) -> Matrix {
        (self.cost)(x)
    }

    pub fn slack_penalty(&self) -> f64 {
        self.slack_penalty
    }

    pub fn variant(&self) -> ControllerVariant {
        self.variant
    }

    pub fn control_period(&self) -> f64 {
        self.control_period
    }

    pub fn infeasibility_policy(&self) -> InfeasibilityPolicy {
        self.infeasibility_policy
    }
}

/// What a variant knows about the uncertainty at one instant.
#[derive(Debug, Clone, Copy)]
pub struct UncertaintyInfo<'a> {
    pub d_hat: &'a Vector,
    /// Estimation-error bound in force (`θ` before the first sample).
    pub gamma: f64,
    pub theta: f64,
    pub d_true: Option<&'a Vector>,
}

/// `(c_V, c_h)` for the variant.
pub fn constraint_offsets(
    variant: ControllerVariant,
    lie: &LieData,
    info: &UncertaintyInfo<'_>,
) -> Result<(f64, f64)> {
    Ok(match variant {
        ControllerVariant::TrueUncertainty => {
            let d = info.d_true.ok_or_else(|| {
                Error::Contract("true-uncertainty controller needs the true uncertainty".into())
            })?;
            (lie.v_x.dot(d), lie.h_x.dot(d))
        }
        ControllerVariant::Nominal => (0.0, 0.0),
        ControllerVariant::RobustWorstCase => (
            lie.v_x.norm() * info.theta,
            -lie.h_x.norm() * info.theta,
        ),
        ControllerVariant::AdaptiveRobust => (
            lie.v_x.dot(info.d_hat) + lie.v_x.norm() * info.gamma,
            lie.h_x.dot(info.d_hat) - lie.h_x.norm() * info.gamma,
        ),
    })
}

/// Evaluated comparison functions `α(V)` and `β(h)` at the current state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonValues {
    pub alpha_v: f64,
    pub beta_h: f64,
}

/// Builds the QP for one control step. Rows are ordered CLF, CBF, then
/// `u_j ≤ hi_j`, `−u_j ≤ −lo_j` for each input channel.
pub fn assemble_qp(
    cfg: &ControllerConfig,
    x: &Vector,
    lie: &LieData,
    comparison: ComparisonValues,
    info: &UncertaintyInfo<'_>,
    input_box: &BoxSet,
) -> Result<DenseQp> {
    let m = input_box.dim();
    check_dim("CLF input gradient", m, lie.lg_v.len())?;
    check_dim("CBF input gradient", m, lie.lg_h.len())?;
    check_dim("estimate", lie.v_x.len(), info.d_hat.len())?;
    let h = cfg.cost(x);
    if h.nrows() != m || h.ncols() != m {
        return Err(Error::DimensionMismatch {
            context: "controller cost matrix",
            expected: m * m,
            actual: h.nrows() * h.ncols(),
        });
    }
    let (c_v, c_h) = constraint_offsets(cfg.variant, lie, info)?;

    let mut q = Matrix::zeros(m + 1, m + 1);
    q.view_mut((0, 0), (m, m)).copy_from(&h);
    q[(m, m)] = 2.0 * cfg.slack_penalty;

    let k = 2 + 2 * m;
    let mut a = Matrix::zeros(k, m + 1);
    let mut b = Vector::zeros(k);
    for j in 0..m {
        a[(CLF_ROW, j)] = lie.lg_v[j];
        a[(CBF_ROW, j)] = -lie.lg_h[j];
    }
    a[(CLF_ROW, m)] = -1.0;
    b[CLF_ROW] = -(lie.lf_v + c_v + comparison.alpha_v);
    b[CBF_ROW] = lie.lf_h + c_h + comparison.beta_h;
    for j in 0..m {
        a[(2 + 2 * j, j)] = 1.0;
        b[2 + 2 * j] = input_box.upper()[j];
        a[(3 + 2 * j, j)] = -1.0;
        b[3 + 2 * j] = -input_box.lower()[j];
    }
    DenseQp::new(q, Vector::zeros(m + 1), a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionStatus {
    Optimal,
    Infeasible,
    /// The QP was infeasible and the previous input was kept.
    HeldPrevious,
}

impl DecisionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionStatus::Optimal => "optimal",
            DecisionStatus::Infeasible => "infeasible",
            DecisionStatus::HeldPrevious => "held-previous",
        }
    }
}

impl fmt::Display for DecisionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u: Vector,
    pub delta: f64,
    /// `A_i z − b_i` of the CLF row at the applied `(u, δ)`; nonpositive when satisfied.
    pub clf_row: f64,
    /// `A_i z − b_i` of the CBF row at the applied `u`; nonpositive when satisfied.
    pub cbf_row: f64,
    pub cbf_multiplier: f64,
    pub status: DecisionStatus,
}

/// CLF and CBF row values `A_i z − b_i` for a given `(u, δ)`.
pub fn row_values(
    variant: ControllerVariant,
    lie: &LieData,
    comparison: ComparisonValues,
    info: &UncertaintyInfo<'_>,
    u: &Vector,
    delta: f64,
) -> Result<(f64, f64)> {
    let (c_v, c_h) = constraint_offsets(variant, lie, info)?;
    let clf = lie.lf_v + lie.lg_v.dot(u) + c_v + comparison.alpha_v - delta;
    let cbf = -(lie.lf_h + lie.lg_h.dot(u) + c_h + comparison.beta_h);
    Ok((clf, cbf))
}

/// Error bound used by the adaptive controller at time `t`.
pub fn gamma_at(bounds: &UncertaintyBounds, t: f64) -> f64 {
    if before_first_sample(t, bounds.sample_time) {
        bounds.theta
    } else {
        bounds.gamma
    }
}

/// Everything a controller needs besides its configuration.
#[derive(Clone, Copy)]
pub struct ControlContext<'a> {
    pub model: &'a ControlAffineModel,
    pub clf: &'a Clf,
    pub cbf: &'a Cbf,
    pub bounds: &'a UncertaintyBounds,
}

/// Solves the variant's QP at `(t, x)`. On infeasibility the decision carries
/// `Infeasible` under the `Error` policy (the caller aborts), or the previous
/// input with `HeldPrevious`.
pub fn control_step(
    cfg: &ControllerConfig,
    ctx: &ControlContext<'_>,
    t: f64,
    x: &Vector,
    d_hat: &Vector,
    previous: Option<&ControlDecision>,
) -> Result<ControlDecision> {
    check_dim("state", ctx.model.n(), x.len())?;
    let lie = lie_data(ctx.clf, ctx.cbf, ctx.model, t, x);
    let comparison = ComparisonValues {
        alpha_v: ctx.clf.alpha(lie.v),
        beta_h: ctx.cbf.beta(lie.h),
    };
    let d_true = match cfg.variant {
        ControllerVariant::TrueUncertainty => Some(ctx.model.true_uncertainty(t, x)),
        _ => None,
    };
    let info = UncertaintyInfo {
        d_hat,
        gamma: gamma_at(ctx.bounds, t),
        theta: ctx.bounds.theta,
        d_true: d_true.as_ref(),
    };
    let qp = assemble_qp(cfg, x, &lie, comparison, &info, ctx.model.input_box())?;
    let solution = solve_qp(&qp)?;
    let m = ctx.model.m();
    match solution.status {
        QpStatus::Optimal => {
            // Clip round-off so the applied input lies in the box.
            let u = ctx.model.clamp_to_input_box(&solution.z.rows(0, m).into_owned());
            let delta = solution.z[m];
            let (clf_row, cbf_row) = row_values(cfg.variant, &lie, comparison, &info, &u, delta)?;
            Ok(ControlDecision {
                u,
                delta,
                clf_row,
                cbf_row,
                cbf_multiplier: solution.multiplier_of(CBF_ROW),
                status: DecisionStatus::Optimal,
            })
        }
        QpStatus::Infeasible => {
            let (u, delta, status) = match (cfg.infeasibility_policy, previous) {
                (InfeasibilityPolicy::HoldPrevious, Some(prev)) => {
                    (prev.u.clone(), prev.delta, DecisionStatus::HeldPrevious)
                }
                (InfeasibilityPolicy::HoldPrevious, None) => {
                    (Vector::zeros(m), 0.0, DecisionStatus::HeldPrevious)
                }
                (InfeasibilityPolicy::Error, _) => {
                    let u = ctx.model.clamp_to_input_box(&solution.z.rows(0, m).into_owned());
                    (u, solution.z[m], DecisionStatus::Infeasible)
                }
            };
            let (clf_row, cbf_row) = row_values(cfg.variant, &lie, comparison, &info, &u, delta)?;
            Ok(ControlDecision {
                u,
                delta,
                clf_row,
                cbf_row,
                cbf_multiplier: 0.0,
                status,
            })
        }
    }
}
