//! Control Lyapunov and barrier functions, their Lie derivatives, the robust
//! constraint terms built from an uncertainty estimate, and grid verification
//! of the worst-case (robust) CLF/CBF conditions.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{ControlAffineModel, Vector};

pub type ScalarField = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
pub type GradientField = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// A class-K (or extended class-K) comparison function.
#[derive(Clone)]
pub struct ComparisonFn(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl ComparisonFn {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    /// `s ↦ c·s`.
    pub fn linear(c: f64) -> Self {
        Self::new(move |s| c * s)
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.0)(s)
    }

    /// Checks `φ(0) = 0` and strict monotonicity on `samples` evenly spaced
    /// points of `[lo, hi]`.
    fn check(&self, name: &str, lo: f64, hi: f64, samples: usize) -> Result<()> {
        if self.eval(0.0) != 0.0 {
            return Err(Error::Config(format!("{name}(0) must be 0, got {}", self.eval(0.0))));
        }
        let mut prev = self.eval(lo);
        for k in 1..samples {
            let s = lo + (hi - lo) * k as f64 / (samples - 1) as f64;
            let v = self.eval(s);
            if !(v > prev) {
                return Err(Error::Config(format!(
                    "{name} must be strictly increasing; fails near s={s}"
                )));
            }
            prev = v;
        }
        Ok(())
    }
}

impl fmt::Debug for ComparisonFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ComparisonFn")
    }
}

const MONOTONICITY_SAMPLES: usize = 201;
const MONOTONICITY_RANGE: f64 = 1e3;

/// Control Lyapunov function `V` with gradient and class-K rate `α`.
#[derive(Clone)]
pub struct Clf {
    value: ScalarField,
    gradient: GradientField,
    alpha: ComparisonFn,
}

impl fmt::Debug for Clf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Clf").finish_non_exhaustive()
    }
}

impl Clf {
    pub fn new(value: ScalarField, gradient: GradientField, alpha: ComparisonFn) -> Result<Self> {
        alpha.check("alpha", 0.0, MONOTONICITY_RANGE, MONOTONICITY_SAMPLES)?;
        Ok(Self {
            value,
            gradient,
            alpha,
        })
    }

    pub fn value(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        (self.gradient)(x)
    }

    pub fn alpha(&self, v: f64) -> f64 {
        self.alpha.eval(v)
    }
}

/// Zeroing control barrier function `h` with gradient and extended class-K
/// rate `β`; the safe set is `{h ≥ 0}`.
#[derive(Clone)]
pub struct Cbf {
    value: ScalarField,
    gradient: GradientField,
    beta: ComparisonFn,
}

impl fmt::Debug for Cbf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cbf").finish_non_exhaustive()
    }
}

impl Cbf {
    pub fn new(value: ScalarField, gradient: GradientField, beta: ComparisonFn) -> Result<Self> {
        beta.check(
            "beta",
            -MONOTONICITY_RANGE,
            MONOTONICITY_RANGE,
            2 * MONOTONICITY_SAMPLES - 1,
        )?;
        Ok(Self {
            value,
            gradient,
            beta,
        })
    }

    pub fn value(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        (self.gradient)(x)
    }

    pub fn beta(&self, h: f64) -> f64 {
        self.beta.eval(h)
    }

    /// Relative-degree-one check: `L_g h` must not vanish at every sampled
    /// state.
    pub fn has_relative_degree_one(&self, model: &ControlAffineModel, grid_density: usize) -> bool {
        model.state_box().grid(grid_density).any(|x| {
            let lg_h = model.input_map(&x).tr_mul(&self.gradient(&x));
            lg_h.iter().any(|v| *v != 0.0)
        })
    }
}

/// Lie derivatives of `V` and `h` at one state. Row vectors are stored as
/// column vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LieData {
    pub lf_v: f64,
    pub lg_v: Vector,
    pub v_x: Vector,
    pub lf_h: f64,
    pub lg_h: Vector,
    pub h_x: Vector,
    pub v: f64,
    pub h: f64,
}

pub fn lie_data(clf: &Clf, cbf: &Cbf, model: &ControlAffineModel, t: f64, x: &Vector) -> LieData {
    let f = model.drift(t, x);
    let g = model.input_map(x);
    let v_x = clf.gradient(x);
    let h_x = cbf.gradient(x);
    LieData {
        lf_v: v_x.dot(&f),
        lg_v: g.tr_mul(&v_x),
        lf_h: h_x.dot(&f),
        lg_h: g.tr_mul(&h_x),
        v: clf.value(x),
        h: cbf.value(x),
        v_x,
        h_x,
    }
}

/// `Ψ_V = L_fV + L_gV·u + V_x·d̂ + ‖V_x‖·γ`.
pub fn psi_v(lie: &LieData, u: &Vector, d_hat: &Vector, gamma: f64) -> f64 {
    lie.lf_v + lie.lg_v.dot(u) + lie.v_x.dot(d_hat) + lie.v_x.norm() * gamma
}

/// `Ψ_h = L_fh + L_gh·u + h_x·d̂ − ‖h_x‖·γ`.
pub fn psi_h(lie: &LieData, u: &Vector, d_hat: &Vector, gamma: f64) -> f64 {
    lie.lf_h + lie.lg_h.dot(u) + lie.h_x.dot(d_hat) - lie.h_x.norm() * gamma
}

/// Result of one of the two grid checks. Margins are signed so that a
/// nonnegative margin means the condition holds at that point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub passed: bool,
    pub worst_margin: f64,
    pub witness: Vector,
    pub witness_time: f64,
    pub points_checked: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMargin<'a> {
    pub x: &'a Vector,
    pub t: f64,
    pub clf_margin: f64,
    pub cbf_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub clf: ConditionCheck,
    pub cbf: ConditionCheck,
    pub theta: f64,
    /// One entry per (time sample, grid point): `(t, x, clf_margin, cbf_margin)`.
    pub points: Vec<(f64, Vector, f64, f64)>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.clf.passed && self.cbf.passed
    }

    pub fn margins(&self) -> impl Iterator<Item = GridMargin<'_>> {
        self.points.iter().map(|(t, x, c, b)| GridMargin {
            x,
            t: *t,
            clf_margin: *c,
            cbf_margin: *b,
        })
    }
}

/// Absolute slack on the grid margins for floating-point round-off.
const VERIFY_TOLERANCE: f64 = 1e-9;

/// Grid check of the worst-case conditions
///
/// ```text
/// min_{u∈U} { L_fV + L_gV·u + ‖V_x‖θ } ≤ −α(V)
/// max_{u∈U} { L_fh + L_gh·u − ‖h_x‖θ } ≥ −β(h)
/// ```
///
/// at every grid point of the state box and every model time sample. Both
/// expressions are affine in `u`, so the extrema are taken over the input-box
/// vertices.
pub fn verify_robust_certificates(
    clf: &Clf,
    cbf: &Cbf,
    model: &ControlAffineModel,
    theta: f64,
    grid_density: usize,
) -> VerificationReport {
    let vertices: Vec<_> = model.input_box().vertices().collect();
    let mut points = Vec::new();
    for &t in model.time_samples() {
        for x in model.state_box().grid(grid_density) {
            let lie = lie_data(clf, cbf, model, t, &x);
            let clf_best = vertices
                .iter()
                .map(|u| lie.lf_v + lie.lg_v.dot(u))
                .fold(f64::INFINITY, f64::min)
                + lie.v_x.norm() * theta;
            let cbf_best = vertices
                .iter()
                .map(|u| lie.lf_h + lie.lg_h.dot(u))
                .fold(f64::NEG_INFINITY, f64::max)
                - lie.h_x.norm() * theta;
            let clf_margin = -clf.alpha(lie.v) - clf_best;
            let cbf_margin = cbf_best + cbf.beta(lie.h);
            points.push((t, x, clf_margin, cbf_margin));
        }
    }
    let summarize = |pick: fn(&(f64, Vector, f64, f64)) -> f64| {
        let (t, x, margin) = points
            .iter()
            .map(|p| (p.0, &p.1, pick(p)))
            .fold(None::<(f64, &Vector, f64)>, |acc, cur| match acc {
                Some(best) if best.2 <= cur.2 => Some(best),
                _ => Some(cur),
            })
            .expect("grid is nonempty");
        ConditionCheck {
            passed: margin >= -VERIFY_TOLERANCE,
            worst_margin: margin,
            witness: x.clone(),
            witness_time: t,
            points_checked: points.len(),
        }
    };
    let clf_check = summarize(|p| p.2);
    let cbf_check = summarize(|p| p.3);
    VerificationReport {
        clf: clf_check,
        cbf: cbf_check,
        theta,
        points,
    }
}
