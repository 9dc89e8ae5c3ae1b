//! Control-affine uncertain dynamics `ẋ = f(x) + g(x)u + d(t, x)` and their
//! admissible sets.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Drift `f`. The time argument only carries known exogenous signals (for
/// example a lead-vehicle acceleration profile); the simulator evaluates it at
/// the start of each integration step, so such signals must be piecewise
/// constant with breakpoints on the integration grid.
pub type DriftFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;
/// Input matrix `g(x)`, `n × m`.
pub type InputMapFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;
/// True uncertainty `d(t, x)`.
pub type UncertaintyFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;

/// Axis-aligned box `{x : lower ≤ x ≤ upper}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::Config("box must have at least one coordinate".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("box coordinate {i} has a non-finite bound")));
            }
            if lo > hi {
                return Err(Error::Config(format!(
                    "box coordinate {i} is empty: lower {lo} > upper {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-r, r]` per coordinate.
    pub fn symmetric(radius: &[f64]) -> Result<Self> {
        Self::new(radius.iter().map(|r| -r).collect(), radius.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, x: &Vector) -> Vector {
        Vector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi)),
        )
    }

    /// All `2^n` vertices, in binary counting order (bit `i` set selects the
    /// upper bound of coordinate `i`).
    pub fn vertices(&self) -> impl Iterator<Item = Vector> + '_ {
        let n = self.dim();
        (0..1usize << n).map(move |mask| {
            Vector::from_iterator(
                n,
                (0..n).map(|i| {
                    if mask & (1 << i) != 0 {
                        self.upper[i]
                    } else {
                        self.lower[i]
                    }
                }),
            )
        })
    }

    /// Tensor grid with `density` evenly spaced points per axis, endpoints
    /// included. A density of one yields the box centre.
    pub fn grid(&self, density: usize) -> impl Iterator<Item = Vector> + '_ {
        let n = self.dim();
        let density = density.max(1);
        let total = density.pow(n as u32);
        (0..total).map(move |mut idx| {
            let mut x = Vector::zeros(n);
            for i in 0..n {
                let k = idx % density;
                idx /= density;
                x[i] = if density == 1 {
                    0.5 * (self.lower[i] + self.upper[i])
                } else {
                    let s = k as f64 / (density - 1) as f64;
                    self.lower[i] + s * (self.upper[i] - self.lower[i])
                };
            }
            x
        })
    }

    /// `max_{x ∈ box} ‖x‖₂`, exact: the norm is convex so the maximum sits at a
    /// vertex, and per coordinate the farthest endpoint from zero is chosen.
    pub fn max_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo.abs().max(hi.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Lipschitz data of the uncertainty:
/// `‖d(t,x) − d(τ,y)‖ ≤ l_t|t − τ| + l_d‖x − y‖` and `‖d(t,0)‖ ≤ b_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzData {
    pub l_d: f64,
    pub l_t: f64,
    pub b_d: f64,
}

impl LipschitzData {
    pub fn new(l_d: f64, l_t: f64, b_d: f64) -> Result<Self> {
        for (name, v) in [("l_d", l_d), ("l_t", l_t), ("b_d", b_d)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "Lipschitz constant {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(Self { l_d, l_t, b_d })
    }

    /// Multiplies every constant by a conservatism factor `xi ≥ 1`.
    pub fn scaled(&self, xi: f64) -> Result<Self> {
        if !(xi >= 1.0) || !xi.is_finite() {
            return Err(Error::Config(format!(
                "conservatism factor must be finite and at least 1, got {xi}"
            )));
        }
        Self::new(self.l_d * xi, self.l_t * xi, self.b_d * xi)
    }

    /// Samples the state-Lipschitz and origin bounds against the model's true
    /// uncertainty on a grid of the state box and the model's time samples.
    pub fn check_consistency(
        &self,
        model: &ControlAffineModel,
        grid_density: usize,
    ) -> LipschitzCheck {
        let origin = Vector::zeros(model.n());
        let mut worst_state_excess = f64::NEG_INFINITY;
        let mut worst_origin_excess = f64::NEG_INFINITY;
        for &t in model.time_samples() {
            let d0 = model.true_uncertainty(t, &origin);
            worst_origin_excess = worst_origin_excess.max(d0.norm() - self.b_d);
            for x in model.state_box().grid(grid_density) {
                let dx = model.true_uncertainty(t, &x);
                let excess = (dx - &d0).norm() - self.l_d * x.norm();
                worst_state_excess = worst_state_excess.max(excess);
            }
        }
        LipschitzCheck {
            worst_state_excess,
            worst_origin_excess,
        }
    }
}

/// Worst sampled excess over the claimed bounds; nonpositive values mean the
/// Lipschitz data is consistent with the sampled uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCheck {
    pub worst_state_excess: f64,
    pub worst_origin_excess: f64,
}

impl LipschitzCheck {
    pub fn consistent(&self) -> bool {
        self.worst_state_excess <= 1e-12 && self.worst_origin_excess <= 1e-12
    }
}

/// The uncertain control-affine system and its admissible state and input
/// boxes. Immutable after construction.
#[derive(Clone)]
pub struct ControlAffineModel {
    n: usize,
    m: usize,
    drift: DriftFn,
    input_map: InputMapFn,
    uncertainty: UncertaintyFn,
    state_box: BoxSet,
    input_box: BoxSet,
    time_samples: Vec<f64>,
}

impl fmt::Debug for ControlAffineModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("state_box", &self.state_box)
            .field("input_box", &self.input_box)
            .field("time_samples", &self.time_samples)
            .finish_non_exhaustive()
    }
}

impl ControlAffineModel {
    pub fn new(
        drift: DriftFn,
        input_map: InputMapFn,
        uncertainty: UncertaintyFn,
        state_box: BoxSet,
        input_box: BoxSet,
    ) -> Result<Self> {
        let model = Self {
            n: state_box.dim(),
            m: input_box.dim(),
            drift,
            input_map,
            uncertainty,
            state_box,
            input_box,
            time_samples: vec![0.0],
        };
        model.validate()?;
        Ok(model)
    }

    /// Representative time instants used wherever a maximum "for all t" is
    /// sampled (bound computation, certificate verification). Defaults to `[0]`.
    pub fn with_time_samples(mut self, times: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Config(
                "time samples must be a nonempty list of finite nonnegative times".into(),
            ));
        }
        self.time_samples = times;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let centre = self.state_box.grid(1).next().expect("nonempty box");
        for x in self.state_box.vertices().take(64).chain(std::iter::once(centre)) {
            for &t in &self.time_samples {
                let f = (self.drift)(t, &x);
                check_dim("drift output", self.n, f.len())?;
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!("drift is not finite at x={:?}", x.as_slice())));
                }
            }
            let g = (self.input_map)(&x);
            if g.nrows() != self.n || g.ncols() != self.m {
                return Err(Error::DimensionMismatch {
                    context: "input map shape",
                    expected: self.n * self.m,
                    actual: g.nrows() * g.ncols(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "input map is not finite at x={:?}",
                    x.as_slice()
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn state_box(&self) -> &BoxSet {
        &self.state_box
    }

    pub fn input_box(&self) -> &BoxSet {
        &self.input_box
    }

    pub fn time_samples(&self) -> &[f64] {
        &self.time_samples
    }

    pub fn drift(&self, t: f64, x: &Vector) -> Vector {
        (self.drift)(t, x)
    }

    pub fn input_map(&self, x: &Vector) -> Matrix {
        (self.input_map)(x)
    }

    /// Ground-truth uncertainty. Only the simulator and the ideal
    /// true-uncertainty controller read it.
    pub(crate) fn true_uncertainty(&self, t: f64, x: &Vector) -> Vector {
        (self.uncertainty)(t, x)
    }

    /// `f(x) + g(x)u` at time `t`.
    pub fn nominal_rhs(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        self.drift(t, x) + self.input_map(x) * u
    }

    /// `f(x) + g(x)u + d`.
    pub fn eval_rhs(&self, t: f64, x: &Vector, u: &Vector, d: &Vector) -> Result<Vector> {
        check_dim("state", self.n, x.len())?;
        check_dim("input", self.m, u.len())?;
        check_dim("uncertainty", self.n, d.len())?;
        Ok(self.nominal_rhs(t, x, u) + d)
    }

    /// Componentwise clamp of `u` into the input box.
    pub fn clamp_to_input_box(&self, u: &Vector) -> Vector {
        assert_eq!(u.len(), self.m, "input dimension mismatch");
        self.input_box.clamp(u)
    }
}
