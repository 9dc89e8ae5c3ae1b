//! Piecewise-constant adaptive estimation of the pointwise uncertainty value.
//!
//! The predictor
//!
//! ```text
//! x̂' = f(x) + g(x)u + d̂(t) − a·(x̂ − x),    x̂(0) = x(0)
//! ```
//!
//! runs continuously, and at every sample instant `iT` the estimate is reset to
//! `d̂ = −a/(e^{aT} − 1) · (x̂(iT) − x(iT))` and held until the next sample.

use crate::error::{check_dim, Error, Result};
use crate::model::{ControlAffineModel, Vector};

/// Relative tolerance on the sample-instant alignment.
const SCHEDULE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    x_hat: Vector,
    d_hat: Vector,
    gain: f64,
    period: f64,
    sample_index: u64,
}

/// `−a / (e^{aT} − 1)`, with the denominator from `expm1` so it stays accurate
/// for `aT` far below one.
pub fn update_gain(gain: f64, period: f64) -> f64 {
    -gain / (gain * period).exp_m1()
}

impl EstimatorState {
    pub fn new(x0: &Vector, gain: f64, period: f64) -> Result<Self> {
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(Error::Config(format!("estimator gain must be positive, got {gain}")));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::Config(format!(
                "estimator sampling time must be positive, got {period}"
            )));
        }
        Ok(Self {
            x_hat: x0.clone(),
            d_hat: Vector::zeros(x0.len()),
            gain,
            period,
            sample_index: 0,
        })
    }

    pub fn x_hat(&self) -> &Vector {
        &self.x_hat
    }

    pub fn d_hat(&self) -> &Vector {
        &self.d_hat
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Index `i` of the most recent sample instant `iT`.
    pub fn sample_index(&self) -> u64 {
        self.sample_index
    }

    pub fn next_sample_time(&self) -> f64 {
        (self.sample_index + 1) as f64 * self.period
    }

    /// Prediction error `x̂ − x`.
    pub fn prediction_error(&self, x: &Vector) -> Vector {
        &self.x_hat - x
    }

    pub(crate) fn set_x_hat(&mut self, x_hat: Vector) {
        self.x_hat = x_hat;
    }

    /// `f(x) + g(x)u + d̂ − a(x̂ − x)`, with `f` and `g` evaluated at the
    /// measured state.
    pub fn predictor_derivative(
        &self,
        model: &ControlAffineModel,
        t: f64,
        x: &Vector,
        u: &Vector,
    ) -> Result<Vector> {
        check_dim("measured state", self.x_hat.len(), x.len())?;
        Ok(Self::derivative_at(
            model,
            t,
            x,
            u,
            &self.x_hat,
            &self.d_hat,
            self.gain,
        ))
    }

    pub(crate) fn derivative_at(
        model: &ControlAffineModel,
        t: f64,
        x: &Vector,
        u: &Vector,
        x_hat: &Vector,
        d_hat: &Vector,
        gain: f64,
    ) -> Vector {
        let mut rhs = model.nominal_rhs(t, x, u) + d_hat;
        rhs.axpy(-gain, &(x_hat - x), 1.0);
        rhs
    }

    /// Applies the piecewise-constant update at the next sample instant.
    /// `t` must coincide with `next_sample_time()`.
    pub fn sample_update(&mut self, t: f64, x: &Vector) -> Result<()> {
        check_dim("measured state", self.x_hat.len(), x.len())?;
        let expected = self.next_sample_time();
        if (t - expected).abs() > SCHEDULE_TOLERANCE * self.period {
            return Err(Error::Schedule {
                requested: t,
                expected,
            });
        }
        let k = update_gain(self.gain, self.period);
        self.d_hat = (&self.x_hat - x) * k;
        self.sample_index += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoxSet, Matrix};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn null_model(n: usize) -> ControlAffineModel {
        ControlAffineModel::new(
            Arc::new(move |_, _| Vector::zeros(n)),
            Arc::new(move |_| Matrix::zeros(n, 1)),
            Arc::new(move |_, _| Vector::zeros(n)),
            BoxSet::symmetric(&vec![10.0; n]).unwrap(),
            BoxSet::symmetric(&[1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn init_copies_state_and_zeroes_estimate() {
        let x0 = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        let est = EstimatorState::new(&x0, 1.0, 1e-3).unwrap();
        assert_eq!(est.x_hat(), &x0);
        assert_eq!(est.d_hat(), &Vector::zeros(3));
        assert_eq!(est.prediction_error(&x0), Vector::zeros(3));
        assert_eq!(est.sample_index(), 0);
        assert_eq!(est.next_sample_time(), 1e-3);
    }

    #[test]
    fn init_rejects_bad_parameters() {
        let x0 = Vector::zeros(1);
        assert!(matches!(EstimatorState::new(&x0, 0.0, 1e-3), Err(Error::Config(_))));
        assert!(matches!(EstimatorState::new(&x0, 1.0, -1e-3), Err(Error::Config(_))));
    }

    #[test]
    fn first_update_not_before_one_period() {
        let x0 = Vector::zeros(1);
        let mut est = EstimatorState::new(&x0, 1.0, 1e-3).unwrap();
        assert!(matches!(est.sample_update(0.0, &x0), Err(Error::Schedule { .. })));
        assert!(matches!(est.sample_update(5e-4, &x0), Err(Error::Schedule { .. })));
        est.sample_update(1e-3, &x0).unwrap();
        assert_eq!(est.sample_index(), 1);
        assert_eq!(est.next_sample_time(), 2e-3);
    }

    #[test]
    fn predictor_derivative_equilibrium() {
        let model = null_model(2);
        let x = Vector::from_vec(vec![0.3, -0.2]);
        let est = EstimatorState::new(&x, 1.0, 1e-3).unwrap();
        let d = est.predictor_derivative(&model, 0.0, &x, &Vector::zeros(1)).unwrap();
        assert_eq!(d, Vector::zeros(2));
    }

    #[test]
    fn predictor_derivative_direct_formula() {
        let model = null_model(1);
        let mut est = EstimatorState::new(&Vector::from_element(1, 0.5), 2.0, 1e-3).unwrap();
        est.d_hat = Vector::from_element(1, 1.0);
        let d = est
            .predictor_derivative(&model, 0.0, &Vector::zeros(1), &Vector::zeros(1))
            .unwrap();
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn perfect_prediction_gives_zero_estimate() {
        let x = Vector::from_vec(vec![4.0, 5.0]);
        let mut est = EstimatorState::new(&x, 1.0, 0.1).unwrap();
        est.sample_update(0.1, &x).unwrap();
        assert_eq!(est.d_hat(), &Vector::zeros(2));
    }

    #[test]
    fn update_inverts_gain() {
        let e_minus_1 = std::f64::consts::E - 1.0;
        let x = Vector::zeros(2);
        let mut est = EstimatorState::new(&x, 1.0, 1.0).unwrap();
        est.set_x_hat(Vector::from_vec(vec![-e_minus_1, -2.0 * e_minus_1]));
        est.sample_update(1.0, &x).unwrap();
        assert_relative_eq!(est.d_hat()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(est.d_hat()[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_disturbance_closed_form() {
        // Error dynamics x̃' = −a x̃ − d̄ from x̃ = 0 give x̃(T) = −(1 − e^{−aT}) d̄ / a,
        // hence d̂ = e^{−aT} d̄.
        let (a, period, d_bar) = (1.0_f64, 1e-3_f64, -0.7);
        let x_tilde = -(1.0 - (-a * period).exp()) * d_bar / a;
        let x = Vector::zeros(1);
        let mut est = EstimatorState::new(&x, a, period).unwrap();
        est.set_x_hat(Vector::from_element(1, x_tilde));
        est.sample_update(period, &x).unwrap();
        assert_relative_eq!(est.d_hat()[0], (-a * period).exp() * d_bar, max_relative = 1e-12);
    }

    #[test]
    fn expm1_gain_stays_accurate_for_tiny_periods() {
        let k = update_gain(1.0, 1e-5);
        // −a/(e^{aT}−1) ≈ −1/T + a/2 for small aT
        assert_relative_eq!(k, -1e5 + 0.5, max_relative = 1e-10);
    }
}
