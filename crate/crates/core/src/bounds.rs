//! Worst-case constants of the uncertainty and the estimation error bound.
//!
//! With Lipschitz data `(l_d, l_t, b_d)` on a compact state box `X` and input
//! box `U`:
//!
//! ```text
//! θ = l_d · max_{x∈X} ‖x‖ + b_d                  bound on ‖d(t,x)‖
//! φ = max_{x∈X,u∈U} ‖f(x) + g(x)u‖ + θ           bound on ‖ẋ‖
//! η = l_t + l_d · φ
//! γ(T) = 2√n·η·T + √n·(1 − e^{−aT})·θ           estimation error for t ≥ T
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxSet, ControlAffineModel, LipschitzData};

pub const DEFAULT_GRID_DENSITY: usize = 50;

/// `l_d · max_{x∈X} ‖x‖ + b_d`, with the maximum taken exactly over the box
/// vertices.
pub fn compute_theta(lip: &LipschitzData, state_box: &BoxSet) -> f64 {
    lip.l_d * state_box.max_norm() + lip.b_d
}

/// `max ‖f(x) + g(x)u‖ + θ` over a grid of the state box, the input-box
/// vertices and the model's time samples.
///
/// For fixed `x` the map `u ↦ f(x) + g(x)u` is affine, so its norm peaks at a
/// vertex of the input box; only the state coordinates are sampled.
pub fn compute_phi(model: &ControlAffineModel, theta: f64, grid_density: usize) -> f64 {
    let vertices: Vec<_> = model.input_box().vertices().collect();
    let mut peak = 0.0_f64;
    for &t in model.time_samples() {
        for x in model.state_box().grid(grid_density) {
            let f = model.drift(t, &x);
            let g = model.input_map(&x);
            for u in &vertices {
                peak = peak.max((&f + &g * u).norm());
            }
        }
    }
    peak + theta
}

/// Inputs to the error-bound formula that do not depend on `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaInputs {
    pub theta: f64,
    pub eta: f64,
    pub gain: f64,
    pub n: usize,
}

/// `γ(T) = 2√n·η·T + √n·(1 − e^{−aT})·θ`.
pub fn compute_gamma(inputs: &GammaInputs, period: f64) -> Result<f64> {
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::Config(format!(
            "estimation sampling time must be positive, got {period}"
        )));
    }
    if !(inputs.gain > 0.0) {
        return Err(Error::Config(format!(
            "estimator gain must be positive, got {}",
            inputs.gain
        )));
    }
    let sqrt_n = (inputs.n as f64).sqrt();
    // 1 − e^{−aT} = −expm1(−aT)
    let decay = -(-inputs.gain * period).exp_m1();
    Ok(2.0 * sqrt_n * inputs.eta * period + sqrt_n * decay * inputs.theta)
}

pub fn gamma_table(inputs: &GammaInputs, periods: &[f64]) -> Result<Vec<(f64, f64)>> {
    periods
        .iter()
        .map(|&t| compute_gamma(inputs, t).map(|g| (t, g)))
        .collect()
}

/// Optional replacements for the derived constants. The formula-derived values
/// are conservative enough to be unusable for some applications; overrides let
/// a configuration pin the constants it actually certifies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundOverrides {
    pub theta: Option<f64>,
    pub phi: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsOptions {
    pub grid_density: usize,
    pub overrides: BoundOverrides,
}

impl Default for BoundsOptions {
    fn default() -> Self {
        Self {
            grid_density: DEFAULT_GRID_DENSITY,
            overrides: BoundOverrides::default(),
        }
    }
}

/// Frozen run-independent constants for one model, gain and sampling time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyBounds {
    pub theta: f64,
    pub phi: f64,
    pub eta: f64,
    pub gain: f64,
    pub sample_time: f64,
    pub gamma: f64,
    pub n: usize,
}

impl UncertaintyBounds {
    pub fn derive(
        model: &ControlAffineModel,
        lip: &LipschitzData,
        gain: f64,
        sample_time: f64,
        options: &BoundsOptions,
    ) -> Result<Self> {
        if options.grid_density == 0 {
            return Err(Error::Config("grid density must be positive".into()));
        }
        let ov = &options.overrides;
        let theta = match ov.theta {
            Some(v) => positive("theta", v)?,
            None => compute_theta(lip, model.state_box()),
        };
        let phi = match ov.phi {
            Some(v) => positive("phi", v)?,
            None => compute_phi(model, theta, options.grid_density),
        };
        if phi < theta {
            return Err(Error::Config(format!(
                "phi ({phi}) must be at least theta ({theta})"
            )));
        }
        let eta = match ov.eta {
            Some(v) => positive("eta", v)?,
            None => lip.l_t + lip.l_d * phi,
        };
        Self::from_constants(theta, phi, eta, gain, sample_time, model.n())
    }

    pub fn from_constants(
        theta: f64,
        phi: f64,
        eta: f64,
        gain: f64,
        sample_time: f64,
        n: usize,
    ) -> Result<Self> {
        let inputs = GammaInputs {
            theta,
            eta,
            gain,
            n,
        };
        let gamma = compute_gamma(&inputs, sample_time)?;
        Ok(Self {
            theta,
            phi,
            eta,
            gain,
            sample_time,
            gamma,
            n,
        })
    }

    pub fn gamma_inputs(&self) -> GammaInputs {
        GammaInputs {
            theta: self.theta,
            eta: self.eta,
            gain: self.gain,
            n: self.n,
        }
    }

    /// Same constants with a different sampling time.
    pub fn with_sample_time(&self, sample_time: f64) -> Result<Self> {
        Self::from_constants(
            self.theta,
            self.phi,
            self.eta,
            self.gain,
            sample_time,
            self.n,
        )
    }

    /// Certified estimation-error bound at time `t`: `θ` before the first
    /// sample, `γ(T)` afterwards.
    pub fn error_bound_at(&self, t: f64) -> f64 {
        if before_first_sample(t, self.sample_time) {
            self.theta
        } else {
            self.gamma
        }
    }
}

pub(crate) fn before_first_sample(t: f64, sample_time: f64) -> bool {
    t < sample_time * (1.0 - 1e-9)
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!(
            "{name} override must be finite and nonnegative, got {v}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Matrix, Vector};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn scalar_model(drift: fn(f64) -> f64, g: f64, x_box: f64, u_box: f64) -> ControlAffineModel {
        ControlAffineModel::new(
            Arc::new(move |_, x: &Vector| Vector::from_element(1, drift(x[0]))),
            Arc::new(move |_| Matrix::from_element(1, 1, g)),
            Arc::new(|_, _| Vector::zeros(1)),
            BoxSet::symmetric(&[x_box]).unwrap(),
            BoxSet::symmetric(&[u_box]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn theta_state_independent() {
        let lip = LipschitzData::new(0.0, 0.0, 3.0).unwrap();
        let b = BoxSet::symmetric(&[7.0, 7.0]).unwrap();
        assert_eq!(compute_theta(&lip, &b), 3.0);
    }

    #[test]
    fn theta_unit_square() {
        let lip = LipschitzData::new(1.0, 0.0, 0.0).unwrap();
        let b = BoxSet::symmetric(&[1.0, 1.0]).unwrap();
        assert_relative_eq!(compute_theta(&lip, &b), 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn theta_offset_box() {
        let lip = LipschitzData::new(2.0, 0.0, 1.0).unwrap();
        let b = BoxSet::new(vec![0.0, 0.0], vec![3.0, 4.0]).unwrap();
        assert_relative_eq!(compute_theta(&lip, &b), 11.0, epsilon = 1e-14);
    }

    #[test]
    fn phi_zero_field() {
        let model = scalar_model(|_| 0.0, 0.0, 1.0, 1.0);
        assert_eq!(compute_phi(&model, 5.0, 11), 5.0);
    }

    #[test]
    fn phi_affine_scalar() {
        let model = scalar_model(|x| x, 1.0, 2.0, 1.0);
        assert_relative_eq!(compute_phi(&model, 0.0, 5), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn phi_constant_drift() {
        let model = ControlAffineModel::new(
            Arc::new(|_, _| Vector::from_vec(vec![1.0, 0.0])),
            Arc::new(|_| Matrix::zeros(2, 1)),
            Arc::new(|_, _| Vector::zeros(2)),
            BoxSet::symmetric(&[1.0, 1.0]).unwrap(),
            BoxSet::symmetric(&[1.0]).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(compute_phi(&model, 2.0, 4), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn gamma_direct_formula() {
        let inputs = GammaInputs {
            theta: 1.0,
            eta: 1.0,
            gain: 1.0,
            n: 1,
        };
        let expected = 0.2 + (1.0 - (-0.1f64).exp());
        assert_relative_eq!(compute_gamma(&inputs, 0.1).unwrap(), expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 0.295_162_581_964_040_4, epsilon = 1e-15);
    }

    #[test]
    fn gamma_vanishes_with_period() {
        let inputs = GammaInputs {
            theta: 1e2,
            eta: 1e2,
            gain: 1.0,
            n: 1,
        };
        assert!(compute_gamma(&inputs, 1e-12).unwrap() < 1e-9);
    }

    #[test]
    fn gamma_rejects_nonpositive_period() {
        let inputs = GammaInputs {
            theta: 1.0,
            eta: 1.0,
            gain: 1.0,
            n: 1,
        };
        assert!(matches!(compute_gamma(&inputs, 0.0), Err(Error::Config(_))));
        assert!(matches!(compute_gamma(&inputs, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn gamma_table_singleton_and_ratio() {
        let inputs = GammaInputs {
            theta: 4.0,
            eta: 80.0,
            gain: 1.0,
            n: 3,
        };
        let single = gamma_table(&inputs, &[1e-3]).unwrap();
        assert_eq!(single, vec![(1e-3, compute_gamma(&inputs, 1e-3).unwrap())]);

        let table = gamma_table(&inputs, &[1e-2, 1e-3, 1e-4, 1e-5]).unwrap();
        for w in table.windows(2) {
            assert!(w[0].1 > w[1].1);
            let ratio = w[0].1 / w[1].1;
            assert!((9.9..=10.1).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn eta_is_exact_without_override() {
        let model = scalar_model(|x| x, 1.0, 2.0, 1.0);
        let lip = LipschitzData::new(0.5, 2.0, 1.0).unwrap();
        let b = UncertaintyBounds::derive(&model, &lip, 1.0, 1e-3, &BoundsOptions::default())
            .unwrap();
        assert_eq!(b.theta, 0.5 * 2.0 + 1.0);
        assert_eq!(b.phi, 3.0 + b.theta);
        assert_eq!(b.eta, lip.l_t + lip.l_d * b.phi);
        assert!(b.phi >= b.theta);
    }

    #[test]
    fn overrides_replace_derived_constants() {
        let model = scalar_model(|x| x, 1.0, 2.0, 1.0);
        let lip = LipschitzData::new(0.5, 2.0, 1.0).unwrap();
        let options = BoundsOptions {
            grid_density: 5,
            overrides: BoundOverrides {
                theta: Some(0.1),
                phi: Some(0.5),
                eta: Some(3.0),
            },
        };
        let b = UncertaintyBounds::derive(&model, &lip, 1.0, 1e-3, &options).unwrap();
        assert_eq!((b.theta, b.phi, b.eta), (0.1, 0.5, 3.0));
    }

    #[test]
    fn error_bound_switches_at_first_sample() {
        let b = UncertaintyBounds::from_constants(2.0, 3.0, 4.0, 1.0, 1e-3, 2).unwrap();
        assert_eq!(b.error_bound_at(0.0), 2.0);
        assert_eq!(b.error_bound_at(5e-4), 2.0);
        assert_eq!(b.error_bound_at(1e-3), b.gamma);
        assert_eq!(b.error_bound_at(1.0), b.gamma);
    }

    proptest! {
        #[test]
        fn gamma_strictly_increasing_in_each_argument(
            theta in 0.01f64..1e3, eta in 0.01f64..1e3, gain in 0.01f64..10.0,
            n in 1usize..6, period in 1e-6f64..1e-1, bump in 1.01f64..3.0,
        ) {
            let base = GammaInputs { theta, eta, gain, n };
            let g = compute_gamma(&base, period).unwrap();
            let bigger_eta = GammaInputs { eta: eta * bump, ..base };
            let bigger_theta = GammaInputs { theta: theta * bump, ..base };
            let bigger_n = GammaInputs { n: n + 1, ..base };
            prop_assert!(compute_gamma(&base, period * bump).unwrap() > g);
            prop_assert!(compute_gamma(&bigger_eta, period).unwrap() > g);
            prop_assert!(compute_gamma(&bigger_theta, period).unwrap() > g);
            prop_assert!(compute_gamma(&bigger_n, period).unwrap() > g);
        }

        #[test]
        fn tenfold_period_at_most_tenfold_gamma(
            theta in 0.0f64..1e3, eta in 0.01f64..1e3, gain in 0.01f64..10.0,
            n in 1usize..6, period in 1e-6f64..1e-1,
        ) {
            let inputs = GammaInputs { theta, eta, gain, n };
            let big = compute_gamma(&inputs, period).unwrap();
            let small = compute_gamma(&inputs, period / 10.0).unwrap();
            prop_assert!(big / small <= 10.0 * (1.0 + 1e-12));
        }
    }
}
