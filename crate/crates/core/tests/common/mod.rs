#![allow(dead_code)]

use adaptive_cbf::model::{Matrix, Vector};
use adaptive_cbf::qp::DenseQp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub qp: DenseQp,
    /// Strictly feasible point used to build `b`.
    pub interior: Vector,
}

/// `Q = MᵀM + I`, rows `A` uniform in `[-1,1]`, `b = A z₀ + s` with `s ∈ [0.05, 1]`.
pub fn random_feasible_qp(rng: &mut ChaCha8Rng, max_vars: usize, max_rows: usize) -> Instance {
    let n = rng.random_range(1..=max_vars);
    let k = rng.random_range(0..=max_rows);
    let m = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = m.transpose() * &m + Matrix::identity(n, n);
    let c = Vector::from_fn(n, |_, _| rng.random_range(-4.0..4.0));
    let a = Matrix::from_fn(k, n, |_, _| rng.random_range(-1.0..1.0));
    let interior = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let slack = Vector::from_fn(k, |_, _| rng.random_range(0.05..1.0));
    let b = &a * &interior + slack;
    Instance {
        qp: DenseQp::new(q, c, a, b).expect("well-formed instance"),
        interior,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
