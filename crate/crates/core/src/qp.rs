//! Dense strictly convex QP
//!
//! ```text
//! minimize ½ zᵀQz + cᵀz   subject to  Az ≤ b
//! ```
//!
//! solved exactly by a primal active-set method. A feasible start comes from an
//! elastic phase-1 problem that relaxes every row by one shared nonnegative
//! slack `s` penalised by `M·s + ½ρs²`; for `M` above the multiplier sum the
//! elastic optimum has `s = 0`, and a positive optimal `s` after the penalty
//! ladder is exhausted means the constraints are inconsistent.

use nalgebra::linalg::Cholesky;

use crate::error::{check_dim, Error, Result};
use crate::model::{Matrix, Vector};

/// Primal feasibility tolerance (absolute).
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Lowest accepted multiplier.
pub const MULTIPLIER_TOL: f64 = -1e-10;
/// Stationarity tolerance, relative to `1 + ‖c‖`.
pub const STATIONARITY_TOL: f64 = 1e-8;
/// Complementary-slackness tolerance.
pub const COMPLEMENTARITY_TOL: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-12;
const ORACLE_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp {
    q: Matrix,
    c: Vector,
    a: Matrix,
    b: Vector,
}

impl DenseQp {
    pub fn new(q: Matrix, c: Vector, a: Matrix, b: Vector) -> Result<Self> {
        let n = q.nrows();
        check_dim("QP Hessian columns", n, q.ncols())?;
        check_dim("QP linear cost", n, c.len())?;
        check_dim("QP constraint rows", a.nrows(), b.len())?;
        if a.nrows() > 0 {
            check_dim("QP constraint columns", n, a.ncols())?;
        }
        let finite = |m: &Matrix| m.iter().all(|v| v.is_finite());
        if !finite(&q) || !finite(&a) || !c.iter().all(|v| v.is_finite()) || !b.iter().all(|v| v.is_finite()) {
            return Err(Error::Contract("QP data must be finite".into()));
        }
        let scale = 1.0 + q.amax();
        for i in 0..n {
            for j in 0..i {
                if (q[(i, j)] - q[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::Contract(format!(
                        "QP Hessian is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let a = if a.nrows() == 0 { Matrix::zeros(0, n) } else { a };
        Ok(Self { q, c, a, b })
    }

    pub fn unconstrained(q: Matrix, c: Vector) -> Result<Self> {
        let n = q.nrows();
        Self::new(q, c, Matrix::zeros(0, n), Vector::zeros(0))
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn c(&self) -> &Vector {
        &self.c
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn num_vars(&self) -> usize {
        self.q.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.q * z)) + self.c.dot(z)
    }

    /// `max_i (A_i z − b_i)`, or `-∞` without constraints.
    pub fn max_violation(&self, z: &Vector) -> f64 {
        (&self.a * z - &self.b)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same problem with constraint row `i` multiplied by `s`.
    pub fn scale_row(&self, i: usize, s: f64) -> Self {
        let mut out = self.clone();
        out.a.row_mut(i).scale_mut(s);
        out.b[i] *= s;
        out
    }

    fn check_positive_definite(&self) -> Result<()> {
        if Cholesky::new(self.q.clone()).is_none() {
            return Err(Error::Contract("QP Hessian is not positive definite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vector,
    pub objective: f64,
    /// Indices of the constraints in the final working set, ascending.
    pub active_set: Vec<usize>,
    /// Multiplier of each entry of `active_set`.
    pub multipliers: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

impl QpSolution {
    /// Multipliers scattered to one entry per constraint row.
    pub fn multiplier_vector(&self, num_constraints: usize) -> Vector {
        let mut lambda = Vector::zeros(num_constraints);
        for (&i, &l) in self.active_set.iter().zip(&self.multipliers) {
            lambda[i] = l;
        }
        lambda
    }

    pub fn multiplier_of(&self, row: usize) -> f64 {
        self.active_set
            .iter()
            .position(|&i| i == row)
            .map_or(0.0, |k| self.multipliers[k])
    }

    fn infeasible(qp: &DenseQp, z: Vector, iterations: usize) -> Self {
        Self {
            objective: qp.objective(&z),
            z,
            active_set: Vec::new(),
            multipliers: Vec::new(),
            status: QpStatus::Infeasible,
            iterations,
        }
    }
}

/// Solves the QP. Inconsistent constraints yield `QpStatus::Infeasible`; a
/// Hessian that is not positive definite is a contract violation.
pub fn solve_qp(qp: &DenseQp) -> Result<QpSolution> {
    qp.check_positive_definite()?;
    let n = qp.num_vars();
    let origin = Vector::zeros(n);
    let (start, phase1_iters) = if qp.max_violation(&origin) <= 0.0 {
        (origin, 0)
    } else {
        match elastic_start(qp)? {
            (Some(z), iters) => (z, iters),
            (None, iters) => {
                let z = elastic_point(qp)?;
                return Ok(QpSolution::infeasible(qp, z, iters));
            }
        }
    };
    let run = primal_active_set(&qp.q, &qp.c, &qp.a, &qp.b, start, Vec::new())?;
    let objective = qp.objective(&run.z);
    Ok(QpSolution {
        objective,
        z: run.z,
        active_set: run.working,
        multipliers: run.multipliers,
        status: QpStatus::Optimal,
        iterations: phase1_iters + run.iterations,
    })
}

/// Penalty ladder for the elastic slack, relative to the problem scale.
const PENALTY_LADDER: [f64; 7] = [1.0, 1e2, 1e4, 1e6, 1e8, 1e10, 1e12];

fn elastic_problem(qp: &DenseQp, penalty: f64) -> (Matrix, Vector, Matrix, Vector, Vector) {
    let n = qp.num_vars();
    let k = qp.num_constraints();
    let scale = problem_scale(qp);
    let mut q = Matrix::zeros(n + 1, n + 1);
    q.view_mut((0, 0), (n, n)).copy_from(&qp.q);
    q[(n, n)] = scale;
    let mut c = Vector::zeros(n + 1);
    c.rows_mut(0, n).copy_from(&qp.c);
    c[n] = penalty * scale;
    let mut a = Matrix::zeros(k + 1, n + 1);
    a.view_mut((0, 0), (k, n)).copy_from(&qp.a);
    for i in 0..k {
        a[(i, n)] = -1.0;
    }
    a[(k, n)] = -1.0;
    let mut b = Vector::zeros(k + 1);
    b.rows_mut(0, k).copy_from(&qp.b);
    let mut start = Vector::zeros(n + 1);
    start[n] = qp.b.iter().map(|v| -v).fold(0.0, f64::max);
    (q, c, a, b, start)
}

fn problem_scale(qp: &DenseQp) -> f64 {
    1.0 + qp.q.amax() + qp.c.amax()
}

/// Phase 1: a point satisfying `Az ≤ b` within tolerance, or `None` if the
/// elastic slack stays positive at every penalty level.
fn elastic_start(qp: &DenseQp) -> Result<(Option<Vector>, usize)> {
    let n = qp.num_vars();
    let mut iterations = 0;
    for penalty in PENALTY_LADDER {
        let (q, c, a, b, start) = elastic_problem(qp, penalty);
        let run = primal_active_set(&q, &c, &a, &b, start, Vec::new())?;
        iterations += run.iterations;
        let z = run.z.rows(0, n).into_owned();
        if run.z[n] <= FEASIBILITY_TOL && qp.max_violation(&z) <= FEASIBILITY_TOL {
            return Ok((Some(z), iterations));
        }
    }
    Ok((None, iterations))
}

/// Least-violation point reported alongside an infeasible status.
fn elastic_point(qp: &DenseQp) -> Result<Vector> {
    let n = qp.num_vars();
    let (q, c, a, b, start) = elastic_problem(qp, *PENALTY_LADDER.last().unwrap());
    let run = primal_active_set(&q, &c, &a, &b, start, Vec::new())?;
    Ok(run.z.rows(0, n).into_owned())
}

struct ActiveSetRun {
    z: Vector,
    working: Vec<usize>,
    multipliers: Vec<f64>,
    iterations: usize,
}

/// Solves `[Q A_Wᵀ; A_W 0] [p; λ] = [rhs_top; rhs_bottom]`.
fn solve_kkt(
    q: &Matrix,
    a: &Matrix,
    rows: &[usize],
    rhs_top: &Vector,
    rhs_bottom: &Vector,
) -> Option<(Vector, Vector)> {
    let n = q.nrows();
    let w = rows.len();
    let mut kkt = Matrix::zeros(n + w, n + w);
    kkt.view_mut((0, 0), (n, n)).copy_from(q);
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = a[(i, j)];
            kkt[(j, n + r)] = a[(i, j)];
        }
    }
    let mut rhs = Vector::zeros(n + w);
    rhs.rows_mut(0, n).copy_from(rhs_top);
    rhs.rows_mut(n, w).copy_from(rhs_bottom);
    let lu = kkt.full_piv_lu();
    if !lu.is_invertible() {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    Some((sol.rows(0, n).into_owned(), sol.rows(n, w).into_owned()))
}

/// Primal active-set iterations from a feasible `z`.
///
/// Pivoting picks the most negative multiplier to drop and the first blocking
/// row in the ratio test; ties go to the smallest index.
fn primal_active_set(
    q: &Matrix,
    c: &Vector,
    a: &Matrix,
    b: &Vector,
    mut z: Vector,
    mut working: Vec<usize>,
) -> Result<ActiveSetRun> {
    let n = q.nrows();
    let k = a.nrows();
    let max_iterations = 50 * (n + k) + 100;
    let min_diag = q.diagonal().min().max(f64::MIN_POSITIVE);
    for iteration in 1..=max_iterations {
        let grad = q * &z + c;
        let (p, lambda) = solve_kkt(q, a, &working, &(-&grad), &Vector::zeros(working.len()))
            .ok_or_else(|| Error::Contract("singular KKT system in active-set iteration".into()))?;

        // At a vertex the step is zero up to roundoff in the KKT solve.
        let at_vertex = working.len() == n;
        let step_tol = 1e-13 * (1.0 + z.amax()) + 4.0 * f64::EPSILON * grad.amax() / min_diag;
        if at_vertex || p.amax() <= step_tol {
            // KKT with p = 0 gives Qz + c + A_Wᵀλ = 0.
            let drop_tol = 1e-12 * (1.0 + lambda.amax());
            let mut drop: Option<(usize, f64)> = None;
            for (pos, &l) in lambda.iter().enumerate() {
                if l < -drop_tol && drop.is_none_or(|(_, best)| l < best) {
                    drop = Some((pos, l));
                }
            }
            match drop {
                None => {
                    return Ok(ActiveSetRun {
                        z,
                        working,
                        multipliers: lambda.iter().copied().collect(),
                        iterations: iteration,
                    });
                }
                Some((pos, _)) => {
                    working.remove(pos);
                }
            }
            continue;
        }

        let p_norm = p.norm();
        let mut step = 1.0;
        let mut blocking = None;
        for i in (0..k).filter(|i| !working.contains(i)) {
            let row = a.row(i);
            let ap = row.dot(&p.transpose());
            if ap > 1e-14 * row.norm() * p_norm {
                let slack = b[i] - row.dot(&z.transpose());
                let ratio = (slack / ap).max(0.0);
                if ratio < step {
                    step = ratio;
                    blocking = Some(i);
                }
            }
        }
        z.axpy(step, &p, 1.0);
        if let Some(i) = blocking {
            let pos = working.partition_point(|&w| w < i);
            working.insert(pos, i);
        }
    }
    Err(Error::Contract(format!(
        "active-set method did not terminate within {max_iterations} iterations"
    )))
}

/// Reference solver: enumerates every subset of constraints as the active
/// set, solves the equality-constrained QP for each, and keeps the feasible
/// candidate with nonnegative multipliers and the lowest objective.
pub fn brute_force_oracle(qp: &DenseQp) -> Result<QpSolution> {
    let k = qp.num_constraints();
    if k > ORACLE_LIMIT {
        return Err(Error::OracleScope {
            constraints: k,
            limit: ORACLE_LIMIT,
        });
    }
    qp.check_positive_definite()?;
    let mut best: Option<(f64, Vector, Vec<usize>, Vec<f64>)> = None;
    let mut evaluated = 0;
    for mask in 0u32..(1u32 << k) {
        let rows: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        if !rows_independent(&qp.a, &rows) {
            continue;
        }
        let rhs_bottom = Vector::from_iterator(rows.len(), rows.iter().map(|&i| qp.b[i]));
        // Qz + A_Sᵀλ = −c, A_S z = b_S
        let Some((z, lambda)) = solve_kkt(&qp.q, &qp.a, &rows, &(-&qp.c), &rhs_bottom) else {
            continue;
        };
        evaluated += 1;
        if qp.max_violation(&z) > FEASIBILITY_TOL || lambda.iter().any(|l| *l < MULTIPLIER_TOL) {
            continue;
        }
        let obj = qp.objective(&z);
        if best.as_ref().is_none_or(|(b, ..)| obj < *b) {
            best = Some((obj, z, rows, lambda.iter().copied().collect()));
        }
    }
    Ok(match best {
        Some((objective, z, active_set, multipliers)) => QpSolution {
            z,
            objective,
            active_set,
            multipliers,
            status: QpStatus::Optimal,
            iterations: evaluated,
        },
        None => QpSolution::infeasible(qp, Vector::zeros(qp.num_vars()), evaluated),
    })
}

fn rows_independent(a: &Matrix, rows: &[usize]) -> bool {
    if rows.is_empty() {
        return true;
    }
    if rows.len() > a.ncols() {
        return false;
    }
    let sub = Matrix::from_fn(rows.len(), a.ncols(), |r, j| a[(rows[r], j)]);
    let svd = sub.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    smax > 0.0 && smin > 1e-10 * smax
}

/// Residuals of the first-order optimality conditions at a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub min_multiplier: f64,
}

impl KktResiduals {
    pub fn satisfied(&self, qp: &DenseQp) -> bool {
        self.stationarity <= STATIONARITY_TOL * (1.0 + qp.c.norm())
            && self.primal <= FEASIBILITY_TOL
            && self.complementarity <= COMPLEMENTARITY_TOL
            && self.min_multiplier >= MULTIPLIER_TOL
    }
}

pub fn kkt_residuals(qp: &DenseQp, sol: &QpSolution) -> KktResiduals {
    let k = qp.num_constraints();
    let lambda = sol.multiplier_vector(k);
    let stationarity = (&qp.q * &sol.z + &qp.c + qp.a.tr_mul(&lambda)).norm();
    let residual = &qp.a * &sol.z - &qp.b;
    let primal = residual.iter().copied().fold(0.0, f64::max);
    let complementarity = lambda
        .iter()
        .zip(residual.iter())
        .map(|(l, r)| (l * r).abs())
        .fold(0.0, f64::max);
    let min_multiplier = lambda.iter().copied().fold(0.0, f64::min);
    KktResiduals {
        stationarity,
        primal,
        complementarity,
        min_multiplier,
    }
}
