//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use adaptive_cbf::acc::{acc_controller, acc_sim_config, build_acc_system, default_scenario, AccParams};
use adaptive_cbf::bounds::{UncertaintyBounds, DEFAULT_GRID_DENSITY};
use adaptive_cbf::certificates::{verify_robust_certificates, Cbf, Clf, ComparisonFn};
use adaptive_cbf::controllers::{ControllerConfig, ControllerVariant, InfeasibilityPolicy};
use adaptive_cbf::invariants::InvariantKind;
use adaptive_cbf::model::{BoxSet, ControlAffineModel, Matrix, Vector};
use adaptive_cbf::qp::{brute_force_oracle, kkt_residuals, solve_qp, DenseQp, QpStatus};
use adaptive_cbf::simulator::{compare_variants, run_simulation, ClosedLoopSystem, SimConfig, SimulationTrace};
use adaptive_cbf_cli::commands::{self, Options};
use adaptive_cbf_cli::config::Config;
use adaptive_cbf_cli::output::summarize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HORIZON: f64 = 40.0;
const SUBSTEPS: usize = 10;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

struct Scenario {
    system: ClosedLoopSystem,
    traces: BTreeMap<ControllerVariant, SimulationTrace>,
}

fn run_all(params: &AccParams) -> Scenario {
    let system = build_acc_system(params, &default_scenario(), DEFAULT_GRID_DENSITY).unwrap();
    let controller =
        acc_controller(params, ControllerVariant::AdaptiveRobust, InfeasibilityPolicy::Error).unwrap();
    let sim = acc_sim_config(params, HORIZON, SUBSTEPS);
    let traces = compare_variants(
        &system,
        &controller,
        &sim,
        &params.initial_state(),
        &ControllerVariant::ALL,
    )
    .unwrap();
    Scenario { system, traces }
}

fn default_runs() -> &'static Scenario {
    static CELL: OnceLock<Scenario> = OnceLock::new();
    CELL.get_or_init(|| run_all(&AccParams::default()))
}

fn stress_runs() -> &'static Scenario {
    static CELL: OnceLock<Scenario> = OnceLock::new();
    CELL.get_or_init(|| run_all(&AccParams::stress()))
}

fn trace(s: &Scenario, v: ControllerVariant) -> &SimulationTrace {
    &s.traces[&v]
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn lemma3_bound() -> Verdict {
    let params = AccParams::default();
    let system = build_acc_system(&params, &default_scenario(), DEFAULT_GRID_DENSITY).unwrap();
    let controller =
        acc_controller(&params, ControllerVariant::AdaptiveRobust, InfeasibilityPolicy::Error).unwrap();
    let sim = acc_sim_config(&params, HORIZON, SUBSTEPS);
    let (trace, elapsed) = timed(|| run_simulation(&system, &controller, &sim, &params.initial_state()).unwrap());
    let b = &system.bounds;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for r in &trace.rows {
        let bound = if r.t < b.sample_time * (1.0 - 1e-9) { b.theta } else { b.gamma };
        let excess = r.est_err_norm - bound;
        worst = worst.max(excess);
        if excess > 1e-6 {
            violations += 1;
        }
    }
    let invariant = trace
        .invariants
        .as_ref()
        .and_then(|r| r.get(InvariantKind::EstimationError))
        .is_some_and(|c| c.passed());
    verdict(
        trace.completed() && violations == 0 && invariant && elapsed < Duration::from_secs(10),
        format!(
            "{} rows, {violations} violations, worst err - bound = {worst:.4e}, gamma = {:.7}, runtime {:.2?}",
            trace.rows.len(),
            b.gamma,
            elapsed
        ),
    )
}

fn constant_disturbance_system(d_bar: Vector) -> ClosedLoopSystem {
    let n = d_bar.len();
    let model = ControlAffineModel::new(
        Arc::new(move |_, _: &Vector| Vector::zeros(n)),
        Arc::new(move |_| Matrix::zeros(n, 1)),
        Arc::new(move |_, _| d_bar.clone()),
        BoxSet::symmetric(&vec![10.0; n]).unwrap(),
        BoxSet::symmetric(&[1.0]).unwrap(),
    )
    .unwrap();
    let clf = Clf::new(
        Arc::new(|x: &Vector| x.norm_squared()),
        Arc::new(|x: &Vector| x * 2.0),
        ComparisonFn::linear(1.0),
    )
    .unwrap();
    let cbf = Cbf::new(
        Arc::new(|x: &Vector| 100.0 - x.norm_squared()),
        Arc::new(|x: &Vector| x * -2.0),
        ComparisonFn::linear(1.0),
    )
    .unwrap();
    let bounds = UncertaintyBounds::from_constants(1.0, 1.0, 1.0, 1.0, 1e-3, n).unwrap();
    ClosedLoopSystem { model, clf, cbf, bounds }
}

fn estimator_speed() -> Verdict {
    let s = default_runs();
    let t = trace(s, ControllerVariant::AdaptiveRobust);
    let period = s.system.bounds.sample_time;
    let max_d = t.rows.iter().map(|r| r.d_true.norm()).fold(0.0, f64::max);
    let max_err = t
        .rows
        .iter()
        .filter(|r| r.t >= period * (1.0 - 1e-9))
        .map(|r| r.est_err_norm)
        .fold(0.0, f64::max);

    let d_bar = Vector::from_vec(vec![0.3, -0.5, 0.2]);
    let system = constant_disturbance_system(d_bar.clone());
    let controller = ControllerConfig::new(
        ControllerConfig::constant_cost(Matrix::identity(1, 1)),
        1.0,
        ControllerVariant::Nominal,
        1e-2,
        InfeasibilityPolicy::Error,
    )
    .unwrap();
    let sim = SimConfig {
        t_end: 0.05,
        estimator_period: 1e-3,
        control_period: 1e-2,
        substeps: 100,
        seed: 0,
        assertions_on: false,
    };
    let oracle_trace = run_simulation(&system, &controller, &sim, &Vector::zeros(3)).unwrap();
    let expected = &d_bar * (-1e-3_f64).exp();
    let worst_rel = oracle_trace
        .rows
        .iter()
        .skip(1)
        .map(|r| (&r.d_hat - &expected).norm() / expected.norm())
        .fold(0.0, f64::max);
    verdict(
        max_err <= 0.05 * max_d && worst_rel <= 1e-6,
        format!(
            "max err(t>=T) = {max_err:.4} vs 0.05*max|d| = {:.4}; constant-d oracle rel err = {worst_rel:.2e}",
            0.05 * max_d
        ),
    )
}

fn safety() -> Verdict {
    let d = default_runs();
    let ar = trace(d, ControllerVariant::AdaptiveRobust).min_h();
    let nominal = trace(d, ControllerVariant::Nominal).min_h();
    let mut detail = format!("default: aR-QP min h = {ar:.4}, nominal min h = {nominal:.4}");
    let exposed = if nominal < 0.0 {
        true
    } else {
        let s = stress_runs();
        let ar_s = trace(s, ControllerVariant::AdaptiveRobust).min_h();
        let nom_s = trace(s, ControllerVariant::Nominal).min_h();
        detail.push_str(&format!("; stress: aR-QP min h = {ar_s:.4}, nominal min h = {nom_s:.4}"));
        nom_s < 0.0 && ar_s >= 0.0
    };
    verdict(ar >= 0.0 && trace(d, ControllerVariant::AdaptiveRobust).completed() && exposed, detail)
}

fn near_recovery() -> Verdict {
    let d = default_runs();
    let ar = trace(d, ControllerVariant::AdaptiveRobust);
    let ideal = trace(d, ControllerVariant::TrueUncertainty);
    let sup = ar
        .rows
        .iter()
        .zip(&ideal.rows)
        .map(|(a, b)| (a.x[1] - b.x[1]).abs())
        .fold(0.0, f64::max);
    let same_length = ar.rows.len() == ideal.rows.len();
    verdict(
        same_length && sup <= 0.5 && ar.min_h() >= ideal.min_h() - 0.5,
        format!(
            "sup|v_f diff| = {sup:.4}; min h aR-QP = {:.4}, ideal = {:.4}",
            ar.min_h(),
            ideal.min_h()
        ),
    )
}

fn conservatism() -> Verdict {
    let d = default_runs();
    let v_d = AccParams::default().v_d;
    let ar = summarize(trace(d, ControllerVariant::AdaptiveRobust), &d.system.bounds, v_d);
    let rw = summarize(trace(d, ControllerVariant::RobustWorstCase), &d.system.bounds, v_d);
    verdict(
        rw.min_h > ar.min_h && rw.integrated_sq_tracking_error > ar.integrated_sq_tracking_error,
        format!(
            "min h worst-case = {:.4} vs aR-QP = {:.4}; int (v_f-v_d)^2 worst-case = {:.2} vs aR-QP = {:.2}",
            rw.min_h, ar.min_h, rw.integrated_sq_tracking_error, ar.integrated_sq_tracking_error
        ),
    )
}

fn gamma_scaling() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let outcome = commands::gamma_table_cmd(&Options::new(Config::default(), dir.path())).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("gamma.csv")).unwrap();
    let table: Vec<(f64, f64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .collect();
    let periods: Vec<f64> = table.iter().map(|p| p.0).collect();
    let ratios: Vec<f64> = table.windows(2).map(|w| w[0].1 / w[1].1).collect();
    // 2√n·η·T + √n·(1 − e^{−aT})·θ with n = 3, a = 1, θ = 4.8, η = 83.63
    let formula = |t: f64| 2.0 * 3f64.sqrt() * 83.63 * t + 3f64.sqrt() * (1.0 - (-t).exp()) * 4.8;
    let formula_err = table
        .iter()
        .map(|&(t, g)| (g - formula(t)).abs() / g)
        .fold(0.0, f64::max);
    let g1 = table.iter().find(|p| (p.0 - 1e-3).abs() < 1e-12).map(|p| p.1);
    verdict(
        !outcome.failed
            && periods == [1e-2, 1e-3, 1e-4, 1e-5]
            && ratios.iter().all(|r| (9.9..=10.1).contains(r))
            && g1.is_some_and(|g| (g - 0.298).abs() <= 1e-3)
            && formula_err <= 1e-12,
        format!(
            "ratios = {:?}, gamma(1 ms) = {:.7}, formula rel err = {formula_err:.1e}",
            ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>(),
            g1.unwrap_or(f64::NAN)
        ),
    )
}

fn random_feasible_qp(rng: &mut ChaCha8Rng) -> DenseQp {
    let n = rng.random_range(1..=4);
    let k = rng.random_range(0..=6);
    let m = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = m.transpose() * &m + Matrix::identity(n, n);
    let c = Vector::from_fn(n, |_, _| rng.random_range(-4.0..4.0));
    let a = Matrix::from_fn(k, n, |_, _| rng.random_range(-1.0..1.0));
    let interior = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let b = &a * &interior + Vector::from_fn(k, |_, _| rng.random_range(0.05..1.0));
    DenseQp::new(q, c, a, b).unwrap()
}

fn qp_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let instances: Vec<DenseQp> = (0..500).map(|_| random_feasible_qp(&mut rng)).collect();
    let (solutions, elapsed) = timed(|| instances.iter().map(|qp| solve_qp(qp).unwrap()).collect::<Vec<_>>());
    let mut worst_z: f64 = 0.0;
    let mut worst_obj: f64 = 0.0;
    let mut kkt_failures = 0;
    let mut status_mismatch = 0;
    for (qp, s) in instances.iter().zip(&solutions) {
        let o = brute_force_oracle(qp).unwrap();
        if s.status != QpStatus::Optimal || o.status != QpStatus::Optimal {
            status_mismatch += 1;
            continue;
        }
        worst_z = worst_z.max((&s.z - &o.z).norm());
        worst_obj = worst_obj.max((s.objective - o.objective).abs());
        if !kkt_residuals(qp, s).satisfied(qp) {
            kkt_failures += 1;
        }
    }
    verdict(
        worst_z <= 1e-7
            && worst_obj <= 1e-9
            && kkt_failures == 0
            && status_mismatch == 0
            && elapsed < Duration::from_secs(5),
        format!(
            "max |dz| = {worst_z:.2e}, max |dobj| = {worst_obj:.2e}, KKT failures = {kkt_failures}, status mismatches = {status_mismatch}, solve time {elapsed:.2?}"
        ),
    )
}

fn sufficiency() -> Verdict {
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, s) in [("default", default_runs()), ("stress", stress_runs())] {
        let t = trace(s, ControllerVariant::AdaptiveRobust);
        let check = t
            .invariants
            .as_ref()
            .and_then(|r| r.get(InvariantKind::RobustSufficiency))
            .cloned();
        match check {
            Some(c) => {
                pass &= c.passed() && c.rows_checked > 0;
                detail.push(format!(
                    "{name}: {} rows checked, {} violations, worst -true_cbf = {:.3e}",
                    c.rows_checked, c.violations, c.worst_excess
                ));
            }
            None => {
                pass = false;
                detail.push(format!("{name}: no invariant report"));
            }
        }
    }
    verdict(pass, detail.join("; "))
}

fn certificate_verification() -> Verdict {
    let params = AccParams::default();
    let system = build_acc_system(&params, &default_scenario(), DEFAULT_GRID_DENSITY).unwrap();
    let (report, elapsed) = timed(|| {
        verify_robust_certificates(&system.clf, &system.cbf, &system.model, system.bounds.theta, 50)
    });
    verdict(
        report.passed() && elapsed < Duration::from_secs(5),
        format!(
            "CLF {} (worst margin {:.4e} at x = {:?}), CBF {} (worst margin {:.4e} at x = {:?}), {} points, {elapsed:.2?}",
            if report.clf.passed { "holds" } else { "violated" },
            report.clf.worst_margin,
            report.clf.witness.as_slice(),
            if report.cbf.passed { "holds" } else { "violated" },
            report.cbf.worst_margin,
            report.cbf.witness.as_slice(),
            report.clf.points_checked
        ),
    )
}

fn determinism() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    commands::run(&Options::new(Config::default(), a.path())).unwrap();
    commands::run(&Options::new(Config::default(), b.path())).unwrap();
    let mut identical = true;
    let mut bytes = 0;
    for name in ["trace_adaptive-robust.csv", "summary.csv", "config.toml"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        identical &= x == y;
        bytes += x.len();
    }
    verdict(identical, format!("{bytes} bytes compared, identical = {identical}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("estimation error within gamma(T)", lemma3_bound),
        ("estimator convergence speed", estimator_speed),
        ("safety of aR-QP", safety),
        ("near-recovery of ideal performance", near_recovery),
        ("conservatism ordering", conservatism),
        ("gamma(T) scaling", gamma_scaling),
        ("QP solver oracle equivalence", qp_oracle),
        ("robust CBF sufficiency", sufficiency),
        ("grid verification of robust certificates", certificate_verification),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "criterion {:>2} {} {name}: {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
