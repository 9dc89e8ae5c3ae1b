//! CSV writers for traces, summaries, γ tables and grid verification.

use std::io::Write;

use adaptive_cbf::bounds::UncertaintyBounds;
use adaptive_cbf::certificates::VerificationReport;
use adaptive_cbf::simulator::{SimulationTrace, Termination};
use anyhow::Result;

/// Threshold on the CBF multiplier for counting the constraint as active.
pub const ACTIVE_MULTIPLIER_TOL: f64 = 1e-9;

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trace_header(n: usize, m: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n).map(|i| format!("x_{i}")));
    cols.extend((0..m).map(|j| format!("u_{j}")));
    cols.push("delta".into());
    cols.extend((0..n).map(|i| format!("d_true_{i}")));
    cols.extend((0..n).map(|i| format!("d_hat_{i}")));
    for c in ["est_err_norm", "h", "V", "clf_row", "cbf_row", "status"] {
        cols.push(c.into());
    }
    cols
}

pub fn write_trace<W: Write>(out: W, trace: &SimulationTrace) -> Result<()> {
    let (n, m) = trace
        .rows
        .first()
        .map_or((0, 0), |r| (r.x.len(), r.u.len()));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(n, m))?;
    for r in &trace.rows {
        let mut rec = vec![f(r.t)];
        rec.extend(r.x.iter().copied().map(f));
        rec.extend(r.u.iter().copied().map(f));
        rec.push(f(r.delta));
        rec.extend(r.d_true.iter().copied().map(f));
        rec.extend(r.d_hat.iter().copied().map(f));
        for v in [r.est_err_norm, r.h, r.v, r.clf_row, r.cbf_row] {
            rec.push(f(v));
        }
        rec.push(r.status.as_str().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub variant: String,
    pub min_h: f64,
    pub max_tracking_error: f64,
    pub integrated_sq_tracking_error: f64,
    pub cbf_active_percent: f64,
    pub max_est_err_after_t: f64,
    pub gamma: f64,
    pub termination: String,
}

pub fn termination_label(t: &Termination) -> String {
    match t {
        Termination::Completed => "completed".into(),
        Termination::ExitedAdmissibleSet { t } => format!("exited-admissible-set@{t}"),
        Termination::Infeasible { t } => format!("infeasible@{t}"),
    }
}

/// Tracking error is `v_f − v_d`; its square is integrated with the trapezoid rule.
pub fn summarize(trace: &SimulationTrace, bounds: &UncertaintyBounds, v_d: f64) -> TraceSummary {
    let err = |i: usize| (trace.rows[i].x[1] - v_d).abs();
    let mut integrated = 0.0;
    for i in 1..trace.rows.len() {
        let dt = trace.rows[i].t - trace.rows[i - 1].t;
        integrated += 0.5 * (err(i).powi(2) + err(i - 1).powi(2)) * dt;
    }
    let control: Vec<_> = trace.rows.iter().filter(|r| r.control_step).collect();
    let active = control
        .iter()
        .filter(|r| r.cbf_multiplier > ACTIVE_MULTIPLIER_TOL)
        .count();
    let t_sample = bounds.sample_time * (1.0 - 1e-9);
    TraceSummary {
        variant: trace.variant.to_string(),
        min_h: trace.min_h(),
        max_tracking_error: (0..trace.rows.len()).map(err).fold(0.0, f64::max),
        integrated_sq_tracking_error: integrated,
        cbf_active_percent: if control.is_empty() {
            0.0
        } else {
            100.0 * active as f64 / control.len() as f64
        },
        max_est_err_after_t: trace
            .rows
            .iter()
            .filter(|r| r.t >= t_sample)
            .map(|r| r.est_err_norm)
            .fold(0.0, f64::max),
        gamma: bounds.gamma,
        termination: termination_label(&trace.termination),
    }
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "variant",
    "min_h",
    "max_tracking_error",
    "integrated_sq_tracking_error",
    "cbf_active_percent",
    "max_est_err_after_T",
    "gamma",
    "termination",
];

pub fn write_summary<W: Write>(out: W, rows: &[TraceSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in rows {
        w.write_record([
            s.variant.clone(),
            f(s.min_h),
            f(s.max_tracking_error),
            f(s.integrated_sq_tracking_error),
            f(s.cbf_active_percent),
            f(s.max_est_err_after_t),
            f(s.gamma),
            s.termination.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gamma_table<W: Write>(out: W, table: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["T_s", "gamma"])?;
    for &(t, g) in table {
        w.write_record([f(t), f(g)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_verification<W: Write>(out: W, report: &VerificationReport) -> Result<()> {
    let n = report.points.first().map_or(0, |p| p.1.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend(["clf_margin".into(), "cbf_margin".into()]);
    w.write_record(&header)?;
    for m in report.margins() {
        let mut rec = vec![f(m.t)];
        rec.extend(m.x.iter().copied().map(f));
        rec.push(f(m.clf_margin));
        rec.push(f(m.cbf_margin));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub period: f64,
    pub gamma: f64,
    pub max_est_err: f64,
    pub min_h: f64,
    pub termination: String,
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["T_s", "gamma", "max_est_err", "min_h", "termination"])?;
    for r in rows {
        w.write_record([
            f(r.period),
            f(r.gamma),
            f(r.max_est_err),
            f(r.min_h),
            r.termination.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
