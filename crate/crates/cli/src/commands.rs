//! Subcommand implementations.
//!
//! Each command writes its artifacts under the output directory and returns
//! an [`Outcome`]; failed outcomes also produce `failure_report.json`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::thread;

use adaptive_cbf::acc::{acc_controller, build_acc_system};
use adaptive_cbf::bounds::gamma_table;
use adaptive_cbf::certificates::verify_robust_certificates;
use adaptive_cbf::controllers::ControllerVariant;
use adaptive_cbf::invariants::InvariantReport;
use adaptive_cbf::simulator::{compare_variants, run_simulation, ClosedLoopSystem, SimulationTrace, Termination};
use anyhow::{Context, Result};
use serde_json::{json, Value};

use crate::config::Config;
use crate::output::{self, SweepRow, TraceSummary};
use crate::plot;

pub const FAILURE_REPORT: &str = "failure_report.json";

#[derive(Debug, Clone)]
pub struct Options {
    pub config: Config,
    pub out: PathBuf,
    pub plot: bool,
    /// Turns on trace invariant checks; a violation fails the command.
    pub assert: bool,
    pub seed: Option<u64>,
}

impl Options {
    pub fn new(config: Config, out: impl Into<PathBuf>) -> Self {
        Self {
            config,
            out: out.into(),
            plot: false,
            assert: false,
            seed: None,
        }
    }

    fn effective_config(&self) -> Config {
        let mut c = self.config.clone();
        if let Some(seed) = self.seed {
            c.simulation.seed = seed;
        }
        c.simulation.assertions |= self.assert;
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub failed: bool,
    pub message: String,
    pub files: Vec<PathBuf>,
}

struct Run {
    config: Config,
    out: PathBuf,
    files: Vec<PathBuf>,
}

impl Run {
    fn start(opts: &Options) -> Result<Self> {
        let config = opts.effective_config();
        fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
        let stale = opts.out.join(FAILURE_REPORT);
        if stale.exists() {
            fs::remove_file(&stale).with_context(|| format!("removing {}", stale.display()))?;
        }
        let mut run = Self {
            config,
            out: opts.out.clone(),
            files: Vec::new(),
        };
        let toml = run.config.to_toml();
        run.write("config.toml", |p| Ok(fs::write(p, &toml)?))?;
        Ok(run)
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let path = self.out.join(name);
        body(&path).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, body: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<()> {
        self.write(name, |p| body(BufWriter::new(File::create(p)?)))
    }

    fn system(&self) -> Result<ClosedLoopSystem> {
        Ok(build_acc_system(
            &self.config.acc_params(),
            &self.config.scenario(),
            self.config.bounds.grid_density,
        )?)
    }

    fn finish(mut self, command: &str, failures: Vec<Value>, message: String) -> Result<Outcome> {
        let failed = !failures.is_empty();
        if failed {
            let report = json!({ "command": command, "failures": failures });
            let text = serde_json::to_string_pretty(&report)?;
            self.write(FAILURE_REPORT, |p| Ok(fs::write(p, text + "\n")?))?;
        }
        Ok(Outcome {
            failed,
            message,
            files: self.files,
        })
    }
}

fn trace_failure(trace: &SimulationTrace, fatal_termination: bool) -> Option<Value> {
    let termination_failed = fatal_termination && trace.termination != Termination::Completed;
    let invariants_failed = trace.invariants.as_ref().is_some_and(|r| !r.passed());
    if !termination_failed && !invariants_failed {
        return None;
    }
    let last = trace.rows.last();
    Some(json!({
        "variant": trace.variant.as_str(),
        "termination": output::termination_label(&trace.termination),
        "last_t": last.map(|r| r.t),
        "last_state": last.map(|r| r.x.as_slice().to_vec()),
        "events": trace.events.iter().take(20).map(|e| json!({
            "t": e.t,
            "kind": format!("{:?}", e.kind),
            "x": e.x.as_slice(),
        })).collect::<Vec<_>>(),
        "invariants": trace.invariants.as_ref().map(invariant_json),
    }))
}

fn invariant_json(report: &InvariantReport) -> Value {
    serde_json::to_value(report).unwrap_or(Value::Null)
}

fn trace_file(variant: ControllerVariant) -> String {
    format!("trace_{variant}.csv")
}

fn summary_line(s: &TraceSummary) -> String {
    format!(
        "{:<18} min_h {:>10.4}  max|v_f-v_d| {:>8.3}  cbf active {:>5.1}%  {}",
        s.variant, s.min_h, s.max_tracking_error, s.cbf_active_percent, s.termination
    )
}

/// Simulates the configured variant.
pub fn run(opts: &Options) -> Result<Outcome> {
    let mut run = Run::start(opts)?;
    let c = &run.config;
    let params = c.acc_params();
    let system = run.system()?;
    let controller = acc_controller(&params, c.controller.variant, c.controller.infeasibility_policy)?;
    let trace = run_simulation(&system, &controller, &c.sim_config(), &params.initial_state())?;
    let summary = output::summarize(&trace, &system.bounds, params.v_d);
    run.csv(&trace_file(trace.variant), |w| output::write_trace(w, &trace))?;
    run.csv("summary.csv", |w| output::write_summary(w, std::slice::from_ref(&summary)))?;
    if opts.plot {
        let gamma = system.bounds.gamma;
        run.write("plots", |dir| {
            fs::create_dir_all(dir)?;
            plot::write_plots(dir, &[&trace], gamma)
        })?;
    }
    let failures = trace_failure(&trace, true).into_iter().collect();
    run.finish("run", failures, summary_line(&summary))
}

/// Simulates every configured variant under identical conditions.
///
/// Infeasible or unsafe runs are reported in the summary; only invariant
/// violations fail the command.
pub fn compare(opts: &Options) -> Result<Outcome> {
    let mut run = Run::start(opts)?;
    let c = &run.config;
    let params = c.acc_params();
    let system = run.system()?;
    let controller = acc_controller(&params, c.controller.variant, c.controller.infeasibility_policy)?;
    let traces = compare_variants(
        &system,
        &controller,
        &c.sim_config(),
        &params.initial_state(),
        &c.controller.variants,
    )?;
    let summaries: Vec<_> = traces
        .values()
        .map(|t| output::summarize(t, &system.bounds, params.v_d))
        .collect();
    for trace in traces.values() {
        run.csv(&trace_file(trace.variant), |w| output::write_trace(w, trace))?;
    }
    run.csv("summary.csv", |w| output::write_summary(w, &summaries))?;
    if opts.plot {
        let gamma = system.bounds.gamma;
        let ordered: Vec<&SimulationTrace> = {
            let mut v: Vec<_> = traces.values().collect();
            v.sort_by_key(|t| t.variant != ControllerVariant::AdaptiveRobust);
            v
        };
        run.write("plots", |dir| {
            fs::create_dir_all(dir)?;
            plot::write_plots(dir, &ordered, gamma)
        })?;
    }
    let failures = traces.values().filter_map(|t| trace_failure(t, false)).collect();
    let message = summaries.iter().map(summary_line).collect::<Vec<_>>().join("\n");
    run.finish("compare", failures, message)
}

/// Tabulates the estimation error bound over `sweep.periods`.
pub fn gamma_table_cmd(opts: &Options) -> Result<Outcome> {
    let mut run = Run::start(opts)?;
    let system = run.system()?;
    let table = gamma_table(&system.bounds.gamma_inputs(), &run.config.sweep.periods)?;
    run.csv("gamma.csv", |w| output::write_gamma_table(w, &table))?;
    let message = table
        .iter()
        .map(|(t, g)| format!("T = {t:e} s  gamma = {g:.7}"))
        .collect::<Vec<_>>()
        .join("\n");
    run.finish("gamma-table", vec![], message)
}

/// Grid check of the robust CLF and CBF conditions over the state box.
pub fn verify_certificates(opts: &Options) -> Result<Outcome> {
    let mut run = Run::start(opts)?;
    let system = run.system()?;
    let report = verify_robust_certificates(
        &system.clf,
        &system.cbf,
        &system.model,
        system.bounds.theta,
        run.config.bounds.grid_density,
    );
    run.csv("verification.csv", |w| output::write_verification(w, &report))?;
    let describe = |name: &str, c: &adaptive_cbf::certificates::ConditionCheck| {
        format!(
            "{name}: {} (worst margin {:.6e} at t = {}, x = {:?}, {} points)",
            if c.passed { "pass" } else { "FAIL" },
            c.worst_margin,
            c.witness_time,
            c.witness.as_slice(),
            c.points_checked
        )
    };
    let message = format!("{}\n{}", describe("CLF", &report.clf), describe("CBF", &report.cbf));
    let mut failures = Vec::new();
    for (name, c) in [("clf", &report.clf), ("cbf", &report.cbf)] {
        if !c.passed {
            failures.push(json!({
                "condition": name,
                "theta": report.theta,
                "worst_margin": c.worst_margin,
                "witness_t": c.witness_time,
                "witness_x": c.witness.as_slice(),
            }));
        }
    }
    run.finish("verify-certificates", failures, message)
}

/// Re-runs the configured variant for each estimator period in `sweep.periods`.
pub fn sweep_t(opts: &Options) -> Result<Outcome> {
    let mut run = Run::start(opts)?;
    let base = run.config.clone();
    let results: Vec<Result<(SweepRow, SimulationTrace)>> = thread::scope(|scope| {
        let handles: Vec<_> = base
            .sweep
            .periods
            .iter()
            .map(|&period| {
                let base = &base;
                scope.spawn(move || -> Result<(SweepRow, SimulationTrace)> {
                    let mut c = base.clone();
                    c.estimator.period = period;
                    c.simulation.t_end = base.sweep.t_end;
                    c.validate().with_context(|| format!("estimator period {period}"))?;
                    let params = c.acc_params();
                    let system = build_acc_system(&params, &c.scenario(), c.bounds.grid_density)?;
                    let controller =
                        acc_controller(&params, c.controller.variant, c.controller.infeasibility_policy)?;
                    let trace = run_simulation(&system, &controller, &c.sim_config(), &params.initial_state())?;
                    let s = output::summarize(&trace, &system.bounds, params.v_d);
                    Ok((
                        SweepRow {
                            period,
                            gamma: system.bounds.gamma,
                            max_est_err: s.max_est_err_after_t,
                            min_h: s.min_h,
                            termination: s.termination,
                        },
                        trace,
                    ))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("sweep worker panicked"))))
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        let (row, trace) = r?;
        if let Some(mut f) = trace_failure(&trace, false) {
            f["period"] = json!(row.period);
            failures.push(f);
        }
        rows.push(row);
    }
    run.csv("sweep.csv", |w| output::write_sweep(w, &rows))?;
    let message = rows
        .iter()
        .map(|r| {
            format!(
                "T = {:e} s  gamma = {:.6}  max est err = {:.6}  min_h = {:.4}",
                r.period, r.gamma, r.max_est_err, r.min_h
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    run.finish("sweep-T", failures, message)
}
