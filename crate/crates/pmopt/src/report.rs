//! Report files of a run directory.
//!
//! `results.csv`, `trace.csv` and `sweep.csv` hold only deterministic values,
//! so two runs of one configuration produce identical files. Wall times go to
//! `timing.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pmopt_core::bench::SweepRow;
use pmopt_core::opt::describe;

use crate::config::RunConfig;
use crate::error::{Result, RunError};
use crate::run::{Check, RunOutcome, Timing};

pub const RESULTS_HEADER: [&str; 23] = [
    "config_hash",
    "kind",
    "uq",
    "mor",
    "optimizer",
    "delta",
    "lambda",
    "p1",
    "p2",
    "p3",
    "area",
    "e0",
    "objective",
    "max_violation",
    "termination",
    "iterations",
    "evaluations",
    "failure_rate",
    "failures",
    "audit_samples",
    "mc_seed",
    "pso_seed",
    "audit_seed",
];

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| to_io(path, e))
}

fn to_io(path: &Path, e: csv::Error) -> RunError {
    RunError::io(path, std::io::Error::other(e.to_string()))
}

fn row_of(config: &RunConfig, mor: &str, o: &RunOutcome) -> Vec<String> {
    let r = &o.result;
    let f = o.failure;
    vec![
        config.hash().to_string(),
        r.kind.name().into(),
        config.uncertainty.method.name().into(),
        mor.into(),
        r.solver.name().into(),
        o.delta.to_string(),
        config.uncertainty.lambda.to_string(),
        r.p.p1().to_string(),
        r.p.p2().to_string(),
        r.p.p3().to_string(),
        r.p.area().to_string(),
        o.e0.to_string(),
        r.objective.to_string(),
        r.constraints.iter().fold(f64::NEG_INFINITY, |m, c| m.max(*c)).max(0.0).to_string(),
        r.termination.name().into(),
        r.iterations.to_string(),
        r.evaluations.to_string(),
        f.map_or(String::new(), |f| f.percent().to_string()),
        f.map_or(String::new(), |f| f.failures.to_string()),
        f.map_or(String::new(), |f| f.samples.to_string()),
        config.seeds.mc.to_string(),
        config.seeds.pso.to_string(),
        config.seeds.audit.to_string(),
    ]
}

/// One row per run.
pub fn write_results(path: &Path, config: &RunConfig, mor: &str, runs: &[&RunOutcome]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(RESULTS_HEADER).map_err(|e| to_io(path, e))?;
    for o in runs {
        w.write_record(row_of(config, mor, o)).map_err(|e| to_io(path, e))?;
    }
    w.flush().map_err(|e| RunError::io(path, e))
}

/// Iteration log of every run.
pub fn write_trace(path: &Path, runs: &[&RunOutcome]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["kind", "delta", "iter", "objective", "max_violation", "step_norm"]).map_err(|e| to_io(path, e))?;
    for o in runs {
        for t in &o.result.trace {
            w.write_record([
                o.result.kind.name().to_string(),
                o.delta.to_string(),
                t.iter.to_string(),
                t.objective.to_string(),
                t.max_violation.to_string(),
                t.step_norm.to_string(),
            ])
            .map_err(|e| to_io(path, e))?;
        }
    }
    w.flush().map_err(|e| RunError::io(path, e))
}

/// Plot-ready sweep table; failed cells keep their row with the error.
pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["delta", "kind", "area", "e0", "failure_rate", "termination", "error"]).map_err(|e| to_io(path, e))?;
    for r in rows {
        let rec = match &r.outcome {
            Ok(c) => [
                r.delta.to_string(),
                r.kind.name().into(),
                c.area.to_string(),
                c.emf.to_string(),
                c.failure.map_or(String::new(), |f| f.percent().to_string()),
                c.result.termination.name().into(),
                String::new(),
            ],
            Err(e) => [r.delta.to_string(), r.kind.name().into(), String::new(), String::new(), String::new(), String::new(), e.to_string()],
        };
        w.write_record(rec).map_err(|e| to_io(path, e))?;
    }
    w.flush().map_err(|e| RunError::io(path, e))
}

pub fn write_timing(path: &Path, timing: &Timing) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["phase", "seconds"]).map_err(|e| to_io(path, e))?;
    for (phase, s) in &timing.0 {
        w.write_record([phase.clone(), format!("{s:.6}")]).map_err(|e| to_io(path, e))?;
    }
    w.flush().map_err(|e| RunError::io(path, e))
}

pub fn write_checks(path: &Path, checks: &[Check]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["check", "passed", "detail"]).map_err(|e| to_io(path, e))?;
    for c in checks {
        w.write_record([c.name, if c.passed { "true" } else { "false" }, &c.detail]).map_err(|e| to_io(path, e))?;
    }
    w.flush().map_err(|e| RunError::io(path, e))
}

/// Table of runs in the shape `P, size, E0, failure rate, time`, followed
/// by the configuration that produced them.
pub fn summary(config: &RunConfig, runs: &[&RunOutcome], timing: &Timing) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "config hash {}  seeds mc={} pso={} audit={}", config.hash(), config.seeds.mc, config.seeds.pso, config.seeds.audit);
    let _ = writeln!(s, "{:<11} {:>6} {:>26} {:>11} {:>9} {:>10}", "kind", "delta", "P (mm)", "size (mm2)", "E0 (V)", "fail (%)");
    for o in runs {
        let p = o.result.p;
        let _ = writeln!(
            s,
            "{:<11} {:>6} {:>26} {:>11.4} {:>9.4} {:>10}",
            o.result.kind.name(),
            o.delta,
            format!("({:.3}, {:.3}, {:.3})", p.p1(), p.p2(), p.p3()),
            p.area(),
            o.e0,
            o.failure.map_or("-".to_string(), |f| format!("{:.2}", f.percent())),
        );
    }
    let (offline, online) = (timing.get("offline") + timing.get("dictionary_load"), timing.get("online") + timing.get("audit"));
    let _ = writeln!(s, "time (s): {offline:.1} offline + {online:.1} online");
    for o in runs {
        let _ = writeln!(s, "\n{}", describe(&o.result));
    }
    let _ = writeln!(s, "\n# configuration\n{}", config.to_toml());
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| RunError::io(path, e))
}
