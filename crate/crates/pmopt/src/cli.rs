//! Command line: flags override the configuration file, subcommands pick the job.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use pmopt_core::geom::ParamVector;

use crate::config::{KindName, Mor, Optimizer, RunConfig, UqMethod};
use crate::error::{Result, RunError};
use crate::report;
use crate::run::{write_dictionary, RunOutcome, Session};

#[derive(Debug, Parser)]
#[command(name = "pmopt", version, about = "Robust shape optimization of a buried permanent magnet")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// nominal, wc1, wc2, uq_nominal, uq_robust or uq_lin.
    #[arg(long, global = true)]
    pub formulation: Option<String>,
    /// Moment method: sq, mc or lin.
    #[arg(long, global = true)]
    pub uq: Option<String>,
    /// sqp or pso.
    #[arg(long, global = true)]
    pub optimizer: Option<String>,
    /// on, off, or a dictionary file (implies on).
    #[arg(long, global = true)]
    pub mor: Option<String>,
    /// Uncertainty half-width in mm.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Sets the Monte Carlo, swarm and audit seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One forward solve; prints E0 and its gradient.
    Solve {
        /// Design `p1,p2,p3` in mm; the reference design by default.
        #[arg(long, value_parser = parse_point)]
        p: Option<ParamVector>,
    },
    /// Optimizes the configured formulation and audits the optimum.
    Optimize,
    /// Every sweep kind at every sweep half-width.
    Sweep,
    /// Monte Carlo failure rate of a design.
    Audit {
        #[arg(long, value_parser = parse_point)]
        p: ParamVector,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Trains the reduced basis dictionary and writes it to a file.
    RbBuild {
        #[arg(long)]
        dictionary: Option<PathBuf>,
    },
    /// Self-checks of the model and the worst-case/stochastic equivalence.
    Verify,
}

fn parse_point(s: &str) -> std::result::Result<ParamVector, String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x}: {e}"))).collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] => Ok(ParamVector::new(a, b, c)),
        _ => Err(format!("expected p1,p2,p3, got `{s}`")),
    }
}

impl Cli {
    /// The configuration file, if any, with the flags applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let bad = |what: &str, v: &str| RunError::Config(format!("unknown {what} `{v}`"));
        if let Some(k) = &self.formulation {
            c.optimization.formulation = KindName::try_from(k.clone()).map_err(RunError::Config)?;
        }
        if let Some(m) = &self.uq {
            c.uncertainty.method = UqMethod::parse(m).ok_or_else(|| bad("uq method", m))?;
        }
        if let Some(o) = &self.optimizer {
            c.optimization.optimizer = match o.as_str() {
                "sqp" => Optimizer::Sqp,
                "pso" => Optimizer::Pso,
                _ => return Err(bad("optimizer", o)),
            };
        }
        match self.mor.as_deref() {
            None => {}
            Some("on") => c.model.mor = Mor::On,
            Some("off") => c.model.mor = Mor::Off,
            Some(path) => {
                c.model.mor = Mor::On;
                c.model.dictionary = Some(PathBuf::from(path));
            }
        }
        if let Some(d) = self.delta {
            c.uncertainty.delta = d;
        }
        if let Some(l) = self.lambda {
            c.uncertainty.lambda = l;
        }
        if let Some(s) = self.seed {
            c.seeds.mc = s;
            c.seeds.pso = s;
            c.seeds.audit = s;
        }
        if let Some(t) = self.threads {
            c.output.threads = t;
        }
        if let Some(o) = &self.out {
            c.output.dir = o.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn out_dir(c: &RunConfig) -> Result<&Path> {
    let dir = c.output.dir.as_path();
    fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    Ok(dir)
}

fn write_run_files(session: &Session, runs: &[&RunOutcome]) -> Result<()> {
    let c = &session.config;
    let dir = out_dir(c)?;
    report::write_results(&dir.join("results.csv"), c, session.mor_label(), runs)?;
    report::write_trace(&dir.join("trace.csv"), runs)?;
    report::write_timing(&dir.join("timing.csv"), &session.timing)?;
    report::write_text(&dir.join("config.toml"), &c.to_toml())?;
    report::write_text(&dir.join("summary.txt"), &report::summary(c, runs, &session.timing))
}

/// Runs one command; the error carries the exit code.
pub fn execute(cli: &Cli) -> Result<()> {
    let mut config = cli.resolve()?;
    if let Command::RbBuild { dictionary } = &cli.command {
        config.model.mor = Mor::On;
        if dictionary.is_some() {
            config.model.dictionary = dictionary.clone();
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.output.threads)
        .build()
        .map_err(|e| RunError::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.command, config))
}

fn dispatch(command: &Command, config: RunConfig) -> Result<()> {
    match command {
        Command::Solve { p } => {
            let mut s = Session::open(config)?;
            let p = p.unwrap_or(s.config.geometry.numbers().reference);
            let e = s.solve(&p)?;
            let g = e.gradient_or_zero();
            println!("P = ({}, {}, {}) mm  E0 = {:.6} V  grad = ({:.6}, {:.6}, {:.6}) V/mm  mor {}", p.p1(), p.p2(), p.p3(), e.value, g[0], g[1], g[2], s.mor_label());
            Ok(())
        }
        Command::Optimize => {
            let mut s = Session::open(config)?;
            let out = s.optimize()?;
            write_run_files(&s, &[&out])?;
            print!("{}", report::summary(&s.config, &[&out], &s.timing));
            if out.succeeded() {
                Ok(())
            } else {
                Err(RunError::Solver(format!("optimizer stopped: {}", out.result.termination.name())))
            }
        }
        Command::Sweep => {
            let mut s = Session::open(config)?;
            let rows = s.sweep();
            let mut runs = Vec::new();
            let mut failed = Vec::new();
            for r in &rows {
                match &r.outcome {
                    Ok(cell) => runs.push(RunOutcome { delta: r.delta, result: cell.result.clone(), e0: cell.emf, failure: cell.failure }),
                    Err(e) => {
                        eprintln!("delta {} {}: {e}", r.delta, r.kind);
                        failed.push(format!("delta {} {}", r.delta, r.kind));
                    }
                }
            }
            let refs: Vec<&RunOutcome> = runs.iter().collect();
            write_run_files(&s, &refs)?;
            report::write_sweep(&out_dir(&s.config)?.join("sweep.csv"), &rows)?;
            print!("{}", report::summary(&s.config, &refs, &s.timing));
            failed.extend(runs.iter().filter(|o| !o.succeeded()).map(|o| format!("delta {} {}", o.delta, o.result.kind)));
            if failed.is_empty() {
                Ok(())
            } else {
                Err(RunError::Solver(format!("cells without a converged optimum: {}", failed.join(", "))))
            }
        }
        Command::Audit { p, samples } => {
            let mut config = config;
            if let Some(n) = samples {
                config.audit.samples = *n;
                config.validate()?;
            }
            let mut s = Session::open(config)?;
            let r = s.audit(p)?;
            let dir = out_dir(&s.config)?;
            let text = format!(
                "p1,p2,p3,delta,samples,failures,failure_rate,seed,mor\n{},{},{},{},{},{},{},{},{}\n",
                p.p1(), p.p2(), p.p3(), r.half_width[0], r.samples, r.failures, r.percent(), r.seed, s.mor_label()
            );
            report::write_text(&dir.join("audit.csv"), &text)?;
            println!("failure rate {:.2}% ({} of {} samples, seed {})", r.percent(), r.failures, r.samples, r.seed);
            Ok(())
        }
        Command::RbBuild { .. } => {
            let path = config.model.dictionary.clone();
            let mut s = Session::assemble(config)?;
            let d = s.train()?;
            s.dictionary = Some(d);
            let dir = out_dir(&s.config)?;
            let path = path.unwrap_or_else(|| dir.join("rb.dict"));
            write_dictionary(&s, &path)?;
            let dict = s.dictionary.as_ref().unwrap();
            let mut text = String::from("cube,trained,dim,last_selected_estimator\n");
            for (i, c) in dict.cubes.iter().enumerate() {
                match c {
                    Some(m) => text += &format!("{i},true,{},{}\n", m.dim(), m.greedy_history.last().map_or(0.0, |e| e / m.scale)),
                    None => text += &format!("{i},false,0,\n"),
                }
            }
            report::write_text(&dir.join("dictionary.csv"), &text)?;
            report::write_timing(&dir.join("timing.csv"), &s.timing)?;
            println!(
                "{} of {} cubes trained, largest basis {}, {:.1} s offline, written to {}",
                dict.trained().count(),
                dict.cubes.len(),
                dict.max_dim(),
                s.timing.get("offline"),
                path.display()
            );
            Ok(())
        }
        Command::Verify => {
            let mut s = Session::open(config)?;
            let checks = s.verify()?;
            report::write_checks(&out_dir(&s.config)?.join("verify.csv"), &checks)?;
            for c in &checks {
                println!("{} {:<30} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            match checks.iter().filter(|c| !c.passed).map(|c| c.name).collect::<Vec<_>>() {
                f if f.is_empty() => Ok(()),
                f => Err(RunError::Solver(format!("failed checks: {}", f.join(", ")))),
            }
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
