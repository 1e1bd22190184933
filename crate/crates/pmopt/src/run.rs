//! Orchestration: configuration to model to optimization to audit.

use std::path::Path;
use std::time::Instant;

use pmopt_core::bench::{failure_rate, sweep_cell, BenchmarkProblem, FailureReport, SweepRow, SweepSettings};
use pmopt_core::fem::AffineModel;
use pmopt_core::geom::{build_geometry, ParamDomain, ParamVector};
use pmopt_core::model::{EmfEval, EmfModel, FullOrder, Reduced};
use pmopt_core::opt::{self, Kind, OptimResult, Solver, Termination};
use pmopt_core::rb::{Breakpoints, Dictionary};
use rayon::prelude::*;

use crate::config::{Mor, Optimizer, RunConfig};
use crate::dictfile::{self, Fingerprint};
use crate::error::{Result, RunError};
use crate::parallel::{self, Parallel};

/// Wall-clock seconds per phase, in the order the phases ran.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timing(pub Vec<(String, f64)>);

impl Timing {
    pub fn record<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.0.push((phase.to_string(), t.elapsed().as_secs_f64()));
        out
    }

    pub fn get(&self, phase: &str) -> f64 {
        self.0.iter().filter(|(p, _)| p == phase).fold(0.0, |a, (_, s)| a + s)
    }
}

/// Full or reduced forward model, chosen by the `mor` flag.
pub enum Backend<'a> {
    Full(FullOrder<'a>),
    Reduced(Reduced<'a>),
}

impl EmfModel for Backend<'_> {
    fn eval(&self, p: &ParamVector, order: usize) -> pmopt_core::Result<EmfEval> {
        match self {
            Backend::Full(m) => m.eval(p, order),
            Backend::Reduced(m) => m.eval(p, order),
        }
    }

    fn evaluations(&self) -> usize {
        match self {
            Backend::Full(m) => m.evaluations(),
            Backend::Reduced(m) => m.evaluations(),
        }
    }
}

pub type Problem<'a> = BenchmarkProblem<Parallel<Backend<'a>>>;

/// A validated configuration with its assembled model and, with MOR on, its
/// dictionary.
pub struct Session {
    pub config: RunConfig,
    pub model: AffineModel,
    pub dictionary: Option<Dictionary>,
    pub timing: Timing,
}

impl Session {
    pub fn open(config: RunConfig) -> Result<Self> {
        let mut s = Self::assemble(config)?;
        if s.config.model.mor == Mor::On {
            let dict = match s.config.model.dictionary.clone() {
                Some(path) if path.exists() => {
                    let print = s.fingerprint();
                    s.timing.record("dictionary_load", || dictfile::load(&path, &print))?
                }
                Some(path) => {
                    let d = s.train()?;
                    dictfile::save(&path, &d, &s.fingerprint())?;
                    d
                }
                None => s.train()?,
            };
            s.dictionary = Some(dict);
        }
        Ok(s)
    }

    /// Validates and assembles the full order model only.
    pub fn assemble(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut timing = Timing::default();
        let model = timing.record("assemble", || -> Result<AffineModel> {
            let tri = build_geometry(&config.geometry.numbers(), &ParamDomain::benchmark())?;
            Ok(AffineModel::assemble_reference(&tri, config.model.materials(), config.model.fem_options())?)
        })?;
        Ok(Session { config, model, dictionary: None, timing })
    }

    /// Identifies the full order model for dictionary files.
    pub fn fingerprint(&self) -> Fingerprint {
        dictfile::fingerprint(&(
            self.config.geometry.numbers(),
            self.config.model.materials(),
            self.config.model.fem_options(),
            self.model.dim(),
        ))
    }

    /// Trains the dictionary on the benchmark partition, timed as `offline`.
    pub fn train(&mut self) -> Result<Dictionary> {
        let opts = self.config.rb.greedy();
        let model = &self.model;
        Ok(self.timing.record("offline", || parallel::build_dictionary(model, Breakpoints::benchmark(), &opts))?)
    }

    /// A fresh forward model with its own evaluation counter.
    pub fn backend(&self) -> Backend<'_> {
        match &self.dictionary {
            Some(d) => Backend::Reduced(Reduced::new(&self.model, d)),
            None => Backend::Full(FullOrder::new(&self.model)),
        }
    }

    pub fn problem(&self) -> Problem<'_> {
        let mut b = BenchmarkProblem::new(Parallel(self.backend()));
        b.emf_target = self.config.model.emf_target;
        b
    }

    pub fn mor_label(&self) -> &'static str {
        if self.dictionary.is_some() {
            "on"
        } else {
            "off"
        }
    }

    /// One forward evaluation with gradient.
    pub fn solve(&mut self, p: &ParamVector) -> Result<EmfEval> {
        let mut t = Timing::default();
        let e = t.record("online", || self.backend().eval(p, 1));
        self.timing.0.extend(t.0);
        Ok(e?)
    }

    /// Optimizes the configured formulation and audits the optimum.
    pub fn optimize(&mut self) -> Result<RunOutcome> {
        let kind = self.config.kind();
        let problem = self.problem();
        let form = problem.formulation(kind, self.config.uncertainty())?;
        let solver = self.config.optimization.optimizer;
        let mut timing = Timing::default();
        let result = timing.record("online", || match solver {
            Optimizer::Sqp => opt::sqp_solve(&form, &self.config.start(), &self.config.sqp()),
            Optimizer::Pso => opt::pso_solve(&form, &self.config.pso()),
        })?;
        let e0 = problem.model.eval(&result.p, 0)?.value;
        let failure = timing.record("audit", || self.audit_at(&problem, &result.p, self.config.uncertainty.delta))?;
        self.timing.0.extend(timing.0);
        Ok(RunOutcome { delta: self.config.uncertainty.delta, result, e0, failure })
    }

    fn audit_at(&self, problem: &Problem<'_>, p: &ParamVector, delta: f64) -> Result<Option<FailureReport>> {
        let n = self.config.audit.samples;
        if n == 0 {
            return Ok(None);
        }
        let r = failure_rate(&problem.model, p, [delta; 3], problem.emf_target, n, self.config.seeds.audit)?;
        Ok(Some(r))
    }

    /// Failure rate of the design `p` under the configured half-width.
    pub fn audit(&mut self, p: &ParamVector) -> Result<FailureReport> {
        let problem = self.problem();
        let n = self.config.audit.samples.max(1000);
        let (delta, seed) = (self.config.uncertainty.delta, self.config.seeds.audit);
        let mut t = Timing::default();
        let r = t.record("audit", || failure_rate(&problem.model, p, [delta; 3], problem.emf_target, n, seed));
        drop(problem);
        self.timing.0.extend(t.0);
        Ok(r?)
    }

    /// Every configured kind at every configured half-width; cells run in
    /// parallel, each with its own model counter.
    pub fn sweep(&mut self) -> Vec<SweepRow> {
        let cells: Vec<(f64, Kind)> = self
            .config
            .sweep
            .deltas
            .iter()
            .flat_map(|&d| self.config.sweep.kinds.iter().map(move |k| (d, k.0)))
            .collect();
        let settings = SweepSettings {
            uncertainty: self.config.uncertainty(),
            sqp: self.config.sqp(),
            start: self.config.start(),
            audit_samples: self.config.audit.samples,
            audit_seed: self.config.seeds.audit,
        };
        let t = Instant::now();
        let rows = cells.par_iter().map(|&(d, k)| sweep_cell(&self.problem(), k, d, &settings)).collect();
        self.timing.0.push(("online".into(), t.elapsed().as_secs_f64()));
        rows
    }

    /// Worst-case 2-norm against linearized stochastic optimization.
    pub fn theorem1(&self, delta: f64) -> Result<opt::Theorem1Report> {
        Ok(opt::theorem1_check(&self.problem(), delta, &self.config.start(), &self.config.sqp())?)
    }
}

/// Optimum of one run with its audit.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub delta: f64,
    pub result: OptimResult,
    pub e0: f64,
    pub failure: Option<FailureReport>,
}

impl RunOutcome {
    /// A gradient run that did not converge is a solver failure; the swarm
    /// has no convergence test to fail.
    pub fn succeeded(&self) -> bool {
        self.result.solver == Solver::Pso || self.result.termination == Termination::Converged
    }
}

/// Outcome of one self-check of `verify`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Designs inside the admissible set used by the self-checks.
pub const PROBES: [ParamVector; 3] =
    [ParamVector::new(19.0, 7.0, 7.0), ParamVector::new(10.0, 3.0, 6.0), ParamVector::new(24.0, 2.0, 12.0)];

impl Session {
    /// Calibration, affine decomposition, sensitivities, reduced model
    /// fidelity and the worst-case/stochastic equivalence.
    pub fn verify(&mut self) -> Result<Vec<Check>> {
        let mut checks = Vec::new();
        let full = FullOrder::new(&self.model);
        let reference = self.config.geometry.numbers().reference;
        let e = full.eval(&reference, 0)?.value;
        let want = self.config.model.emf_calibration;
        checks.push(Check {
            name: "reference_emf",
            passed: (e - want).abs() <= 1e-9 * want,
            detail: format!("E0 {e:.10} V, calibrated to {want} V"),
        });

        let mut worst = 0.0_f64;
        for p in &PROBES {
            let (direct, _) = self.model.assemble_direct(p)?;
            let mut d = self.model.stiffness_matrix(&self.model.weights(p)?);
            d.extend_scaled(-1.0, &direct);
            d.compress();
            worst = worst.max(d.frobenius() / direct.frobenius());
        }
        checks.push(Check { name: "affine_oracle", passed: worst <= 1e-10, detail: format!("relative Frobenius error {worst:.2e}") });

        let mut worst = 0.0_f64;
        for p in &PROBES {
            let g = full.eval(p, 1)?.gradient_or_zero();
            for i in 0..3 {
                let h = 1e-4;
                let mut e = [0.0; 3];
                e[i] = h;
                let fd = (full.eval(&p.offset(&e), 0)?.value - full.eval(&p.offset(&e.map(|x| -x)), 0)?.value) / (2.0 * h);
                worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1.0));
            }
        }
        checks.push(Check { name: "gradient_fd", passed: worst <= 1e-4, detail: format!("relative error {worst:.2e}") });

        if let Some(dict) = &self.dictionary {
            let red = Reduced::new(&self.model, dict);
            let mut worst = 0.0_f64;
            for p in &PROBES {
                let (a, b) = (red.eval(p, 0)?.value, full.eval(p, 0)?.value);
                worst = worst.max((a - b).abs() / b.abs());
            }
            checks.push(Check { name: "reduced_emf", passed: worst <= 1e-4, detail: format!("relative error {worst:.2e}") });
        }

        let delta = if self.config.uncertainty.delta > 0.0 { self.config.uncertainty.delta } else { 0.2 };
        let mut t = Timing::default();
        let t1 = t.record("online", || self.theorem1(delta));
        self.timing.0.extend(t.0);
        let t1 = t1?;
        checks.push(Check {
            name: "worst_case_equals_linearized",
            passed: t1.param_gap <= 1e-2 && t1.objective_gap <= 1e-3,
            detail: format!("delta {delta}: |dP|inf {:.2e} mm, objective gap {:.2e}", t1.param_gap, t1.objective_gap),
        });
        Ok(checks)
    }
}

/// Writes the dictionary of a session to `path`.
pub fn write_dictionary(session: &Session, path: &Path) -> Result<()> {
    let d = session.dictionary.as_ref().ok_or_else(|| RunError::Config("no dictionary was trained".into()))?;
    dictfile::save(path, d, &session.fingerprint())
}
