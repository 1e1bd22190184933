//! The magnet-size benchmark: minimize the magnet cross-section `p1 p2`
//! while the EMF stays at or above its target.
//!
//! Constraint rows, all `<= 0`:
//!
//! ```text
//! 1 - p1,  1 - p2,  5 - p3,  p3 - 14,  p2 + p3 - 15,  3 p1 - 2 p3 - 50,  E_d - E0(P)
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::{ParamDomain, ParamVector};
use crate::model::EmfModel;
use crate::opt::{self, BaseProblem, Formulation, Kind, OptimResult, RowJets, SqpOptions, Termination, Uncertainty};
use crate::uq::{Rule, UniformBox};

/// EMF target in volts, the EMF of the reference design.
pub const EMF_TARGET: f64 = 30.37;

/// Starting design of every optimization.
pub const START: ParamVector = ParamVector::new(19.0, 7.0, 7.0);

pub struct BenchmarkProblem<M> {
    pub model: M,
    pub emf_target: f64,
    pub domain: ParamDomain,
}

impl<M: EmfModel> BenchmarkProblem<M> {
    pub fn new(model: M) -> Self {
        BenchmarkProblem { model, emf_target: EMF_TARGET, domain: ParamDomain::benchmark() }
    }

    pub fn formulation(&self, kind: Kind, uncertainty: Uncertainty) -> Result<Formulation<'_, Self>> {
        Formulation::new(kind, self, uncertainty)
    }
}

fn rows_at(p: &ParamVector, e0: f64, emf_target: f64) -> Vec<f64> {
    let [p1, p2, p3] = p.0;
    vec![p1 * p2, 1.0 - p1, 1.0 - p2, 5.0 - p3, p3 - 14.0, p2 + p3 - 15.0, 3.0 * p1 - 2.0 * p3 - 50.0, emf_target - e0]
}

const AFFINE_GRADS: [[f64; 3]; 6] =
    [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [3.0, 0.0, -2.0]];

impl<M: EmfModel> BaseProblem for BenchmarkProblem<M> {
    fn n_rows(&self) -> usize {
        8
    }

    fn eval_batch(&self, ps: &[ParamVector], order: usize) -> Vec<Result<RowJets>> {
        self.model
            .eval_batch(ps, order)
            .into_iter()
            .zip(ps)
            .map(|(e, p)| {
                let e = e?;
                let values = rows_at(p, e.value, self.emf_target);
                let mut grads = Vec::new();
                let mut hessians = Vec::new();
                if order >= 1 {
                    let g = e.gradient.ok_or_else(|| Error::InvalidInput("model returned no gradient".into()))?;
                    grads.push([p.p2(), p.p1(), 0.0]);
                    grads.extend(AFFINE_GRADS);
                    grads.push(g.map(|x| -x));
                }
                if order >= 2 {
                    let h = e.hessian.ok_or_else(|| Error::InvalidInput("model returned no Hessian".into()))?;
                    hessians.push([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0; 3]]);
                    hessians.extend([[[0.0; 3]; 3]; 6]);
                    hessians.push(h.map(|r| r.map(|x| -x)));
                }
                Ok(RowJets { values, grads, hessians })
            })
            .collect()
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        self.domain.hull()
    }

    fn robust_signs(&self) -> Vec<f64> {
        // the upper-bound rows p3 - 14 and p2 + p3 - 15 take the margin with a minus sign
        vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0]
    }

    fn affine_rows(&self) -> Vec<bool> {
        vec![false, true, true, true, true, true, true, false]
    }

    fn evaluations(&self) -> usize {
        self.model.evaluations()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureReport {
    pub samples: usize,
    pub failures: usize,
    /// Fraction in `[0, 1]`.
    pub rate: f64,
    pub seed: u64,
    pub center: ParamVector,
    pub half_width: [f64; 3],
}

impl FailureReport {
    pub fn percent(&self) -> f64 {
        100.0 * self.rate
    }
}

/// Fraction of `n` uniform samples around `center` whose EMF falls below `emf_target`.
pub fn failure_rate<M: EmfModel + ?Sized>(
    model: &M,
    center: &ParamVector,
    half_width: [f64; 3],
    emf_target: f64,
    n: usize,
    seed: u64,
) -> Result<FailureReport> {
    if n < 1000 {
        return Err(Error::InvalidInput(alloc::format!("failure audit needs at least 1000 samples, got {n}")));
    }
    let rule = Rule::monte_carlo(&UniformBox::new(*center, half_width)?, n, seed)?;
    let mut failures = 0;
    for e in model.eval_batch(&rule.nodes, 0) {
        if e?.value < emf_target {
            failures += 1;
        }
    }
    Ok(FailureReport { samples: n, failures, rate: failures as f64 / n as f64, seed, center: *center, half_width })
}

/// Settings shared by the cells of an uncertainty sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub uncertainty: Uncertainty,
    pub sqp: SqpOptions,
    pub start: ParamVector,
    /// Failure-rate samples per cell; zero skips the audit.
    pub audit_samples: usize,
    pub audit_seed: u64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            uncertainty: Uncertainty::default(),
            sqp: SqpOptions::default(),
            start: START,
            audit_samples: 10_000,
            audit_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub result: OptimResult,
    pub area: f64,
    pub emf: f64,
    pub failure: Option<FailureReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub kind: Kind,
    pub outcome: Result<SweepCell>,
}

/// Optimizes one kind at one uncertainty half-width and audits the optimum.
pub fn sweep_cell<M: EmfModel>(problem: &BenchmarkProblem<M>, kind: Kind, delta: f64, settings: &SweepSettings) -> SweepRow {
    let run = || -> Result<SweepCell> {
        let uncertainty = Uncertainty { half_width: [delta; 3], ..settings.uncertainty };
        let form = problem.formulation(kind, uncertainty)?;
        let result = opt::sqp_solve(&form, &settings.start, &settings.sqp)?;
        let emf = problem.model.eval(&result.p, 0)?.value;
        let failure = if settings.audit_samples > 0 {
            Some(failure_rate(&problem.model, &result.p, [delta; 3], problem.emf_target, settings.audit_samples, settings.audit_seed)?)
        } else {
            None
        };
        Ok(SweepCell { area: result.p.area(), emf, failure, result })
    };
    SweepRow { delta, kind, outcome: run() }
}

/// Every kind at every half-width; failed cells are kept as errors.
pub fn delta_sweep<M: EmfModel>(
    problem: &BenchmarkProblem<M>,
    kinds: &[Kind],
    deltas: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    if deltas.iter().any(|d| !(0.0..=0.2).contains(d)) {
        return Err(Error::InvalidInput("sweep half-widths must lie in [0, 0.2] mm".into()));
    }
    let mut rows = Vec::new();
    for &delta in deltas {
        for &kind in kinds {
            rows.push(sweep_cell(problem, kind, delta, settings));
        }
    }
    Ok(rows)
}

/// Whether a converged run ended on the EMF boundary.
pub fn emf_active(cell: &SweepCell, emf_target: f64, tol: f64) -> bool {
    cell.result.termination == Termination::Converged && (cell.emf - emf_target).abs() <= tol
}
