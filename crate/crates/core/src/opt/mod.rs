//! Design formulations and their solvers.
//!
//! A [`BaseProblem`] supplies the deterministic cost (row 0) and constraint
//! rows `G(P) <= 0` with derivatives. A [`Formulation`] turns it into one of
//! six problems:
//!
//! | kind        | cost / rows                                   |
//! |-------------|-----------------------------------------------|
//! | Nominal     | `G(P)`                                        |
//! | Wc1         | `G(P) + ||D grad G(P)||_1`                    |
//! | Wc2         | `G(P) + ||D grad G(P)||_2`                    |
//! | UqNominal   | `E[G(P + X)]`                                 |
//! | UqRobust    | `E[G(P + X)] + s lambda std[G(P + X)]`        |
//! | UqLin       | `G(P) + lambda ||std[X] o grad G(P)||_2`      |
//!
//! with `X` uniform on `[-delta, delta]^3`, `D = diag(delta)` and a per-row
//! sign `s` chosen by the base problem. The worst-case 1-norm problem is
//! handed to SQP in its smooth slack form.

pub mod pso;
pub mod qp;
pub mod sqp;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::geom::ParamVector;
use crate::math::sqrt;
use crate::uq::{MomentMethod, Rule, UniformBox};

pub use pso::PsoOptions;
pub use sqp::SqpOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Nominal,
    Wc1,
    Wc2,
    UqNominal,
    UqRobust,
    UqLin,
}

impl Kind {
    pub const ALL: [Kind; 6] = [Kind::Nominal, Kind::Wc1, Kind::Wc2, Kind::UqNominal, Kind::UqRobust, Kind::UqLin];

    pub fn name(&self) -> &'static str {
        match self {
            Kind::Nominal => "nominal",
            Kind::Wc1 => "wc1",
            Kind::Wc2 => "wc2",
            Kind::UqNominal => "uq_nominal",
            Kind::UqRobust => "uq_robust",
            Kind::UqLin => "uq_lin",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    /// Whether the formulation looks at perturbed designs at all.
    pub fn is_uncertain(&self) -> bool {
        *self != Kind::Nominal
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cost (index 0) and constraint rows at one design.
#[derive(Debug, Clone, PartialEq)]
pub struct RowJets {
    pub values: Vec<f64>,
    /// Present for order >= 1.
    pub grads: Vec<[f64; 3]>,
    /// Present for order 2.
    pub hessians: Vec<[[f64; 3]; 3]>,
}

pub trait BaseProblem: Sync {
    /// Number of rows including the cost.
    fn n_rows(&self) -> usize;

    /// Rows at many designs, in input order.
    fn eval_batch(&self, ps: &[ParamVector], order: usize) -> Vec<Result<RowJets>>;

    fn eval(&self, p: &ParamVector, order: usize) -> Result<RowJets> {
        self.eval_batch(core::slice::from_ref(p), order).pop().expect("one result per design")
    }

    /// Box containing every admissible design.
    fn bounds(&self) -> ([f64; 3], [f64; 3]);

    /// Sign of the `lambda std` margin per row in the robust stochastic problem.
    fn robust_signs(&self) -> Vec<f64>;

    /// Rows whose gradient does not depend on the design.
    fn affine_rows(&self) -> Vec<bool>;

    /// Forward model evaluations so far.
    fn evaluations(&self) -> usize;
}

impl<B: BaseProblem + ?Sized> BaseProblem for &B {
    fn n_rows(&self) -> usize {
        (**self).n_rows()
    }
    fn eval_batch(&self, ps: &[ParamVector], order: usize) -> Vec<Result<RowJets>> {
        (**self).eval_batch(ps, order)
    }
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        (**self).bounds()
    }
    fn robust_signs(&self) -> Vec<f64> {
        (**self).robust_signs()
    }
    fn affine_rows(&self) -> Vec<bool> {
        (**self).affine_rows()
    }
    fn evaluations(&self) -> usize {
        (**self).evaluations()
    }
}

/// Uncertainty description shared by the robust kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Uncertainty {
    /// Half-width of the perturbation per parameter; also the diagonal of `D`.
    pub half_width: [f64; 3],
    /// Weight of the standard deviation in the robust stochastic kinds.
    pub lambda: f64,
    pub method: MomentMethod,
    pub nodes_per_dim: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for Uncertainty {
    fn default() -> Self {
        Uncertainty {
            half_width: [0.2; 3],
            lambda: sqrt(3.0),
            method: MomentMethod::Sq,
            nodes_per_dim: 5,
            mc_samples: 5000,
            seed: 0,
        }
    }
}

impl Uncertainty {
    pub fn isotropic(delta: f64) -> Self {
        Uncertainty { half_width: [delta; 3], ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormValue {
    pub objective: f64,
    pub constraints: Vec<f64>,
    pub objective_grad: Option<[f64; 3]>,
    pub constraint_grads: Option<Vec<[f64; 3]>>,
}

impl FormValue {
    pub fn max_violation(&self) -> f64 {
        self.constraints.iter().fold(0.0_f64, |m, v| m.max(*v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
    Infeasible,
    /// No improvement of the swarm best for the stall window.
    Stalled,
    /// The swarm has collapsed onto its best point.
    Clustered,
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailure => "line_search_failure",
            Termination::Infeasible => "infeasible",
            Termination::Stalled => "stalled",
            Termination::Clustered => "clustered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Sqp,
    Pso,
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Sqp => "sqp",
            Solver::Pso => "pso",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub kind: Kind,
    pub solver: Solver,
    pub p: ParamVector,
    pub objective: f64,
    pub constraints: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Forward model evaluations spent by the run.
    pub evaluations: usize,
    pub trace: Vec<TraceRow>,
}

impl OptimResult {
    pub fn max_violation(&self) -> f64 {
        self.constraints.iter().fold(0.0_f64, |m, v| m.max(*v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Norm {
    One,
    Two,
}

/// `||d o g||` and its derivative `H^T d o (d o g) / ||.||` (or the sign rule).
fn scaled_norm(d: &[f64; 3], g: &[f64; 3], h: Option<&[[f64; 3]; 3]>, norm: Norm) -> (f64, [f64; 3]) {
    let dg: [f64; 3] = core::array::from_fn(|k| d[k] * g[k]);
    let (value, weight): (f64, [f64; 3]) = match norm {
        Norm::One => (dg.iter().map(|x| x.abs()).sum(), core::array::from_fn(|k| if dg[k] == 0.0 { 0.0 } else { d[k] * dg[k].signum() })),
        Norm::Two => {
            let n = sqrt(dg.iter().map(|x| x * x).sum());
            (n, core::array::from_fn(|k| if n > 0.0 { d[k] * dg[k] / n } else { 0.0 }))
        }
    };
    let mut grad = [0.0; 3];
    if let Some(h) = h {
        for (i, gi) in grad.iter_mut().enumerate() {
            *gi = (0..3).map(|k| h[k][i] * weight[k]).sum();
        }
    }
    (value, grad)
}

pub struct Formulation<'a, B: ?Sized> {
    pub kind: Kind,
    pub base: &'a B,
    pub uncertainty: Uncertainty,
}

impl<'a, B: BaseProblem + ?Sized> Formulation<'a, B> {
    pub fn new(kind: Kind, base: &'a B, uncertainty: Uncertainty) -> Result<Self> {
        let u = &uncertainty;
        if u.half_width.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidInput("uncertainty half-widths must be finite and nonnegative".into()));
        }
        if matches!(kind, Kind::UqRobust | Kind::UqLin) && !(u.lambda > 0.0 && u.lambda.is_finite()) {
            return Err(Error::InvalidInput(alloc::format!("lambda must be positive, got {}", u.lambda)));
        }
        if u.nodes_per_dim == 0 || u.mc_samples < 2 {
            return Err(Error::InvalidInput("quadrature needs a node per axis and Monte Carlo two samples".into()));
        }
        let (lo, hi) = base.bounds();
        if (0..3).any(|i| lo[i] + 2.0 * u.half_width[i] > hi[i]) {
            return Err(Error::InvalidInput("uncertainty is wider than the design box".into()));
        }
        Ok(Formulation { kind, base, uncertainty })
    }

    /// Margin kept to the design box so that perturbed designs stay inside.
    pub fn margin(&self) -> [f64; 3] {
        if self.kind.is_uncertain() {
            self.uncertainty.half_width
        } else {
            [0.0; 3]
        }
    }

    /// Base box tightened by the margin.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let (lo, hi) = self.base.bounds();
        let m = self.margin();
        (core::array::from_fn(|i| lo[i] + m[i]), core::array::from_fn(|i| hi[i] - m[i]))
    }

    pub fn check_admissible(&self, p: &ParamVector) -> Result<()> {
        let (lo, hi) = self.bounds();
        for i in 0..3 {
            let tol = 1e-9 * (1.0 + p.0[i].abs());
            if !(p.0[i] >= lo[i] - tol && p.0[i] <= hi[i] + tol) {
                return Err(Error::InfeasibleParameter(alloc::format!(
                    "component {} = {} outside [{}, {}]",
                    i + 1,
                    p.0[i],
                    lo[i],
                    hi[i]
                )));
            }
        }
        Ok(())
    }

    /// Diagonal scaling of the gradient norm for the norm-penalized kinds.
    pub fn scaling(&self) -> [f64; 3] {
        let d = self.uncertainty.half_width;
        match self.kind {
            Kind::UqLin => d.map(|di| self.uncertainty.lambda * di / sqrt(3.0)),
            _ => d,
        }
    }

    fn distribution(&self, p: &ParamVector) -> UniformBox {
        UniformBox { mean: *p, half_width: self.uncertainty.half_width }
    }

    /// Quadrature or sampling rule around `p`; Monte Carlo reuses the seed
    /// so that nearby designs see the same perturbations.
    pub fn rule(&self, p: &ParamVector) -> Result<Rule> {
        let dist = self.distribution(p);
        match self.uncertainty.method {
            MomentMethod::Mc => Rule::monte_carlo(&dist, self.uncertainty.mc_samples, self.uncertainty.seed),
            _ => Rule::tensor(&dist, [self.uncertainty.nodes_per_dim; 3]),
        }
    }

    fn uses_rule(&self) -> bool {
        matches!(self.kind, Kind::UqNominal | Kind::UqRobust) && self.uncertainty.method != MomentMethod::Lin
    }

    /// Cost and constraints at `p`, with gradients when `gradients`.
    pub fn evaluate(&self, p: &ParamVector, gradients: bool) -> Result<FormValue> {
        self.check_admissible(p)?;
        if self.uses_rule() {
            let rule = self.rule(p)?;
            let jets = self.base.eval_batch(&rule.nodes, gradients as usize);
            let jets = jets.into_iter().collect::<Result<Vec<_>>>()?;
            return Ok(self.from_rule(&rule, &jets, gradients));
        }
        let order = match self.kind {
            Kind::Nominal | Kind::UqNominal => gradients as usize,
            _ => 1 + gradients as usize,
        };
        let jets = self.base.eval(p, order)?;
        Ok(self.from_point(&jets, gradients))
    }

    /// Values only, for many designs; all model evaluations go through one batch.
    pub fn evaluate_batch(&self, ps: &[ParamVector]) -> Vec<Result<FormValue>> {
        let admissible: Vec<Result<()>> = ps.iter().map(|p| self.check_admissible(p)).collect();
        if self.uses_rule() {
            let rules: Vec<Option<Rule>> =
                ps.iter().zip(&admissible).map(|(p, ok)| ok.as_ref().ok().and_then(|_| self.rule(p).ok())).collect();
            let nodes: Vec<ParamVector> = rules.iter().flatten().flat_map(|r| r.nodes.iter().copied()).collect();
            let mut jets = self.base.eval_batch(&nodes, 0).into_iter();
            return rules
                .iter()
                .zip(admissible)
                .map(|(rule, ok)| {
                    ok?;
                    let rule = rule.as_ref().ok_or_else(|| Error::InvalidInput("no rule".into()))?;
                    // drain the whole rule before looking at errors so the next design reads its own nodes
                    let js: Vec<Result<RowJets>> = jets.by_ref().take(rule.len()).collect();
                    let js = js.into_iter().collect::<Result<Vec<_>>>()?;
                    Ok(self.from_rule(rule, &js, false))
                })
                .collect();
        }
        let order = if matches!(self.kind, Kind::Nominal | Kind::UqNominal) { 0 } else { 1 };
        let valid: Vec<ParamVector> = ps.iter().zip(&admissible).filter(|(_, a)| a.is_ok()).map(|(p, _)| *p).collect();
        let mut jets = self.base.eval_batch(&valid, order).into_iter();
        admissible
            .into_iter()
            .map(|ok| {
                ok?;
                let j = jets.next().expect("one result per admissible design")?;
                Ok(self.from_point(&j, false))
            })
            .collect()
    }

    fn from_point(&self, jets: &RowJets, gradients: bool) -> FormValue {
        let mut values = jets.values.clone();
        let mut grads: Vec<[f64; 3]> = if gradients { jets.grads.clone() } else { Vec::new() };
        let linearized_std = self.uncertainty.half_width.map(|di| self.uncertainty.lambda * di / sqrt(3.0));
        let (norm, d, signed) = match self.kind {
            // the linearized mean is the nominal value
            Kind::Nominal | Kind::UqNominal => return split(values, gradients.then_some(grads)),
            Kind::Wc1 => (Norm::One, self.scaling(), false),
            Kind::Wc2 | Kind::UqLin => (Norm::Two, self.scaling(), false),
            Kind::UqRobust => (Norm::Two, linearized_std, true),
        };
        let signs = self.base.robust_signs();
        for r in 0..values.len() {
            let h = if gradients { Some(&jets.hessians[r]) } else { None };
            let (v, g) = scaled_norm(&d, &jets.grads[r], h, norm);
            let s = if signed { signs[r] } else { 1.0 };
            values[r] += s * v;
            if gradients {
                for k in 0..3 {
                    grads[r][k] += s * g[k];
                }
            }
        }
        split(values, gradients.then_some(grads))
    }

    fn from_rule(&self, rule: &Rule, jets: &[RowJets], gradients: bool) -> FormValue {
        let n = self.base.n_rows();
        let signs = self.base.robust_signs();
        let robust = self.kind == Kind::UqRobust;
        let bessel = if rule.method == MomentMethod::Mc { rule.len() as f64 / (rule.len() as f64 - 1.0) } else { 1.0 };
        let mut values = vec![0.0; n];
        let mut grads = vec![[0.0; 3]; n];
        for r in 0..n {
            let v: Vec<f64> = jets.iter().map(|j| j.values[r]).collect();
            let m = rule.moments(&v);
            values[r] = m.mean + if robust { signs[r] * self.uncertainty.lambda * m.std } else { 0.0 };
            if gradients {
                for k in 0..3 {
                    let gk: Vec<f64> = jets.iter().map(|j| j.grads[r][k]).collect();
                    let mean_g = rule.mean(&gk);
                    let cov: Vec<f64> = v.iter().zip(&gk).map(|(vi, gi)| (vi - m.mean) * gi).collect();
                    let std_g = if m.std > 0.0 { bessel * rule.mean(&cov) / m.std } else { 0.0 };
                    grads[r][k] = mean_g + if robust { signs[r] * self.uncertainty.lambda * std_g } else { 0.0 };
                }
            }
        }
        split(values, gradients.then_some(grads))
    }
}

fn split(mut values: Vec<f64>, grads: Option<Vec<[f64; 3]>>) -> FormValue {
    let objective = values.remove(0);
    let (objective_grad, constraint_grads) = match grads {
        Some(mut g) => {
            let g0 = g.remove(0);
            (Some(g0), Some(g))
        }
        None => (None, None),
    };
    FormValue { objective, constraints: values, objective_grad, constraint_grads }
}

/// SQP variables: the design, plus for the 1-norm kind one slack block per
/// non-affine row bounding `|D grad G|` componentwise.
struct FormulationNlp<'f, 'a, B: ?Sized> {
    form: &'f Formulation<'a, B>,
    slack_rows: Vec<usize>,
}

impl<'f, 'a, B: BaseProblem + ?Sized> FormulationNlp<'f, 'a, B> {
    fn new(form: &'f Formulation<'a, B>) -> Self {
        let slack_rows = if form.kind == Kind::Wc1 {
            form.base.affine_rows().iter().enumerate().filter(|(_, a)| !**a).map(|(r, _)| r).collect()
        } else {
            Vec::new()
        };
        FormulationNlp { form, slack_rows }
    }

    fn design(x: &[f64]) -> ParamVector {
        ParamVector([x[0], x[1], x[2]])
    }

    fn start(&self, p: &ParamVector) -> Result<Vec<f64>> {
        let mut x = p.0.to_vec();
        if !self.slack_rows.is_empty() {
            let j = self.form.base.eval(p, 1)?;
            let d = self.form.scaling();
            for &r in &self.slack_rows {
                x.extend((0..3).map(|k| (d[k] * j.grads[r][k]).abs()));
            }
        }
        Ok(x)
    }

    fn slack_eval(&self, x: &[f64], derivatives: bool) -> Result<sqp::NlpPoint> {
        let p = Self::design(x);
        self.form.check_admissible(&p)?;
        let j = self.form.base.eval(&p, 1 + derivatives as usize)?;
        let d = self.form.scaling();
        let n = x.len();
        let block = |r: usize| self.slack_rows.iter().position(|s| *s == r).map(|b| 3 + 3 * b);
        let mut c = Vec::new();
        let mut jac = Vec::new();
        let mut f = 0.0;
        let mut grad = Vec::new();
        for r in 0..j.values.len() {
            let mut v = j.values[r];
            let mut row = vec![0.0; n];
            if derivatives {
                row[..3].copy_from_slice(&j.grads[r]);
            }
            match block(r) {
                Some(b) => {
                    v += x[b] + x[b + 1] + x[b + 2];
                    row[b..b + 3].fill(1.0);
                }
                None => v += scaled_norm(&d, &j.grads[r], None, Norm::One).0,
            }
            if r == 0 {
                f = v;
                if derivatives {
                    grad = row;
                }
            } else {
                c.push(v);
                if derivatives {
                    jac.push(row);
                }
            }
        }
        // -xi <= D grad G <= xi
        for &r in &self.slack_rows {
            let b = block(r).expect("slack row has a block");
            for k in 0..3 {
                let dg = d[k] * j.grads[r][k];
                for sign in [1.0, -1.0] {
                    c.push(sign * dg - x[b + k]);
                    if derivatives {
                        let mut row = vec![0.0; n];
                        for i in 0..3 {
                            row[i] = sign * d[k] * j.hessians[r][k][i];
                        }
                        row[b + k] = -1.0;
                        jac.push(row);
                    }
                }
            }
        }
        Ok(sqp::NlpPoint { f, c, grad, jac })
    }
}

impl<B: BaseProblem + ?Sized> sqp::Nlp for FormulationNlp<'_, '_, B> {
    fn dim(&self) -> usize {
        3 + 3 * self.slack_rows.len()
    }

    fn n_constraints(&self) -> usize {
        self.form.base.n_rows() - 1 + 6 * self.slack_rows.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.form.bounds();
        let mut l = lo.to_vec();
        let mut h = hi.to_vec();
        l.resize(self.dim(), 0.0);
        h.resize(self.dim(), f64::INFINITY);
        (l, h)
    }

    fn eval(&self, x: &[f64], derivatives: bool) -> Result<sqp::NlpPoint> {
        if !self.slack_rows.is_empty() {
            return self.slack_eval(x, derivatives);
        }
        let v = self.form.evaluate(&Self::design(x), derivatives)?;
        let grad = v.objective_grad.map(|g| g.to_vec()).unwrap_or_default();
        let jac = v.constraint_grads.map(|gs| gs.iter().map(|g| g.to_vec()).collect()).unwrap_or_default();
        Ok(sqp::NlpPoint { f: v.objective, c: v.constraints, grad, jac })
    }
}

/// SQP on the formulation from `p0` (projected into the admissible box).
pub fn sqp_solve<B: BaseProblem + ?Sized>(form: &Formulation<'_, B>, p0: &ParamVector, opts: &SqpOptions) -> Result<OptimResult> {
    let before = form.base.evaluations();
    let nlp = FormulationNlp::new(form);
    let (lo, hi) = form.bounds();
    let p0 = ParamVector(core::array::from_fn(|i| p0.0[i].clamp(lo[i], hi[i])));
    let x0 = nlp.start(&p0)?;
    let out = sqp::solve_nlp(&nlp, &x0, opts)?;
    let p = FormulationNlp::<B>::design(&out.x);
    let fin = form.evaluate(&p, false)?;
    let mut termination = out.termination;
    if fin.max_violation() > opts.tol {
        termination = Termination::Infeasible;
    }
    Ok(OptimResult {
        kind: form.kind,
        solver: Solver::Sqp,
        p,
        objective: fin.objective,
        constraints: fin.constraints,
        iterations: out.iterations,
        termination,
        evaluations: form.base.evaluations() - before,
        trace: out.trace,
    })
}

/// Particle swarm on the formulation with a quadratic penalty on violations.
pub fn pso_solve<B: BaseProblem + ?Sized>(form: &Formulation<'_, B>, opts: &PsoOptions) -> Result<OptimResult> {
    let before = form.base.evaluations();
    let (lo, hi) = form.bounds();
    let rho = opts.penalty;
    let out = pso::minimize(&lo, &hi, opts, |xs| {
        let ps: Vec<ParamVector> = xs.iter().map(|x| ParamVector(*x)).collect();
        form.evaluate_batch(&ps)
            .into_iter()
            .map(|r| match r {
                Ok(v) => {
                    let pen: f64 = v.constraints.iter().map(|c| c.max(0.0) * c.max(0.0)).sum();
                    pso::Score { penalized: v.objective + rho * pen, violation: v.max_violation() }
                }
                Err(_) => pso::Score { penalized: f64::INFINITY, violation: f64::INFINITY },
            })
            .collect()
    })?;
    let p = ParamVector(out.best);
    let fin = form.evaluate(&p, false)?;
    Ok(OptimResult {
        kind: form.kind,
        solver: Solver::Pso,
        p,
        objective: fin.objective,
        constraints: fin.constraints,
        iterations: out.iterations,
        termination: out.termination,
        evaluations: form.base.evaluations() - before,
        trace: out.trace,
    })
}

/// Worst-case 2-norm against linearized stochastic optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub delta: f64,
    pub lambda: f64,
    pub wc2: OptimResult,
    pub uq_lin: OptimResult,
    /// `||P*_wc2 - P*_uq_lin||_inf`
    pub param_gap: f64,
    /// Relative objective difference.
    pub objective_gap: f64,
}

/// Solves the worst-case 2-norm problem with `D = delta I` and the linearized
/// stochastic problem with `lambda = D_ii / std = sqrt(3)` from the same start.
pub fn theorem1_check<B: BaseProblem + ?Sized>(
    base: &B,
    delta: f64,
    p0: &ParamVector,
    opts: &SqpOptions,
) -> Result<Theorem1Report> {
    let lambda = if delta > 0.0 { delta / (delta / sqrt(3.0)) } else { sqrt(3.0) };
    let wc2 = sqp_solve(&Formulation::new(Kind::Wc2, base, Uncertainty { half_width: [delta; 3], ..Default::default() })?, p0, opts)?;
    let lin = Uncertainty { half_width: [delta; 3], lambda, ..Default::default() };
    let uq_lin = sqp_solve(&Formulation::new(Kind::UqLin, base, lin)?, p0, opts)?;
    let param_gap = wc2.p.max_abs_diff(&uq_lin.p);
    let objective_gap = (wc2.objective - uq_lin.objective).abs() / wc2.objective.abs().max(f64::MIN_POSITIVE);
    Ok(Theorem1Report { delta, lambda, wc2, uq_lin, param_gap, objective_gap })
}

/// Human-readable one-line description.
pub fn describe(r: &OptimResult) -> String {
    alloc::format!(
        "{} {} P=({:.4}, {:.4}, {:.4}) J={:.6} iters={} evals={} {}",
        r.kind,
        r.solver.name(),
        r.p.0[0],
        r.p.0[1],
        r.p.0[2],
        r.objective,
        r.iterations,
        r.evaluations,
        r.termination.name()
    )
}
