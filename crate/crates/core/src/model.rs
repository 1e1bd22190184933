//! Forward EMF models behind one interface, so optimizers and samplers do not
//! care whether a value comes from a full solve or a reduced model.

use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::Result;
use crate::fem::AffineModel;
use crate::geom::ParamVector;
use crate::rb::Dictionary;
use crate::sens;

/// EMF with optional derivatives with respect to the design vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmfEval {
    pub value: f64,
    pub gradient: Option<[f64; 3]>,
    pub hessian: Option<[[f64; 3]; 3]>,
}

impl EmfEval {
    pub fn gradient_or_zero(&self) -> [f64; 3] {
        self.gradient.unwrap_or([0.0; 3])
    }
}

pub trait EmfModel: Sync {
    /// `order` 0 returns the value, 1 adds the gradient, 2 the Hessian.
    fn eval(&self, p: &ParamVector, order: usize) -> Result<EmfEval>;

    /// Evaluates many designs; results keep the input order.
    fn eval_batch(&self, ps: &[ParamVector], order: usize) -> Vec<Result<EmfEval>> {
        ps.iter().map(|p| self.eval(p, order)).collect()
    }

    /// Number of forward evaluations so far.
    fn evaluations(&self) -> usize;
}

impl<M: EmfModel + ?Sized> EmfModel for &M {
    fn eval(&self, p: &ParamVector, order: usize) -> Result<EmfEval> {
        (**self).eval(p, order)
    }

    fn eval_batch(&self, ps: &[ParamVector], order: usize) -> Vec<Result<EmfEval>> {
        (**self).eval_batch(ps, order)
    }

    fn evaluations(&self) -> usize {
        (**self).evaluations()
    }
}

/// Full finite element solve plus forward sensitivities.
#[derive(Debug)]
pub struct FullOrder<'a> {
    pub model: &'a AffineModel,
    count: AtomicUsize,
}

impl<'a> FullOrder<'a> {
    pub fn new(model: &'a AffineModel) -> Self {
        FullOrder { model, count: AtomicUsize::new(0) }
    }
}

impl EmfModel for FullOrder<'_> {
    fn eval(&self, p: &ParamVector, order: usize) -> Result<EmfEval> {
        self.count.fetch_add(1, Ordering::Relaxed);
        let sol = self.model.solve(p)?;
        let value = self.model.emf(&sol.u);
        if order == 0 {
            return Ok(EmfEval { value, gradient: None, hessian: None });
        }
        let b = sens::first_order(self.model, &sol)?;
        if order == 1 {
            return Ok(EmfEval { value, gradient: Some(b.gradient), hessian: None });
        }
        let b2 = sens::second_order(self.model, &sol, &b)?;
        Ok(EmfEval { value, gradient: Some(b.gradient), hessian: b2.hessian })
    }

    fn evaluations(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

/// Online evaluation through the dictionary of reduced models.
#[derive(Debug)]
pub struct Reduced<'a> {
    pub model: &'a AffineModel,
    pub dictionary: &'a Dictionary,
    count: AtomicUsize,
}

impl<'a> Reduced<'a> {
    pub fn new(model: &'a AffineModel, dictionary: &'a Dictionary) -> Self {
        Reduced { model, dictionary, count: AtomicUsize::new(0) }
    }
}

impl EmfModel for Reduced<'_> {
    fn eval(&self, p: &ParamVector, order: usize) -> Result<EmfEval> {
        self.count.fetch_add(1, Ordering::Relaxed);
        let rm = self.dictionary.lookup(p)?;
        let s = rm.solve(&self.model.tri, p, order)?;
        Ok(EmfEval { value: s.emf, gradient: s.gradient, hessian: s.hessian })
    }

    fn evaluations(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

/// Closed-form model, for tests and synthetic studies.
pub struct Analytic<F> {
    f: F,
    count: AtomicUsize,
}

impl<F> Analytic<F>
where
    F: Fn(&ParamVector) -> (f64, [f64; 3], [[f64; 3]; 3]) + Sync,
{
    pub fn new(f: F) -> Self {
        Analytic { f, count: AtomicUsize::new(0) }
    }
}

impl<F> EmfModel for Analytic<F>
where
    F: Fn(&ParamVector) -> (f64, [f64; 3], [[f64; 3]; 3]) + Sync,
{
    fn eval(&self, p: &ParamVector, order: usize) -> Result<EmfEval> {
        self.count.fetch_add(1, Ordering::Relaxed);
        let (value, g, h) = (self.f)(p);
        Ok(EmfEval { value, gradient: (order >= 1).then_some(g), hessian: (order >= 2).then_some(h) })
    }

    fn evaluations(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}
