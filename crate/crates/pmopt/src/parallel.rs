//! Thread-parallel evaluation on top of the sequential core.
//!
//! Results are collected in input order, so every reduction downstream sees
//! the same sequence regardless of the number of threads.

use pmopt_core::fem::AffineModel;
use pmopt_core::geom::ParamVector;
use pmopt_core::model::{EmfEval, EmfModel};
use pmopt_core::rb::{train_cube, Breakpoints, Dictionary, GreedyOptions};
use rayon::prelude::*;

/// Evaluates batches of designs on the rayon pool.
pub struct Parallel<M>(pub M);

impl<M: EmfModel> EmfModel for Parallel<M> {
    fn eval(&self, p: &ParamVector, order: usize) -> pmopt_core::Result<EmfEval> {
        self.0.eval(p, order)
    }

    fn eval_batch(&self, ps: &[ParamVector], order: usize) -> Vec<pmopt_core::Result<EmfEval>> {
        ps.par_iter().map(|p| self.0.eval(p, order)).collect()
    }

    fn evaluations(&self) -> usize {
        self.0.evaluations()
    }
}

/// Trains all cubes of the partition concurrently.
pub fn build_dictionary(model: &AffineModel, breakpoints: Breakpoints, opts: &GreedyOptions) -> pmopt_core::Result<Dictionary> {
    breakpoints.validate()?;
    let results = (0..breakpoints.len()).into_par_iter().map(|i| train_cube(model, &breakpoints, i, opts)).collect();
    Ok(Dictionary::from_cubes(breakpoints, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pmopt_core::model::Analytic;

    #[test]
    fn batch_order_and_count_are_kept() {
        let m = Parallel(Analytic::new(|p: &ParamVector| (p.p1() * 10.0 + p.p2(), [0.0; 3], [[0.0; 3]; 3])));
        let ps: Vec<ParamVector> = (0..200).map(|i| ParamVector::new(i as f64, 0.5, 0.0)).collect();
        let out = m.eval_batch(&ps, 0);
        for (i, e) in out.iter().enumerate() {
            assert_eq!(e.as_ref().unwrap().value, i as f64 * 10.0 + 0.5);
        }
        assert_eq!(m.evaluations(), 200);
    }
}
