//! Particle swarm optimization over a box.
//!
//! Velocities follow `v <- w0 v + w1 R1 (best_n - x) + w2 R2 (best_swarm - x)`
//! with diagonal uniform random `R1`, `R2`; particles leaving the box are
//! projected back onto it. The run stops after `max_iter` iterations, when
//! the swarm best has not improved for `stall` iterations, or when the mean
//! distance of the particles to the swarm best drops below `eps`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Termination, TraceRow};
use crate::error::{Error, Result};
use crate::math::{pairwise_sum, sqrt};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoOptions {
    pub particles: usize,
    pub max_iter: usize,
    pub stall: usize,
    pub eps: f64,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Weight of the squared constraint violation.
    pub penalty: f64,
    pub seed: u64,
}

impl Default for PsoOptions {
    fn default() -> Self {
        PsoOptions {
            particles: 50,
            max_iter: 100,
            stall: 15,
            eps: 1e-6,
            inertia: 0.5,
            cognitive: 1.49,
            social: 1.49,
            penalty: 1e4,
            seed: 0,
        }
    }
}

/// Penalized objective of one particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub penalized: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoOutcome {
    pub best: [f64; 3],
    pub score: Score,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
}

/// Minimizes the batch objective `f` over `[lo, hi]`; `f` scores all
/// particles of one iteration at once, in order.
pub fn minimize<F>(lo: &[f64; 3], hi: &[f64; 3], opts: &PsoOptions, mut f: F) -> Result<PsoOutcome>
where
    F: FnMut(&[[f64; 3]]) -> Vec<Score>,
{
    if opts.particles == 0 || (0..3).any(|i| !(lo[i] <= hi[i])) {
        return Err(Error::InvalidInput("swarm needs particles and a nonempty box".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = opts.particles;
    let mut x: Vec<[f64; 3]> =
        (0..n).map(|_| core::array::from_fn(|i| lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>())).collect();
    let mut v = vec![[0.0; 3]; n];
    let mut scores = f(&x);
    let mut best_x = x.clone();
    let mut best_s = scores.clone();
    let pick = |s: &[Score]| {
        // first index wins ties, so the result does not depend on scheduling
        (0..s.len()).fold(0, |b, i| if s[i].penalized < s[b].penalized { i } else { b })
    };
    let mut g = pick(&best_s);
    let mut swarm_x = best_x[g];
    let mut swarm_s = best_s[g];
    let mut trace = vec![TraceRow { iter: 0, objective: swarm_s.penalized, max_violation: swarm_s.violation, step_norm: 0.0 }];
    let mut since_improvement = 0;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    for k in 1..=opts.max_iter {
        iterations = k;
        for p in 0..n {
            for i in 0..3 {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                v[p][i] = opts.inertia * v[p][i]
                    + opts.cognitive * r1 * (best_x[p][i] - x[p][i])
                    + opts.social * r2 * (swarm_x[i] - x[p][i]);
                x[p][i] = (x[p][i] + v[p][i]).clamp(lo[i], hi[i]);
            }
        }
        scores = f(&x);
        for p in 0..n {
            if scores[p].penalized < best_s[p].penalized {
                best_s[p] = scores[p];
                best_x[p] = x[p];
            }
        }
        g = pick(&best_s);
        let moved = sqrt((0..3).map(|i| (best_x[g][i] - swarm_x[i]) * (best_x[g][i] - swarm_x[i])).sum());
        if best_s[g].penalized < swarm_s.penalized {
            swarm_s = best_s[g];
            swarm_x = best_x[g];
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        trace.push(TraceRow { iter: k, objective: swarm_s.penalized, max_violation: swarm_s.violation, step_norm: moved });
        let spread: Vec<f64> = x.iter().map(|xp| sqrt((0..3).map(|i| (swarm_x[i] - xp[i]) * (swarm_x[i] - xp[i])).sum())).collect();
        if pairwise_sum(&spread) / (n as f64) < opts.eps {
            termination = Termination::Clustered;
            break;
        }
        if since_improvement >= opts.stall {
            termination = Termination::Stalled;
            break;
        }
    }
    Ok(PsoOutcome { best: swarm_x, score: swarm_s, iterations, termination, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(c: [f64; 3]) -> impl FnMut(&[[f64; 3]]) -> Vec<Score> {
        move |xs| {
            xs.iter()
                .map(|x| Score { penalized: (0..3).map(|i| (x[i] - c[i]).powi(2)).sum(), violation: 0.0 })
                .collect()
        }
    }

    #[test]
    fn sphere_minimum_is_found() {
        let c = [0.3, -1.2, 2.0];
        let opts = PsoOptions { stall: 100, ..Default::default() };
        let out = minimize(&[-5.0; 3], &[5.0; 3], &opts, sphere(c)).unwrap();
        for i in 0..3 {
            assert!((out.best[i] - c[i]).abs() < 1e-3, "{:?}", out.best);
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let opts = PsoOptions { seed: 7, max_iter: 20, ..Default::default() };
        let a = minimize(&[-5.0; 3], &[5.0; 3], &opts, sphere([1.0, 1.0, 1.0])).unwrap();
        let b = minimize(&[-5.0; 3], &[5.0; 3], &opts, sphere([1.0, 1.0, 1.0])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn particles_stay_in_the_box() {
        let lo = [0.0, 1.0, 2.0];
        let hi = [1.0, 2.0, 3.0];
        let opts = PsoOptions { max_iter: 30, ..Default::default() };
        minimize(&lo, &hi, &opts, |xs| {
            for x in xs {
                for i in 0..3 {
                    assert!(x[i] >= lo[i] && x[i] <= hi[i]);
                }
            }
            sphere([10.0, -10.0, 0.0])(xs)
        })
        .unwrap();
    }

    #[test]
    fn constant_objective_stalls() {
        let opts = PsoOptions::default();
        let out = minimize(&[0.0; 3], &[1.0; 3], &opts, |xs| xs.iter().map(|_| Score { penalized: 1.0, violation: 0.0 }).collect())
            .unwrap();
        assert_eq!(out.termination, Termination::Stalled);
        assert_eq!(out.iterations, opts.stall);
    }

    #[test]
    fn degenerate_box_clusters() {
        let out = minimize(&[1.0; 3], &[1.0; 3], &PsoOptions::default(), sphere([0.0; 3])).unwrap();
        assert_eq!(out.termination, Termination::Clustered);
        assert_eq!(out.best, [1.0; 3]);
    }
}
