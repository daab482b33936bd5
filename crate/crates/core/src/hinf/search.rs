//! Derivative-free mesh-adaptive pattern search.
//!
//! Each iteration polls `x +/- mesh * d` over an orthonormal basis obtained
//! from a random Householder reflection, accepts the first strict decrease,
//! and doubles the mesh on success or halves it on failure. Optional restarts
//! perturb the incumbent and run again with the remaining budget.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::closedloop::{GainSet, Theta, THETA_NAMES};
use crate::error::{Error, Result};

use super::objective::{objective, require_feasible, ObjectiveContext, FAILURE_PENALTY};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Maximum number of objective evaluations after the initial one.
    pub max_evaluations: usize,
    pub initial_mesh: f64,
    pub max_mesh: f64,
    /// Stop when the (normalized) mesh falls below this size.
    pub min_mesh: f64,
    pub restarts: usize,
    /// Half-width of the uniform restart perturbation (normalized units).
    pub restart_spread: f64,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 2500,
            initial_mesh: 0.25,
            max_mesh: 1.0,
            min_mesh: 1e-6,
            restarts: 1,
            restart_spread: 0.05,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MeshConverged,
    BudgetExhausted,
}

/// One accepted improvement of the incumbent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub evaluations: usize,
    pub objective: f64,
    pub mesh: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub history: Vec<HistoryEntry>,
    pub stop: StopReason,
}

fn householder_directions(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        v = vec![0.0; n];
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    let mut dirs = Vec::with_capacity(2 * n);
    for k in 0..n {
        let col: Vec<f64> = (0..n)
            .map(|i| (if i == k { 1.0 } else { 0.0 }) - 2.0 * v[i] * v[k])
            .collect();
        dirs.push(col.iter().map(|x| -x).collect());
        dirs.push(col);
    }
    dirs
}

/// Minimizes `f` from `x0`.
pub fn pattern_search<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &SearchOptions,
) -> SearchOutcome {
    let n = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let f0 = f(x0);
    let mut best_x = x0.to_vec();
    let mut best_f = f0;
    let mut evals = 0usize;
    let mut iterations = 0usize;
    let mut history = vec![HistoryEntry {
        iteration: 0,
        evaluations: 0,
        objective: f0,
        mesh: opts.initial_mesh,
    }];
    let mut stop = StopReason::MeshConverged;

    if n == 0 {
        return SearchOutcome {
            x: best_x,
            value: best_f,
            initial_value: f0,
            evaluations: 0,
            iterations: 0,
            history,
            stop,
        };
    }

    let mut start = (x0.to_vec(), f0);
    for run in 0..=opts.restarts {
        let (mut x, mut fx) = start.clone();
        let mut mesh = opts.initial_mesh;
        let mut last_success: Option<Vec<f64>> = None;
        loop {
            if mesh < opts.min_mesh {
                stop = StopReason::MeshConverged;
                break;
            }
            if evals >= opts.max_evaluations {
                stop = StopReason::BudgetExhausted;
                break;
            }
            iterations += 1;
            let mut dirs = householder_directions(n, &mut rng);
            if let Some(d) = last_success.take() {
                dirs.insert(0, d);
            }
            let mut improved = false;
            for d in dirs {
                if evals >= opts.max_evaluations {
                    break;
                }
                let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + mesh * b).collect();
                let ft = f(&trial);
                evals += 1;
                if ft < fx {
                    x = trial;
                    fx = ft;
                    last_success = Some(d);
                    improved = true;
                    break;
                }
            }
            if improved {
                if fx < best_f {
                    best_f = fx;
                    best_x = x.clone();
                    history.push(HistoryEntry {
                        iteration: iterations,
                        evaluations: evals,
                        objective: fx,
                        mesh,
                    });
                }
                mesh = (mesh * 2.0).min(opts.max_mesh);
            } else {
                mesh *= 0.5;
            }
        }
        if stop == StopReason::BudgetExhausted || run == opts.restarts {
            break;
        }
        let perturbed: Vec<f64> = best_x
            .iter()
            .map(|v| v + opts.restart_spread * rng.gen_range(-1.0..1.0))
            .collect();
        let fp = f(&perturbed);
        evals += 1;
        if fp < best_f {
            best_f = fp;
            best_x = perturbed.clone();
            history.push(HistoryEntry {
                iteration: iterations,
                evaluations: evals,
                objective: fp,
                mesh: opts.initial_mesh,
            });
        }
        start = (perturbed, fp);
    }

    SearchOutcome {
        x: best_x,
        value: best_f,
        initial_value: f0,
        evaluations: evals,
        iterations,
        history,
        stop,
    }
}

/// Fixed-structure synthesis problem over the flattened gain vector.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub initial: GainSet,
    /// Gains held at their initial values.
    pub frozen: [bool; 17],
    /// Inclusive bounds per gain; candidates outside are rejected.
    pub bounds: [(f64, f64); 17],
    pub options: SearchOptions,
}

impl SynthesisProblem {
    pub fn new(initial: GainSet) -> Self {
        let mut bounds = [(f64::NEG_INFINITY, f64::INFINITY); 17];
        // Low-pass corner must stay positive.
        bounds[7] = (1e-6, f64::INFINITY);
        Self {
            initial,
            frozen: [false; 17],
            bounds,
            options: SearchOptions::default(),
        }
    }

    pub fn freeze(mut self, names: &[&str]) -> Result<Self> {
        for name in names {
            let i = THETA_NAMES
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Domain(format!("unknown gain '{name}'")))?;
            self.frozen[i] = true;
        }
        Ok(self)
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub gains: GainSet,
    pub objective: f64,
    pub initial_objective: f64,
    pub history: Vec<HistoryEntry>,
    pub evaluations: usize,
    pub iterations: usize,
    pub stop: StopReason,
    pub elapsed: Duration,
}

/// Minimizes the weighted channel objective from the problem's initial gains.
pub fn synthesize(problem: &SynthesisProblem, ctx: &ObjectiveContext) -> Result<SynthesisResult> {
    let started = Instant::now();
    let theta0 = problem.initial.to_theta();
    let scale: Theta = theta0.map(|v| v.abs().max(1.0));
    let free: Vec<usize> = (0..17).filter(|&i| !problem.frozen[i]).collect();

    let ctx = ObjectiveContext {
        d_p: problem.initial.gfm.d_p,
        d_q: problem.initial.gfm.d_q,
        ..ctx.clone()
    };
    let assemble = |x: &[f64]| -> Theta {
        let mut t = theta0;
        for (k, &i) in free.iter().enumerate() {
            t[i] = x[k] * scale[i];
        }
        t
    };
    let eval = |x: &[f64]| -> f64 {
        let t = assemble(x);
        if t.iter()
            .zip(&problem.bounds)
            .any(|(v, (lo, hi))| v < lo || v > hi)
        {
            return FAILURE_PENALTY;
        }
        objective(&t, &ctx)
    };

    let x0: Vec<f64> = free.iter().map(|&i| theta0[i] / scale[i]).collect();
    require_feasible(eval(&x0))?;
    let out = pattern_search(eval, &x0, &problem.options);
    let theta = if out.value < out.initial_value {
        assemble(&out.x)
    } else {
        theta0
    };

    Ok(SynthesisResult {
        gains: ctx.gains(&theta),
        objective: out.value,
        initial_objective: out.initial_value,
        history: out.history,
        evaluations: out.evaluations,
        iterations: out.iterations,
        stop: out.stop,
        elapsed: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_minimizer_of_shifted_norm() {
        let target = [0.3, -1.2, 2.0, 0.05, -0.7];
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                .sqrt()
        };
        let opts = SearchOptions {
            max_evaluations: 20_000,
            restarts: 0,
            ..Default::default()
        };
        let out = pattern_search(f, &[0.0; 5], &opts);
        for (a, b) in out.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-4, "{:?}", out.x);
        }
        assert_eq!(out.stop, StopReason::MeshConverged);
    }

    #[test]
    fn history_is_monotone() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + x[0] * x[0]).powi(2);
        let out = pattern_search(
            f,
            &[-1.0, 1.0],
            &SearchOptions {
                max_evaluations: 3000,
                restarts: 2,
                ..Default::default()
            },
        );
        for w in out.history.windows(2) {
            assert!(w[1].objective < w[0].objective);
        }
        assert!(out.value <= out.initial_value);
    }

    #[test]
    fn zero_budget_returns_start() {
        let f = |x: &[f64]| x[0] * x[0];
        let out = pattern_search(
            f,
            &[3.0],
            &SearchOptions {
                max_evaluations: 0,
                ..Default::default()
            },
        );
        assert_eq!(out.x, vec![3.0]);
        assert_eq!(out.evaluations, 0);
        assert_eq!(out.stop, StopReason::BudgetExhausted);
    }

    #[test]
    fn same_seed_same_path() {
        let f = |x: &[f64]| (x[0] - 0.5).abs() + (x[1] * 3.0 - 1.0).powi(2);
        let o = SearchOptions {
            max_evaluations: 500,
            seed: 42,
            ..Default::default()
        };
        let a = pattern_search(f, &[0.0, 0.0], &o);
        let b = pattern_search(f, &[0.0, 0.0], &o);
        assert_eq!(a.x, b.x);
        assert_eq!(a.history, b.history);
    }
}
