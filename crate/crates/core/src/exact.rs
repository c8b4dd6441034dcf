//! Exact D-optimal allocations of `n` runs by pairwise exchange.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{DesignError, Result};
use crate::fisher::DesignProblem;
use crate::poly;
use crate::vandermonde::VandermondeInverse;

/// Relative gain a move must show on a direct determinant to be accepted.
pub const ACCEPT_REL: f64 = 1e-12;
/// Attempts at a nonsingular even spread before giving up.
const INIT_ATTEMPTS: u64 = 64;

/// `f_ij(z) = Σ_{s=0}^J c_s z^s`: the raw determinant with `z` runs on
/// point `i` and `budget − z` on point `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExchangeProfile {
    pub c: Vec<f64>,
    pub budget: u64,
}

impl ExchangeProfile {
    pub fn eval(&self, z: f64) -> f64 {
        poly::eval_compensated(&self.c, z)
    }
}

fn moved(counts: &[f64], i: usize, j: usize, z: f64, budget: f64) -> Vec<f64> {
    let mut out = counts.to_vec();
    out[i] = z;
    out[j] = budget - z;
    out
}

pub fn exchange_profile(problem: &DesignProblem, counts: &[f64], i: usize, j: usize) -> Result<ExchangeProfile> {
    let jc = problem.categories();
    let budget = counts[i] + counts[j];
    if budget < jc as f64 {
        return Err(DesignError::BudgetTooSmall {
            budget: budget as u64,
            categories: jc,
        });
    }
    if problem.det(counts) <= 0.0 {
        return Err(DesignError::InvalidStart);
    }
    let c0 = problem.det(&moved(counts, i, j, 0.0, budget));
    let d: Vec<f64> = (1..=jc)
        .map(|s| {
            let sf = s as f64;
            (problem.det(&moved(counts, i, j, sf, budget)) - c0) / sf
        })
        .collect();
    let mut c = vec![c0];
    c.extend(VandermondeInverse::cached(jc).apply(&d));
    Ok(ExchangeProfile {
        c,
        budget: budget as u64,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExchangeResult {
    pub n: Vec<u64>,
    pub n_total: u64,
    /// `n^{−(d+J−1)} |F|`.
    pub objective_normalized: f64,
    pub log_objective: f64,
    pub sweeps: usize,
    pub seed: u64,
}

/// `n_total` spread as evenly as possible, remainder to points in a seeded
/// random order; later orders are tried if the first spread is singular.
pub fn even_spread(problem: &DesignProblem, n_total: u64, seed: u64) -> Result<Vec<u64>> {
    let m = problem.points();
    let base = n_total / m as u64;
    let rem = (n_total % m as u64) as usize;
    for attempt in 0..INIT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)));
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let mut counts = vec![base; m];
        for &i in order.iter().take(rem) {
            counts[i] += 1;
        }
        let w: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
        if problem.det(&w) > 0.0 {
            return Ok(counts);
        }
        if rem == 0 {
            break;
        }
    }
    Err(DesignError::InvalidStart)
}

/// Best integer `z` in `0..=budget` for the pair, with its direct determinant.
fn best_move(problem: &DesignProblem, counts: &[f64], i: usize, j: usize) -> Result<(f64, f64)> {
    let budget = counts[i] + counts[j];
    let jc = problem.categories() as f64;
    let direct = |z: f64| problem.det(&moved(counts, i, j, z, budget));
    if budget <= jc {
        let mut best = (counts[i], direct(counts[i]));
        for z in 0..=budget as u64 {
            let z = z as f64;
            let f = direct(z);
            if f > best.1 {
                best = (z, f);
            }
        }
        return Ok(best);
    }
    let profile = exchange_profile(problem, counts, i, j)?;
    let mut z_star = counts[i];
    let mut f_star = profile.eval(z_star);
    for z in 0..=budget as u64 {
        let z = z as f64;
        let f = profile.eval(z);
        if f > f_star {
            z_star = z;
            f_star = f;
        }
    }
    // confirm on direct determinants around the polynomial argmax
    let mut best = (counts[i], direct(counts[i]));
    for z in [z_star - 1.0, z_star, z_star + 1.0] {
        if z >= 0.0 && z <= budget && z != counts[i] {
            let f = direct(z);
            if f > best.1 {
                best = (z, f);
            }
        }
    }
    Ok(best)
}

/// One exchange search from `init` (even spread when `None`).
pub fn exchange_optimize(problem: &DesignProblem, n_total: u64, init: Option<&[u64]>, seed: u64) -> Result<ExchangeResult> {
    let d = problem.predictors();
    let m = problem.points();
    if n_total < (d + 1) as u64 {
        return Err(DesignError::Infeasible { n_total, needed: d + 1 });
    }
    let start = match init {
        Some(n) => {
            if n.len() != m || n.iter().sum::<u64>() != n_total {
                return Err(DesignError::InvalidAllocation(format!(
                    "initial allocation must have {m} counts summing to {n_total}"
                )));
            }
            n.to_vec()
        }
        None => even_spread(problem, n_total, seed)?,
    };
    let mut counts: Vec<f64> = start.iter().map(|&n| n as f64).collect();
    let mut f = problem.det(&counts);
    if f <= 0.0 {
        return Err(DesignError::InvalidStart);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).collect();
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        pairs.shuffle(&mut rng);
        let mut improved = false;
        for &(i, j) in &pairs {
            if counts[i] + counts[j] == 0.0 {
                continue;
            }
            let (z, fz) = best_move(problem, &counts, i, j)?;
            if z != counts[i] && fz > f * (1.0 + ACCEPT_REL) {
                let budget = counts[i] + counts[j];
                counts[i] = z;
                counts[j] = budget - z;
                f = fz;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    let k = problem.parameters() as f64;
    let log_objective = f.ln() - k * (n_total as f64).ln();
    Ok(ExchangeResult {
        n: counts.iter().map(|&c| c as u64).collect(),
        n_total,
        objective_normalized: log_objective.exp(),
        log_objective,
        sweeps,
        seed,
    })
}

/// Best of `restarts` searches with seeds `seed, seed+1, …`, run in
/// parallel. Ties go to the lowest seed.
pub fn exchange_optimize_restarts(
    problem: &DesignProblem,
    n_total: u64,
    init: Option<&[u64]>,
    seed: u64,
    restarts: usize,
) -> Result<ExchangeResult> {
    let runs: Vec<Result<ExchangeResult>> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| exchange_optimize(problem, n_total, init, seed.wrapping_add(r)))
        .collect();
    let mut best: Option<ExchangeResult> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.log_objective > b.log_objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one run"))
}
