//! Approximate D-optimal allocations by lift-one, plus the equivalence-theorem
//! and KKT certificates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{DesignError, Result};
use crate::fisher::{Allocation, DesignProblem};
use crate::poly;
use crate::vandermonde::VandermondeInverse;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 500;
/// KKT gap below which a sweep with negligible gain counts as converged.
pub const KKT_POLISH: f64 = 1e-8;

/// `f_i(z) = (1−z)^d Σ_j a_j z^j (1−z)^{J−1−j}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfilePolynomial {
    pub a: Vec<f64>,
    pub d: usize,
    pub categories: usize,
}

impl ProfilePolynomial {
    pub fn eval(&self, z: f64) -> f64 {
        let w = 1.0 - z;
        let jm1 = self.categories - 1;
        let inner: f64 = self
            .a
            .iter()
            .enumerate()
            .map(|(j, &a)| a * z.powi(j as i32) * w.powi((jm1 - j) as i32))
            .sum();
        w.powi(self.d as i32) * inner
    }

    /// `P(z) = Σ a_j z^j (1−z)^{J−1−j}` in the monomial basis.
    pub fn bracket(&self) -> Vec<f64> {
        let jm1 = self.categories - 1;
        let mut out = vec![0.0; jm1 + 1];
        for (j, &a) in self.a.iter().enumerate() {
            let mut term = vec![0.0; j];
            term.push(1.0);
            let term = poly::mul(&term, &poly::one_minus_z_pow(jm1 - j));
            poly::add_scaled(&mut out, &term, a);
        }
        out
    }

    /// `(1−z)P′(z) − dP(z)`: the derivative of `f_i` divided by `(1−z)^{d−1}`.
    pub fn stationary_polynomial(&self) -> Vec<f64> {
        let p = self.bracket();
        let dp = poly::derivative(&p);
        let mut q = poly::mul(&[1.0, -1.0], &dp);
        poly::add_scaled(&mut q, &p, -(self.d as f64));
        q
    }
}

/// Weights after lifting coordinate `i` to `z` and rescaling the others.
pub fn lifted_weights(weights: &[f64], i: usize, z: f64) -> Vec<f64> {
    let scale = (1.0 - z) / (1.0 - weights[i]);
    weights
        .iter()
        .enumerate()
        .map(|(k, &w)| if k == i { z } else { w * scale })
        .collect()
}

pub fn lift_one_profile(problem: &DesignProblem, weights: &[f64], i: usize) -> Result<ProfilePolynomial> {
    if weights[i] >= 1.0 {
        return Err(DesignError::ProfileUndefined(i));
    }
    if problem.det(weights) <= 0.0 {
        return Err(DesignError::InvalidStart);
    }
    let d = problem.predictors();
    let j = problem.categories();
    let k = problem.parameters() as i32;
    let f0 = problem.det(&lifted_weights(weights, i, 0.0));
    let rhs: Vec<f64> = (1..j)
        .map(|s| {
            let sf = s as f64;
            let fz = problem.det(&lifted_weights(weights, i, 1.0 / (sf + 1.0)));
            (sf + 1.0).powi(k) * sf.powi(-(d as i32)) * fz - sf.powi(j as i32 - 1) * f0
        })
        .collect();
    let mut a = vec![f0];
    if j > 1 {
        // solution is ordered (a_{J−1}, …, a_1)
        let rev = VandermondeInverse::cached(j - 1).apply(&rhs);
        a.extend(rev.into_iter().rev());
    }
    Ok(ProfilePolynomial { a, d, categories: j })
}

/// Global maximizer of `f_i` on `[0, 1]`, preferring 0 on ties.
pub fn maximize_profile(poly: &ProfilePolynomial) -> f64 {
    let mut best_z = 0.0;
    let mut best_f = poly.eval(0.0);
    let mut candidates = poly::real_roots_in(&poly.stationary_polynomial(), 0.0, 1.0);
    candidates.push(1.0);
    for z in candidates {
        let fz = poly.eval(z);
        if fz > best_f {
            best_f = fz;
            best_z = z;
        }
    }
    best_z
}

#[derive(Debug, Clone, Copy)]
pub struct LiftOneOptions {
    pub seed: u64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LiftOneOptions {
    fn default() -> Self {
        LiftOneOptions {
            seed: 0,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LiftOneResult {
    pub p: Vec<f64>,
    pub objective: f64,
    pub log_objective: f64,
    /// Full sweeps performed, restarts included.
    pub iterations: usize,
    pub converged: bool,
    pub restarted: bool,
    pub seed: u64,
}

impl LiftOneResult {
    pub fn allocation(&self) -> Allocation {
        Allocation {
            mode: crate::fisher::AllocationMode::Approximate,
            weights: self.p.clone(),
        }
    }
}

struct SweepOutcome {
    weights: Vec<f64>,
    det: f64,
    sweeps: usize,
    converged: bool,
}

fn sweep_until_converged(problem: &DesignProblem, start: Vec<f64>, seed: u64, opts: &LiftOneOptions) -> Result<SweepOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = start;
    let mut f = problem.det(&p);
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    for sweep in 1..=opts.max_iters {
        let f_start = f;
        order.shuffle(&mut rng);
        for &i in &order {
            if p[i] >= 1.0 {
                continue;
            }
            let profile = lift_one_profile(problem, &p, i)?;
            let z = maximize_profile(&profile);
            if z == p[i] {
                continue;
            }
            let candidate = lifted_weights(&p, i, z);
            let fc = problem.det(&candidate);
            if fc > f {
                p = candidate;
                f = fc;
            }
        }
        // lift-one crawls along ridges of near-duplicate points; one
        // exchange between the extreme derivatives crosses them directly
        if let Some(q) = exchange_step(problem, &p) {
            let fq = problem.det(&q);
            if fq > f {
                p = q;
                f = fq;
            }
        }
        // coupled small weights converge slowly under coordinate moves
        if let Some(q) = newton_step(problem, &p, f) {
            p = q;
            f = problem.det(&p);
        }
        let gain = f - f_start;
        // a small gain alone can hide a KKT gap of order sqrt(tol), so keep
        // sweeping while moves still pay off and the gap is open
        let mut settled = false;
        if gain <= opts.tol * f_start {
            let gap = max_kkt_violation(problem, &p).unwrap_or(f64::INFINITY);
            settled = gap <= KKT_POLISH;
            if !settled && gain == 0.0 {
                // determinant roundoff hides the remaining gain
                let (q, fq) = polish_sweep(problem, &p, &order);
                let after = max_kkt_violation(problem, &q).unwrap_or(f64::INFINITY);
                if after < gap {
                    p = q;
                    f = fq;
                }
                settled = after >= gap || after <= KKT_POLISH;
            }
        }
        if settled {
            return Ok(SweepOutcome {
                weights: p,
                det: f,
                sweeps: sweep,
                converged: true,
            });
        }
    }
    Ok(SweepOutcome {
        weights: p,
        det: f,
        sweeps: opts.max_iters,
        converged: false,
    })
}

fn path_slope(base: &DMatrix<f64>, a_i: &DMatrix<f64>, scale: f64, z: f64, k: f64) -> Option<f64> {
    let f = base * scale + a_i * z;
    let chol = f.cholesky()?;
    Some(chol.solve(a_i).trace() - k)
}

/// Stationary point of `log f` along the lift-one path of coordinate `i`,
/// located by bisection on its analytic derivative.
fn derivative_step(problem: &DesignProblem, weights: &[f64], i: usize) -> f64 {
    let p_i = weights[i];
    let a_i = problem.point_matrix(i);
    let base = problem.weighted_information(weights) - a_i * p_i;
    let k = problem.parameters() as f64;
    // singular ends: near 0 the slope is +∞, near 1 it is negative
    let slope = |z: f64| {
        let scale = (1.0 - z) / (1.0 - p_i);
        path_slope(&base, a_i, scale, z, k).unwrap_or(if z < 0.5 { f64::INFINITY } else { -1.0 })
    };
    let s0 = slope(p_i);
    let (mut lo, mut hi) = if s0 > 0.0 {
        (p_i, 1.0)
    } else {
        if slope(0.0) <= 0.0 {
            return 0.0;
        }
        (0.0, p_i)
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Moves weight from the support point with the smallest `∂f/∂p` to the
/// point with the largest, by the amount maximizing `log f` on that line.
/// `None` when the KKT gap is already closed.
fn exchange_step(problem: &DesignProblem, weights: &[f64]) -> Option<Vec<f64>> {
    let (f, grads) = problem.gradient(weights)?;
    if !(f > 0.0) || kkt_violation(weights, &grads, problem.parameters() as f64 * f) <= KKT_POLISH {
        return None;
    }
    let up = (0..weights.len()).max_by(|&a, &b| grads[a].total_cmp(&grads[b]))?;
    let down = (0..weights.len())
        .filter(|&k| k != up && weights[k] > 0.0)
        .min_by(|&a, &b| grads[a].total_cmp(&grads[b]))?;
    if grads[up] <= grads[down] {
        return None;
    }
    let base = problem.weighted_information(weights);
    let delta = problem.point_matrix(up) - problem.point_matrix(down);
    // slope and curvature of log f at t; a singular end counts as downhill
    let slope = |t: f64| -> Option<(f64, f64)> {
        let chol = (&base + &delta * t).cholesky()?;
        let x = chol.solve(&delta);
        Some((x.trace(), (&x * &x).trace()))
    };
    let top = weights[down];
    let t = match slope(top) {
        Some((s, _)) if s >= 0.0 => top,
        _ => {
            let (mut lo, mut hi) = (0.0, top);
            let mut t = 0.0;
            for _ in 0..100 {
                let Some((s, c)) = slope(t) else {
                    hi = t;
                    t = 0.5 * (lo + hi);
                    continue;
                };
                if s > 0.0 {
                    lo = t;
                } else {
                    hi = t;
                }
                let newton = t + s / c.max(f64::MIN_POSITIVE);
                t = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
                if hi - lo <= 1e-15 * top || s.abs() <= 1e-15 {
                    break;
                }
            }
            t
        }
    };
    let mut q = weights.to_vec();
    q[up] += t;
    q[down] = if t >= top { 0.0 } else { top - t };
    Some(q)
}

/// Newton step for `log f` on the simplex, restricted to the support plus
/// the point with the largest `∂f/∂p`. Truncated at the boundary and halved
/// until the determinant rises. `None` when no such step is found.
fn newton_step(problem: &DesignProblem, weights: &[f64], f: f64) -> Option<Vec<f64>> {
    let info = problem.weighted_information(weights);
    let chol = info.cholesky()?;
    let m = weights.len();
    let b: Vec<DMatrix<f64>> = (0..m).map(|i| chol.solve(problem.point_matrix(i))).collect();
    let g: Vec<f64> = b.iter().map(|x| x.trace()).collect();
    let best = (0..m).max_by(|&x, &y| g[x].total_cmp(&g[y]))?;
    let support: Vec<usize> = (0..m).filter(|&i| weights[i] > 0.0 || i == best).collect();
    let s = support.len();
    if s < 2 {
        return None;
    }
    // [H 1; 1ᵀ 0] with H = −∇² log f
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    let mut rhs = nalgebra::DVector::zeros(s + 1);
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate().skip(r) {
            let h = b[i].component_mul(&b[j].transpose()).sum();
            kkt[(r, c)] = h;
            kkt[(c, r)] = h;
        }
        kkt[(r, s)] = 1.0;
        kkt[(s, r)] = 1.0;
        rhs[r] = g[i];
    }
    let step = kkt.lu().solve(&rhs)?;
    let mut alpha = 1.0f64;
    let mut blocking = None;
    for (r, &i) in support.iter().enumerate() {
        if step[r] < 0.0 && weights[i] + alpha * step[r] <= 0.0 {
            alpha = weights[i] / -step[r];
            blocking = Some(i);
        }
    }
    for _ in 0..30 {
        let mut q = weights.to_vec();
        for (r, &i) in support.iter().enumerate() {
            q[i] = (q[i] + alpha * step[r]).max(0.0);
        }
        if let Some(i) = blocking {
            q[i] = 0.0;
        }
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= total);
        if problem.det(&q) > f {
            return Some(q);
        }
        alpha *= 0.5;
        blocking = None;
    }
    None
}

/// One sweep of gradient-located coordinate moves. Each move maximizes the
/// true objective along its path, so no determinant comparison gates it.
fn polish_sweep(problem: &DesignProblem, weights: &[f64], order: &[usize]) -> (Vec<f64>, f64) {
    let mut p = weights.to_vec();
    for &i in order {
        if p[i] < 1.0 {
            let z = derivative_step(problem, &p, i);
            p = lifted_weights(&p, i, z);
        }
    }
    let f = problem.det(&p);
    (p, f)
}

/// Lift-one from `init` (uniform when `None`). Coordinates are visited in a
/// seeded random order each sweep.
pub fn lift_one_optimize(problem: &DesignProblem, init: Option<&[f64]>, opts: &LiftOneOptions) -> Result<LiftOneResult> {
    let m = problem.points();
    let start = match init {
        Some(w) => {
            if w.len() != m {
                return Err(DesignError::InvalidAllocation(format!(
                    "initial allocation has {} weights for {m} points",
                    w.len()
                )));
            }
            Allocation::approximate(w.to_vec())?.weights
        }
        None => vec![1.0 / m as f64; m],
    };
    if problem.det(&start) <= 0.0 {
        return Err(DesignError::InvalidStart);
    }
    let mut outcome = sweep_until_converged(problem, start, opts.seed, opts)?;
    let mut iterations = outcome.sweeps;
    let mut restarted = false;
    if !outcome.converged {
        restarted = true;
        let second = sweep_until_converged(problem, outcome.weights.clone(), opts.seed.wrapping_add(1), opts)?;
        iterations += second.sweeps;
        if second.det >= outcome.det {
            outcome = second;
        }
    }
    Ok(LiftOneResult {
        objective: outcome.det,
        log_objective: outcome.det.ln(),
        p: outcome.weights,
        iterations,
        converged: outcome.converged,
        restarted,
        seed: opts.seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalityCertificate {
    pub passed: bool,
    pub lift_one_passed: bool,
    pub kkt_passed: bool,
    pub tol: f64,
    pub objective: f64,
    /// `λ = (d+J−1) f`.
    pub lambda: f64,
    /// `∂f/∂p_i` for every point.
    pub derivatives: Vec<f64>,
    /// Largest relative gain `f_i(z*)/f(p) − 1` over profiled coordinates.
    pub max_profile_gain: f64,
    /// Largest of `|∂_i f − λ|/λ` on the support and `(∂_i f − λ)/λ` off it.
    pub max_kkt_violation: f64,
}

fn kkt_violation(weights: &[f64], grads: &[f64], lambda: f64) -> f64 {
    weights.iter().zip(grads).fold(0.0f64, |acc, (w, g)| {
        let v = if *w > 0.0 {
            (g - lambda).abs() / lambda
        } else {
            (g - lambda) / lambda
        };
        acc.max(v)
    })
}

/// Largest KKT violation at `weights`, `None` when singular.
pub fn max_kkt_violation(problem: &DesignProblem, weights: &[f64]) -> Option<f64> {
    let (f, grads) = problem.gradient(weights)?;
    (f > 0.0).then(|| kkt_violation(weights, &grads, problem.parameters() as f64 * f))
}

pub fn verify_optimality(problem: &DesignProblem, weights: &[f64], tol: f64) -> Result<OptimalityCertificate> {
    let (f, grads) = problem.gradient(weights).ok_or(DesignError::InvalidStart)?;
    if !(f > 0.0) {
        return Err(DesignError::InvalidStart);
    }
    let mut max_gain = 0.0f64;
    for i in 0..weights.len() {
        if weights[i] >= 1.0 {
            continue;
        }
        let profile = lift_one_profile(problem, weights, i)?;
        let z = maximize_profile(&profile);
        let fz = problem.det(&lifted_weights(weights, i, z));
        max_gain = max_gain.max(fz / f - 1.0);
    }
    let lambda = problem.parameters() as f64 * f;
    let max_violation = kkt_violation(weights, &grads, lambda);
    let lift_one_passed = max_gain <= tol;
    let kkt_passed = max_violation <= tol;
    Ok(OptimalityCertificate {
        passed: lift_one_passed && kkt_passed,
        lift_one_passed,
        kkt_passed,
        tol,
        objective: f,
        lambda,
        derivatives: grads,
        max_profile_gain: max_gain,
        max_kkt_violation: max_violation,
    })
}
