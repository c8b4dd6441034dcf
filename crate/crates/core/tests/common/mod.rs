#![allow(dead_code)]

use clm_design::{DesignProblem, LinkFunction, ModelSpec, PointQuantities};
use nalgebra::DMatrix;
use rand::{Rng, RngExt};

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// A random model with sorted cut-points at least `min_gap` apart, or
/// `None` when some point falls below the probability floor.
pub fn random_problem<R: Rng>(rng: &mut R, link: LinkFunction, d: usize, j: usize, m: usize) -> Option<(ModelSpec, DesignProblem)> {
    let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut theta: Vec<f64> = (0..j - 1).map(|_| rng.random_range(-3.0..3.0)).collect();
    theta.sort_by(f64::total_cmp);
    if theta.windows(2).any(|w| w[1] - w[0] < 0.05) {
        return None;
    }
    let x: Vec<f64> = (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let model = ModelSpec::new(link, beta, theta, DMatrix::from_row_slice(m, d, &x));
    let problem = DesignProblem::new(&model).ok()?;
    Some((model, problem))
}

/// Keeps drawing until a valid problem comes up.
pub fn valid_problem<R: Rng>(rng: &mut R, link: LinkFunction, d: usize, j: usize, m: usize) -> (ModelSpec, DesignProblem) {
    loop {
        if let Some(found) = random_problem(rng, link, d, j, m) {
            return found;
        }
    }
}

pub fn random_simplex<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| -rng.random_range(1e-3f64..1.0).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Information of one observation at `x` as the expected outer product of
/// the score, built from `∂π_j/∂(β, θ)` directly.
pub fn score_information(q: &PointQuantities, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let jm1 = q.g.len();
    let k = d + jm1;
    // ∂γ_t/∂(β, θ) for t = 0..=J with zero rows at both ends
    let dgamma = |t: usize| -> Vec<f64> {
        let mut v = vec![0.0; k];
        if t >= 1 && t <= jm1 {
            let g = q.g[t - 1];
            for s in 0..d {
                v[s] = -g * x[s];
            }
            v[d + t - 1] = g;
        }
        v
    };
    let mut info = DMatrix::zeros(k, k);
    for j in 1..=jm1 + 1 {
        let hi = dgamma(j);
        let lo = dgamma(j - 1);
        let dpi: Vec<f64> = hi.iter().zip(&lo).map(|(a, b)| a - b).collect();
        for r in 0..k {
            for c in 0..k {
                info[(r, c)] += dpi[r] * dpi[c] / q.pi[j - 1];
            }
        }
    }
    info
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// `f(p₁, p₂, p₃) = p₁p₂p₃(w₁p₁ + w₂p₂ + w₃p₃)`.
pub fn three_point_objective(w: [f64; 3], p: [f64; 3]) -> f64 {
    p[0] * p[1] * p[2] * (w[0] * p[0] + w[1] * p[1] + w[2] * p[2])
}

/// Grid search over the simplex at step `h`, then pattern search down to
/// step 1e-10.
pub fn three_point_search(w: [f64; 3], h: f64) -> [f64; 3] {
    let n = (1.0 / h).round() as usize;
    let mut best = ([1.0 / 3.0; 3], f64::NEG_INFINITY);
    for a in 1..n {
        for b in 1..(n - a) {
            let p = [a as f64 * h, b as f64 * h, 1.0 - (a + b) as f64 * h];
            let v = three_point_objective(w, p);
            if v > best.1 {
                best = (p, v);
            }
        }
    }
    let (mut p, mut v) = best;
    let mut step = h;
    let dirs = [[1.0, -1.0, 0.0], [1.0, 0.0, -1.0], [0.0, 1.0, -1.0]];
    while step > 1e-10 {
        let mut moved = false;
        for dir in dirs {
            for sign in [1.0, -1.0] {
                let q = [p[0] + sign * step * dir[0], p[1] + sign * step * dir[1], p[2] + sign * step * dir[2]];
                if q.iter().all(|&t| t > 0.0) {
                    let vq = three_point_objective(w, q);
                    if vq > v {
                        p = q;
                        v = vq;
                        moved = true;
                    }
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    p
}

/// Roundoff scale of a determinant computed from `m`: `k·ε·κ(m)·|det m|`.
pub fn det_noise(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if lo <= 0.0 {
        return m.nrows() as f64 * f64::EPSILON * hi.powi(m.nrows() as i32);
    }
    m.nrows() as f64 * f64::EPSILON * (hi / lo) * sv.iter().product::<f64>()
}

/// Lebesgue function `Σ_s |ℓ_s(z)|` of interpolation at `nodes`.
pub fn lebesgue(nodes: &[f64], z: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .map(|(s, &xs)| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(t, _)| t != s)
                .map(|(_, &xt)| (z - xt) / (xs - xt))
                .product::<f64>()
                .abs()
        })
        .sum()
}
