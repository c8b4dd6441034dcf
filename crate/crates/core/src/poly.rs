//! Dense real polynomials in the monomial basis (`coeffs[k]` multiplies `z^k`).

use nalgebra::DMatrix;

pub fn eval(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

/// Σ c_k z^k accumulated with Neumaier compensation, for large `z` where
/// the terms can be big and of mixed sign.
pub fn eval_compensated(coeffs: &[f64], z: f64) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut power = 1.0;
    for &c in coeffs {
        let term = c * power;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
        power *= z;
    }
    sum + comp
}

pub fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn add_scaled(acc: &mut Vec<f64>, p: &[f64], scale: f64) {
    if acc.len() < p.len() {
        acc.resize(p.len(), 0.0);
    }
    for (a, &c) in acc.iter_mut().zip(p) {
        *a += scale * c;
    }
}

/// `(1 − z)^k` expanded.
pub fn one_minus_z_pow(k: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..k {
        out = mul(&out, &[1.0, -1.0]);
    }
    out
}

/// Real roots of `coeffs` lying in `[lo, hi]`, from the eigenvalues of the
/// companion matrix followed by Newton polishing. Leading coefficients
/// below `1e-14` of the largest magnitude are treated as zero.
pub fn real_roots_in(coeffs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut deg = coeffs.len() - 1;
    while deg > 0 && coeffs[deg].abs() <= 1e-14 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let p = &coeffs[..=deg];
    let lead = p[deg];
    let candidates: Vec<(f64, f64)> = if deg == 1 {
        vec![(-p[0] / p[1], 0.0)]
    } else {
        let mut companion = DMatrix::<f64>::zeros(deg, deg);
        for r in 1..deg {
            companion[(r, r - 1)] = 1.0;
        }
        for r in 0..deg {
            companion[(r, deg - 1)] = -p[r] / lead;
        }
        companion
            .complex_eigenvalues()
            .iter()
            .map(|z| (z.re, z.im))
            .collect()
    };
    let dp = derivative(p);
    let width = (hi - lo).abs().max(1.0);
    let mut roots: Vec<f64> = Vec::new();
    for (re, im) in candidates {
        if im.abs() > 1e-6 * (1.0 + re.abs()) {
            continue;
        }
        let mut z = re;
        for _ in 0..8 {
            let d = eval(&dp, z);
            if d == 0.0 {
                break;
            }
            let step = eval(p, z) / d;
            if !step.is_finite() {
                break;
            }
            z -= step;
            if step.abs() < 1e-16 * (1.0 + z.abs()) {
                break;
            }
        }
        if !z.is_finite() {
            continue;
        }
        let slack = 1e-12 * width;
        if z >= lo - slack && z <= hi + slack {
            roots.push(z.clamp(lo, hi));
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    roots
}
