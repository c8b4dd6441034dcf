//! Minimally supported designs: closed forms for `(d, J) = (1, 3)` and
//! `(2, 3)`, their optimality certificates, two-point profile polynomials
//! for `d = 1`, and parameter-region scans.

use nalgebra::{Complex, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{lift_one_optimize, LiftOneOptions};
use crate::error::{DesignError, Result};
use crate::fisher::{Allocation, DesignProblem};
use crate::grid::{AxisSpec, ParamGrid};
use crate::model::{InfoCoefficients, ModelSpec};
use crate::poly;
use crate::vandermonde::VandermondeInverse;

/// Relative slack of certificate inequalities.
pub const CERT_SLACK: f64 = 1e-9;
/// Relative gap below which two `w` values are treated as equal.
pub const W_TIE: f64 = 1e-9;
/// Weights below this are reported as zero in scans.
pub const ZERO_WEIGHT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certified {
    Yes,
    No,
    Boundary,
    NotChecked,
}

impl Certified {
    fn from_margin(lhs: f64, rhs: f64, scale: f64) -> Self {
        let slack = CERT_SLACK * scale;
        if lhs - rhs <= -slack {
            Certified::Yes
        } else if lhs - rhs > slack {
            Certified::No
        } else {
            Certified::Boundary
        }
    }

    fn combine(verdicts: impl IntoIterator<Item = Certified>) -> Self {
        let mut out = Certified::Yes;
        for v in verdicts {
            match v {
                Certified::No => return Certified::No,
                Certified::Boundary | Certified::NotChecked => out = Certified::Boundary,
                Certified::Yes => {}
            }
        }
        out
    }
}

/// One excluded point's inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, Serialize)]
pub struct PointCondition {
    pub point: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub verdict: Certified,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimalCandidate {
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    pub certified_optimal: Certified,
    pub conditions: Vec<PointCondition>,
}

impl MinimalCandidate {
    /// The candidate as a full-length allocation over `m` points.
    pub fn allocation(&self, m: usize) -> Allocation {
        let mut w = vec![0.0; m];
        for (&i, &p) in self.support.iter().zip(&self.weights) {
            w[i] = p;
        }
        Allocation {
            mode: crate::fisher::AllocationMode::Approximate,
            weights: w,
        }
    }
}

fn require_shape(problem: &DesignProblem, d: usize, j: Option<usize>) -> Result<()> {
    if problem.predictors() != d {
        return Err(DesignError::Unsupported(format!(
            "requires d = {d}, model has d = {}",
            problem.predictors()
        )));
    }
    if let Some(j) = j {
        if problem.categories() != j {
            return Err(DesignError::Unsupported(format!(
                "requires J = {j}, model has J = {}",
                problem.categories()
            )));
        }
    } else if problem.categories() < 3 {
        return Err(DesignError::Unsupported("requires J ≥ 3".into()));
    }
    Ok(())
}

fn distinct(idx: &[usize], m: usize) -> Result<()> {
    for (a, &i) in idx.iter().enumerate() {
        if i >= m || idx[..a].contains(&i) {
            return Err(DesignError::InvalidAllocation(format!("invalid point indices {idx:?}")));
        }
    }
    Ok(())
}

/// `c_1..c_{J−1}` with `f(p_i, p_j) = Σ_s c_s p_i^{J−s} p_j^s` on the pair.
///
/// The end coefficients come in closed form, `c_1 = e_j |A3_i| (x_i − x_j)²`
/// and symmetrically for `c_{J−1}`; the interior ones from the inverse
/// Vandermonde applied to the deflated `d_s`. A full solve loses the small
/// end coefficients, which dominate `f` near either endpoint.
pub fn two_point_polynomial_d1(problem: &DesignProblem, i: usize, j: usize) -> Result<Vec<f64>> {
    require_shape(problem, 1, None)?;
    distinct(&[i, j], problem.points())?;
    let jc = problem.categories();
    let m = problem.points();
    let co = problem.coefficients();
    let dx2 = (x1(problem, i) - x1(problem, j)).powi(2);
    let first = co[j].e * a3_det(problem, i) * dx2;
    let last = co[i].e * a3_det(problem, j) * dx2;
    let mut c = vec![0.0; jc - 1];
    c[0] = first;
    c[jc - 2] = last;
    let inner = jc - 3;
    if inner > 0 {
        // d_s = Σ_r c_r s^{r−1}; strip both ends and one power of s
        let rhs: Vec<f64> = (1..=inner)
            .map(|s| {
                let sf = s as f64;
                let mut w = vec![0.0; m];
                w[i] = 1.0 / (sf + 1.0);
                w[j] = sf / (sf + 1.0);
                let d = problem.det(&w) * (sf + 1.0).powi(jc as i32) / sf;
                (d - first - last * sf.powi(jc as i32 - 2)) / sf
            })
            .collect();
        let mid = VandermondeInverse::cached(inner).apply(&rhs);
        c[1..jc - 2].copy_from_slice(&mid);
    }
    Ok(c)
}

/// `|A_{i3}| = Π g_s² / Π π_t` when the point quantities are at hand,
/// the tridiagonal recurrence otherwise.
fn a3_det(problem: &DesignProblem, i: usize) -> f64 {
    match problem.quantities() {
        Some(q) => q[i].g.iter().map(|g| g * g).product::<f64>() / q[i].pi.iter().product::<f64>(),
        None => problem.coefficients()[i].a3_det(),
    }
}

fn x1(problem: &DesignProblem, i: usize) -> f64 {
    problem.design()[(i, 0)]
}

/// Cubic coefficients `c₁, c₂` of `f = p₁p₂(c₁p₁ + c₂p₂)` from `u`, `b`.
fn pair_coefficients_d1j3(problem: &DesignProblem, i: usize, j: usize) -> (f64, f64) {
    let ci = &problem.coefficients()[i];
    let cj = &problem.coefficients()[j];
    let dx = x1(problem, i) - x1(problem, j);
    (cj.e * ci.a3_det() * dx * dx, ci.e * cj.a3_det() * dx * dx)
}

/// Maximizer of `p₁p₂(c₁p₁ + c₂p₂)` on the segment.
pub fn two_point_weights(c1: f64, c2: f64) -> (f64, f64) {
    if ((c1 - c2) / c1.max(c2)).abs() <= 1e-10 {
        return (0.5, 0.5);
    }
    let root = (c1 * c1 - c1 * c2 + c2 * c2).sqrt();
    let denom = 2.0 * c1 - c2 + root;
    (1.0 - c1 / denom, c1 / denom)
}

pub fn two_point_design_d1j3(problem: &DesignProblem, i: usize, j: usize) -> Result<(f64, f64)> {
    require_shape(problem, 1, Some(3))?;
    distinct(&[i, j], problem.points())?;
    let (c1, c2) = pair_coefficients_d1j3(problem, i, j);
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(DesignError::RankDeficient(vec![i, j]));
    }
    Ok(two_point_weights(c1, c2))
}

/// `u_{a1}u_{b2} + u_{a2}u_{b1} − 2 b_{a2} b_{b2}`.
fn cross(a: &InfoCoefficients, b: &InfoCoefficients) -> f64 {
    a.u[0] * b.u[1] + a.u[1] * b.u[0] - 2.0 * a.b[0] * b.b[0]
}

pub fn check_two_point_optimal_d1j3(problem: &DesignProblem, i: usize, j: usize) -> Result<MinimalCandidate> {
    require_shape(problem, 1, Some(3))?;
    let m = problem.points();
    if m < 3 {
        return Err(DesignError::Unsupported("needs at least three candidate points".into()));
    }
    let (p1, p2) = two_point_design_d1j3(problem, i, j)?;
    let (c1, c2) = pair_coefficients_d1j3(problem, i, j);
    let co = problem.coefficients();
    let (q1, q2) = (&co[i], &co[j]);
    let (xa, xb) = (x1(problem, i), x1(problem, j));
    let mut conditions = Vec::new();
    for k in (0..m).filter(|&k| k != i && k != j) {
        let qk = &co[k];
        let xk = x1(problem, k);
        let s3 = qk.e * q1.a3_det() * (xa - xk).powi(2);
        let s4 = qk.e * q2.a3_det() * (xb - xk).powi(2);
        let s5 = q1.e * cross(q2, qk) * (xa - xb) * (xa - xk)
            + q2.e * cross(q1, qk) * (xb - xa) * (xb - xk)
            + qk.e * cross(q1, q2) * (xk - xa) * (xk - xb);
        // ∂f/∂p_k ≤ ∂f/∂p_1 at the candidate
        let lhs = s3 * p1 * p1 + s5 * p1 * p2 + s4 * p2 * p2;
        let rhs = 2.0 * c1 * p1 * p2 + c2 * p2 * p2;
        let scale = [s3 * p1 * p1, s5 * p1 * p2, s4 * p2 * p2, rhs]
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        conditions.push(PointCondition {
            point: k,
            lhs,
            rhs,
            verdict: Certified::from_margin(lhs, rhs, scale),
        });
    }
    Ok(MinimalCandidate {
        support: vec![i, j],
        weights: vec![p1, p2],
        certified_optimal: Certified::combine(conditions.iter().map(|c| c.verdict)),
        conditions,
    })
}

/// `|X₁[a, b, c]|` for `d = 2`.
fn x1_det(problem: &DesignProblem, a: usize, b: usize, c: usize) -> f64 {
    let x = problem.design();
    Matrix3::new(
        1.0,
        x[(a, 0)],
        x[(a, 1)],
        1.0,
        x[(b, 0)],
        x[(b, 1)],
        1.0,
        x[(c, 0)],
        x[(c, 1)],
    )
    .determinant()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= W_TIE * a.abs().max(b.abs())
}

/// Coefficients `c₀..c₃` of the cubic whose root `y₁ > 1` gives the
/// weight ratio `p₁/p₃` when `w₁ > w₂ > w₃`.
pub fn three_point_cubic(w1: f64, w2: f64, w3: f64) -> [f64; 4] {
    [
        w3 * (w2 - w3),
        3.0 * w1 * w2 - w1 * w3 - 4.0 * w2 * w3 + 2.0 * w3 * w3,
        2.0 * w1 * w1 - 4.0 * w1 * w2 - w1 * w3 + 3.0 * w2 * w3,
        w1 * (w2 - w1),
    ]
}

/// Closed-form real root of the cubic, `None` when the principal-branch
/// evaluation does not land on a real value above one.
pub fn cardano_root(c: &[f64; 4]) -> Option<f64> {
    let (b0, b1, b2) = (c[0] / c[3], c[1] / c[3], c[2] / c[3]);
    let disc = 27.0 * b0 * b0 + 4.0 * b1.powi(3) - 18.0 * b0 * b1 * b2 - b1 * b1 * b2 * b2 + 4.0 * b0 * b2.powi(3);
    let sqrt_disc = Complex::new(disc, 0.0).sqrt();
    let a = Complex::new(-27.0 * b0 + 9.0 * b1 * b2 - 2.0 * b2.powi(3), 0.0) + sqrt_disc * 3f64.powf(1.5);
    let a13 = a.powf(1.0 / 3.0);
    let cbrt2 = 2f64.cbrt();
    let y = Complex::new(-b2 / 3.0, 0.0) - Complex::new(cbrt2 * (3.0 * b1 - b2 * b2), 0.0) / (a13 * 3.0) + a13 / (3.0 * cbrt2);
    if y.re.is_finite() && y.im.abs() <= 1e-8 * y.re.abs() && y.re > 1.0 {
        Some(y.re)
    } else {
        None
    }
}

fn polish_root(c: &[f64; 4], mut y: f64) -> f64 {
    for _ in 0..4 {
        let f = poly::eval(c, y);
        let df = c[1] + 2.0 * c[2] * y + 3.0 * c[3] * y * y;
        if df == 0.0 {
            break;
        }
        let step = f / df;
        if !step.is_finite() {
            break;
        }
        y -= step;
    }
    y
}

/// Root `y₁ > 1` of the cubic: closed form first, companion matrix otherwise.
pub fn cubic_root_above_one(c: &[f64; 4]) -> Option<f64> {
    if let Some(y) = cardano_root(c) {
        return Some(polish_root(c, y));
    }
    poly::real_roots_in(c, 1.0, f64::MAX.sqrt()).into_iter().find(|&y| y > 1.0)
}

/// Maximizer of `p₁p₂p₃(w₁p₁ + w₂p₂ + w₃p₃)` on the simplex, in input order.
pub fn three_point_weights(w: [f64; 3]) -> [f64; 3] {
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap());
    let (w1, w2, w3) = (w[order[0]], w[order[1]], w[order[2]]);
    let sorted = if close(w2, w3) {
        let delta = 2.0 * w1 - 3.0 * w2 + (4.0 * w1 * w1 - 4.0 * w1 * w2 + 9.0 * w2 * w2).sqrt();
        let den = 4.0 * w1 + delta;
        [delta / den, 2.0 * w1 / den, 2.0 * w1 / den]
    } else if close(w1, w2) {
        let delta = 3.0 * w1 - 2.0 * w3 + (9.0 * w1 * w1 - 4.0 * w1 * w3 + 4.0 * w3 * w3).sqrt();
        let den = delta + 2.0 * w1;
        [delta / (2.0 * den), delta / (2.0 * den), 2.0 * w1 / den]
    } else {
        let c = three_point_cubic(w1, w2, w3);
        let y1 = cubic_root_above_one(&c).expect("cubic has a unique root above one");
        let y2 = (w1 - w3) * y1 / ((w2 - w3) + (w1 - w2) * y1);
        let s = y1 + y2 + 1.0;
        [y1 / s, y2 / s, 1.0 / s]
    };
    let mut out = [0.0; 3];
    for (pos, &idx) in order.iter().enumerate() {
        out[idx] = sorted[pos];
    }
    out
}

/// Residuals of `∂f/∂p₁ = ∂f/∂p₃` and `∂f/∂p₂ = ∂f/∂p₃` (divided by the
/// common factor).
pub fn three_point_residuals(w: [f64; 3], p: [f64; 3]) -> [f64; 2] {
    let s: f64 = w.iter().zip(&p).map(|(a, b)| a * b).sum();
    [
        (p[2] - p[0]) * s - (w[2] - w[0]) * p[0] * p[2],
        (p[2] - p[1]) * s - (w[2] - w[1]) * p[1] * p[2],
    ]
}

pub fn three_point_design_d2j3(problem: &DesignProblem, i: usize, j: usize, k: usize) -> Result<[f64; 3]> {
    require_shape(problem, 2, Some(3))?;
    distinct(&[i, j, k], problem.points())?;
    if !problem.support_has_full_rank(&[i, j, k]) {
        return Err(DesignError::RankDeficient(vec![i, j, k]));
    }
    let co = problem.coefficients();
    Ok(three_point_weights([co[i].w(), co[j].w(), co[k].w()]))
}

pub fn check_three_point_optimal_d2j3(problem: &DesignProblem, i: usize, j: usize, k: usize) -> Result<MinimalCandidate> {
    let p = three_point_design_d2j3(problem, i, j, k)?;
    let m = problem.points();
    if m < 4 {
        return Err(DesignError::Unsupported("needs at least four candidate points".into()));
    }
    let co = problem.coefficients();
    let s = [i, j, k];
    let e = |a: usize| co[a].e;
    let w = |a: usize| co[a].w();
    let x123 = x1_det(problem, i, j, k);
    let rhs_scale = x123 * x123 * e(i) * e(j) * e(k);
    let rhs = rhs_scale * p[1] * p[2] * (2.0 * w(i) * p[0] + w(j) * p[1] + w(k) * p[2]);
    let mut conditions = Vec::new();
    for l in (0..m).filter(|l| !s.contains(l)) {
        let pair_term = |a: usize, b: usize, pa: f64, pb: f64| {
            let det = x1_det(problem, a, b, l);
            det * det * e(a) * e(b) * e(l) * pa * pb * (w(a) * pa + w(b) * pb)
        };
        let t12 = pair_term(i, j, p[0], p[1]);
        let t13 = pair_term(i, k, p[0], p[2]);
        let t23 = pair_term(j, k, p[1], p[2]);
        let patterns = [(i, j, k, l), (i, k, j, l), (i, l, j, k), (j, k, i, l), (j, l, i, k), (k, l, i, j)];
        let d_l: f64 = patterns
            .iter()
            .map(|&(a, b, sa, ta)| {
                e(a) * e(b) * cross(&co[sa], &co[ta]) * x1_det(problem, a, b, sa) * x1_det(problem, a, b, ta)
            })
            .sum();
        let dterm = d_l * p[0] * p[1] * p[2];
        let lhs = t12 + t13 + t23 + dterm;
        let scale = [t12, t13, t23, dterm, rhs].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        conditions.push(PointCondition {
            point: l,
            lhs,
            rhs,
            verdict: Certified::from_margin(lhs, rhs, scale),
        });
    }
    Ok(MinimalCandidate {
        support: s.to_vec(),
        weights: p.to_vec(),
        certified_optimal: Certified::combine(conditions.iter().map(|c| c.verdict)),
        conditions,
    })
}

/// Every minimally supported candidate of a `(1, 3)` or `(2, 3)` problem
/// with its certificate. Rank-deficient supports are skipped.
pub fn enumerate_minimal(problem: &DesignProblem) -> Result<Vec<MinimalCandidate>> {
    let m = problem.points();
    match (problem.predictors(), problem.categories()) {
        (1, 3) => {
            let mut out = Vec::new();
            for i in 0..m {
                for j in (i + 1)..m {
                    match check_two_point_optimal_d1j3(problem, i, j) {
                        Ok(c) => out.push(c),
                        Err(DesignError::RankDeficient(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            Ok(out)
        }
        (2, 3) => {
            let mut out = Vec::new();
            for i in 0..m {
                for j in (i + 1)..m {
                    for k in (j + 1)..m {
                        match check_three_point_optimal_d2j3(problem, i, j, k) {
                            Ok(c) => out.push(c),
                            Err(DesignError::RankDeficient(_)) => {}
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
            Ok(out)
        }
        (d, j) => Err(DesignError::Unsupported(format!(
            "closed forms exist for (d, J) = (1, 3) and (2, 3), not ({d}, {j})"
        ))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanSpec {
    pub free: Vec<AxisSpec>,
    #[serde(default)]
    pub compare: Vec<Allocation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub values: Vec<f64>,
    pub valid: bool,
    /// Bit `i` set when point `i` gets zero weight.
    pub zero_pattern: u64,
    pub weights: Vec<f64>,
    pub objective: f64,
    pub efficiencies: Vec<f64>,
    /// `|A_{i3}|/e_i` per point.
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanTable {
    pub names: Vec<String>,
    pub compare_labels: Vec<String>,
    pub rows: Vec<ScanRow>,
}

impl ScanTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = self.names.clone();
        h.push("valid".into());
        h.push("zero_pattern".into());
        h.push("objective".into());
        let m = self.rows.first().map(|r| r.w.len()).unwrap_or(0);
        h.extend((1..=m).map(|i| format!("p{i}")));
        h.extend(self.compare_labels.iter().map(|l| format!("eff_{l}")));
        h.extend((1..=m).map(|i| format!("w{i}")));
        h
    }
}

fn scan_point(template: &ModelSpec, grid: &ParamGrid, index: usize, compare: &[Allocation], seed: u64) -> ScanRow {
    let values = grid.point(index);
    let model = grid.apply(template, &values);
    let m = model.points();
    let invalid = |values: Vec<f64>| ScanRow {
        values,
        valid: false,
        zero_pattern: 0,
        weights: vec![f64::NAN; m],
        objective: f64::NAN,
        efficiencies: vec![f64::NAN; compare.len()],
        w: vec![f64::NAN; m],
    };
    let Ok(problem) = DesignProblem::new(&model) else {
        return invalid(values);
    };
    let opts = LiftOneOptions {
        seed,
        ..LiftOneOptions::default()
    };
    let Ok(res) = lift_one_optimize(&problem, None, &opts) else {
        return invalid(values);
    };
    let opt = res.allocation();
    let zero_pattern = res
        .p
        .iter()
        .enumerate()
        .filter(|(_, &p)| p < ZERO_WEIGHT)
        .fold(0u64, |acc, (i, _)| acc | (1 << i.min(63)));
    ScanRow {
        values,
        valid: true,
        zero_pattern,
        objective: res.objective,
        efficiencies: compare
            .iter()
            .map(|a| problem.d_efficiency(a, &opt).unwrap_or(f64::NAN))
            .collect(),
        w: problem.coefficients().iter().map(|c| c.w()).collect(),
        weights: res.p,
    }
}

/// Locally optimal design over a parameter grid, in lexicographic grid order.
pub fn region_scan(template: &ModelSpec, spec: &ScanSpec, seed: u64) -> Result<ScanTable> {
    if template.points() > 64 {
        return Err(DesignError::InvalidGrid("zero-pattern bitmask supports at most 64 points".into()));
    }
    for a in &spec.compare {
        if a.weights.len() != template.points() {
            return Err(DesignError::InvalidAllocation("comparison design has the wrong length".into()));
        }
    }
    let grid = ParamGrid::new(&spec.free, template)?;
    let rows = (0..grid.len())
        .into_par_iter()
        .map(|idx| scan_point(template, &grid, idx, &spec.compare, seed))
        .collect();
    Ok(ScanTable {
        names: grid.names.clone(),
        compare_labels: (1..=spec.compare.len()).map(|i| format!("design{i}")).collect(),
        rows,
    })
}
