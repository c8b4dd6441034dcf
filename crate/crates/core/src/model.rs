//! Design problems and the per-point ingredients of their information matrices.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{DesignError, Result};
use crate::linalg::{numerical_rank, tridiagonal_det};
use crate::links::LinkFunction;

/// Smallest admissible category probability.
pub const PI_FLOOR: f64 = 1e-12;
/// Smallest admissible gap between consecutive cut-points.
pub const THETA_MIN_GAP: f64 = 1e-9;

/// A cumulative link model `g(P(Y ≤ j | x)) = θ_j − xᵀβ` together with the
/// candidate design points (rows of `design`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub link: LinkFunction,
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub design: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    DimensionMismatch { message: String },
    NonFinite { field: String },
    CutPointsNotIncreasing { index: usize, gap: f64 },
    RankDeficient { rank: usize, required: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub issues: Vec<ValidationIssue>,
}

impl ModelSpec {
    pub fn new(link: LinkFunction, beta: Vec<f64>, theta: Vec<f64>, design: DMatrix<f64>) -> Self {
        ModelSpec {
            link,
            beta,
            theta,
            design,
        }
    }

    /// Number of predictors `d`.
    pub fn predictors(&self) -> usize {
        self.beta.len()
    }

    /// Number of response categories `J`.
    pub fn categories(&self) -> usize {
        self.theta.len() + 1
    }

    /// Number of candidate points `m`.
    pub fn points(&self) -> usize {
        self.design.nrows()
    }

    /// Number of parameters `d + J − 1`.
    pub fn parameters(&self) -> usize {
        self.beta.len() + self.theta.len()
    }

    /// Same model with different parameter values.
    pub fn with_parameters(&self, beta: Vec<f64>, theta: Vec<f64>) -> Self {
        ModelSpec {
            link: self.link,
            beta,
            theta,
            design: self.design.clone(),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        let d = self.beta.len();
        if d == 0 {
            issues.push(ValidationIssue::DimensionMismatch {
                message: "beta must have at least one entry".into(),
            });
        }
        if self.theta.is_empty() {
            issues.push(ValidationIssue::DimensionMismatch {
                message: "theta must have at least one entry (J >= 2)".into(),
            });
        }
        if self.design.ncols() != d {
            issues.push(ValidationIssue::DimensionMismatch {
                message: format!(
                    "design has {} columns but beta has {} entries",
                    self.design.ncols(),
                    d
                ),
            });
        }
        if self.design.nrows() < 2 {
            issues.push(ValidationIssue::DimensionMismatch {
                message: format!("design has {} rows; at least 2 required", self.design.nrows()),
            });
        }
        if self.beta.iter().any(|v| !v.is_finite()) {
            issues.push(ValidationIssue::NonFinite { field: "beta".into() });
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            issues.push(ValidationIssue::NonFinite { field: "theta".into() });
        }
        if self.design.iter().any(|v| !v.is_finite()) {
            issues.push(ValidationIssue::NonFinite { field: "design".into() });
        }
        for (index, w) in self.theta.windows(2).enumerate() {
            let gap = w[1] - w[0];
            if !(gap >= THETA_MIN_GAP) {
                issues.push(ValidationIssue::CutPointsNotIncreasing { index, gap });
            }
        }
        if self.design.ncols() == d && d > 0 && self.design.iter().all(|v| v.is_finite()) {
            let rank = numerical_rank(&extended_design(&self.design));
            if rank < d + 1 {
                issues.push(ValidationIssue::RankDeficient {
                    rank,
                    required: d + 1,
                });
            }
        }
        ValidationReport {
            passed: issues.is_empty(),
            issues,
        }
    }

    /// Validates and converts failures into an error.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.passed {
            Ok(())
        } else {
            let text: Vec<String> = report.issues.iter().map(|i| format!("{i:?}")).collect();
            Err(DesignError::InvalidModel(text.join("; ")))
        }
    }

    pub fn point_quantities(&self, i: usize) -> Result<PointQuantities> {
        self.point_quantities_with_floor(i, PI_FLOOR)
    }

    /// Category probabilities are differenced on whichever side of the
    /// median keeps them accurate, so deep-tail points keep their small but
    /// nonzero information; any `π_ij < floor` is still rejected.
    pub fn point_quantities_with_floor(&self, i: usize, floor: f64) -> Result<PointQuantities> {
        let x = self.design.row(i);
        let xb: f64 = x.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        let j = self.categories();
        let mut gamma = Vec::with_capacity(j - 1);
        let mut survival = Vec::with_capacity(j - 1);
        let mut g = Vec::with_capacity(j - 1);
        for &theta in &self.theta {
            let eta = theta - xb;
            if !eta.is_finite() {
                return Err(DesignError::NonFinite(eta));
            }
            gamma.push(self.link.cdf_unclamped(eta));
            survival.push(self.link.survival_unclamped(eta));
            g.push(self.link.inverse_link_derivative(eta)?);
        }
        let mut pi = Vec::with_capacity(j);
        pi.push(gamma[0]);
        for t in 1..j - 1 {
            pi.push(if gamma[t] <= 0.5 {
                gamma[t] - gamma[t - 1]
            } else {
                survival[t - 1] - survival[t]
            });
        }
        pi.push(survival[j - 2]);
        for (category, &value) in pi.iter().enumerate() {
            if !(value >= floor && value > 0.0) {
                return Err(DesignError::DegeneratePoint {
                    point: i,
                    category: category + 1,
                    value,
                });
            }
        }
        let coefficients = InfoCoefficients::from_probabilities(&pi, &g);
        Ok(PointQuantities {
            gamma,
            pi,
            g,
            coefficients,
        })
    }
}

/// `X₁ = (1 X)`.
pub fn extended_design(design: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, d) = design.shape();
    DMatrix::from_fn(m, d + 1, |r, c| if c == 0 { 1.0 } else { design[(r, c - 1)] })
}

/// The scalars `e`, `c`, `u`, `b` that assemble a point's information
/// matrix. Indices follow category order: `c[t]` and `u[t]` for
/// `t = 1..J−1` live at `t − 1`; `b[t]` for `t = 2..J−1` lives at `t − 2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoCoefficients {
    pub e: f64,
    pub c: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

impl InfoCoefficients {
    fn from_probabilities(pi: &[f64], g: &[f64]) -> Self {
        let jm1 = g.len();
        // g with the implicit zero boundaries g_0 = g_J = 0
        let gx = |t: usize| -> f64 {
            if t == 0 || t > jm1 {
                0.0
            } else {
                g[t - 1]
            }
        };
        let e = (1..=jm1 + 1)
            .map(|j| {
                let diff = gx(j) - gx(j - 1);
                diff * diff / pi[j - 1]
            })
            .sum();
        let u: Vec<f64> = (1..=jm1)
            .map(|t| gx(t) * gx(t) * (1.0 / pi[t - 1] + 1.0 / pi[t]))
            .collect();
        let b: Vec<f64> = (2..=jm1).map(|t| gx(t - 1) * gx(t) / pi[t - 1]).collect();
        let mut coefs = InfoCoefficients {
            e,
            c: Vec::new(),
            u,
            b,
        };
        coefs.c = coefs.derived_c();
        coefs
    }

    /// Builds coefficients from `u` and `b` alone, deriving `c` and `e`
    /// through `c_t = u_t − b_t − b_{t+1}` and `e = Σ c_t`.
    pub fn from_u_b(u: Vec<f64>, b: Vec<f64>) -> Self {
        assert_eq!(b.len() + 1, u.len().max(1));
        let mut coefs = InfoCoefficients {
            e: 0.0,
            c: Vec::new(),
            u,
            b,
        };
        coefs.c = coefs.derived_c();
        coefs.e = coefs.c.iter().sum();
        coefs
    }

    pub fn categories(&self) -> usize {
        self.u.len() + 1
    }

    /// `b_t` for `t = 1..=J`, zero at both boundaries.
    pub fn b_at(&self, t: usize) -> f64 {
        if t >= 2 && t - 2 < self.b.len() {
            self.b[t - 2]
        } else {
            0.0
        }
    }

    fn derived_c(&self) -> Vec<f64> {
        (1..=self.u.len())
            .map(|t| self.u[t - 1] - self.b_at(t) - self.b_at(t + 1))
            .collect()
    }

    /// Determinant of the tridiagonal block `A_{i3}` computed from `u`, `b`.
    pub fn a3_det(&self) -> f64 {
        tridiagonal_det(&self.u, &self.b)
    }

    /// `w = |A_{i3}| / e`, the weight driving the minimally supported closed forms.
    pub fn w(&self) -> f64 {
        self.a3_det() / self.e
    }

    /// Multiplies every coefficient by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        InfoCoefficients {
            e: self.e * factor,
            c: self.c.iter().map(|v| v * factor).collect(),
            u: self.u.iter().map(|v| v * factor).collect(),
            b: self.b.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Derived scalars for one design point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointQuantities {
    pub gamma: Vec<f64>,
    pub pi: Vec<f64>,
    pub g: Vec<f64>,
    #[serde(flatten)]
    pub coefficients: InfoCoefficients,
}

impl PointQuantities {
    pub fn e(&self) -> f64 {
        self.coefficients.e
    }
    pub fn c(&self) -> &[f64] {
        &self.coefficients.c
    }
    pub fn u(&self) -> &[f64] {
        &self.coefficients.u
    }
    pub fn b(&self) -> &[f64] {
        &self.coefficients.b
    }
}
