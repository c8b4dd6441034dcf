//! Fisher information, the D-objective and its certificates.
//!
//! A [`DesignProblem`] caches the per-point matrices `A_i` once; every
//! objective evaluation is then a weighted sum plus one symmetric
//! factorization of a `(d+J−1)`-square matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::linalg::{numerical_rank, psd_logdet_in_place, spd_inverse, trace_of_product};
use crate::model::{extended_design, InfoCoefficients, ModelSpec, PointQuantities, PI_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    #[serde(alias = "approx")]
    Approximate,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub mode: AllocationMode,
    pub weights: Vec<f64>,
}

impl Allocation {
    /// Checked approximate allocation: entries in `[0, 1]` summing to one.
    pub fn approximate(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(DesignError::InvalidAllocation(
                "approximate weights must lie in [0, 1]".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 * weights.len().max(1) as f64 {
            return Err(DesignError::InvalidAllocation(format!(
                "approximate weights sum to {sum}, not 1"
            )));
        }
        Ok(Allocation {
            mode: AllocationMode::Approximate,
            weights,
        })
    }

    pub fn exact(counts: &[u64]) -> Self {
        Allocation {
            mode: AllocationMode::Exact,
            weights: counts.iter().map(|&n| n as f64).collect(),
        }
    }

    pub fn uniform(m: usize) -> Self {
        Allocation {
            mode: AllocationMode::Approximate,
            weights: vec![1.0 / m as f64; m],
        }
    }

    /// Re-checks the mode invariants, e.g. after deserialization.
    pub fn validated(self) -> Result<Self> {
        match self.mode {
            AllocationMode::Approximate => Allocation::approximate(self.weights),
            AllocationMode::Exact => {
                if self.weights.iter().any(|w| !(*w >= 0.0) || w.fract() != 0.0) {
                    return Err(DesignError::InvalidAllocation(
                        "exact weights must be nonnegative integers".into(),
                    ));
                }
                Ok(self)
            }
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weights divided by their total.
    pub fn proportions(&self) -> Vec<f64> {
        let total = self.total();
        self.weights.iter().map(|w| w / total).collect()
    }

    pub fn counts(&self) -> Vec<u64> {
        self.weights.iter().map(|&w| w as u64).collect()
    }

    pub fn support(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `F` together with its log-determinant (`-∞` when singular).
#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix {
    pub matrix: DMatrix<f64>,
    pub logdet: f64,
}

impl InformationMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn det(&self) -> f64 {
        if self.logdet == f64::NEG_INFINITY {
            0.0
        } else {
            self.logdet.exp()
        }
    }
}

/// `A_i` for one point from its coefficients and predictor vector.
pub fn point_information(coefs: &InfoCoefficients, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let jm1 = coefs.u.len();
    let k = d + jm1;
    let mut a = DMatrix::zeros(k, k);
    for s in 0..d {
        for t in 0..d {
            a[(s, t)] = coefs.e * x[s] * x[t];
        }
        for t in 0..jm1 {
            let v = -x[s] * coefs.c[t];
            a[(s, d + t)] = v;
            a[(d + t, s)] = v;
        }
    }
    for t in 0..jm1 {
        a[(d + t, d + t)] = coefs.u[t];
    }
    for (idx, &b) in coefs.b.iter().enumerate() {
        // b_{t} for t = idx + 2 couples θ_{t−1} and θ_t
        a[(d + idx, d + idx + 1)] = -b;
        a[(d + idx + 1, d + idx)] = -b;
    }
    a
}

/// A design problem: candidate points with their cached information
/// ingredients. Immutable and shareable.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    design: DMatrix<f64>,
    coefficients: Vec<InfoCoefficients>,
    quantities: Option<Vec<PointQuantities>>,
    matrices: Vec<DMatrix<f64>>,
    predictors: usize,
    categories: usize,
}

impl DesignProblem {
    /// Validates the model and computes every point's quantities.
    pub fn new(model: &ModelSpec) -> Result<Self> {
        model.ensure_valid()?;
        Self::new_unchecked(model)
    }

    /// Skips the rank check of `validate`, still computing quantities
    /// (which rejects degenerate points).
    pub fn new_unchecked(model: &ModelSpec) -> Result<Self> {
        Self::unchecked_with_floor(model, PI_FLOOR)
    }

    /// As `new`, with category probabilities accepted down to `floor`
    /// instead of the default 1e-12.
    pub fn with_floor(model: &ModelSpec, floor: f64) -> Result<Self> {
        model.ensure_valid()?;
        Self::unchecked_with_floor(model, floor)
    }

    fn unchecked_with_floor(model: &ModelSpec, floor: f64) -> Result<Self> {
        let quantities = (0..model.points())
            .map(|i| model.point_quantities_with_floor(i, floor))
            .collect::<Result<Vec<_>>>()?;
        let coefficients = quantities.iter().map(|q| q.coefficients.clone()).collect();
        let mut problem = Self::from_coefficients(model.design.clone(), coefficients)?;
        problem.quantities = Some(quantities);
        Ok(problem)
    }

    /// A problem whose information ingredients are supplied directly, as for
    /// EW designs built from expected coefficients.
    pub fn from_coefficients(design: DMatrix<f64>, coefficients: Vec<InfoCoefficients>) -> Result<Self> {
        let (m, d) = design.shape();
        if coefficients.len() != m {
            return Err(DesignError::InvalidModel(format!(
                "{} coefficient sets for {m} points",
                coefficients.len()
            )));
        }
        let categories = coefficients.first().map(|c| c.categories()).unwrap_or(2);
        if coefficients.iter().any(|c| c.categories() != categories) {
            return Err(DesignError::InvalidModel("inconsistent category counts".into()));
        }
        let matrices = coefficients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let x: Vec<f64> = design.row(i).iter().cloned().collect();
                point_information(c, &x)
            })
            .collect();
        Ok(DesignProblem {
            design,
            coefficients,
            quantities: None,
            matrices,
            predictors: d,
            categories,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }
    pub fn points(&self) -> usize {
        self.design.nrows()
    }
    pub fn predictors(&self) -> usize {
        self.predictors
    }
    pub fn categories(&self) -> usize {
        self.categories
    }
    /// `d + J − 1`.
    pub fn parameters(&self) -> usize {
        self.predictors + self.categories - 1
    }
    pub fn coefficients(&self) -> &[InfoCoefficients] {
        &self.coefficients
    }
    /// Per-point `γ, π, g` when built from a model.
    pub fn quantities(&self) -> Option<&[PointQuantities]> {
        self.quantities.as_deref()
    }
    pub fn point_matrix(&self, i: usize) -> &DMatrix<f64> {
        &self.matrices[i]
    }

    /// `Σ w_i A_i` for arbitrary nonnegative weights.
    pub fn weighted_information(&self, weights: &[f64]) -> DMatrix<f64> {
        assert_eq!(weights.len(), self.points(), "weight vector length");
        let k = self.parameters();
        let mut f = DMatrix::zeros(k, k);
        for (w, a) in weights.iter().zip(&self.matrices) {
            if *w != 0.0 {
                f += a * *w;
            }
        }
        f
    }

    /// `log|Σ w_i A_i|`, `-∞` when singular.
    pub fn log_det(&self, weights: &[f64]) -> f64 {
        let mut f = self.weighted_information(weights);
        psd_logdet_in_place(&mut f)
    }

    /// `|Σ w_i A_i|` without normalization; zero when singular.
    pub fn det(&self, weights: &[f64]) -> f64 {
        let ld = self.log_det(weights);
        if ld == f64::NEG_INFINITY {
            0.0
        } else {
            ld.exp()
        }
    }

    pub fn information(&self, allocation: &Allocation) -> InformationMatrix {
        let matrix = self.weighted_information(&allocation.weights);
        let mut work = matrix.clone();
        let logdet = psd_logdet_in_place(&mut work);
        InformationMatrix { matrix, logdet }
    }

    /// `f = |F/n|`: the determinant of the information per unit, so exact
    /// and approximate allocations are on the same scale.
    pub fn objective(&self, allocation: &Allocation) -> f64 {
        let ld = self.log_objective(allocation);
        if ld == f64::NEG_INFINITY {
            0.0
        } else {
            ld.exp()
        }
    }

    pub fn log_objective(&self, allocation: &Allocation) -> f64 {
        let total = allocation.total();
        if !(total > 0.0) {
            return f64::NEG_INFINITY;
        }
        let ld = self.log_det(&allocation.weights);
        ld - self.parameters() as f64 * total.ln()
    }

    /// True iff the rows of `X₁` with positive weight have rank `d + 1`.
    pub fn support_rank_certificate(&self, allocation: &Allocation) -> bool {
        let support = allocation.support();
        self.support_has_full_rank(&support)
    }

    pub fn support_has_full_rank(&self, support: &[usize]) -> bool {
        if support.len() < self.predictors + 1 {
            return false;
        }
        let x1 = extended_design(&self.design);
        let rows = DMatrix::from_fn(support.len(), x1.ncols(), |r, c| x1[(support[r], c)]);
        numerical_rank(&rows) == self.predictors + 1
    }

    /// `(f(alloc)/f(reference))^{1/(d+J−1)}`.
    pub fn d_efficiency(&self, allocation: &Allocation, reference: &Allocation) -> Result<f64> {
        let lref = self.log_objective(reference);
        if lref == f64::NEG_INFINITY {
            return Err(DesignError::SingularReference);
        }
        let l = self.log_objective(allocation);
        Ok(((l - lref) / self.parameters() as f64).exp())
    }

    /// `∂|F(w)|/∂w_i = |F| tr(F⁻¹ A_i)` at weights `w`, for every point.
    /// `None` when `F(w)` is singular.
    pub fn gradient(&self, weights: &[f64]) -> Option<(f64, Vec<f64>)> {
        let f = self.weighted_information(weights);
        let inv = spd_inverse(&f)?;
        let mut work = f;
        let ld = psd_logdet_in_place(&mut work);
        if ld == f64::NEG_INFINITY {
            return None;
        }
        let det = ld.exp();
        let grads = self
            .matrices
            .iter()
            .map(|a| det * trace_of_product(&inv, a))
            .collect();
        Some((det, grads))
    }

    /// Predictor row of point `i`.
    pub fn x(&self, i: usize) -> DVector<f64> {
        self.design.row(i).transpose()
    }
}
