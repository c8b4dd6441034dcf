//! Parameter estimates, candidate points and reference allocations of four
//! published studies.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{DesignError, Result};
use crate::fisher::Allocation;
use crate::links::LinkFunction;
use crate::model::ModelSpec;

pub const NAMES: [&str; 4] = ["odor", "wine", "toxicity", "polysilicon"];

/// Reference allocations shipped with a fixture.
#[derive(Debug, Clone, Default, Serialize)]
pub struct References {
    /// The design actually run.
    pub original: Option<Allocation>,
    /// Published approximate optimum.
    pub optimal: Option<Vec<f64>>,
    /// Published exact optimum.
    pub exact_optimal: Option<Allocation>,
    pub rounded: Option<Allocation>,
}

impl References {
    pub fn named(&self) -> Vec<(&'static str, Allocation)> {
        let mut out = Vec::new();
        if let Some(a) = &self.original {
            out.push(("original", a.clone()));
        }
        if let Some(p) = &self.optimal {
            out.push((
                "optimal",
                Allocation {
                    mode: crate::fisher::AllocationMode::Approximate,
                    weights: p.clone(),
                },
            ));
        }
        if let Some(a) = &self.exact_optimal {
            out.push(("exact_optimal", a.clone()));
        }
        if let Some(a) = &self.rounded {
            out.push(("rounded", a.clone()));
        }
        out
    }
}

pub fn load(name: &str) -> Result<(ModelSpec, References)> {
    match name {
        "odor" => Ok(odor()),
        "wine" => Ok(wine()),
        "toxicity" => Ok(toxicity()),
        "polysilicon" => Ok(polysilicon()),
        other => Err(DesignError::UnknownFixture(other.to_string())),
    }
}

fn two_by_two() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0])
}

pub fn odor() -> (ModelSpec, References) {
    let model = ModelSpec::new(LinkFunction::Logit, vec![-2.44, 1.09], vec![-2.67, -0.21], two_by_two());
    let refs = References {
        original: Some(Allocation::uniform(4)),
        optimal: Some(vec![0.4449, 0.2871, 0.0, 0.2680]),
        exact_optimal: Some(Allocation::exact(&[18, 11, 0, 11])),
        rounded: None,
    };
    (model, refs)
}

/// Published exact optima: `(n, allocation, n^{-4}|F|)`.
pub const ODOR_EXACT: [(u64, [u64; 4], f64); 5] = [
    (3, [1, 1, 0, 1], 0.0002911),
    (10, [4, 3, 0, 3], 0.0003133),
    (40, [18, 11, 0, 11], 0.0003177),
    (100, [44, 29, 0, 27], 0.0003180),
    (1000, [445, 287, 0, 268], 0.0003181),
];

/// Box-uniform prior of the odor study, as `[lo, hi]` for β₁, β₂, θ₁, θ₂.
pub const ODOR_PRIOR_BETA: [[f64; 2]; 2] = [[-3.0, -1.0], [0.0, 2.0]];
pub const ODOR_PRIOR_THETA: [[f64; 2]; 2] = [[-4.0, -2.0], [-1.0, 1.0]];
/// Published Bayes and EW allocations under that prior.
pub const ODOR_BAYES: [f64; 4] = [0.3879, 0.3264, 0.0000, 0.2857];
pub const ODOR_EW: [f64; 4] = [0.3935, 0.3259, 0.0, 0.2806];

pub fn wine() -> (ModelSpec, References) {
    // (temperature, contact) in the order (+,+), (+,−), (−,+), (−,−)
    let model = ModelSpec::new(
        LinkFunction::Logit,
        vec![1.25, 0.76],
        vec![-3.36, -0.76, 1.45, 2.99],
        two_by_two(),
    );
    let refs = References {
        original: Some(Allocation::uniform(4)),
        optimal: Some(vec![0.2694, 0.2643, 0.2333, 0.2330]),
        exact_optimal: None,
        rounded: None,
    };
    (model, refs)
}

pub const TOXICITY_ORIGINAL: [u64; 5] = [297, 242, 312, 299, 285];

pub fn toxicity() -> (ModelSpec, References) {
    let model = ModelSpec::new(
        LinkFunction::Cauchit,
        vec![-0.0176],
        vec![-8.80, -5.34],
        DMatrix::from_column_slice(5, 1, &[0.0, 62.5, 125.0, 250.0, 500.0]),
    );
    let refs = References {
        // fetuses per dose in the source data: close to, but not exactly, uniform
        original: Some(Allocation::exact(&TOXICITY_ORIGINAL)),
        optimal: Some(vec![0.0, 0.0, 0.0, 0.4285, 0.5715]),
        exact_optimal: None,
        rounded: None,
    };
    (model, refs)
}

pub const POLYSILICON_ORIGINAL: [usize; 18] = [
    1, 76, 89, 122, 201, 243, 258, 290, 376, 384, 421, 461, 522, 557, 588, 631, 671, 679,
];
pub const POLYSILICON_ROUNDED: [usize; 18] = [
    116, 181, 199, 286, 291, 301, 331, 336, 339, 350, 394, 399, 461, 464, 495, 536, 558, 569,
];
pub const POLYSILICON_OPTIMAL: [usize; 18] = [
    98, 111, 130, 167, 199, 243, 294, 299, 313, 331, 336, 365, 407, 501, 505, 521, 625, 641,
];

/// Factor levels (1..=3 each, A..F) of the 1-based setting index.
pub fn polysilicon_levels(index: usize) -> [usize; 6] {
    let mut rest = index - 1;
    let mut levels = [0; 6];
    for f in (0..6).rev() {
        levels[f] = rest % 3 + 1;
        rest /= 3;
    }
    levels
}

/// The 3⁶ settings with linear (−1, 0, 1) and quadratic (1, −2, 1)
/// contrasts per factor, rows in index order.
pub fn polysilicon_design() -> DMatrix<f64> {
    const LINEAR: [f64; 3] = [-1.0, 0.0, 1.0];
    const QUADRATIC: [f64; 3] = [1.0, -2.0, 1.0];
    DMatrix::from_fn(729, 12, |r, c| {
        let level = polysilicon_levels(r + 1)[c / 2] - 1;
        if c % 2 == 0 {
            LINEAR[level]
        } else {
            QUADRATIC[level]
        }
    })
}

fn indicator(indices: &[usize], m: usize) -> Allocation {
    let mut counts = vec![0u64; m];
    for &i in indices {
        counts[i - 1] += 1;
    }
    Allocation::exact(&counts)
}

pub fn polysilicon() -> (ModelSpec, References) {
    let model = ModelSpec::new(
        LinkFunction::CLogLog,
        vec![1.45, -0.22, 1.35, 0.02, -0.12, -0.34, 0.19, 0.00, 0.22, 0.08, 0.05, 0.17],
        vec![-1.59, -0.58, 0.41, 1.22],
        polysilicon_design(),
    );
    let refs = References {
        original: Some(indicator(&POLYSILICON_ORIGINAL, 729)),
        optimal: None,
        exact_optimal: Some(indicator(&POLYSILICON_OPTIMAL, 729)),
        rounded: Some(indicator(&POLYSILICON_ROUNDED, 729)),
    };
    (model, refs)
}
