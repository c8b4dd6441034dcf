//! Designs under parameter uncertainty: EW D-optimality through expected
//! information ingredients, a fixed-sample Bayes criterion, and efficiency
//! summaries over parameter grids.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{lift_one_optimize, LiftOneOptions, LiftOneResult};
use crate::error::{DesignError, Result};
use crate::fisher::{Allocation, DesignProblem};
use crate::grid::{AxisSpec, ParamGrid};
use crate::linalg::PIVOT_TOL;
use crate::model::{InfoCoefficients, ModelSpec, THETA_MIN_GAP};
use crate::quadrature::TensorRule;

pub const DEFAULT_NODES: usize = 10;
pub const DEFAULT_MC_SAMPLES: usize = 10_000;
pub const BAYES_TOL: f64 = 1e-10;
pub const BAYES_MAX_ITERS: usize = 2000;

fn default_nodes() -> usize {
    DEFAULT_NODES
}
fn default_mc() -> usize {
    DEFAULT_MC_SAMPLES
}

/// Independent uniform priors on each β and θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub beta: Vec<[f64; 2]>,
    pub theta: Vec<[f64; 2]>,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PriorSpec {
    pub fn new(beta: Vec<[f64; 2]>, theta: Vec<[f64; 2]>) -> Self {
        PriorSpec {
            beta,
            theta,
            nodes: DEFAULT_NODES,
            mc_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
        }
    }

    /// Point mass at the model's parameters.
    pub fn point_mass(model: &ModelSpec) -> Self {
        PriorSpec::new(
            model.beta.iter().map(|&b| [b, b]).collect(),
            model.theta.iter().map(|&t| [t, t]).collect(),
        )
    }

    pub fn validate(&self, template: &ModelSpec) -> Result<()> {
        if self.beta.len() != template.beta.len() || self.theta.len() != template.theta.len() {
            return Err(DesignError::InvalidPrior(format!(
                "prior has {} slopes and {} cut-points, model has {} and {}",
                self.beta.len(),
                self.theta.len(),
                template.beta.len(),
                template.theta.len()
            )));
        }
        for (name, [lo, hi]) in self.bounds().iter().enumerate().map(|(i, b)| (i, *b)) {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(DesignError::InvalidPrior(format!("bounds #{} are not a finite interval", name + 1)));
            }
        }
        if self.nodes == 0 || self.mc_samples == 0 {
            return Err(DesignError::InvalidPrior("nodes and mc_samples must be positive".into()));
        }
        // some θ in the box must be increasing
        let mut prev_lo = f64::NEG_INFINITY;
        for [lo, hi] in &self.theta {
            let lowest = lo.max(prev_lo + THETA_MIN_GAP);
            if lowest > *hi {
                return Err(DesignError::InvalidPrior("no increasing cut-points inside the prior box".into()));
            }
            prev_lo = lowest;
        }
        Ok(())
    }

    /// Bounds in parameter order β₁..β_d, θ₁..θ_{J−1}.
    pub fn bounds(&self) -> Vec<[f64; 2]> {
        self.beta.iter().chain(&self.theta).cloned().collect()
    }

    /// True when every cut-point combination in the box is increasing.
    pub fn always_monotone(&self) -> bool {
        self.theta.windows(2).all(|w| w[0][1] + THETA_MIN_GAP <= w[1][0])
    }
}

fn split(template: &ModelSpec, omega: &[f64]) -> ModelSpec {
    let d = template.beta.len();
    template.with_parameters(omega[..d].to_vec(), omega[d..].to_vec())
}

fn increasing(theta: &[f64]) -> bool {
    theta.windows(2).all(|w| w[1] - w[0] >= THETA_MIN_GAP)
}

/// Prior expectations of `u` and `b` per point, with `c` and `e` derived.
#[derive(Debug, Clone, Serialize)]
pub struct ExpectedQuantities {
    pub coefficients: Vec<InfoCoefficients>,
    /// Quadrature mass dropped for non-increasing or degenerate nodes.
    pub rejected_mass: f64,
    pub nodes_used: usize,
}

pub fn ew_expectations(template: &ModelSpec, prior: &PriorSpec) -> Result<ExpectedQuantities> {
    prior.validate(template)?;
    let rule = TensorRule::new(&prior.bounds(), prior.nodes);
    let m = template.points();
    let jm1 = template.theta.len();
    let per_node: Vec<Option<(f64, Vec<InfoCoefficients>)>> = (0..rule.len())
        .into_par_iter()
        .map(|k| {
            let (omega, w) = rule.node(k);
            let model = split(template, &omega);
            if !increasing(&model.theta) {
                return None;
            }
            let coefs: Option<Vec<InfoCoefficients>> =
                (0..m).map(|i| model.point_quantities(i).ok().map(|q| q.coefficients)).collect();
            coefs.map(|c| (w, c))
        })
        .collect();
    let mut u = vec![vec![0.0; jm1]; m];
    let mut b = vec![vec![0.0; jm1.saturating_sub(1)]; m];
    let mut mass = 0.0;
    let mut used = 0;
    for (w, coefs) in per_node.into_iter().flatten() {
        mass += w;
        used += 1;
        for (i, c) in coefs.iter().enumerate() {
            for (acc, v) in u[i].iter_mut().zip(&c.u) {
                *acc += w * v;
            }
            for (acc, v) in b[i].iter_mut().zip(&c.b) {
                *acc += w * v;
            }
        }
    }
    if used == 0 {
        return Err(DesignError::InvalidPrior("every quadrature node was rejected".into()));
    }
    let coefficients = u
        .into_iter()
        .zip(b)
        .map(|(u, b)| {
            InfoCoefficients::from_u_b(u.into_iter().map(|v| v / mass).collect(), b.into_iter().map(|v| v / mass).collect())
        })
        .collect();
    Ok(ExpectedQuantities {
        coefficients,
        rejected_mass: 1.0 - mass,
        nodes_used: used,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EwResult {
    #[serde(flatten)]
    pub design: LiftOneResult,
    pub rejected_mass: f64,
}

/// The surrogate problem whose information is `E(F)`.
pub fn ew_problem(template: &ModelSpec, prior: &PriorSpec) -> Result<(DesignProblem, f64)> {
    let expected = ew_expectations(template, prior)?;
    let problem = DesignProblem::from_coefficients(template.design.clone(), expected.coefficients)?;
    Ok((problem, expected.rejected_mass))
}

pub fn ew_optimize(template: &ModelSpec, prior: &PriorSpec, opts: &LiftOneOptions) -> Result<EwResult> {
    let (problem, rejected_mass) = ew_problem(template, prior)?;
    Ok(EwResult {
        design: lift_one_optimize(&problem, None, opts)?,
        rejected_mass,
    })
}

/// A fixed Monte Carlo sample from the prior, reused for every allocation
/// evaluated in the session.
#[derive(Debug, Clone)]
pub struct BayesSession {
    draws: Vec<DesignProblem>,
    pub rejected: usize,
    parameters: usize,
}

impl BayesSession {
    pub fn new(template: &ModelSpec, prior: &PriorSpec) -> Result<Self> {
        prior.validate(template)?;
        let bounds = prior.bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(prior.seed);
        let omegas: Vec<Vec<f64>> = (0..prior.mc_samples)
            .map(|_| {
                bounds
                    .iter()
                    .map(|&[lo, hi]| lo + (hi - lo) * rng.random::<f64>())
                    .collect()
            })
            .collect();
        let built: Vec<Option<DesignProblem>> = omegas
            .par_iter()
            .map(|omega| {
                let model = split(template, omega);
                if !increasing(&model.theta) {
                    return None;
                }
                DesignProblem::new_unchecked(&model).ok()
            })
            .collect();
        let rejected = built.iter().filter(|d| d.is_none()).count();
        let draws: Vec<DesignProblem> = built.into_iter().flatten().collect();
        if draws.is_empty() {
            return Err(DesignError::InvalidPrior("every prior draw was rejected".into()));
        }
        Ok(BayesSession {
            parameters: draws[0].parameters(),
            draws,
            rejected,
        })
    }

    pub fn draws(&self) -> usize {
        self.draws.len()
    }

    /// Per draw: `log|F|` and `tr(F⁻¹A_i)` for every point (`None` if singular).
    fn per_draw(&self, p: &[f64], with_gradient: bool) -> Vec<(f64, Option<Vec<f64>>)> {
        self.draws
            .par_iter()
            .map(|problem| {
                let f = problem.weighted_information(p);
                let Some(chol) = f.clone().cholesky() else {
                    return (f64::NEG_INFINITY, None);
                };
                let l = chol.l_dirty();
                let scale = f.diagonal().max().max(f64::MIN_POSITIVE);
                let mut logdet = 0.0;
                for k in 0..f.nrows() {
                    let piv = l[(k, k)] * l[(k, k)];
                    if piv <= PIVOT_TOL * scale {
                        return (f64::NEG_INFINITY, None);
                    }
                    logdet += piv.ln();
                }
                if !with_gradient {
                    return (logdet, None);
                }
                let inv = chol.inverse();
                let traces = (0..problem.points())
                    .map(|i| inv.component_mul(problem.point_matrix(i)).sum())
                    .collect();
                (logdet, Some(traces))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BayesValue {
    /// Sample mean of `log|F(p; ω)|`; `−∞` if any draw is singular.
    pub value: f64,
    pub singular_draws: usize,
}

pub fn bayes_objective(session: &BayesSession, p: &[f64]) -> BayesValue {
    let per = session.per_draw(p, false);
    let singular_draws = per.iter().filter(|(v, _)| *v == f64::NEG_INFINITY).count();
    let sum: f64 = per.iter().map(|(v, _)| v).sum();
    BayesValue {
        value: if singular_draws > 0 {
            f64::NEG_INFINITY
        } else {
            sum / per.len() as f64
        },
        singular_draws,
    }
}

/// `exp{(φ(p) − φ(reference))/(d+J−1)}`.
pub fn bayes_relative_efficiency(session: &BayesSession, p: &[f64], reference: &[f64]) -> Result<f64> {
    let r = bayes_objective(session, reference).value;
    if r == f64::NEG_INFINITY {
        return Err(DesignError::SingularReference);
    }
    let v = bayes_objective(session, p).value;
    Ok(((v - r) / session.parameters as f64).exp())
}

#[derive(Debug, Clone, Serialize)]
pub struct BayesResult {
    pub p: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The sample objective never decreased between iterations.
    pub monotone: bool,
    pub draws: usize,
    pub rejected_draws: usize,
    pub seed: u64,
}

/// Multiplicative iteration `p_i ← p_i ĝ_i / Σ_k p_k ĝ_k` with
/// `ĝ_i` the sample mean of `tr(F⁻¹A_i)`.
pub fn bayes_optimize(session: &BayesSession, init: Option<&[f64]>, seed: u64) -> Result<BayesResult> {
    let m = session.draws[0].points();
    let mut p = match init {
        Some(w) => Allocation::approximate(w.to_vec())?.weights,
        None => vec![1.0 / m as f64; m],
    };
    let mut phi = f64::NEG_INFINITY;
    let mut monotone = true;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..=BAYES_MAX_ITERS {
        let per = session.per_draw(&p, true);
        if per.iter().any(|(_, g)| g.is_none()) {
            return Err(DesignError::InvalidStart);
        }
        let n = per.len() as f64;
        let value = per.iter().map(|(v, _)| v).sum::<f64>() / n;
        let mut g = vec![0.0; m];
        for (_, t) in &per {
            for (acc, v) in g.iter_mut().zip(t.as_ref().unwrap()) {
                *acc += v;
            }
        }
        if it > 0 {
            if value < phi - 1e-12 * phi.abs().max(1.0) {
                monotone = false;
            }
            if (value - phi).abs() <= BAYES_TOL * phi.abs().max(1.0) {
                phi = value;
                converged = true;
                break;
            }
        }
        phi = value;
        if it == BAYES_MAX_ITERS {
            break;
        }
        iterations = it + 1;
        let norm: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        p = p.iter().zip(&g).map(|(a, b)| a * b / norm).collect();
    }
    Ok(BayesResult {
        p,
        objective: phi,
        iterations,
        converged,
        monotone,
        draws: session.draws(),
        rejected_draws: session.rejected,
        seed,
    })
}

/// The robustness grid of the odor prior box at step 0.1.
pub fn odor_robustness_axes() -> Vec<AxisSpec> {
    let axis = |name: &str, from: f64, to: f64| AxisSpec {
        name: name.into(),
        from,
        to,
        step: 0.1,
    };
    vec![
        axis("beta1", -3.0, -1.0),
        axis("beta2", 0.0, 2.0),
        axis("theta1", -4.0, -2.0),
        axis("theta2", -1.0, 1.0),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub label: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n−1)q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(label: &str, values: &[f64]) -> Summary {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Summary {
        label: label.to_string(),
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRecord {
    pub values: Vec<f64>,
    pub efficiencies: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessReport {
    pub names: Vec<String>,
    pub labels: Vec<String>,
    pub summaries: Vec<Summary>,
    /// Grid points skipped because the model was invalid there.
    pub skipped: usize,
    #[serde(skip)]
    pub records: Vec<GridRecord>,
}

/// D-efficiency of each design against the local optimum at every grid
/// point, summarized per design.
pub fn robustness_grid(
    designs: &[(String, Allocation)],
    axes: &[AxisSpec],
    template: &ModelSpec,
    opts: &LiftOneOptions,
) -> Result<RobustnessReport> {
    let grid = ParamGrid::new(axes, template)?;
    for (label, a) in designs {
        if a.weights.len() != template.points() {
            return Err(DesignError::InvalidAllocation(format!("design `{label}` has the wrong length")));
        }
    }
    let records: Vec<Option<GridRecord>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let values = grid.point(idx);
            let model = grid.apply(template, &values);
            let problem = DesignProblem::new(&model).ok()?;
            let best = lift_one_optimize(&problem, None, opts).ok()?.allocation();
            let efficiencies = designs
                .iter()
                .map(|(_, a)| problem.d_efficiency(a, &best).unwrap_or(f64::NAN))
                .collect();
            Some(GridRecord { values, efficiencies })
        })
        .collect();
    let skipped = records.iter().filter(|r| r.is_none()).count();
    let records: Vec<GridRecord> = records.into_iter().flatten().collect();
    if records.is_empty() {
        return Err(DesignError::InvalidGrid("no valid grid points".into()));
    }
    let summaries = designs
        .iter()
        .enumerate()
        .map(|(k, (label, _))| {
            let col: Vec<f64> = records.iter().map(|r| r.efficiencies[k]).collect();
            summarize(label, &col)
        })
        .collect();
    Ok(RobustnessReport {
        names: grid.names.clone(),
        labels: designs.iter().map(|(l, _)| l.clone()).collect(),
        summaries,
        skipped,
        records,
    })
}
