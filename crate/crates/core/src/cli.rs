//! Command-line dispatcher.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::approx::{self, LiftOneOptions, OptimalityCertificate};
use crate::error::{DesignError, Result};
use crate::ew_bayes::{self, BayesSession, PriorSpec};
use crate::exact;
use crate::fisher::{Allocation, DesignProblem};
use crate::fixtures;
use crate::io::{self, AllocationFile, GridFile};
use crate::minimal::{self, Certified, ScanSpec};
use crate::model::ModelSpec;

/// Tolerance of the optimality certificate attached to optimizer output.
pub const CERTIFICATE_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "clm-design", version, about = "D-optimal designs for cumulative link models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Check a model and design for validity.
    Validate(RunArgs),
    /// Locally D-optimal approximate allocation (lift-one).
    OptimizeApprox(RunArgs),
    /// Locally D-optimal exact allocation of `--n` runs (exchange).
    OptimizeExact(RunArgs),
    /// Closed-form minimally supported designs and their certificates.
    CheckMinimal(RunArgs),
    /// EW D-optimal allocation under a box-uniform prior.
    Ew(RunArgs),
    /// Bayes D-optimal allocation under a box-uniform prior.
    Bayes(RunArgs),
    /// Efficiency of designs across a parameter grid.
    Robustness(RunArgs),
    /// D-efficiency of allocations against a reference.
    Efficiency(RunArgs),
    /// Locally optimal design over a parameter grid.
    ScanRegion(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::OptimizeApprox(_) => "optimize-approx",
            Command::OptimizeExact(_) => "optimize-exact",
            Command::CheckMinimal(_) => "check-minimal",
            Command::Ew(_) => "ew",
            Command::Bayes(_) => "bayes",
            Command::Robustness(_) => "robustness",
            Command::Efficiency(_) => "efficiency",
            Command::ScanRegion(_) => "scan-region",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Validate(a)
            | Command::OptimizeApprox(a)
            | Command::OptimizeExact(a)
            | Command::CheckMinimal(a)
            | Command::Ew(a)
            | Command::Bayes(a)
            | Command::Robustness(a)
            | Command::Efficiency(a)
            | Command::ScanRegion(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    /// Model JSON: {"link", "beta", "theta"}.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Design CSV with header x1,…,xd.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Built-in study: odor, wine, toxicity or polysilicon.
    #[arg(long)]
    pub fixture: Option<String>,
    /// Prior JSON: {"beta": [[lo, hi], …], "theta": [[lo, hi], …]}.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Allocation JSON, or `@name` for a fixture reference; repeat for several.
    #[arg(long)]
    pub alloc: Vec<PathBuf>,
    /// Reference allocation for efficiencies; the local optimum when absent.
    #[arg(long)]
    pub ref_alloc: Option<PathBuf>,
    /// Total runs for exact designs.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Smallest category probability accepted at a design point.
    #[arg(long, default_value_t = crate::model::PI_FLOOR)]
    pub pi_floor: f64,
    /// Grid JSON: {"free": [{"name", "from", "to", "step"}, …], "fixed"?, "compare"?}.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

/// What a run produced: text for stdout and the exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub exit: i32,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    result: T,
}

/// Parse `argv`, run, and return the process exit status. Errors go to
/// stderr.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            outcome.exit
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let args = cli.command.args();
    let hash = config_hash(&cli.command)?;
    let ctx = Ctx {
        command: cli.command.name(),
        hash,
        args,
    };
    match &cli.command {
        Command::Validate(_) => validate(&ctx),
        Command::OptimizeApprox(_) => optimize_approx(&ctx),
        Command::OptimizeExact(_) => optimize_exact(&ctx),
        Command::CheckMinimal(_) => check_minimal(&ctx),
        Command::Ew(_) => ew(&ctx),
        Command::Bayes(_) => bayes(&ctx),
        Command::Robustness(_) => robustness(&ctx),
        Command::Efficiency(_) => efficiency(&ctx),
        Command::ScanRegion(_) => scan_region(&ctx),
    }
}

/// SHA-256 over the command, its arguments and the bytes of every input file.
pub fn config_hash(command: &Command) -> Result<String> {
    let args = command.args();
    let mut h = Sha256::new();
    h.update(command.name().as_bytes());
    h.update(serde_json::to_vec(args).expect("arguments serialize"));
    let inputs = [&args.model, &args.design, &args.prior, &args.ref_alloc, &args.grid]
        .into_iter()
        .flatten()
        .chain(&args.alloc);
    for path in inputs.filter(|p| fixture_reference(p).is_none()) {
        h.update(io::read_bytes(path)?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

struct Ctx<'a> {
    command: &'static str,
    hash: String,
    args: &'a RunArgs,
}

impl Ctx<'_> {
    fn envelope<T: Serialize>(&self, result: T) -> String {
        io::to_json_string(&Envelope {
            command: self.command,
            config_hash: &self.hash,
            seed: self.args.seed,
            result,
        })
    }

    /// Write `text` to `--out`, or return it for stdout.
    fn emit(&self, text: String, exit: i32) -> Result<Outcome> {
        match &self.args.out {
            Some(path) => {
                io::write_bytes(path, text.as_bytes())?;
                Ok(Outcome { stdout: String::new(), exit })
            }
            None => Ok(Outcome { stdout: text, exit }),
        }
    }

    fn fixture(&self) -> Result<Option<(ModelSpec, fixtures::References)>> {
        self.args.fixture.as_deref().map(fixtures::load).transpose()
    }

    /// Design from `--design`, else the fixture's.
    fn design(&self) -> Result<DMatrix<f64>> {
        match (&self.args.design, self.fixture()?) {
            (Some(path), _) => io::read_design_csv(path),
            (None, Some((m, _))) => Ok(m.design),
            (None, None) => Err(missing("--design (or --fixture)")),
        }
    }

    /// Model from `--fixture`, overridden by `--model` / `--design`.
    fn model(&self) -> Result<ModelSpec> {
        let design = self.design()?;
        match (&self.args.model, self.fixture()?) {
            (Some(path), _) => io::read_model_file(path)?.into_model(design),
            (None, Some((m, _))) => Ok(ModelSpec::new(m.link, m.beta, m.theta, design)),
            (None, None) => Err(missing("--model (or --fixture)")),
        }
    }

    fn allocations(&self, m: usize) -> Result<Vec<(String, Allocation)>> {
        self.args.alloc.iter().map(|p| self.labelled(p, m)).collect()
    }

    /// An allocation file, or `@name` for a reference bundled with the fixture.
    fn labelled(&self, path: &Path, m: usize) -> Result<(String, Allocation)> {
        let Some(name) = fixture_reference(path) else {
            return labelled(path, m);
        };
        let (_, refs) = self.fixture()?.ok_or_else(|| missing("--fixture (for @references)"))?;
        let found = refs.named().into_iter().find(|(n, _)| *n == name);
        let (_, allocation) = found.ok_or_else(|| DesignError::Parse {
            context: "arguments".into(),
            message: format!("fixture has no reference allocation `{name}`"),
        })?;
        if allocation.weights.len() != m {
            return Err(DesignError::Parse {
                context: "arguments".into(),
                message: format!("reference `{name}` has {} weights, the design has {m} points", allocation.weights.len()),
            });
        }
        Ok((name.to_string(), allocation))
    }

    fn prior(&self, model: &ModelSpec) -> Result<PriorSpec> {
        let prior = match (&self.args.prior, self.args.fixture.as_deref()) {
            (Some(path), _) => io::read_prior(path)?,
            (None, Some("odor")) => PriorSpec::new(fixtures::ODOR_PRIOR_BETA.to_vec(), fixtures::ODOR_PRIOR_THETA.to_vec()),
            _ => return Err(missing("--prior")),
        };
        prior.validate(model)?;
        Ok(prior)
    }

    fn problem(&self, model: &ModelSpec) -> Result<DesignProblem> {
        if !(self.args.pi_floor > 0.0) {
            return Err(DesignError::Parse {
                context: "arguments".into(),
                message: "--pi-floor must be positive".into(),
            });
        }
        DesignProblem::with_floor(model, self.args.pi_floor)
    }

    fn lift_one_options(&self) -> LiftOneOptions {
        LiftOneOptions {
            seed: self.args.seed,
            tol: self.args.tol.unwrap_or(approx::DEFAULT_TOL),
            ..LiftOneOptions::default()
        }
    }
}

fn missing(flag: &str) -> DesignError {
    DesignError::Parse {
        context: "arguments".into(),
        message: format!("missing required {flag}"),
    }
}

fn fixture_reference(path: &Path) -> Option<&str> {
    path.to_str()?.strip_prefix('@')
}

fn labelled(path: &Path, m: usize) -> Result<(String, Allocation)> {
    let AllocationFile { label, allocation } = io::read_allocation(path)?;
    if allocation.weights.len() != m {
        return Err(DesignError::Parse {
            context: path.display().to_string(),
            message: format!("weights has {} entries, the design has {m} points", allocation.weights.len()),
        });
    }
    let label = label.unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    Ok((label, allocation))
}

#[derive(Serialize)]
struct ValidateOut {
    passed: bool,
    points: usize,
    predictors: usize,
    categories: usize,
    report: crate::model::ValidationReport,
}

fn validate(ctx: &Ctx) -> Result<Outcome> {
    let model = ctx.model()?;
    let report = model.validate();
    let passed = report.passed;
    let out = ValidateOut {
        passed,
        points: model.points(),
        predictors: model.predictors(),
        categories: model.categories(),
        report,
    };
    ctx.emit(ctx.envelope(out), if passed { 0 } else { 1 })
}

#[derive(Serialize)]
struct ApproxOut {
    #[serde(flatten)]
    result: approx::LiftOneResult,
    uniform_efficiency: f64,
    certificate: OptimalityCertificate,
}

fn optimize_approx(ctx: &Ctx) -> Result<Outcome> {
    let model = ctx.model()?;
    let problem = ctx.problem(&model)?;
    let init = ctx.allocations(model.points())?.into_iter().next().map(|(_, a)| a.proportions());
    let result = approx::lift_one_optimize(&problem, init.as_deref(), &ctx.lift_one_options())?;
    let certificate = approx::verify_optimality(&problem, &result.p, CERTIFICATE_TOL)?;
    let uniform_efficiency = problem.d_efficiency(&Allocation::uniform(model.points()), &result.allocation())?;
    let exit = if result.converged && certificate.passed { 0 } else { 1 };
    ctx.emit(
        ctx.envelope(ApproxOut {
            result,
            uniform_efficiency,
            certificate,
        }),
        exit,
    )
}

#[derive(Serialize)]
struct ExactOut {
    #[serde(flatten)]
    result: exact::ExchangeResult,
    proportions: Vec<f64>,
    restarts: usize,
}

fn optimize_exact(ctx: &Ctx) -> Result<Outcome> {
    let model = ctx.model()?;
    let problem = ctx.problem(&model)?;
    let n_total = ctx.args.n.ok_or_else(|| missing("--n"))?;
    let init = match ctx.allocations(model.points())?.into_iter().next() {
        Some((_, a)) => {
            let counts = a.counts();
            if counts.iter().sum::<u64>() != n_total {
                return Err(DesignError::InvalidAllocation(format!("initial counts do not sum to --n {n_total}")));
            }
            Some(counts)
        }
        None => None,
    };
    let result = exact::exchange_optimize_restarts(&problem, n_total, init.as_deref(), ctx.args.seed, ctx.args.restarts)?;
    let proportions = result.n.iter().map(|&c| c as f64 / n_total as f64).collect();
    ctx.emit(
        ctx.envelope(ExactOut {
            result,
            proportions,
            restarts: ctx.args.restarts.max(1),
        }),
        0,
    )
}

#[derive(Serialize)]
struct ConditionOut {
    /// 1-based.
    point: usize,
    lhs: f64,
    rhs: f64,
    verdict: Certified,
}

#[derive(Serialize)]
struct CandidateOut {
    /// 1-based.
    support: Vec<usize>,
    weights: Vec<f64>,
    certified_optimal: Certified,
    conditions: Vec<ConditionOut>,
}

#[derive(Serialize)]
struct MinimalOut {
    candidates: Vec<CandidateOut>,
    /// Supports (1-based) certified D-optimal.
    certified: Vec<Vec<usize>>,
}

fn check_minimal(ctx: &Ctx) -> Result<Outcome> {
    let model = ctx.model()?;
    let problem = ctx.problem(&model)?;
    let candidates: Vec<CandidateOut> = minimal::enumerate_minimal(&problem)?
        .into_iter()
        .map(|c| CandidateOut {
            support: c.support.iter().map(|i| i + 1).collect(),
            weights: c.weights,
            certified_optimal: c.certified_optimal,
            conditions: c
                .conditions
                .into_iter()
                .map(|p| ConditionOut {
                    point: p.point + 1,
                    lhs: p.lhs,
                    rhs: p.rhs,
                    verdict: p.verdict,
                })
                .collect(),
        })
        .collect();
    let certified = candidates
        .iter()
        .filter(|c| c.certified_optimal == Certified::Yes)
        .map(|c| c.support.clone())
        .collect();
    ctx.emit(ctx.envelope(MinimalOut { candidates, certified }), 0)
}

#[derive(Serialize)]
struct EwOut {
    #[serde(flatten)]
    result: ew_bayes::EwResult,
    certificate: OptimalityCertificate,
}

fn ew(ctx: &Ctx) -> Result<Outcome> {
    let model = ctx.model()?;
    let prior = ctx.prior(&model)?;
    let (problem, _) = ew_bayes::ew_problem(&model, &prior)?;
    let result = ew_bayes::ew_optimize(&model, &prior, &ctx.lift_one_options())?;
    let certificate = approx::verify_optimality(&problem, &result.design.p, CERTIFICATE_TOL)?;
    let exit = if result.design.converged && certificate.passed { 0 } else { 1 };
    ctx.emit(ctx.envelope(EwOut { result, certificate }), exit)
}

#[derive(Serialize)]
struct LabelledValue {
    label: String,
    value: f64,
}

#[derive(Serialize)]
struct BayesOut {
    #[serde(flatten)]
    result: ew_bayes::BayesResult,
    /// Bayes relative efficiency of each design against the optimum.
    relative_efficiencies: Vec<LabelledValue>,
}

fn bayes(ctx: &Ctx) -> Result<Outcome> {
    let model = ctx.model()?;
    let prior = ctx.prior(&model)?;
    let session = BayesSession::new(&model, &prior)?;
    let result = ew_bayes::bayes_optimize(&session, None, ctx.args.seed)?;
    let mut compare = vec![("uniform".to_string(), Allocation::uniform(model.points()))];
    compare.extend(ctx.allocations(model.points())?);
    let relative_efficiencies = compare
        .iter()
        .map(|(label, a)| {
            Ok(LabelledValue {
                label: label.clone(),
                value: ew_bayes::bayes_relative_efficiency(&session, &a.proportions(), &result.p)?,
            })
        })
        .collect::<Result<_>>()?;
    let exit = if result.converged { 0 } else { 1 };
    ctx.emit(
        ctx.envelope(BayesOut {
            result,
            relative_efficiencies,
        }),
        exit,
    )
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// `dir/stem_full.csv` next to `path`.
pub fn full_table_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_full.csv"))
}

fn robustness(ctx: &Ctx) -> Result<Outcome> {
    let model = ctx.model()?;
    let odor = ctx.args.fixture.as_deref() == Some("odor");
    let mut designs = ctx.allocations(model.points())?;
    if designs.is_empty() {
        if !odor {
            return Err(missing("--alloc"));
        }
        designs = vec![
            ("bayes".into(), Allocation::approximate(fixtures::ODOR_BAYES.to_vec())?),
            ("ew".into(), Allocation::approximate(fixtures::ODOR_EW.to_vec())?),
            ("uniform".into(), Allocation::uniform(model.points())),
        ];
    }
    let axes = match (&ctx.args.grid, odor) {
        (Some(path), _) => io::read_grid(path)?.free,
        (None, true) => ew_bayes::odor_robustness_axes(),
        (None, false) => return Err(missing("--grid")),
    };
    let report = ew_bayes::robustness_grid(&designs, &axes, &model, &ctx.lift_one_options())?;
    match &ctx.args.out {
        Some(path) if is_csv(path) => {
            let header: Vec<String> = ["design", "min", "q1", "median", "mean", "q3", "max"].map(String::from).to_vec();
            let rows: Vec<Vec<String>> = report
                .summaries
                .iter()
                .map(|s| {
                    let mut r = vec![s.label.clone()];
                    r.extend([s.min, s.q1, s.median, s.mean, s.q3, s.max].iter().map(|v| v.to_string()));
                    r
                })
                .collect();
            io::write_bytes(path, io::csv_string(&header, &rows)?.as_bytes())?;
            let mut header = report.names.clone();
            header.extend(report.labels.iter().map(|l| format!("eff_{l}")));
            let rows: Vec<Vec<String>> = report
                .records
                .iter()
                .map(|r| r.values.iter().chain(&r.efficiencies).map(|v| v.to_string()).collect())
                .collect();
            io::write_bytes(&full_table_path(path), io::csv_string(&header, &rows)?.as_bytes())?;
            Ok(Outcome {
                stdout: ctx.envelope(&report),
                exit: 0,
            })
        }
        _ => ctx.emit(ctx.envelope(&report), 0),
    }
}

#[derive(Serialize)]
struct EfficiencyOut {
    reference: String,
    efficiencies: Vec<LabelledValue>,
}

fn efficiency(ctx: &Ctx) -> Result<Outcome> {
    let model = ctx.model()?;
    let problem = ctx.problem(&model)?;
    let designs = ctx.allocations(model.points())?;
    if designs.is_empty() {
        return Err(missing("--alloc"));
    }
    let (reference_label, reference) = match &ctx.args.ref_alloc {
        Some(path) => ctx.labelled(path, model.points())?,
        None => {
            let best = approx::lift_one_optimize(&problem, None, &ctx.lift_one_options())?;
            ("local_optimum".to_string(), best.allocation())
        }
    };
    let efficiencies = designs
        .iter()
        .map(|(label, a)| {
            Ok(LabelledValue {
                label: label.clone(),
                value: problem.d_efficiency(a, &reference)?,
            })
        })
        .collect::<Result<_>>()?;
    ctx.emit(
        ctx.envelope(EfficiencyOut {
            reference: reference_label,
            efficiencies,
        }),
        0,
    )
}

fn scan_region(ctx: &Ctx) -> Result<Outcome> {
    let path = ctx.args.grid.as_ref().ok_or_else(|| missing("--grid"))?;
    let GridFile { free, fixed, compare } = io::read_grid(path)?;
    let model = match fixed {
        Some(f) => f.into_model(ctx.design()?)?,
        None => ctx.model()?,
    };
    let table = minimal::region_scan(&model, &ScanSpec { free, compare }, ctx.args.seed)?;
    match &ctx.args.out {
        Some(out) if is_csv(out) => {
            let rows: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|r| {
                    let mut cells: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
                    cells.push(r.valid.to_string());
                    cells.push(r.zero_pattern.to_string());
                    cells.push(r.objective.to_string());
                    cells.extend(r.weights.iter().chain(&r.efficiencies).chain(&r.w).map(|v| v.to_string()));
                    cells
                })
                .collect();
            io::write_bytes(out, io::csv_string(&table.header(), &rows)?.as_bytes())?;
            Ok(Outcome {
                stdout: String::new(),
                exit: 0,
            })
        }
        _ => ctx.emit(ctx.envelope(&table), 0),
    }
}
