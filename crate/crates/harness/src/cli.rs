//! Command-line front end. `main` parses [`Cli`] and maps [`CliError`] to
//! exit codes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use geoinfer::inference::{
    confidence_interval, debiased_estimate, solve_debias_matrix, Contrast, DebiasMatrix,
    DebiasMode, InferenceContext, InferenceRow,
};
use geoinfer::solver::{solve_constrained, EstimateResult};
use geoinfer::{rng, AtomSet, Family, ProblemInstance, TangentCone};
use serde::{Deserialize, Serialize};

use crate::aggregate::summarize;
use crate::config::{load_config, ConfigError, ExperimentConfig, Overrides, Preset};
use crate::experiment::{choose_lambda, replicate_seed, run_experiment, simulate_replicate};
use crate::export::{
    export_plot_data, export_results, load_results, write_json, write_rows, ExportError, Format,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] ExportError),
    #[error("{failed} of {total} solves did not converge (tolerated fraction {tolerated})")]
    NonConvergence {
        failed: usize,
        total: usize,
        tolerated: f64,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(ExportError::Empty) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { path, source } => CliError::Io(ExportError::Io { path, source }),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<geoinfer::Error> for CliError {
    fn from(e: geoinfer::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "geoinfer",
    version,
    about = "Atomic-norm estimation, de-biased inference and cone geometry"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory (single-problem commands print to stdout without it).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// Problem file as written by `geoinfer instance`.
    pub problem: PathBuf,
    /// Atom family; defaults to the preset's.
    #[arg(long)]
    pub family: Option<String>,
    /// Fixed λ instead of the Monte-Carlo rule.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Reuse an estimate written by `geoinfer estimate --format json`.
    #[arg(long, value_name = "PATH")]
    pub estimate: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DebiasArgs {
    #[arg(long, value_parser = ["minimize-eta", "fixed-eta", "exact-inverse"])]
    pub mode: Option<String>,
    /// Level for `--mode fixed-eta`.
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the constrained program for one problem file.
    Estimate(ProblemArgs),
    /// Estimate, then build the de-biasing matrix and de-biased estimate.
    Debias {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        debias: DebiasArgs,
    },
    /// Confidence intervals and tests for contrasts.
    Infer {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        debias: DebiasArgs,
        /// `e3`, or sparse weights like `0:1,4:-1` (normalized). Repeatable;
        /// defaults to every coordinate.
        #[arg(long = "contrast")]
        contrasts: Vec<String>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Null value for the tests.
        #[arg(long, default_value_t = 0.0)]
        null: f64,
    },
    /// Cone diagnostics and bound report at a preset's anchor.
    Geometry {
        #[arg(long, default_value_t = 0)]
        grid_index: usize,
    },
    /// Run an experiment config.
    Simulate,
    /// Re-aggregate records under --out.
    Report,
    /// Write one simulated problem file for a preset grid point.
    Instance {
        #[arg(long, default_value_t = 0)]
        grid_index: usize,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
}

fn overrides(global: &GlobalArgs) -> Result<Overrides, CliError> {
    Ok(Overrides {
        preset: global
            .preset
            .as_deref()
            .map(str::parse::<Preset>)
            .transpose()?,
        seed: global.seed,
        output_dir: global.out.clone(),
        replicates: global.replicates,
    })
}

fn experiment_config(global: &GlobalArgs) -> Result<ExperimentConfig, CliError> {
    Ok(load_config(global.config.as_deref(), &overrides(global)?)?)
}

/// Config for single-problem commands; falls back to the custom preset.
fn problem_config(
    global: &GlobalArgs,
    family: Option<&str>,
) -> Result<(ExperimentConfig, Family), CliError> {
    let family: Option<Family> = family.map(str::parse).transpose()?;
    let config = if global.config.is_some() || global.preset.is_some() {
        experiment_config(global)?
    } else {
        let mut c = ExperimentConfig::preset_defaults(Preset::Custom);
        c.family = family.or(c.family);
        if let Some(seed) = global.seed {
            c.seed = seed;
        }
        c
    };
    let family = family.unwrap_or_else(|| config.family());
    Ok((config, family))
}

fn read_problem(path: &Path) -> Result<ProblemInstance, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ProblemInstance::from_json(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn atoms_for(problem: &ProblemInstance, family: Family) -> Result<AtomSet, CliError> {
    Ok(AtomSet::new(family, problem.shape)?)
}

fn estimate(
    args: &ProblemArgs,
    config: &ExperimentConfig,
    problem: &ProblemInstance,
    atoms: &AtomSet,
) -> Result<EstimateResult, CliError> {
    if let Some(path) = &args.estimate {
        let fit: EstimateResult = crate::export::read_json(path)?;
        if fit.estimate.len() != problem.p() {
            return Err(CliError::Config(format!(
                "{}: estimate has length {}, problem has p = {}",
                path.display(),
                fit.estimate.len(),
                problem.p()
            )));
        }
        return Ok(fit);
    }
    let lambda = match args.lambda {
        Some(l) if l >= 0.0 && l.is_finite() => l,
        Some(l) => return Err(CliError::Config(format!("--lambda must be >= 0, got {l}"))),
        None => choose_lambda(
            problem,
            atoms,
            config.delta,
            config.lambda_mc_samples,
            rng::derive_seed(config.seed, &[3]),
        )?,
    };
    let fit = solve_constrained(problem, atoms, lambda, &config.solver)?;
    if !fit.converged {
        log::warn!(
            "solver stopped after {} iterations without converging",
            fit.iterations
        );
    }
    Ok(fit)
}

fn debias_mode(args: &DebiasArgs, config: &ExperimentConfig) -> Result<DebiasMode, CliError> {
    match (args.mode.as_deref(), args.eta) {
        (None, None) => Ok(config.debias),
        (None | Some("fixed-eta"), Some(eta)) if eta >= 0.0 => Ok(DebiasMode::FixedEta(eta)),
        (Some("fixed-eta"), _) | (None, Some(_)) => {
            Err(CliError::Config("fixed-eta mode needs --eta >= 0".into()))
        }
        (Some("minimize-eta"), None) => Ok(DebiasMode::MinimizeEta),
        (Some("exact-inverse"), None) => Ok(DebiasMode::ExactInverse),
        (Some(m), Some(_)) => Err(CliError::Config(format!("--eta does not apply to {m}"))),
        (Some(m), None) => Err(CliError::Config(format!("unknown mode {m}"))),
    }
}

/// Writes `rows` (or a JSON document) to `--out/<stem>.<ext>`, or stdout.
fn emit<R: Serialize, J: Serialize>(
    global: &GlobalArgs,
    stem: &str,
    rows: &[R],
    json: &J,
) -> Result<(), CliError> {
    match (&global.out, global.format) {
        (Some(dir), Format::Csv) => {
            write_rows(&dir.join(stem), rows, Format::Csv)?;
        }
        (Some(dir), Format::Json) => write_json(&dir.join(format!("{stem}.json")), json)?,
        (None, Format::Csv) => {
            let bytes = crate::export::to_csv(rows)?;
            print!("{}", String::from_utf8_lossy(&bytes));
        }
        (None, Format::Json) => println!(
            "{}",
            serde_json::to_string_pretty(json).map_err(|e| CliError::Config(e.to_string()))?
        ),
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CoordinateRow {
    index: usize,
    estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    debiased: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    row_residual: Option<f64>,
}

#[derive(Debug, Serialize)]
struct DebiasOutput<'a> {
    estimate: &'a EstimateResult,
    debias: &'a DebiasMatrix,
    debiased: &'a [f64],
}

fn parse_contrast(spec: &str, p: usize) -> Result<Contrast, CliError> {
    let spec = spec.trim();
    if let Some(i) = spec.strip_prefix('e').and_then(|s| s.parse::<usize>().ok()) {
        return Ok(Contrast::coordinate(p, i)?);
    }
    let mut entries = Vec::new();
    for part in spec.split(',') {
        let (i, w) = part.split_once(':').ok_or_else(|| {
            CliError::Config(format!("bad contrast {spec:?}; use e3 or 0:1,4:-1"))
        })?;
        let i: usize = i
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("bad index in {spec:?}")))?;
        let w: f64 = w
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("bad weight in {spec:?}")))?;
        entries.push((i, w));
    }
    Ok(Contrast::sparse(spec, p, &entries)?)
}

fn nonconvergence_check(failed: usize, total: usize, tolerated: f64) -> Result<(), CliError> {
    if total > 0 && failed as f64 > tolerated * total as f64 {
        return Err(CliError::NonConvergence {
            failed,
            total,
            tolerated,
        });
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let global = &cli.global;
    match &cli.command {
        Command::Estimate(args) => {
            let (config, family) = problem_config(global, args.family.as_deref())?;
            let problem = read_problem(&args.problem)?;
            let atoms = atoms_for(&problem, family)?;
            let fit = estimate(args, &config, &problem, &atoms)?;
            let rows: Vec<CoordinateRow> = fit
                .estimate
                .iter()
                .enumerate()
                .map(|(index, &estimate)| CoordinateRow {
                    index,
                    estimate,
                    debiased: None,
                    row_residual: None,
                })
                .collect();
            emit(global, "estimate", &rows, &fit)?;
            nonconvergence_check(
                usize::from(!fit.converged),
                1,
                config.tolerated_nonconvergence,
            )
        }
        Command::Debias {
            problem: args,
            debias,
        } => {
            let (config, family) = problem_config(global, args.family.as_deref())?;
            let problem = read_problem(&args.problem)?;
            let atoms = atoms_for(&problem, family)?;
            let fit = estimate(args, &config, &problem, &atoms)?;
            let mode = debias_mode(debias, &config)?;
            let omega = solve_debias_matrix(&problem.design, &atoms, mode, &config.solver)?;
            let debiased = debiased_estimate(&fit.estimate, &omega, &problem)?;
            let rows: Vec<CoordinateRow> = (0..problem.p())
                .map(|i| CoordinateRow {
                    index: i,
                    estimate: fit.estimate[i],
                    debiased: Some(debiased[i]),
                    row_residual: Some(omega.row_residuals[i]),
                })
                .collect();
            let out = DebiasOutput {
                estimate: &fit,
                debias: &omega,
                debiased: &debiased,
            };
            emit(global, "debias", &rows, &out)?;
            let failed = usize::from(!fit.converged) + usize::from(!omega.all_converged());
            nonconvergence_check(failed, 2, config.tolerated_nonconvergence)
        }
        Command::Infer {
            problem: args,
            debias,
            contrasts,
            alpha,
            null,
        } => {
            let (config, family) = problem_config(global, args.family.as_deref())?;
            let problem = read_problem(&args.problem)?;
            let atoms = atoms_for(&problem, family)?;
            let alpha = alpha.unwrap_or(config.alpha);
            let contrasts: Vec<Contrast> = if contrasts.is_empty() {
                (0..problem.p())
                    .map(|i| Contrast::coordinate(problem.p(), i))
                    .collect::<geoinfer::Result<_>>()?
            } else {
                contrasts
                    .iter()
                    .map(|s| parse_contrast(s, problem.p()))
                    .collect::<Result<_, _>>()?
            };
            let fit = estimate(args, &config, &problem, &atoms)?;
            let mode = debias_mode(debias, &config)?;
            let omega = solve_debias_matrix(&problem.design, &atoms, mode, &config.solver)?;
            let debiased = debiased_estimate(&fit.estimate, &omega, &problem)?;
            let gram = problem.design.gram();
            let ctx = InferenceContext {
                debiased: &debiased,
                debias: &omega,
                gram: &gram,
                sigma: problem.sigma,
                n: problem.n(),
            };
            let rows = contrasts
                .iter()
                .map(|c| {
                    confidence_interval(&ctx, c, alpha, Some(*null))
                        .map(|r| InferenceRow::new(&r, omega.eta, fit.lambda))
                })
                .collect::<geoinfer::Result<Vec<_>>>()?;
            emit(global, "inference", &rows, &rows)?;
            let failed = usize::from(!fit.converged) + usize::from(!omega.all_converged());
            nonconvergence_check(failed, 2, config.tolerated_nonconvergence)
        }
        Command::Geometry { grid_index } => {
            let config = experiment_config(global)?;
            let points = config.grid_points()?;
            let point = points.get(*grid_index).ok_or_else(|| {
                CliError::Config(format!(
                    "grid index {grid_index} out of range 0..{}",
                    points.len()
                ))
            })?;
            let seed = replicate_seed(config.seed, *grid_index, 0);
            let rep = simulate_replicate(config.family(), point, config.sigma, seed)?;
            let cone = TangentCone::new(rep.atoms, &rep.truth.parameter)?;
            let diag = geoinfer::geometry::cone_diagnostics(
                &cone,
                Some(&rep.problem.design),
                &Default::default(),
                rng::derive_seed(seed, &[4]),
            )?;
            let bounds = geoinfer::geometry::evaluate_bounds(
                &diag,
                config.sigma,
                point.n,
                geoinfer::geometry::ReportingConstants::for_dim(point.p()),
            )?;
            let row = GeometryRow::new(point.n, &diag, &bounds);
            emit(
                global,
                "geometry",
                &[row],
                &serde_json::json!({ "diagnostics": diag, "bounds": bounds }),
            )
        }
        Command::Simulate => {
            let config = experiment_config(global)?;
            let dir = &config.output_dir;
            let output = run_experiment(&config)?;
            let summary = summarize(&output)?;
            export_results(dir, &output, &summary, global.format, true)?;
            write_json(&dir.join("config.json"), &config)?;
            log::info!(
                "{} records written to {} (records sha256 {})",
                output.records.len(),
                dir.display(),
                summary.records_sha256
            );
            let failed = output.records.iter().filter(|r| !r.converged).count();
            nonconvergence_check(
                failed,
                output.records.len(),
                config.tolerated_nonconvergence,
            )
        }
        Command::Report => {
            let dir = global
                .out
                .clone()
                .ok_or_else(|| CliError::Config("report needs --out DIR".into()))?;
            let output = load_results(&dir)?;
            if output.records.is_empty() {
                return Err(ExportError::Empty.into());
            }
            let summary = summarize(&output)?;
            write_json(&dir.join("summary.json"), &summary)?;
            export_plot_data(&dir, &summary)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary)
                    .map_err(|e| CliError::Config(e.to_string()))?
            );
            Ok(())
        }
        Command::Instance {
            grid_index,
            replicate,
        } => {
            let config = experiment_config(global)?;
            let points = config.grid_points()?;
            let point = points.get(*grid_index).ok_or_else(|| {
                CliError::Config(format!(
                    "grid index {grid_index} out of range 0..{}",
                    points.len()
                ))
            })?;
            let seed = replicate_seed(config.seed, *grid_index, *replicate);
            let rep = simulate_replicate(config.family(), point, config.sigma, seed)?;
            let text = rep.problem.to_json()?;
            match &global.out {
                Some(dir) => {
                    crate::export::write_atomic(&dir.join("problem.json"), text.as_bytes())?
                }
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GeometryRow {
    family: Family,
    dim: usize,
    n: usize,
    cone_width: f64,
    cone_width_stderr: f64,
    atom_width: f64,
    image_width: Option<f64>,
    sudakov: f64,
    volume_ratio: Option<f64>,
    phi: Option<f64>,
    psi: Option<f64>,
    gamma: f64,
    width_to_sudakov: f64,
    upper_l2: f64,
    lower_sq: f64,
    min_n: f64,
    link_holds: bool,
}

impl GeometryRow {
    fn new(
        n: usize,
        d: &geoinfer::geometry::ConeDiagnostics,
        b: &geoinfer::geometry::BoundReport,
    ) -> Self {
        GeometryRow {
            family: d.family,
            dim: d.dim,
            n,
            cone_width: d.width.value,
            cone_width_stderr: d.width.stderr,
            atom_width: d.atom_width.value,
            image_width: d.image_width.map(|e| e.value),
            sudakov: d.sudakov.value,
            volume_ratio: d.volume_ratio.map(|e| e.value),
            phi: d.isometry.map(|i| i.phi.value),
            psi: d.isometry.map(|i| i.psi.value),
            gamma: d.gamma.value,
            width_to_sudakov: d.width_to_sudakov,
            upper_l2: b.upper_l2,
            lower_sq: b.lower_sq,
            min_n: b.min_n,
            link_holds: b.link_holds,
        }
    }
}
