//! Replicate orchestration for estimation and coverage experiments.

use std::time::Instant;

use geoinfer::atoms::AtomSet;
use geoinfer::geometry::{
    cone_diagnostics, default_delta, evaluate_bounds, DiagnosticsBudget, ReportingConstants,
};
use geoinfer::inference::{
    confidence_interval, debias_remainder_bound, debiased_estimate, solve_debias_matrix, Contrast,
    InferenceContext,
};
use geoinfer::linalg::{norm2, sub};
use geoinfer::model::simulate_observation;
use geoinfer::solver::{compute_lambda, solve_constrained, EstimateResult};
use geoinfer::{rng, DesignOperator, Family, GroundTruth, ProblemInstance, TangentCone};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind, GridPoint};

/// One replicate. Runtimes live in [`Timing`] so that record files are
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub preset: String,
    pub family: Family,
    pub grid_index: usize,
    pub replicate: usize,
    pub n: usize,
    pub p: usize,
    pub complexity: usize,
    pub seed: u64,
    pub l2_error: f64,
    pub atomic_error: f64,
    pub prediction_error: f64,
    pub lambda: f64,
    pub eta: Option<f64>,
    pub remainder_bound: Option<f64>,
    pub remainder_realized: Option<f64>,
    /// `id:flag` pairs separated by `;`, e.g. `e3:1;e7:0`. Empty for estimation runs.
    pub coverage: String,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastCategory {
    OnSupport,
    OffSupport,
    TwoSparse,
}

impl ContrastCategory {
    pub const ALL: [ContrastCategory; 3] = [
        ContrastCategory::OnSupport,
        ContrastCategory::OffSupport,
        ContrastCategory::TwoSparse,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ContrastCategory::OnSupport => "on-support",
            ContrastCategory::OffSupport => "off-support",
            ContrastCategory::TwoSparse => "two-sparse",
        }
    }
}

/// One contrast of one coverage replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub grid_index: usize,
    pub replicate: usize,
    pub n: usize,
    pub p: usize,
    pub contrast_id: String,
    pub category: ContrastCategory,
    pub truth: f64,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covered: bool,
    /// Two-sided p-value of the true null `⟨v, M⟩ = truth`.
    pub p_value: f64,
}

impl CoverageRecord {
    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub grid_index: usize,
    pub replicate: usize,
    pub runtime_ms: f64,
}

/// Cone geometry and bound constants at one grid point, measured on the
/// first replicate's design and truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub grid_index: usize,
    pub n: usize,
    pub p: usize,
    pub complexity: usize,
    pub cone_width: f64,
    pub cone_width_stderr: f64,
    pub image_width: Option<f64>,
    pub gamma: f64,
    pub sudakov: f64,
    pub upper_l2: f64,
    pub min_n: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<ExperimentRecord>,
    pub coverage: Vec<CoverageRecord>,
    pub timings: Vec<Timing>,
    pub geometry: Vec<GridGeometry>,
}

impl ExperimentOutput {
    pub fn nonconvergence_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let bad = self.records.iter().filter(|r| !r.converged).count();
        bad as f64 / self.records.len() as f64
    }
}

pub fn replicate_seed(master: u64, grid_index: usize, replicate: usize) -> u64 {
    rng::derive_seed(master, &[grid_index as u64, replicate as u64])
}

/// A simulated replicate: data, truth, and the matching atom set.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub problem: ProblemInstance,
    pub truth: GroundTruth,
    pub atoms: AtomSet,
}

pub fn sample_truth(
    family: Family,
    point: &GridPoint,
    rng: &mut rng::Rng,
) -> geoinfer::Result<GroundTruth> {
    match (family, point.shape.matrix_dims()) {
        (Family::Sparse, _) => GroundTruth::sparse(point.p(), point.complexity, rng),
        (Family::LowRank, Some((r, c))) => GroundTruth::low_rank(r, c, point.complexity, rng),
        (Family::Sign, _) => Ok(GroundTruth::sign(point.p(), rng)),
        (Family::Orthogonal, Some((m, _))) => Ok(GroundTruth::orthogonal(m, rng)),
        (f, None) => Err(geoinfer::Error::InvalidArgument(format!(
            "{} needs a matrix shape",
            f.name()
        ))),
    }
}

pub fn simulate_replicate(
    family: Family,
    point: &GridPoint,
    sigma: f64,
    seed: u64,
) -> geoinfer::Result<Replicate> {
    let design =
        DesignOperator::gaussian_ensemble(point.n, point.p(), rng::derive_seed(seed, &[0]))?;
    let truth = sample_truth(family, point, &mut rng::stream(seed, &[1]))?;
    let problem = simulate_observation(
        &design,
        &truth,
        point.shape,
        sigma,
        rng::derive_seed(seed, &[2]),
    )?;
    let atoms = AtomSet::new(family, point.shape)?;
    Ok(Replicate {
        problem,
        truth,
        atoms,
    })
}

/// λ from the Monte-Carlo rule; zero for noiseless data.
pub fn choose_lambda(
    problem: &ProblemInstance,
    atoms: &AtomSet,
    delta: Option<f64>,
    mc_samples: usize,
    seed: u64,
) -> geoinfer::Result<f64> {
    if problem.sigma == 0.0 {
        return Ok(0.0);
    }
    let delta = delta.unwrap_or_else(|| default_delta(problem.p()));
    Ok(compute_lambda(
        &problem.design,
        atoms,
        problem.sigma,
        delta,
        mc_samples,
        seed,
    )?
    .lambda)
}

/// The contrast set: each on-support `e_i` (at most ten), the first
/// off-support `e_j`, and `(e_a + e_b)/√2` pairing the first support index
/// with the off-support index (or the second support index).
pub fn coverage_contrasts(truth: &[f64]) -> geoinfer::Result<Vec<(ContrastCategory, Contrast)>> {
    let p = truth.len();
    let top = truth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let support: Vec<usize> = (0..p)
        .filter(|&i| truth[i].abs() > 1e-12 * top.max(1.0))
        .collect();
    let off = (0..p).find(|i| !support.contains(i));
    let mut out = Vec::new();
    for &i in support.iter().take(10) {
        out.push((ContrastCategory::OnSupport, Contrast::coordinate(p, i)?));
    }
    if let Some(j) = off {
        out.push((ContrastCategory::OffSupport, Contrast::coordinate(p, j)?));
    }
    let pair = match (support.first(), off, support.get(1)) {
        (Some(&a), Some(b), _) => Some((a, b)),
        (Some(&a), None, Some(&b)) => Some((a, b)),
        (None, _, _) if p >= 2 => Some((0, 1)),
        _ => None,
    };
    if let Some((a, b)) = pair {
        let id = format!("e{a}+e{b}");
        out.push((
            ContrastCategory::TwoSparse,
            Contrast::sparse(id, p, &[(a, 1.0), (b, 1.0)])?,
        ));
    }
    Ok(out)
}

struct Errors {
    l2: f64,
    atomic: f64,
    prediction: f64,
}

fn errors(rep: &Replicate, fit: &EstimateResult) -> geoinfer::Result<Errors> {
    let diff = sub(&fit.estimate, &rep.truth.parameter);
    Ok(Errors {
        l2: norm2(&diff),
        atomic: rep.atoms.norm(&diff)?,
        prediction: norm2(&rep.problem.design.apply(&diff)?),
    })
}

/// Runs one replicate of either experiment kind.
pub fn run_replicate(
    config: &ExperimentConfig,
    grid_index: usize,
    point: &GridPoint,
    replicate: usize,
) -> geoinfer::Result<(ExperimentRecord, Vec<CoverageRecord>, Timing)> {
    let start = Instant::now();
    let seed = replicate_seed(config.seed, grid_index, replicate);
    let family = config.family();
    let rep = simulate_replicate(family, point, config.sigma, seed)?;
    let lambda = choose_lambda(
        &rep.problem,
        &rep.atoms,
        config.delta,
        config.lambda_mc_samples,
        rng::derive_seed(seed, &[3]),
    )?;
    let fit = solve_constrained(&rep.problem, &rep.atoms, lambda, &config.solver)?;
    let err = errors(&rep, &fit)?;
    let mut record = ExperimentRecord {
        preset: config.preset.name().to_string(),
        family,
        grid_index,
        replicate,
        n: point.n,
        p: point.p(),
        complexity: point.complexity,
        seed,
        l2_error: err.l2,
        atomic_error: err.atomic,
        prediction_error: err.prediction,
        lambda,
        eta: None,
        remainder_bound: None,
        remainder_realized: None,
        coverage: String::new(),
        converged: fit.converged,
        iterations: fit.iterations,
    };
    let mut coverage = Vec::new();
    if config.kind == ExperimentKind::Coverage {
        coverage = run_inference(config, grid_index, replicate, &rep, &fit, &mut record)?;
    }
    let timing = Timing {
        grid_index,
        replicate,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((record, coverage, timing))
}

fn run_inference(
    config: &ExperimentConfig,
    grid_index: usize,
    replicate: usize,
    rep: &Replicate,
    fit: &EstimateResult,
    record: &mut ExperimentRecord,
) -> geoinfer::Result<Vec<CoverageRecord>> {
    let debias = solve_debias_matrix(
        &rep.problem.design,
        &rep.atoms,
        config.debias,
        &config.solver,
    )?;
    let debiased = debiased_estimate(&fit.estimate, &debias, &rep.problem)?;
    let gram = rep.problem.design.gram();
    let ctx = InferenceContext {
        debiased: &debiased,
        debias: &debias,
        gram: &gram,
        sigma: rep.problem.sigma,
        n: rep.problem.n(),
    };
    let bound = debias_remainder_bound(fit, &debias, &rep.atoms, &gram, Some(&rep.truth))?;
    record.eta = Some(debias.eta);
    record.remainder_bound = Some(bound.bound);
    record.remainder_realized = bound.realized;
    record.converged &= debias.all_converged();

    let mut rows = Vec::new();
    let mut flags = Vec::new();
    for (category, contrast) in coverage_contrasts(&rep.truth.parameter)? {
        let truth = geoinfer::linalg::dot(&contrast.vector, &rep.truth.parameter);
        let ci = confidence_interval(&ctx, &contrast, config.alpha, Some(truth))?;
        let covered = ci.ci_low <= truth && truth <= ci.ci_high;
        flags.push(format!("{}:{}", contrast.id, u8::from(covered)));
        rows.push(CoverageRecord {
            grid_index,
            replicate,
            n: rep.problem.n(),
            p: rep.problem.p(),
            contrast_id: contrast.id.clone(),
            category,
            truth,
            point: ci.point,
            ci_low: ci.ci_low,
            ci_high: ci.ci_high,
            covered,
            p_value: ci.p_value.expect("null was supplied"),
        });
    }
    record.coverage = flags.join(";");
    Ok(rows)
}

/// Geometry at one grid point, on the first replicate's design and truth.
pub fn grid_geometry(
    config: &ExperimentConfig,
    grid_index: usize,
    point: &GridPoint,
) -> geoinfer::Result<GridGeometry> {
    let seed = replicate_seed(config.seed, grid_index, 0);
    let rep = simulate_replicate(config.family(), point, config.sigma, seed)?;
    let cone = TangentCone::new(rep.atoms, &rep.truth.parameter)?;
    let mc = config.geometry_mc_samples;
    let budget = DiagnosticsBudget {
        width_samples: mc,
        packing_budget: mc.max(1000),
        volume_samples: 10 * mc,
        isometry_samples: mc,
        isometry_restarts: 4,
        asphericity_samples: mc,
        asphericity_refine: 10,
    };
    let diag = cone_diagnostics(
        &cone,
        Some(&rep.problem.design),
        &budget,
        rng::derive_seed(seed, &[4]),
    )?;
    let constants = ReportingConstants::for_dim(point.p());
    let bounds = evaluate_bounds(&diag, config.sigma, point.n, constants)?;
    Ok(GridGeometry {
        grid_index,
        n: point.n,
        p: point.p(),
        complexity: point.complexity,
        cone_width: diag.width.value,
        cone_width_stderr: diag.width.stderr,
        image_width: diag.image_width.map(|e| e.value),
        gamma: diag.gamma.value,
        sudakov: diag.sudakov.value,
        upper_l2: bounds.upper_l2,
        min_n: bounds.min_n,
    })
}

/// Runs every grid point × replicate on the rayon pool. Output order is by
/// grid point, then replicate, independent of scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> geoinfer::Result<ExperimentOutput> {
    config
        .validate()
        .map_err(|e| geoinfer::Error::InvalidArgument(e.to_string()))?;
    let points = config
        .grid_points()
        .map_err(|e| geoinfer::Error::InvalidArgument(e.to_string()))?;
    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|g| (0..config.replicates).map(move |r| (g, r)))
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(g, r)| run_replicate(config, g, &points[g], r))
        .collect::<geoinfer::Result<Vec<_>>>()?;
    let geometry = if config.geometry_mc_samples > 0 {
        points
            .par_iter()
            .enumerate()
            .map(|(g, point)| grid_geometry(config, g, point))
            .collect::<geoinfer::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut out = ExperimentOutput {
        geometry,
        ..ExperimentOutput::default()
    };
    for (record, coverage, timing) in results {
        out.records.push(record);
        out.coverage.extend(coverage);
        out.timings.push(timing);
    }
    for r in out.records.iter().filter(|r| !r.converged) {
        log::warn!(
            "grid point {} replicate {} did not converge ({} iterations)",
            r.grid_index,
            r.replicate,
            r.iterations
        );
    }
    Ok(out)
}
