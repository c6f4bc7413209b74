//! Per-grid-point aggregation, rate fits and coverage tables.

use std::collections::BTreeMap;

use geoinfer::stats::ks_uniform;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::experiment::{
    ContrastCategory, CoverageRecord, ExperimentOutput, ExperimentRecord, GridGeometry,
};
use crate::export::{to_csv, ExportError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AggregateError {
    #[error("rate fit needs at least 3 grid points, got {0}")]
    TooFewPoints(usize),
    #[error("rate fit needs positive, finite values; got ({0}, {1})")]
    NonPositive(f64, f64),
    #[error("rate fit needs at least two distinct x values")]
    Degenerate,
}

/// Least-squares fit of `log y = intercept + slope·log x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_rate_slope(points: &[(f64, f64)]) -> Result<RateFit, AggregateError> {
    if points.len() < 3 {
        return Err(AggregateError::TooFewPoints(points.len()));
    }
    let mut logs = Vec::with_capacity(points.len());
    for &(x, y) in points {
        if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
            return Err(AggregateError::NonPositive(x, y));
        }
        logs.push((x.ln(), y.ln()));
    }
    let k = logs.len() as f64;
    let mx = logs.iter().map(|l| l.0).sum::<f64>() / k;
    let my = logs.iter().map(|l| l.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|l| (l.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|l| (l.0 - mx) * (l.1 - my)).sum();
    let syy: f64 = logs.iter().map(|l| (l.1 - my).powi(2)).sum();
    if sxx <= 1e-12 * logs.iter().map(|l| l.0 * l.0).sum::<f64>().max(1e-300) {
        return Err(AggregateError::Degenerate);
    }
    let slope = sxy / sxx;
    let ss_res: f64 = logs
        .iter()
        .map(|l| (l.1 - my - slope * (l.0 - mx)).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCoverage {
    pub category: ContrastCategory,
    pub covered: usize,
    pub total: usize,
    pub rate: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub grid_index: usize,
    pub n: usize,
    pub p: usize,
    pub complexity: usize,
    pub replicates: usize,
    pub converged: usize,
    pub median_l2_error: f64,
    pub median_atomic_error: f64,
    pub median_prediction_error: f64,
    pub median_lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coverage: Vec<CategoryCoverage>,
    /// KS statistic of the pooled true-null p-values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_p_value_ks: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_remainder_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_remainder_realized: Option<f64>,
}

/// Median ℓ2 error should not grow with n; one inversion is tolerated as
/// Monte-Carlo noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    pub inversions: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub preset: String,
    pub records: usize,
    pub nonconvergence_fraction: f64,
    pub grid: Vec<GridSummary>,
    pub rate_fit: Option<RateFit>,
    pub monotone: MonotoneCheck,
    pub geometry: Vec<GridGeometry>,
    /// Largest reported minimum-n threshold over the grid.
    pub min_n_threshold: Option<f64>,
    /// SHA-256 of the CSV encoding of the records (runtimes excluded).
    pub records_sha256: String,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, k) = values.fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
    (k > 0).then(|| s / k as f64)
}

pub fn coverage_by_category(rows: &[&CoverageRecord]) -> Vec<CategoryCoverage> {
    ContrastCategory::ALL
        .iter()
        .filter_map(|&category| {
            let these: Vec<_> = rows.iter().filter(|r| r.category == category).collect();
            if these.is_empty() {
                return None;
            }
            let covered = these.iter().filter(|r| r.covered).count();
            Some(CategoryCoverage {
                category,
                covered,
                total: these.len(),
                rate: covered as f64 / these.len() as f64,
                mean_width: these.iter().map(|r| r.width()).sum::<f64>() / these.len() as f64,
            })
        })
        .collect()
}

pub fn monotone_check(medians: &[f64]) -> MonotoneCheck {
    let inversions = medians.windows(2).filter(|w| w[1] > w[0]).count();
    MonotoneCheck {
        inversions,
        flagged: inversions > 1,
    }
}

pub fn records_digest(records: &[ExperimentRecord]) -> Result<String, ExportError> {
    let bytes = to_csv(records)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn summarize(output: &ExperimentOutput) -> Result<Summary, ExportError> {
    let mut by_grid: BTreeMap<usize, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in &output.records {
        by_grid.entry(r.grid_index).or_default().push(r);
    }
    let mut grid = Vec::new();
    for (&g, recs) in &by_grid {
        let col = |f: fn(&ExperimentRecord) -> f64| recs.iter().map(|r| f(r)).collect::<Vec<_>>();
        let etas: Vec<f64> = recs.iter().filter_map(|r| r.eta).collect();
        let cov: Vec<&CoverageRecord> = output
            .coverage
            .iter()
            .filter(|c| c.grid_index == g)
            .collect();
        let first = recs[0];
        grid.push(GridSummary {
            grid_index: g,
            n: first.n,
            p: first.p,
            complexity: first.complexity,
            replicates: recs.len(),
            converged: recs.iter().filter(|r| r.converged).count(),
            median_l2_error: median(&col(|r| r.l2_error)),
            median_atomic_error: median(&col(|r| r.atomic_error)),
            median_prediction_error: median(&col(|r| r.prediction_error)),
            median_lambda: median(&col(|r| r.lambda)),
            median_eta: (!etas.is_empty()).then(|| median(&etas)),
            coverage: coverage_by_category(&cov),
            null_p_value_ks: (!cov.is_empty())
                .then(|| ks_uniform(&cov.iter().map(|c| c.p_value).collect::<Vec<_>>())),
            mean_remainder_bound: mean(recs.iter().filter_map(|r| r.remainder_bound)),
            mean_remainder_realized: mean(recs.iter().filter_map(|r| r.remainder_realized)),
        });
    }
    let mut sorted: Vec<&GridSummary> = grid.iter().collect();
    sorted.sort_by_key(|g| g.n);
    let rate_fit = fit_rate_slope(
        &sorted
            .iter()
            .map(|g| (g.n as f64, g.median_l2_error))
            .collect::<Vec<_>>(),
    )
    .ok();
    let monotone = monotone_check(&sorted.iter().map(|g| g.median_l2_error).collect::<Vec<_>>());
    let nonconvergence_fraction = if output.records.is_empty() {
        0.0
    } else {
        output.records.iter().filter(|r| !r.converged).count() as f64 / output.records.len() as f64
    };
    Ok(Summary {
        preset: output
            .records
            .first()
            .map(|r| r.preset.clone())
            .unwrap_or_default(),
        records: output.records.len(),
        nonconvergence_fraction,
        grid,
        rate_fit,
        monotone,
        geometry: output.geometry.clone(),
        min_n_threshold: output.geometry.iter().map(|g| g.min_n).reduce(f64::max),
        records_sha256: records_digest(&output.records)?,
    })
}
