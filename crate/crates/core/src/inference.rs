//! De-biasing matrix, de-biased estimator, confidence intervals and tests.
//!
//! Row `i` of the de-biasing matrix Ω is a vector `ω` with
//! `‖XᵀXω − e_i‖_A* ≤ η`. The rows decouple, so each is solved on its own:
//!
//! 1. (minimize-η only) the smallest attainable residual
//!    `η_i = min_ω ‖Gω − e_i‖_A*`, then `η = max_i η_i`;
//! 2. among rows meeting the level `η`, the one with the smallest variance
//!    contribution `ωᵀGω`.
//!
//! Both steps are ADMM on the split `r = Gω − e_i` using one shared
//! eigendecomposition of `G = XᵀX`. When `G` is well conditioned the
//! minimize-η program is solved exactly by `Ω = G⁻¹` (η = 0).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atoms::{asphericity_upper_bound, AtomSet, Family};
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, norm2, norm_inf};
use crate::model::{DesignOperator, GroundTruth, ProblemInstance};
use crate::solver::{EstimateResult, SolverConfig, FEASIBILITY_ATOL, FEASIBILITY_RTOL};
use crate::stats::{normal_quantile, two_sided_p_value};

/// Relative eigenvalue threshold below which `XᵀX` is treated as singular.
const EIGEN_RTOL: f64 = 1e-10;
/// Contrasts with more nonzeros than this trigger a warning.
pub const CONTRAST_SPARSITY_WARN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "eta")]
pub enum DebiasMode {
    /// Smallest common η over rows, then minimum-variance rows at that η.
    MinimizeEta,
    /// Minimum-variance rows at a given η; rows that cannot reach it are
    /// flagged and keep their best attainable residual.
    FixedEta(f64),
    /// `Ω = (XᵀX)⁻¹`; requires a nonsingular Gram matrix.
    ExactInverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasMatrix {
    /// Rows of Ω.
    #[serde(with = "matrix_rows")]
    pub omega: DMatrix<f64>,
    /// Largest row residual actually achieved.
    pub eta: f64,
    /// `‖XᵀX Ω_{i·}ᵀ − e_i‖_A*` per row.
    pub row_residuals: Vec<f64>,
    /// Per-row solver convergence.
    pub row_converged: Vec<bool>,
    /// Rows that met the requested level (all true outside fixed-η mode).
    pub row_feasible: Vec<bool>,
    /// The level the rows were solved at (for minimize-η: the attained minimum).
    pub target_eta: f64,
}

impl DebiasMatrix {
    pub fn all_converged(&self) -> bool {
        self.row_converged.iter().all(|&c| c) && self.row_feasible.iter().all(|&f| f)
    }
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(n, p, rows.into_iter().flatten()))
    }
}

/// Eigendecomposition of the Gram matrix with the pseudo-inverse threshold.
struct GramEigen {
    gram: DMatrix<f64>,
    q: DMatrix<f64>,
    values: Vec<f64>,
    cutoff: f64,
}

impl GramEigen {
    fn new(gram: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(gram.clone());
        let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let top = values.iter().copied().fold(0.0, f64::max);
        GramEigen {
            gram,
            q: eig.eigenvectors,
            values,
            cutoff: EIGEN_RTOL * top,
        }
    }

    fn invertible(&self, n: usize) -> bool {
        n >= self.values.len() && self.values.iter().all(|&v| v > self.cutoff)
    }

    /// `Q diag(f(λ)) Qᵀ x`, with `f` applied only to eigenvalues above the cutoff.
    fn apply_spectral(&self, x: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let mut c = self.q.tr_mul(x);
        for (ck, &l) in c.iter_mut().zip(&self.values) {
            *ck = if l > self.cutoff { *ck * f(l) } else { 0.0 };
        }
        &self.q * c
    }
}

struct RowSolution {
    omega: DVector<f64>,
    residual: f64,
    converged: bool,
}

fn unit(p: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(p);
    e[i] = 1.0;
    e
}

/// `min_ω ‖Gω − e_i‖_A*`.
fn min_residual_row(
    eig: &GramEigen,
    atoms: &AtomSet,
    i: usize,
    config: &SolverConfig,
) -> RowSolution {
    let p = eig.gram.nrows();
    let e = unit(p, i);
    let mut omega = e.clone();
    let mut r = &eig.gram * &omega - &e;
    let mut u = DVector::zeros(p);
    let mut rho = config.rho;
    let mut converged = false;
    for it in 1..=config.max_iterations {
        omega = eig.apply_spectral(&(&r + &e - &u), |l| 1.0 / l);
        let g_omega = &eig.gram * &omega;
        let r_prev = r.clone();
        let arg = &g_omega - &e + &u;
        r = DVector::from_vec(atoms.prox_dual(arg.as_slice(), 1.0 / rho));
        let coupling = &g_omega - &r - &e;
        u += &coupling;
        if it % 10 == 0 {
            let primal = coupling.norm();
            let dual = rho * (&eig.gram * (&r - &r_prev)).norm();
            let scale = 1.0 + g_omega.norm().max(r.norm());
            if primal <= config.primal_tolerance * scale
                && dual <= config.dual_tolerance * (1.0 + rho * (&eig.gram * &u).norm())
            {
                converged = true;
                break;
            }
            if config.adaptive_rho && it % 50 == 0 {
                if primal > 10.0 * dual {
                    rho *= 2.0;
                    u /= 2.0;
                } else if dual > 10.0 * primal {
                    rho /= 2.0;
                    u *= 2.0;
                }
            }
        }
    }
    let residual = atoms.dual_norm_of((&eig.gram * &omega - &e).as_slice());
    RowSolution {
        omega,
        residual,
        converged,
    }
}

/// `min ωᵀGω` subject to `‖Gω − e_i‖_A* ≤ eta`.
fn min_variance_row(
    eig: &GramEigen,
    atoms: &AtomSet,
    i: usize,
    eta: f64,
    config: &SolverConfig,
) -> RowSolution {
    let p = eig.gram.nrows();
    let e = unit(p, i);
    let mut omega = e.clone();
    let mut r =
        DVector::from_vec(atoms.project_dual_ball((&eig.gram * &omega - &e).as_slice(), eta));
    let mut u = DVector::zeros(p);
    let mut rho = config.rho;
    let mut converged = false;
    for it in 1..=config.max_iterations {
        let rr = rho;
        omega = eig.apply_spectral(&(&r + &e - &u), |l| rr / (1.0 + rr * l));
        let g_omega = &eig.gram * &omega;
        let r_prev = r.clone();
        let arg = &g_omega - &e + &u;
        r = DVector::from_vec(atoms.project_dual_ball(arg.as_slice(), eta));
        let coupling = &g_omega - &r - &e;
        u += &coupling;
        if it % 10 == 0 {
            let primal = coupling.norm();
            let dual = rho * (&eig.gram * (&r - &r_prev)).norm();
            let scale = 1.0 + g_omega.norm().max(r.norm());
            if primal <= config.primal_tolerance * scale
                && dual <= config.dual_tolerance * (1.0 + rho * (&eig.gram * &u).norm())
            {
                converged = true;
                break;
            }
            if config.adaptive_rho && it % 50 == 0 {
                if primal > 10.0 * dual {
                    rho *= 2.0;
                    u /= 2.0;
                } else if dual > 10.0 * primal {
                    rho /= 2.0;
                    u *= 2.0;
                }
            }
        }
    }
    let residual = atoms.dual_norm_of((&eig.gram * &omega - &e).as_slice());
    RowSolution {
        omega,
        residual,
        converged,
    }
}

fn within(value: f64, level: f64) -> bool {
    value <= level * (1.0 + FEASIBILITY_RTOL) + FEASIBILITY_ATOL
}

pub fn solve_debias_matrix(
    design: &DesignOperator,
    atoms: &AtomSet,
    mode: DebiasMode,
    config: &SolverConfig,
) -> Result<DebiasMatrix> {
    config.validate()?;
    check_len("design columns", atoms.dim(), design.cols())?;
    let p = design.cols();
    let eig = GramEigen::new(design.gram());
    let invertible = eig.invertible(design.rows());

    let exact = |eig: &GramEigen| -> Result<DebiasMatrix> {
        let inv = eig
            .gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("XᵀX is not positive definite".into()))?
            .inverse();
        let residuals: Vec<f64> = (0..p)
            .map(|i| {
                let row = inv.row(i).transpose();
                atoms.dual_norm_of((&eig.gram * row - unit(p, i)).as_slice())
            })
            .collect();
        let eta = residuals.iter().copied().fold(0.0, f64::max);
        Ok(DebiasMatrix {
            omega: inv,
            eta,
            row_residuals: residuals,
            row_converged: vec![true; p],
            row_feasible: vec![true; p],
            target_eta: 0.0,
        })
    };

    let (rows, target, feasible): (Vec<RowSolution>, f64, Vec<bool>) = match mode {
        DebiasMode::ExactInverse => {
            if !invertible {
                return Err(Error::InvalidArgument(
                    "exact-inverse de-biasing needs a nonsingular XᵀX (n ≥ p, full rank)".into(),
                ));
            }
            return exact(&eig);
        }
        DebiasMode::MinimizeEta => {
            if invertible {
                return exact(&eig);
            }
            let first: Vec<RowSolution> = (0..p)
                .into_par_iter()
                .map(|i| min_residual_row(&eig, atoms, i, config))
                .collect();
            let eta = first.iter().map(|r| r.residual).fold(0.0, f64::max);
            let rows: Vec<RowSolution> = (0..p)
                .into_par_iter()
                .map(|i| {
                    let sol = min_variance_row(&eig, atoms, i, eta, config);
                    if within(sol.residual, eta) {
                        sol
                    } else {
                        let RowSolution {
                            omega, residual, ..
                        } = &first[i];
                        RowSolution {
                            omega: omega.clone(),
                            residual: *residual,
                            converged: false,
                        }
                    }
                })
                .collect();
            let ok = vec![true; p];
            (rows, eta, ok)
        }
        DebiasMode::FixedEta(eta) => {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::InvalidArgument(format!("η must be >= 0, got {eta}")));
            }
            let pairs: Vec<(RowSolution, bool)> = (0..p)
                .into_par_iter()
                .map(|i| {
                    let sol = min_variance_row(&eig, atoms, i, eta, config);
                    if within(sol.residual, eta) {
                        return (sol, true);
                    }
                    let best = if invertible {
                        RowSolution {
                            omega: eig.apply_spectral(&unit(p, i), |l| 1.0 / l),
                            residual: 0.0,
                            converged: true,
                        }
                    } else {
                        min_residual_row(&eig, atoms, i, config)
                    };
                    let feasible = within(best.residual, eta);
                    if feasible {
                        // reachable but the variance step stalled
                        (
                            RowSolution {
                                converged: false,
                                ..sol
                            },
                            true,
                        )
                    } else {
                        (best, false)
                    }
                })
                .collect();
            let feasible = pairs.iter().map(|(_, f)| *f).collect();
            (pairs.into_iter().map(|(s, _)| s).collect(), eta, feasible)
        }
    };

    let mut omega = DMatrix::zeros(p, p);
    for (i, row) in rows.iter().enumerate() {
        omega.set_row(i, &row.omega.transpose());
    }
    let residuals: Vec<f64> = rows.iter().map(|r| r.residual).collect();
    Ok(DebiasMatrix {
        omega,
        eta: residuals.iter().copied().fold(0.0, f64::max),
        row_converged: rows.iter().map(|r| r.converged).collect(),
        row_residuals: residuals,
        row_feasible: feasible,
        target_eta: target,
    })
}

/// `M̃ = M̂ + Ω Xᵀ(Y − X M̂)`.
pub fn debiased_estimate(
    estimate: &[f64],
    debias: &DebiasMatrix,
    problem: &ProblemInstance,
) -> Result<Vec<f64>> {
    let p = problem.p();
    check_len("estimate", p, estimate.len())?;
    check_len("de-biasing matrix", p, debias.omega.nrows())?;
    check_len("de-biasing matrix", p, debias.omega.ncols())?;
    let fitted = problem.design.apply(estimate)?;
    let resid = linalg::sub(&problem.observation, &fitted);
    let score = problem.design.adjoint(&resid)?;
    let correction = &debias.omega * DVector::from_vec(score);
    Ok(estimate
        .iter()
        .zip(correction.iter())
        .map(|(m, c)| m + c)
        .collect())
}

/// A unit-norm contrast vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub id: String,
    pub vector: Vec<f64>,
}

impl Contrast {
    pub fn new(id: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let norm = norm2(&vector);
        if !vector.iter().all(|v| v.is_finite()) || (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "contrast must have unit Euclidean norm, got {norm}"
            )));
        }
        let c = Contrast {
            id: id.into(),
            vector,
        };
        let k = c.sparsity();
        if k > CONTRAST_SPARSITY_WARN {
            log::warn!(
                "contrast {} has {k} nonzeros; the normal approximation is only justified for \
                 sparse contrasts",
                c.id
            );
        }
        Ok(c)
    }

    /// `e_i`.
    pub fn coordinate(p: usize, i: usize) -> Result<Self> {
        if i >= p {
            return Err(Error::InvalidArgument(format!(
                "coordinate {i} out of range 0..{p}"
            )));
        }
        let mut v = vec![0.0; p];
        v[i] = 1.0;
        Contrast::new(format!("e{i}"), v)
    }

    /// `(Σ_{i∈S} w_i e_i)/‖w‖` from sparse entries.
    pub fn sparse(id: impl Into<String>, p: usize, entries: &[(usize, f64)]) -> Result<Self> {
        let mut v = vec![0.0; p];
        for &(i, w) in entries {
            if i >= p {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range 0..{p}"
                )));
            }
            v[i] += w;
        }
        let n = norm2(&v);
        if n == 0.0 {
            return Err(Error::InvalidArgument("zero contrast".into()));
        }
        Contrast::new(id, v.iter().map(|x| x / n).collect())
    }

    pub fn sparsity(&self) -> usize {
        self.vector.iter().filter(|v| **v != 0.0).count()
    }
}

/// `vᵀ Ω XᵀX Ωᵀ v`.
pub fn variance_factor(debias: &DebiasMatrix, gram: &DMatrix<f64>, v: &[f64]) -> Result<f64> {
    check_len("contrast", debias.omega.nrows(), v.len())?;
    let w = debias.omega.tr_mul(&DVector::from_column_slice(v));
    Ok((w.dot(&(gram * &w))).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub debiased: Vec<f64>,
    pub contrast: Contrast,
    pub point: f64,
    pub variance_factor: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub z_statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub alpha: f64,
}

/// Inputs shared by every contrast: `M̃`, Ω, the Gram matrix, σ and n.
pub struct InferenceContext<'a> {
    pub debiased: &'a [f64],
    pub debias: &'a DebiasMatrix,
    pub gram: &'a DMatrix<f64>,
    pub sigma: f64,
    pub n: usize,
}

/// `(z, p)` for `H₀: ⟨v, M⟩ = v₀`.
pub fn hypothesis_test(ctx: &InferenceContext<'_>, v: &Contrast, null: f64) -> Result<(f64, f64)> {
    let vf = variance_factor(ctx.debias, ctx.gram, &v.vector)?;
    let se = ctx.sigma * (vf / ctx.n as f64).sqrt();
    if se.is_nan() || se <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "zero standard error (σ = {}, variance factor = {vf}); the z statistic is undefined",
            ctx.sigma
        )));
    }
    let point = linalg::dot(&v.vector, ctx.debiased);
    let z = (point - null) / se;
    Ok((z, two_sided_p_value(z)))
}

/// `⟨v, M̃⟩ ± Φ⁻¹(1 − α/2)·σ·√(vᵀΩGΩᵀv / n)`, plus the test of `null` when given.
pub fn confidence_interval(
    ctx: &InferenceContext<'_>,
    v: &Contrast,
    alpha: f64,
    null: Option<f64>,
) -> Result<InferenceResult> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "α must lie in (0, 1], got {alpha}"
        )));
    }
    check_len(
        "debiased estimate",
        ctx.debias.omega.nrows(),
        ctx.debiased.len(),
    )?;
    let vf = variance_factor(ctx.debias, ctx.gram, &v.vector)?;
    let point = linalg::dot(&v.vector, ctx.debiased);
    let half = if alpha == 1.0 {
        0.0
    } else {
        normal_quantile(1.0 - alpha / 2.0) * ctx.sigma * (vf / ctx.n as f64).sqrt()
    };
    let (z_statistic, p_value) = match null {
        Some(v0) => {
            let (z, p) = hypothesis_test(ctx, v, v0)?;
            (Some(z), Some(p))
        }
        None => (None, None),
    };
    Ok(InferenceResult {
        debiased: ctx.debiased.to_vec(),
        contrast: v.clone(),
        point,
        variance_factor: vf,
        ci_low: point - half,
        ci_high: point + half,
        z_statistic,
        p_value,
        alpha,
    })
}

/// One line of the inference export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRow {
    pub contrast_id: String,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    pub variance_factor: f64,
    pub eta: f64,
    pub lambda: f64,
}

impl InferenceRow {
    pub fn new(result: &InferenceResult, eta: f64, lambda: f64) -> Self {
        InferenceRow {
            contrast_id: result.contrast.id.clone(),
            point: result.point,
            ci_low: result.ci_low,
            ci_high: result.ci_high,
            z: result.z_statistic,
            p_value: result.p_value,
            variance_factor: result.variance_factor,
            eta,
            lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderBound {
    /// `γ̂² λ η`.
    pub bound: f64,
    pub gamma: f64,
    /// `‖(ΩXᵀX − I)(M − M̂)‖_∞` when the truth is known.
    pub realized: Option<f64>,
}

/// Complexity read off a parameter: support size or numerical rank.
fn plug_in_complexity(atoms: &AtomSet, x: &[f64]) -> usize {
    match (atoms.family(), atoms.shape().matrix_dims()) {
        (Family::LowRank, Some((r, c))) => GroundTruth {
            parameter: x.to_vec(),
            complexity: 0,
        }
        .numerical_rank(r, c),
        _ => {
            let top = norm_inf(x);
            x.iter().filter(|v| v.abs() > 1e-8 * top).count()
        }
    }
}

/// Bound surrogate `γ̂²λη` for the remainder `Δ = (ΩXᵀX − I)(M − M̂)`; γ̂ uses
/// the truth's complexity when given, else the estimate's.
pub fn debias_remainder_bound(
    estimate: &EstimateResult,
    debias: &DebiasMatrix,
    atoms: &AtomSet,
    gram: &DMatrix<f64>,
    truth: Option<&GroundTruth>,
) -> Result<RemainderBound> {
    let p = atoms.dim();
    check_len("estimate", p, estimate.estimate.len())?;
    let gamma = match truth {
        Some(t) => asphericity_upper_bound(atoms, t),
        None => asphericity_upper_bound(
            atoms,
            &GroundTruth {
                parameter: estimate.estimate.clone(),
                complexity: plug_in_complexity(atoms, &estimate.estimate),
            },
        ),
    };
    let realized = match truth {
        Some(t) => {
            check_len("truth", p, t.parameter.len())?;
            Some(norm_inf(
                remainder(debias, gram, &estimate.estimate, &t.parameter)?.as_slice(),
            ))
        }
        None => None,
    };
    Ok(RemainderBound {
        bound: gamma * gamma * estimate.lambda * debias.eta,
        gamma,
        realized,
    })
}

/// `Δ = (ΩXᵀX − I)(M − M̂)`.
pub fn remainder(
    debias: &DebiasMatrix,
    gram: &DMatrix<f64>,
    estimate: &[f64],
    truth: &[f64],
) -> Result<DVector<f64>> {
    let p = debias.omega.nrows();
    check_len("estimate", p, estimate.len())?;
    check_len("truth", p, truth.len())?;
    let diff = DVector::from_vec(linalg::sub(truth, estimate));
    Ok(&debias.omega * (gram * &diff) - diff)
}
