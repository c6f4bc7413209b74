//! The Dantzig-type atomic program
//!
//! ```text
//! minimize ‖M‖_A   subject to   ‖Xᵀ(Y − XM)‖_A* ≤ λ
//! ```
//!
//! solved by ADMM on the split `GM + R = b`, `M = Z` with `G = XᵀX`,
//! `b = XᵀY`, `Z` carrying the atomic norm (prox step) and `R` confined to the
//! dual-norm ball of radius λ (projection step). The `M` step solves
//! `(G² + I) M = G(b − R − u) + (Z − w)` with a Cholesky factor computed once;
//! the system does not involve ρ, so penalty adaptation is free.
//!
//! For any λ ≥ 0 the feasible set is nonempty (the least-squares solutions have
//! zero residual), so there is no infeasibility error: failure to reach the
//! tolerances is reported through `converged = false`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::atoms::AtomSet;
use crate::error::{check_finite, check_len, Error, Result};
use crate::geometry::{gaussian_width_mc, AtomImage, Estimate};
use crate::model::{DesignOperator, ProblemInstance};
use crate::rng;

/// Relative slack on `‖Xᵀ(Y − XM̂)‖_A* ≤ λ`.
pub const FEASIBILITY_RTOL: f64 = 1e-5;
/// Absolute slack, as a multiple of `max(1, ‖XᵀY‖_A*)`; only matters when λ ≈ 0.
pub const FEASIBILITY_ATOL: f64 = 1e-9;

const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    pub rho: f64,
    pub adaptive_rho: bool,
    pub relaxation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 20_000,
            primal_tolerance: 1e-7,
            dual_tolerance: 1e-7,
            rho: 1.0,
            adaptive_rho: true,
            relaxation: 1.8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        for (name, v) in [
            ("primal_tolerance", self.primal_tolerance),
            ("dual_tolerance", self.dual_tolerance),
            ("rho", self.rho),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(1.0..2.0).contains(&self.relaxation) {
            return Err(Error::InvalidArgument(format!(
                "relaxation must lie in [1, 2), got {}",
                self.relaxation
            )));
        }
        Ok(())
    }
}

/// Residuals sampled during a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimate: Vec<f64>,
    pub lambda: f64,
    pub residual_dual_norm: f64,
    pub atomic_norm_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `XᵀX` is singular (in particular whenever n < p).
    pub rank_deficient: bool,
    pub history: Vec<ResidualSample>,
}

/// `λ = (σ/√n)(ŵ(XA) + δ·sup_{a∈A}‖Xa‖₂)` with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    pub lambda: f64,
    pub image_width: Estimate,
    pub sup_image_norm: f64,
    pub delta: f64,
    pub sigma: f64,
}

impl LambdaChoice {
    /// The same ingredients at a different δ.
    pub fn with_delta(&self, delta: f64, n: usize) -> LambdaChoice {
        LambdaChoice {
            lambda: lambda_formula(
                self.sigma,
                n,
                self.image_width.value,
                delta,
                self.sup_image_norm,
            ),
            delta,
            ..*self
        }
    }
}

fn lambda_formula(sigma: f64, n: usize, width: f64, delta: f64, sup: f64) -> f64 {
    sigma / (n as f64).sqrt() * (width + delta * sup)
}

pub fn compute_lambda(
    design: &DesignOperator,
    atoms: &AtomSet,
    sigma: f64,
    delta: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<LambdaChoice> {
    check_len("design columns", atoms.dim(), design.cols())?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "delta must be >= 0, got {delta}"
        )));
    }
    let image = AtomImage::new(*atoms, design);
    let image_width = gaussian_width_mc(&image, mc_samples, rng::derive_seed(seed, &[0]))?;
    let sup = atoms.sup_image_norm(design, &mut rng::stream(seed, &[1]))?;
    Ok(LambdaChoice {
        lambda: lambda_formula(sigma, design.rows(), image_width.value, delta, sup),
        image_width,
        sup_image_norm: sup,
        delta,
        sigma,
    })
}

/// `‖Xᵀ(Y − XM)‖_A*` from the normal-equation data.
fn residual_dual(atoms: &AtomSet, gram: &DMatrix<f64>, b: &DVector<f64>, m: &[f64]) -> f64 {
    let r = b - gram * DVector::from_column_slice(m);
    atoms.dual_norm_of(r.as_slice())
}

/// Normal-equation data `G = XᵀX`, `b = XᵀY`.
fn normal_equations(problem: &ProblemInstance) -> (DMatrix<f64>, DVector<f64>) {
    let x = problem.design.matrix();
    let gram = problem.design.gram();
    let b = x.tr_mul(&DVector::from_column_slice(&problem.observation));
    (gram, b)
}

/// Whether the Gram matrix is numerically singular.
pub fn gram_is_singular(gram: &DMatrix<f64>, n: usize) -> bool {
    let p = gram.nrows();
    if n < p {
        return true;
    }
    let scale = (0..p).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    if scale == 0.0 {
        return p > 0;
    }
    match gram.clone().cholesky() {
        None => true,
        Some(ch) => {
            let l = ch.l_dirty();
            (0..p).any(|i| l[(i, i)] * l[(i, i)] < 1e-12 * scale)
        }
    }
}

pub fn solve_constrained(
    problem: &ProblemInstance,
    atoms: &AtomSet,
    lambda: f64,
    config: &SolverConfig,
) -> Result<EstimateResult> {
    config.validate()?;
    check_len("design columns", atoms.dim(), problem.p())?;
    if atoms.shape() != problem.shape {
        return Err(Error::InvalidArgument(format!(
            "atom shape {:?} does not match problem shape {:?}",
            atoms.shape(),
            problem.shape
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let p = problem.p();
    let (gram, b) = normal_equations(problem);
    let rank_deficient = gram_is_singular(&gram, problem.n());

    let mut system = &gram * &gram;
    for i in 0..p {
        system[(i, i)] += 1.0;
    }
    let chol = system
        .cholesky()
        .ok_or(Error::NonFinite("normal-equation system"))?;
    let k = chol.inverse();
    let kg = &k * &gram;

    let b_norm = b.norm();
    let b_dual = atoms.dual_norm_of(b.as_slice());
    let feas_slack = FEASIBILITY_ATOL * b_dual.max(1.0);
    let alpha = config.relaxation;
    let abs_tol = 1e-12 * (p as f64).sqrt();

    let mut rho = config.rho;
    let mut z = DVector::<f64>::zeros(p);
    let mut r = DVector::<f64>::zeros(p);
    let mut u = DVector::<f64>::zeros(p);
    let mut w = DVector::<f64>::zeros(p);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iterations {
        iterations = it;
        let z_prev = z.clone();
        let r_prev = r.clone();

        let rhs_g = &b - &r - &u;
        let m = &kg * rhs_g + &k * (&z - &w);
        let gm = &gram * &m;
        let gm_hat = &gm * alpha + (&b - &r) * (1.0 - alpha);
        let m_hat = &m * alpha + &z * (1.0 - alpha);

        let zin = &m_hat + &w;
        z = DVector::from_vec(atoms.prox_of(zin.as_slice(), 1.0 / rho));
        let rin = &b - &gm_hat - &u;
        r = DVector::from_vec(atoms.project_dual_ball(rin.as_slice(), lambda));

        u += &gm_hat + &r - &b;
        w += &m_hat - &z;

        if it % CHECK_EVERY != 0 && it != config.max_iterations {
            continue;
        }
        let c1 = &gm + &r - &b;
        let c2 = &m - &z;
        let primal = (c1.norm_squared() + c2.norm_squared()).sqrt();
        let dz = &z - &z_prev;
        let dr = &r - &r_prev;
        let dual = rho * (&gram * dr - dz).norm();
        history.push(ResidualSample {
            iteration: it,
            primal,
            dual,
            rho,
        });

        let ax = (gm.norm_squared() + m.norm_squared()).sqrt();
        let bz = (r.norm_squared() + z.norm_squared()).sqrt();
        let eps_pri = abs_tol + config.primal_tolerance * ax.max(bz).max(b_norm);
        let aty = &gram * &u + &w;
        let eps_dual = abs_tol + config.dual_tolerance * rho * aty.norm();

        if primal <= eps_pri && dual <= eps_dual {
            let res = residual_dual(atoms, &gram, &b, z.as_slice());
            if res <= lambda * (1.0 + FEASIBILITY_RTOL) + feas_slack {
                converged = true;
                break;
            }
        }

        if config.adaptive_rho && it % ADAPT_EVERY == 0 {
            let rp = primal / eps_pri.max(f64::MIN_POSITIVE);
            let rd = dual / eps_dual.max(f64::MIN_POSITIVE);
            if rp > 10.0 * rd {
                rho *= 2.0;
                u /= 2.0;
                w /= 2.0;
            } else if rd > 10.0 * rp {
                rho /= 2.0;
                u *= 2.0;
                w *= 2.0;
            }
        }
    }

    let estimate = z.as_slice().to_vec();
    check_finite("estimate", &estimate)?;
    Ok(EstimateResult {
        residual_dual_norm: residual_dual(atoms, &gram, &b, &estimate),
        atomic_norm_value: atoms.norm_of(&estimate),
        estimate,
        lambda,
        iterations,
        converged,
        rank_deficient,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthCheck {
    /// `‖XᵀX(M̂ − M)‖_A*`.
    pub gram_error_dual_norm: f64,
    /// Whether it is at most `2λ` (with the feasibility slack).
    pub within_twice_lambda: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub residual_dual_norm: f64,
    pub lambda: f64,
    pub feasible: bool,
    pub truth_check: Option<TruthCheck>,
}

pub fn verify_feasibility(
    problem: &ProblemInstance,
    atoms: &AtomSet,
    candidate: &[f64],
    lambda: f64,
) -> Result<FeasibilityReport> {
    check_len("design columns", atoms.dim(), problem.p())?;
    check_len("candidate", problem.p(), candidate.len())?;
    let (gram, b) = normal_equations(problem);
    let slack = FEASIBILITY_ATOL * atoms.dual_norm_of(b.as_slice()).max(1.0);
    let residual = residual_dual(atoms, &gram, &b, candidate);
    let truth_check = problem.truth.as_ref().map(|truth| {
        let diff = DVector::from_column_slice(candidate) - DVector::from_column_slice(truth);
        let g = atoms.dual_norm_of((&gram * diff).as_slice());
        TruthCheck {
            gram_error_dual_norm: g,
            within_twice_lambda: g <= 2.0 * lambda * (1.0 + FEASIBILITY_RTOL) + slack,
        }
    });
    Ok(FeasibilityReport {
        residual_dual_norm: residual,
        lambda,
        feasible: residual <= lambda * (1.0 + FEASIBILITY_RTOL) + slack,
        truth_check,
    })
}
