//! Calibration checks for the Monte-Carlo geometry estimators.

use geoinfer::geometry::{
    cone_diagnostics, default_delta, evaluate_bounds, gaussian_width_mc, local_isometry_constants,
    tangent_cone_width, DiagnosticsBudget, EuclideanBall, ReportingConstants,
};
use geoinfer::model::{DesignOperator, GroundTruth};
use geoinfer::rng::{derive_seed, stream};
use geoinfer::{AtomSet, TangentCone};
use libm::lgamma;

/// `E‖g‖₂ = √2 Γ((p+1)/2) / Γ(p/2)`.
pub fn chi_mean(p: usize) -> f64 {
    let p = p as f64;
    2f64.sqrt() * (lgamma((p + 1.0) / 2.0) - lgamma(p / 2.0)).exp()
}

#[derive(Debug, Clone, Copy)]
pub struct ChiMeanCheck {
    pub p: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub exact: f64,
}

impl ChiMeanCheck {
    pub fn passes(&self) -> bool {
        (self.estimate - self.exact).abs() <= 3.0 * self.stderr
    }
}

pub fn chi_mean_check(p: usize, samples: usize, seed: u64) -> ChiMeanCheck {
    let est = gaussian_width_mc(&EuclideanBall(p), samples, seed).unwrap();
    ChiMeanCheck {
        p,
        estimate: est.value,
        stderr: est.stderr,
        exact: chi_mean(p),
    }
}

/// The four family presets at `p ≤ 8`, anchored at random structured truths.
pub fn small_cones(seed: u64) -> Vec<(&'static str, TangentCone)> {
    let mut rng = stream(seed, &[0]);
    let sparse = GroundTruth::sparse(8, 2, &mut rng).unwrap();
    let low_rank = GroundTruth::low_rank(2, 3, 1, &mut rng).unwrap();
    let sign = GroundTruth::sign(8, &mut rng);
    let orth = GroundTruth::orthogonal(2, &mut rng);
    vec![
        (
            "SPARSE p=8 s=2",
            TangentCone::new(AtomSet::sparse(8), &sparse.parameter).unwrap(),
        ),
        (
            "LOW_RANK 2x3 r=1",
            TangentCone::new(AtomSet::low_rank(2, 3), &low_rank.parameter).unwrap(),
        ),
        (
            "SIGN p=8",
            TangentCone::new(AtomSet::sign(8), &sign.parameter).unwrap(),
        ),
        (
            "ORTHOGONAL m=2",
            TangentCone::new(AtomSet::orthogonal(2), &orth.parameter).unwrap(),
        ),
    ]
}

#[derive(Debug, Clone, Copy)]
pub struct ConeCheck {
    pub width: f64,
    pub width_stderr: f64,
    pub volume_ratio: f64,
    pub volume_stderr: f64,
    pub link_lhs: f64,
    pub link_rhs: f64,
    pub link_joint_stderr: f64,
    pub link_holds: bool,
    pub sudakov: f64,
    pub ball_width: f64,
    pub ball_stderr: f64,
}

impl ConeCheck {
    /// `v̂ ≤ ŵ + 3·joint stderr`.
    pub fn urysohn(&self) -> bool {
        self.volume_ratio <= self.width + 3.0 * self.width_stderr.hypot(self.volume_stderr)
    }

    /// `ŵ(B ∩ T) ≤ ŵ(B) + 3·joint stderr`.
    pub fn monotone(&self) -> bool {
        self.width <= self.ball_width + 3.0 * self.width_stderr.hypot(self.ball_stderr)
    }

    /// `ê ≤ 10 ŵ`.
    pub fn sudakov_sane(&self) -> bool {
        self.sudakov <= 10.0 * self.width
    }
}

pub fn cone_check(cone: &TangentCone, seed: u64) -> ConeCheck {
    let p = cone.dim();
    let design = DesignOperator::gaussian_ensemble(4 * p, p, derive_seed(seed, &[1])).unwrap();
    let budget = DiagnosticsBudget {
        isometry_samples: 256,
        isometry_restarts: 2,
        ..DiagnosticsBudget::default()
    };
    let diag = cone_diagnostics(cone, Some(&design), &budget, derive_seed(seed, &[2])).unwrap();
    let bounds = evaluate_bounds(&diag, 1.0, 4 * p, ReportingConstants::for_dim(p)).unwrap();
    let volume = diag.volume_ratio.expect("p <= 8");
    let ball = gaussian_width_mc(
        &EuclideanBall(p),
        budget.width_samples,
        derive_seed(seed, &[3]),
    )
    .unwrap();
    ConeCheck {
        width: diag.width.value,
        width_stderr: diag.width.stderr,
        volume_ratio: volume.value,
        volume_stderr: volume.stderr,
        link_lhs: bounds.link_lhs,
        link_rhs: bounds.link_rhs,
        link_joint_stderr: bounds.link_joint_stderr,
        link_holds: bounds.link_holds,
        sudakov: diag.sudakov.value,
        ball_width: ball.value,
        ball_stderr: ball.stderr,
    }
}

/// Fixed SPARSE p=8, s=2 cone used by the local-isometry check.
pub fn lic_cone() -> TangentCone {
    let truth = GroundTruth::sparse(8, 2, &mut stream(7, &[0])).unwrap();
    TangentCone::new(AtomSet::sparse(8), &truth.parameter).unwrap()
}

/// `n = ⌈16(ŵ + δ)²⌉`, the sample size at which `φ ≥ 1/2` and `ψ ≤ 3/2`
/// are expected for a Gaussian ensemble.
pub fn lic_sample_size(cone: &TangentCone) -> usize {
    let w = tangent_cone_width(cone, 20_000, 11).unwrap().value;
    (16.0 * (w + default_delta(cone.dim())).powi(2)).ceil() as usize
}

#[derive(Debug, Clone, Copy)]
pub struct LicOutcome {
    pub n: usize,
    pub phi: f64,
    pub psi: f64,
}

impl LicOutcome {
    pub fn passes(&self) -> bool {
        self.phi >= 0.5 && self.psi <= 1.5
    }
}

pub fn lic_check(cone: &TangentCone, n: usize, seed: u64) -> LicOutcome {
    let design = DesignOperator::gaussian_ensemble(n, cone.dim(), derive_seed(seed, &[0])).unwrap();
    let iso = local_isometry_constants(&design, cone, 512, 4, derive_seed(seed, &[1])).unwrap();
    LicOutcome {
        n,
        phi: iso.phi.value,
        psi: iso.psi.value,
    }
}

/// Least-squares slope of `log y` on `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Upper-bound values for SPARSE p=64, s=2 at `n = 2⁸ … 2¹²`, each with its
/// own Gaussian design.
pub fn sparse_bound_curve(seed: u64) -> Vec<(f64, f64)> {
    let p = 64;
    let truth = GroundTruth::sparse(p, 2, &mut stream(seed, &[0])).unwrap();
    let cone = TangentCone::new(AtomSet::sparse(p), &truth.parameter).unwrap();
    let budget = DiagnosticsBudget {
        width_samples: 2000,
        packing_budget: 1000,
        volume_samples: 0,
        isometry_samples: 128,
        isometry_restarts: 1,
        asphericity_samples: 1000,
        asphericity_refine: 10,
    };
    (8..=12)
        .map(|k| {
            let n = 1usize << k;
            let x = DesignOperator::gaussian_ensemble(n, p, derive_seed(seed, &[1, k])).unwrap();
            let diag =
                cone_diagnostics(&cone, Some(&x), &budget, derive_seed(seed, &[2, k])).unwrap();
            let b = evaluate_bounds(&diag, 1.0, n, ReportingConstants::for_dim(p)).unwrap();
            (n as f64, b.upper_l2)
        })
        .collect()
}
