//! The four atom-set families: unit basis vectors (ℓ1), rank-one matrices
//! (nuclear norm), sign vectors (ℓ∞) and orthogonal matrices (spectral
//! norm). Each supplies its atomic norm, dual norm, proximal map, ball
//! projections and tangent-cone machinery.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::linalg::{
    self, dot, gaussian_vec, norm1, norm2, norm_inf, polar_factor, project_l1_ball, SortedSvd,
};
use crate::model::{DesignOperator, GroundTruth, Shape};
use crate::rng::Rng;

/// Step used by the numeric descent test.
pub const DESCENT_STEP: f64 = 1e-4;
/// Slack allowed by the numeric descent test.
pub const DESCENT_SLACK: f64 = 1e-8;
/// Relative threshold below which singular values count as zero.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    Sparse,
    LowRank,
    Sign,
    Orthogonal,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Sparse => "SPARSE",
            Family::LowRank => "LOW_RANK",
            Family::Sign => "SIGN",
            Family::Orthogonal => "ORTHOGONAL",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sparse" => Ok(Family::Sparse),
            "low_rank" | "lowrank" => Ok(Family::LowRank),
            "sign" => Ok(Family::Sign),
            "orthogonal" => Ok(Family::Orthogonal),
            other => Err(Error::InvalidArgument(format!(
                "unknown atom family '{other}'"
            ))),
        }
    }
}

/// An atom-set family bound to a parameter shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AtomSetRaw")]
pub struct AtomSet {
    family: Family,
    shape: Shape,
}

#[derive(Deserialize)]
struct AtomSetRaw {
    family: Family,
    shape: Shape,
}

impl TryFrom<AtomSetRaw> for AtomSet {
    type Error = Error;

    fn try_from(raw: AtomSetRaw) -> Result<Self> {
        AtomSet::new(raw.family, raw.shape)
    }
}

impl AtomSet {
    pub fn new(family: Family, shape: Shape) -> Result<Self> {
        let ok = match (family, shape) {
            (Family::Sparse | Family::Sign, Shape::Vector(p)) => p >= 1,
            (Family::LowRank, Shape::Matrix { rows, cols }) => rows >= 1 && cols >= 1,
            (Family::Orthogonal, Shape::Matrix { rows, cols }) => rows >= 1 && rows == cols,
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{} atoms cannot be used with shape {:?}",
                family.name(),
                shape
            )));
        }
        Ok(AtomSet { family, shape })
    }

    pub fn sparse(p: usize) -> Self {
        Self::new(Family::Sparse, Shape::Vector(p)).expect("valid sparse shape")
    }

    pub fn sign(p: usize) -> Self {
        Self::new(Family::Sign, Shape::Vector(p)).expect("valid sign shape")
    }

    pub fn low_rank(rows: usize, cols: usize) -> Self {
        Self::new(Family::LowRank, Shape::Matrix { rows, cols }).expect("valid low-rank shape")
    }

    pub fn orthogonal(m: usize) -> Self {
        Self::new(Family::Orthogonal, Shape::Matrix { rows: m, cols: m })
            .expect("valid orthogonal shape")
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        check_len("parameter", self.dim(), x.len())?;
        check_finite("parameter", x)
    }

    fn mat(&self, x: &[f64]) -> DMatrix<f64> {
        let (r, c) = self.shape.matrix_dims().expect("matrix family");
        linalg::to_matrix(x, r, c)
    }

    /// Atomic norm: ℓ1, nuclear, ℓ∞ or spectral.
    pub fn norm(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.norm_of(x))
    }

    /// Dual norm: ℓ∞, spectral, ℓ1 or nuclear.
    pub fn dual_norm(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.dual_norm_of(x))
    }

    pub(crate) fn norm_of(&self, x: &[f64]) -> f64 {
        match self.family {
            Family::Sparse => norm1(x),
            Family::Sign => norm_inf(x),
            Family::LowRank => linalg::singular_values(&self.mat(x)).iter().sum(),
            Family::Orthogonal => linalg::singular_values(&self.mat(x))
                .first()
                .copied()
                .unwrap_or(0.0),
        }
    }

    pub(crate) fn dual_norm_of(&self, x: &[f64]) -> f64 {
        match self.family {
            Family::Sparse => norm_inf(x),
            Family::Sign => norm1(x),
            Family::LowRank => linalg::singular_values(&self.mat(x))
                .first()
                .copied()
                .unwrap_or(0.0),
            Family::Orthogonal => linalg::singular_values(&self.mat(x)).iter().sum(),
        }
    }

    /// `argmin_z ½‖z − x‖² + t‖z‖_A`.
    pub fn prox(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check(x)?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "prox step must be positive, got {t}"
            )));
        }
        Ok(self.prox_of(x, t))
    }

    pub(crate) fn prox_of(&self, x: &[f64], t: f64) -> Vec<f64> {
        match self.family {
            Family::Sparse => x
                .iter()
                .map(|&v| v.signum() * (v.abs() - t).max(0.0))
                .collect(),
            // Moreau: x − Π_{ℓ1 ball(t)}(x)
            Family::Sign => linalg::sub(x, &project_l1_ball(x, t)),
            Family::LowRank => {
                self.map_singular_values(x, |s| s.iter().map(|v| (v - t).max(0.0)).collect())
            }
            Family::Orthogonal => {
                self.map_singular_values(x, |s| linalg::sub(s, &project_l1_ball(s, t)))
            }
        }
    }

    /// Euclidean projection onto `{z : ‖z‖_A* ≤ radius}`.
    pub fn project_dual_ball(&self, x: &[f64], radius: f64) -> Vec<f64> {
        let r = radius.max(0.0);
        match self.family {
            Family::Sparse => x.iter().map(|v| v.clamp(-r, r)).collect(),
            Family::Sign => project_l1_ball(x, r),
            Family::LowRank => {
                self.map_singular_values(x, |s| s.iter().map(|v| v.min(r)).collect())
            }
            Family::Orthogonal => self.map_singular_values(x, |s| project_l1_ball(s, r)),
        }
    }

    /// Euclidean projection onto `{z : ‖z‖_A ≤ radius}`.
    pub fn project_norm_ball(&self, x: &[f64], radius: f64) -> Vec<f64> {
        let r = radius.max(0.0);
        match self.family {
            Family::Sparse => project_l1_ball(x, r),
            Family::Sign => x.iter().map(|v| v.clamp(-r, r)).collect(),
            Family::LowRank => self.map_singular_values(x, |s| project_l1_ball(s, r)),
            Family::Orthogonal => {
                self.map_singular_values(x, |s| s.iter().map(|v| v.min(r)).collect())
            }
        }
    }

    /// `argmin_z ½‖z − x‖² + t‖z‖_A*`.
    pub fn prox_dual(&self, x: &[f64], t: f64) -> Vec<f64> {
        linalg::sub(x, &self.project_norm_ball(x, t))
    }

    fn map_singular_values(&self, x: &[f64], f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let svd = SortedSvd::new(&self.mat(x));
        let s = f(&svd.s);
        linalg::from_matrix(&svd.compose(&s))
    }

    /// An element of the subdifferential `∂‖x‖_A` (an atom attaining the dual
    /// pairing).
    pub(crate) fn subgradient_of(&self, x: &[f64]) -> Vec<f64> {
        match self.family {
            Family::Sparse => x.iter().map(|v| v.signum()).collect(),
            Family::Sign => {
                let (i, _) = x
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, v)| {
                        if v.abs() > b.1 {
                            (i, v.abs())
                        } else {
                            b
                        }
                    });
                let mut z = vec![0.0; x.len()];
                z[i] = x[i].signum();
                z
            }
            Family::LowRank => {
                let svd = SortedSvd::new(&self.mat(x));
                let top = svd.s.first().copied().unwrap_or(0.0);
                let ones: Vec<f64> = svd
                    .s
                    .iter()
                    .map(|&s| if s > RANK_TOL * top { 1.0 } else { 0.0 })
                    .collect();
                linalg::from_matrix(&svd.compose(&ones))
            }
            Family::Orthogonal => {
                let svd = SortedSvd::new(&self.mat(x));
                let mut e = vec![0.0; svd.s.len()];
                if !e.is_empty() {
                    e[0] = 1.0;
                }
                linalg::from_matrix(&svd.compose(&e))
            }
        }
    }

    /// `sup_{a ∈ A} ‖X a‖₂`. Exact for sparse atoms and for sign atoms with
    /// `p ≤ 20`; otherwise a multistart ascent (a lower estimate).
    pub fn sup_image_norm(&self, design: &DesignOperator, rng: &mut Rng) -> Result<f64> {
        check_len("design columns", self.dim(), design.cols())?;
        let gram = design.gram();
        Ok(match self.family {
            Family::Sparse => design.column_norms().into_iter().fold(0.0, f64::max),
            Family::Sign => sign_quadratic_max(&gram, rng, 50).sqrt(),
            Family::LowRank => {
                let (r, c) = self.shape.matrix_dims().unwrap();
                rank_one_quadratic_max(&gram, r, c, rng, 8).sqrt()
            }
            Family::Orthogonal => {
                let (m, _) = self.shape.matrix_dims().unwrap();
                orthogonal_quadratic_max(&gram, m, rng, 50).sqrt()
            }
        })
    }
}

/// `max vᵀGv` over sign vectors: Gray-code enumeration for p ≤ 20, otherwise
/// single-flip ascent from `restarts` starts.
fn sign_quadratic_max(gram: &DMatrix<f64>, rng: &mut Rng, restarts: usize) -> f64 {
    let p = gram.nrows();
    let quad = |v: &[f64]| {
        let gv = gram * DVector::from_column_slice(v);
        dot(v, gv.as_slice())
    };
    if p <= 20 {
        let mut v = vec![1.0; p];
        let mut u: Vec<f64> = (gram * DVector::from_column_slice(&v)).as_slice().to_vec();
        let mut f = dot(&v, &u);
        let mut best = f;
        // the last coordinate stays fixed: f(v) = f(−v)
        let steps: u64 = 1u64 << (p - 1);
        for k in 1..steps {
            let j = k.trailing_zeros() as usize;
            f += -4.0 * v[j] * u[j] + 4.0 * gram[(j, j)];
            for (i, ui) in u.iter_mut().enumerate() {
                *ui -= 2.0 * v[j] * gram[(i, j)];
            }
            v[j] = -v[j];
            best = best.max(f);
        }
        return best;
    }
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(restarts);
    let eig = SymmetricEigen::new(gram.clone());
    let top = eig.eigenvalues.imax();
    starts.push(
        eig.eigenvectors
            .column(top)
            .iter()
            .map(|v| if *v >= 0.0 { 1.0 } else { -1.0 })
            .collect(),
    );
    while starts.len() < restarts {
        starts.push(
            (0..p)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect(),
        );
    }
    let mut best = f64::NEG_INFINITY;
    for mut v in starts {
        let mut u: Vec<f64> = (gram * DVector::from_column_slice(&v)).as_slice().to_vec();
        loop {
            let mut improved = false;
            for j in 0..p {
                let gain = -4.0 * v[j] * u[j] + 4.0 * gram[(j, j)];
                if gain > 1e-12 {
                    for (i, ui) in u.iter_mut().enumerate() {
                        *ui -= 2.0 * v[j] * gram[(i, j)];
                    }
                    v[j] = -v[j];
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        best = best.max(quad(&v));
    }
    best
}

/// `max (v⊗u)ᵀ G (v⊗u)` over unit `u ∈ ℝ^rows`, `v ∈ ℝ^cols` by alternating
/// top-eigenvector updates.
fn rank_one_quadratic_max(
    gram: &DMatrix<f64>,
    rows: usize,
    cols: usize,
    rng: &mut Rng,
    restarts: usize,
) -> f64 {
    // Q_v[i,k] = Σ_{j,l} v_j v_l G[j*rows+i, l*rows+k]
    let left_form = |v: &DVector<f64>| {
        let mut q = DMatrix::zeros(rows, rows);
        for l in 0..cols {
            if v[l] == 0.0 {
                continue;
            }
            for j in 0..cols {
                let w = v[j] * v[l];
                if w == 0.0 {
                    continue;
                }
                q += gram.view((j * rows, l * rows), (rows, rows)) * w;
            }
        }
        q
    };
    let right_form = |u: &DVector<f64>| {
        let mut q = DMatrix::zeros(cols, cols);
        for j in 0..cols {
            for l in 0..cols {
                let block = gram.view((j * rows, l * rows), (rows, rows));
                q[(j, l)] = (u.transpose() * block * u)[(0, 0)];
            }
        }
        q
    };
    let top = |q: DMatrix<f64>| {
        let eig = SymmetricEigen::new(q);
        let i = eig.eigenvalues.imax();
        (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned())
    };
    let mut best = 0.0f64;
    for _ in 0..restarts.max(1) {
        let mut v = DVector::from_vec(gaussian_vec(rng, cols));
        v.normalize_mut();
        let mut val = f64::NEG_INFINITY;
        for _ in 0..200 {
            let (_, u) = top(left_form(&v));
            let (f, nv) = top(right_form(&u));
            v = nv;
            if f <= val * (1.0 + 1e-12) {
                val = val.max(f);
                break;
            }
            val = f;
        }
        best = best.max(val);
    }
    best
}

/// `max vec(Q)ᵀ G vec(Q)` over orthogonal `Q` by linearized ascent
/// `Q ← polar(mat(G vec Q))`, which is monotone for a convex objective.
fn orthogonal_quadratic_max(gram: &DMatrix<f64>, m: usize, rng: &mut Rng, restarts: usize) -> f64 {
    let eval = |q: &DMatrix<f64>| {
        let v = DVector::from_column_slice(q.as_slice());
        (v.transpose() * gram * &v)[(0, 0)]
    };
    let mut best = 0.0f64;
    for _ in 0..restarts.max(1) {
        let mut q = linalg::random_orthogonal(rng, m);
        let mut val = eval(&q);
        for _ in 0..500 {
            let grad = gram * DVector::from_column_slice(q.as_slice());
            let nq = polar_factor(&DMatrix::from_column_slice(m, m, grad.as_slice()));
            let nval = eval(&nq);
            q = nq;
            if nval <= val * (1.0 + 1e-13) {
                val = val.max(nval);
                break;
            }
            val = nval;
        }
        best = best.max(val);
    }
    best
}

/// Upper bound on the local asphericity ratio `sup ‖h‖_A/‖h‖₂` over the
/// tangent cone: 2√s, 2√(2r), 1, 1.
pub fn asphericity_upper_bound(atoms: &AtomSet, truth: &GroundTruth) -> f64 {
    let k = truth.complexity as f64;
    match atoms.family() {
        Family::Sparse => 2.0 * k.sqrt(),
        Family::LowRank => 2.0 * (2.0 * k).sqrt(),
        Family::Sign | Family::Orthogonal => 1.0,
    }
}

#[derive(Debug, Clone)]
enum ConeData {
    Sparse {
        support: Vec<usize>,
        off_support: Vec<usize>,
        signs: Vec<f64>,
    },
    LowRank {
        u: DMatrix<f64>,
        v: DMatrix<f64>,
    },
    Sign {
        signs: Vec<f64>,
    },
    Orthogonal {
        q: DMatrix<f64>,
    },
}

/// Tangent (descent) cone `T_A(M) = cone{h : ‖M + h‖_A ≤ ‖M‖_A}` at an anchor
/// with exact structure.
#[derive(Debug, Clone)]
pub struct TangentCone {
    atoms: AtomSet,
    anchor: Vec<f64>,
    anchor_norm: f64,
    data: ConeData,
}

impl TangentCone {
    pub fn new(atoms: AtomSet, anchor: &[f64]) -> Result<Self> {
        atoms.check(anchor)?;
        let inexact = |reason: String| Error::InexactAnchor {
            family: atoms.family().name(),
            reason,
        };
        let data = match atoms.family() {
            Family::Sparse => {
                let support: Vec<usize> = (0..anchor.len()).filter(|&i| anchor[i] != 0.0).collect();
                if support.is_empty() {
                    return Err(inexact("anchor is zero".into()));
                }
                let off_support = (0..anchor.len()).filter(|&i| anchor[i] == 0.0).collect();
                let signs = support.iter().map(|&i| anchor[i].signum()).collect();
                ConeData::Sparse {
                    support,
                    off_support,
                    signs,
                }
            }
            Family::LowRank => {
                let svd = SortedSvd::new(&atoms.mat(anchor));
                let top = svd.s.first().copied().unwrap_or(0.0);
                if top <= 0.0 {
                    return Err(inexact("anchor is zero".into()));
                }
                let r = svd.s.iter().filter(|&&s| s > RANK_TOL * top).count();
                ConeData::LowRank {
                    u: svd.u.columns(0, r).into_owned(),
                    v: svd.v.columns(0, r).into_owned(),
                }
            }
            Family::Sign => {
                let c = norm_inf(anchor);
                if c == 0.0 {
                    return Err(inexact("anchor is zero".into()));
                }
                if anchor.iter().any(|v| (v.abs() - c).abs() > 1e-12 * c) {
                    return Err(inexact("entries are not all ±c".into()));
                }
                ConeData::Sign {
                    signs: anchor.iter().map(|v| v.signum()).collect(),
                }
            }
            Family::Orthogonal => {
                let m = atoms.mat(anchor);
                let k = m.nrows();
                let c2 = m.norm_squared() / k as f64;
                if c2 == 0.0 {
                    return Err(inexact("anchor is zero".into()));
                }
                let err = (m.transpose() * &m / c2 - DMatrix::identity(k, k)).norm();
                if err > 1e-10 * (k as f64).max(1.0) {
                    return Err(inexact(format!("‖MᵀM/c² − I‖ = {err:.3e}")));
                }
                ConeData::Orthogonal { q: m / c2.sqrt() }
            }
        };
        Ok(TangentCone {
            atoms,
            anchor_norm: atoms.norm_of(anchor),
            anchor: anchor.to_vec(),
            data,
        })
    }

    pub fn atoms(&self) -> &AtomSet {
        &self.atoms
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// Directional derivative of the atomic norm at the anchor,
    /// `sup_{z ∈ ∂‖M‖_A} ⟨z, h⟩`; the cone is `{h : value ≤ 0}`.
    pub fn directional_derivative(&self, h: &[f64]) -> f64 {
        match &self.data {
            ConeData::Sparse {
                support,
                off_support,
                signs,
            } => {
                let on: f64 = support.iter().zip(signs).map(|(&i, s)| s * h[i]).sum();
                let off: f64 = off_support.iter().map(|&i| h[i].abs()).sum();
                on + off
            }
            ConeData::LowRank { u, v } => {
                let hm = self.atoms.mat(h);
                let uvt = u * v.transpose();
                let perp = complement(&hm, u, v);
                uvt.dot(&hm) + linalg::singular_values(&perp).iter().sum::<f64>()
            }
            ConeData::Sign { signs } => signs
                .iter()
                .zip(h)
                .map(|(s, x)| s * x)
                .fold(f64::NEG_INFINITY, f64::max),
            ConeData::Orthogonal { q } => {
                let hm = self.atoms.mat(h);
                linalg::max_eigenvalue_sym(&linalg::sym(&(q.transpose() * hm)))
            }
        }
    }

    /// Membership up to `tol·‖h‖₂`.
    pub fn contains(&self, h: &[f64], tol: f64) -> bool {
        self.directional_derivative(h) <= tol * norm2(h)
    }

    /// `‖M + t h‖_A ≤ ‖M‖_A + slack·max(1, ‖M‖_A)`.
    pub fn descends(&self, h: &[f64], t: f64, slack: f64) -> bool {
        let moved: Vec<f64> = self.anchor.iter().zip(h).map(|(m, x)| m + t * x).collect();
        self.atoms.norm_of(&moved) <= self.anchor_norm + slack * self.anchor_norm.max(1.0)
    }

    /// Exact Euclidean projection onto the (closed) tangent cone.
    pub fn project(&self, g: &[f64]) -> Vec<f64> {
        match &self.data {
            ConeData::Sparse {
                support,
                off_support,
                signs,
            } => {
                let a: f64 = support.iter().zip(signs).map(|(&i, s)| s * g[i]).sum();
                let mags: Vec<f64> = off_support.iter().map(|&i| g[i].abs()).collect();
                let t = normal_cone_scale(support.len() as f64, a, mags);
                let mut out = g.to_vec();
                for (&i, s) in support.iter().zip(signs) {
                    out[i] -= t * s;
                }
                for &i in off_support {
                    out[i] -= g[i].clamp(-t, t);
                }
                out
            }
            ConeData::LowRank { u, v } => {
                let gm = self.atoms.mat(g);
                let uvt = u * v.transpose();
                let perp = complement(&gm, u, v);
                let svd = SortedSvd::new(&perp);
                let t = normal_cone_scale(u.ncols() as f64, uvt.dot(&gm), svd.s.clone());
                let clipped: Vec<f64> = svd.s.iter().map(|s| s.min(t)).collect();
                let normal = uvt * t + svd.compose(&clipped);
                linalg::from_matrix(&(gm - normal))
            }
            ConeData::Sign { signs } => g
                .iter()
                .zip(signs)
                .map(|(x, s)| if s * x <= 0.0 { *x } else { 0.0 })
                .collect(),
            ConeData::Orthogonal { q } => {
                let gm = self.atoms.mat(g);
                let psd = linalg::project_psd(&linalg::sym(&(q.transpose() * &gm)));
                linalg::from_matrix(&(gm - q * psd))
            }
        }
    }

    /// Draws a unit direction in the cone, resampling until the numeric
    /// descent test passes.
    pub fn sample_direction(&self, rng: &mut Rng) -> Result<Vec<f64>> {
        for _ in 0..10_000 {
            let mut h = self.propose(rng);
            if linalg::normalize(&mut h) == 0.0 {
                continue;
            }
            if self.descends(&h, DESCENT_STEP, DESCENT_SLACK) {
                return Ok(h);
            }
        }
        Err(Error::InvalidArgument(
            "cone sampler failed to produce a descent direction".into(),
        ))
    }

    fn propose(&self, rng: &mut Rng) -> Vec<f64> {
        let p = self.dim();
        match &self.data {
            ConeData::Sparse {
                support,
                off_support,
                signs,
            } => {
                let mut h = vec![0.0; p];
                let hs = gaussian_vec(rng, support.len());
                let mut budget = 0.0;
                for ((&i, s), v) in support.iter().zip(signs).zip(&hs) {
                    h[i] = *v;
                    budget -= s * v;
                }
                if budget > 0.0 && !off_support.is_empty() {
                    let dir = gaussian_vec(rng, off_support.len());
                    let scale = rng.random::<f64>() * budget / norm1(&dir);
                    for (&i, d) in off_support.iter().zip(&dir) {
                        h[i] = d * scale;
                    }
                }
                h
            }
            ConeData::LowRank { u, v } => {
                let (rows, cols) = (u.nrows(), v.nrows());
                let g = DMatrix::from_vec(rows, cols, gaussian_vec(rng, rows * cols));
                let h0 = &g - complement(&g, u, v);
                let budget = -(u * v.transpose()).dot(&h0);
                let mut h = h0;
                if budget > 0.0 && rows > u.ncols() && cols > v.ncols() {
                    let g2 = DMatrix::from_vec(rows, cols, gaussian_vec(rng, rows * cols));
                    let hc = complement(&g2, u, v);
                    let nuc: f64 = linalg::singular_values(&hc).iter().sum();
                    if nuc > 0.0 {
                        h += hc * (rng.random::<f64>() * budget / nuc);
                    }
                }
                linalg::from_matrix(&h)
            }
            ConeData::Sign { signs } => gaussian_vec(rng, p)
                .into_iter()
                .zip(signs)
                .map(|(g, s)| -s * g.abs())
                .collect(),
            ConeData::Orthogonal { .. } => self.project(&gaussian_vec(rng, p)),
        }
    }

    /// `‖h‖_A / ‖h‖₂`.
    pub fn norm_ratio(&self, h: &[f64]) -> f64 {
        self.atoms.norm_of(h) / norm2(h)
    }
}

/// `(I − UUᵀ) G (I − VVᵀ)`.
fn complement(g: &DMatrix<f64>, u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let left = g - u * (u.transpose() * g);
    &left - (&left * v) * v.transpose()
}

/// Minimizer over `t ≥ 0` of `k t² − 2 a t + Σ_j (m_j − t)₊²`, the scale of
/// the nearest point in `cone(∂‖M‖)` for the ℓ1 and nuclear families.
fn normal_cone_scale(k: f64, a: f64, mut mags: Vec<f64>) -> f64 {
    mags.sort_by(|x, y| y.total_cmp(x));
    let mut acc = a;
    for j in 0..=mags.len() {
        let t = acc / (k + j as f64);
        let next = mags.get(j).copied().unwrap_or(f64::NEG_INFINITY);
        if t >= next {
            return t.max(0.0);
        }
        acc += mags[j];
    }
    unreachable!("the last segment always accepts")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn diag(a: f64, b: f64) -> Vec<f64> {
        vec![a, 0.0, 0.0, b]
    }

    #[test]
    fn norms_on_small_examples() {
        let s = AtomSet::sparse(3);
        assert_eq!(s.norm(&[1.0, -2.0, 3.0]).unwrap(), 6.0);
        assert_eq!(s.dual_norm(&[1.0, -2.0, 3.0]).unwrap(), 3.0);
        let g = AtomSet::sign(3);
        assert_eq!(g.dual_norm(&[1.0, -2.0, 3.0]).unwrap(), 6.0);
        assert_eq!(g.norm(&[1.0, -2.0, 3.0]).unwrap(), 3.0);
        let l = AtomSet::low_rank(2, 2);
        assert!((l.norm(&diag(3.0, 4.0)).unwrap() - 7.0).abs() < 1e-12);
        assert!((l.dual_norm(&diag(3.0, 4.0)).unwrap() - 4.0).abs() < 1e-12);
        let o = AtomSet::orthogonal(3);
        let eye = linalg::from_matrix(&DMatrix::identity(3, 3));
        assert!((o.norm(&eye).unwrap() - 1.0).abs() < 1e-12);
        assert!((o.dual_norm(&eye).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn shape_and_input_validation() {
        assert!(AtomSet::new(Family::LowRank, Shape::Vector(4)).is_err());
        assert!(AtomSet::new(Family::Sparse, Shape::Matrix { rows: 2, cols: 2 }).is_err());
        assert!(AtomSet::new(Family::Orthogonal, Shape::Matrix { rows: 2, cols: 3 }).is_err());
        let s = AtomSet::sparse(3);
        assert!(matches!(
            s.norm(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            s.norm(&[1.0, f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(s.prox(&[1.0, 2.0, 3.0], 0.0).is_err());
    }

    #[test]
    fn descriptor_json() {
        let a = AtomSet::low_rank(3, 4);
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(
            text,
            r#"{"family":"LOW_RANK","shape":{"matrix":{"rows":3,"cols":4}}}"#
        );
        let back: AtomSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, a);
        let bad = r#"{"family":"ORTHOGONAL","shape":{"vector":4}}"#;
        assert!(serde_json::from_str::<AtomSet>(bad).is_err());
    }

    #[test]
    fn prox_examples() {
        assert_eq!(
            AtomSet::sparse(2).prox(&[3.0, -1.0], 2.0).unwrap(),
            vec![1.0, 0.0]
        );
        let lr = AtomSet::low_rank(2, 2).prox(&diag(3.0, 1.0), 2.0).unwrap();
        for (a, b) in lr.iter().zip(diag(1.0, 0.0)) {
            assert!((a - b).abs() < 1e-12);
        }
        let sg = AtomSet::sign(2).prox(&[2.0, 0.5], 1.0).unwrap();
        assert!((sg[0] - 1.0).abs() < 1e-12 && (sg[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sign_prox_matches_grid_search() {
        // Brute force over a grid for argmin ½‖z − x‖² + t‖z‖∞ in 2-D.
        let x = [2.0, 0.5];
        let t = 1.0;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        let steps = 600;
        for i in 0..=steps {
            for j in 0..=steps {
                let z = [
                    -1.0 + 3.0 * i as f64 / steps as f64,
                    -1.0 + 2.0 * j as f64 / steps as f64,
                ];
                let obj = 0.5 * ((z[0] - x[0]).powi(2) + (z[1] - x[1]).powi(2))
                    + t * z[0].abs().max(z[1].abs());
                if obj < best.0 {
                    best = (obj, z);
                }
            }
        }
        let p = AtomSet::sign(2).prox(&x, t).unwrap();
        assert!((p[0] - best.1[0]).abs() <= 0.006 && (p[1] - best.1[1]).abs() <= 0.006);
    }

    #[test]
    fn orthogonal_prox_is_spectral_shrink() {
        // prox of t‖·‖ at diag(3,1): subtract ℓ1-ball projection of (3,1) → (1,1)
        let p = AtomSet::orthogonal(2).prox(&diag(3.0, 1.0), 2.0).unwrap();
        for (a, b) in p.iter().zip(diag(1.0, 1.0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn asphericity_bounds() {
        let t = |k| GroundTruth {
            parameter: vec![],
            complexity: k,
        };
        assert_eq!(asphericity_upper_bound(&AtomSet::sparse(10), &t(4)), 4.0);
        assert_eq!(
            asphericity_upper_bound(&AtomSet::low_rank(5, 5), &t(2)),
            4.0
        );
        assert_eq!(asphericity_upper_bound(&AtomSet::sign(3), &t(3)), 1.0);
        assert_eq!(asphericity_upper_bound(&AtomSet::orthogonal(3), &t(3)), 1.0);
    }

    #[test]
    fn sign_cone_at_vertex() {
        let cone = TangentCone::new(AtomSet::sign(2), &[1.0, 1.0]).unwrap();
        assert!(cone.descends(&[-1.0, 0.0], DESCENT_STEP, DESCENT_SLACK));
        assert!(!cone.descends(&[1.0, 0.0], DESCENT_STEP, DESCENT_SLACK));
        assert!(cone.contains(&[-1.0, 0.0], 0.0));
        assert!(!cone.contains(&[1.0, 0.0], 0.0));
    }

    #[test]
    fn inexact_anchors_rejected() {
        assert!(TangentCone::new(AtomSet::sparse(3), &[0.0; 3]).is_err());
        assert!(TangentCone::new(AtomSet::sign(2), &[1.0, 0.5]).is_err());
        assert!(TangentCone::new(AtomSet::orthogonal(2), &diag(1.0, 2.0)).is_err());
    }

    #[test]
    fn sparse_sampler_descends() {
        let cone = TangentCone::new(AtomSet::sparse(2), &[1.0, 0.0]).unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let h = cone.sample_direction(&mut rng).unwrap();
            assert!((norm2(&h) - 1.0).abs() < 1e-12);
            assert!(cone.descends(&h, 1e-4, 1e-8));
        }
    }

    #[test]
    fn sparse_projection_against_direct_minimization() {
        // Compare ‖g − Π_T g‖ with a fine scan over the normal-cone scale t.
        let m = [1.5, 0.0, -0.7, 0.0, 0.0];
        let cone = TangentCone::new(AtomSet::sparse(5), &m).unwrap();
        let mut rng = rng_from_seed(4);
        for _ in 0..50 {
            let g = gaussian_vec(&mut rng, 5);
            let proj = cone.project(&g);
            // dist(g, N) = ‖Π_T g‖ for the polar pair (T, N)
            let got = norm2(&proj);
            let mut best = f64::INFINITY;
            for k in 0..=40_000 {
                let t = k as f64 * 1e-4;
                let d2 = (g[0] - t).powi(2)
                    + (g[2] + t).powi(2)
                    + [1, 3, 4]
                        .iter()
                        .map(|&i| (g[i].abs() - t).max(0.0).powi(2))
                        .sum::<f64>();
                best = best.min(d2.sqrt());
            }
            assert!((got - best).abs() < 1e-6, "{got} vs {best}");
            assert!(cone.contains(&proj, 1e-10));
        }
    }

    #[test]
    fn projections_are_idempotent_and_orthogonal() {
        let mut rng = rng_from_seed(8);
        let truth_lr = GroundTruth::low_rank(4, 3, 1, &mut rng).unwrap();
        let truth_o = GroundTruth::orthogonal(3, &mut rng);
        let cones = vec![
            TangentCone::new(AtomSet::sparse(6), &[0.0, 2.0, 0.0, -1.0, 0.0, 0.0]).unwrap(),
            TangentCone::new(AtomSet::low_rank(4, 3), &truth_lr.parameter).unwrap(),
            TangentCone::new(AtomSet::sign(5), &[1.0, -1.0, 1.0, 1.0, -1.0]).unwrap(),
            TangentCone::new(AtomSet::orthogonal(3), &truth_o.parameter).unwrap(),
        ];
        for cone in &cones {
            for _ in 0..100 {
                let g = gaussian_vec(&mut rng, cone.dim());
                let p = cone.project(&g);
                let pp = cone.project(&p);
                assert!(
                    norm2(&linalg::sub(&p, &pp)) < 1e-9,
                    "{:?}",
                    cone.atoms().family()
                );
                // Moreau: residual is orthogonal to the projection
                let r = linalg::sub(&g, &p);
                assert!(dot(&r, &p).abs() < 1e-9, "{:?}", cone.atoms().family());
                assert!(cone.contains(&p, 1e-9));
            }
        }
    }

    #[test]
    fn sup_image_norm_identity_design() {
        let mut rng = rng_from_seed(2);
        let x = DesignOperator::identity(4);
        assert!((AtomSet::sparse(4).sup_image_norm(&x, &mut rng).unwrap() - 1.0).abs() < 1e-12);
        assert!((AtomSet::sign(4).sup_image_norm(&x, &mut rng).unwrap() - 2.0).abs() < 1e-12);
        let lr = AtomSet::low_rank(2, 2)
            .sup_image_norm(&x, &mut rng)
            .unwrap();
        assert!((lr - 1.0).abs() < 1e-9);
        let o = AtomSet::orthogonal(2).sup_image_norm(&x, &mut rng).unwrap();
        assert!((o - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn sign_enumeration_beats_ascent_baseline() {
        let mut rng = rng_from_seed(6);
        let x = DesignOperator::gaussian_ensemble(10, 12, 3).unwrap();
        let gram = x.gram();
        let exact = sign_quadratic_max(&gram, &mut rng, 50);
        // brute force without Gray code
        let mut brute = 0.0f64;
        for mask in 0u32..(1 << 12) {
            let v: Vec<f64> = (0..12)
                .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect();
            let gv = &gram * DVector::from_column_slice(&v);
            brute = brute.max(dot(&v, gv.as_slice()));
        }
        assert!((exact - brute).abs() < 1e-9 * brute);
    }
}
