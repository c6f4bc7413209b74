//! The linear inverse model `Y = X(M) + Z`: designs, ground truths and
//! simulated observations.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::linalg::{self, gaussian_vec, SortedSvd};
use crate::rng::{self, Rng};

/// Shape of the parameter. Matrices are vectorized column-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Vector(usize),
    Matrix { rows: usize, cols: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(p) => p,
            Shape::Matrix { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matrix_dims(&self) -> Option<(usize, usize)> {
        match *self {
            Shape::Vector(_) => None,
            Shape::Matrix { rows, cols } => Some((rows, cols)),
        }
    }
}

/// Dense design operator `X: ℝᵖ → ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignOperator {
    entries: DMatrix<f64>,
    column_scaled: bool,
}

impl DesignOperator {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "design must have at least one row and one column".into(),
            ));
        }
        check_finite("design", entries.as_slice())?;
        Ok(DesignOperator {
            entries,
            column_scaled: false,
        })
    }

    pub fn from_row_major(n: usize, p: usize, data: &[f64]) -> Result<Self> {
        check_len("design entries", n * p, data.len())?;
        Self::new(DMatrix::from_row_slice(n, p, data))
    }

    pub fn identity(p: usize) -> Self {
        DesignOperator {
            entries: DMatrix::identity(p, p),
            column_scaled: true,
        }
    }

    /// Gaussian ensemble: i.i.d. N(0, 1/n) entries, deterministic in `seed`.
    pub fn gaussian_ensemble(n: usize, p: usize, seed: u64) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument(format!(
                "gaussian ensemble needs n, p >= 1 (got n={n}, p={p})"
            )));
        }
        let mut rng = rng::rng_from_seed(seed);
        Ok(Self::gaussian_ensemble_with(&mut rng, n, p))
    }

    pub(crate) fn gaussian_ensemble_with(rng: &mut Rng, n: usize, p: usize) -> Self {
        let scale = 1.0 / (n as f64).sqrt();
        let data: Vec<f64> = gaussian_vec(rng, n * p)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        DesignOperator {
            entries: DMatrix::from_vec(n, p, data),
            column_scaled: false,
        }
    }

    /// Copy with every column rescaled to unit ℓ2 norm.
    pub fn standardized(&self) -> Self {
        let mut entries = self.entries.clone();
        for mut col in entries.column_iter_mut() {
            let nrm = col.norm();
            if nrm > 0.0 {
                col /= nrm;
            }
        }
        DesignOperator {
            entries,
            column_scaled: true,
        }
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn is_column_scaled(&self) -> bool {
        self.column_scaled
    }

    /// `X v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("forward input", self.cols(), v.len())?;
        Ok((&self.entries * DVector::from_column_slice(v))
            .as_slice()
            .to_vec())
    }

    /// `Xᵀ w`.
    pub fn adjoint(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input", self.rows(), w.len())?;
        Ok((self.entries.tr_mul(&DVector::from_column_slice(w)))
            .as_slice()
            .to_vec())
    }

    /// Gram matrix `XᵀX`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.entries.tr_mul(&self.entries)
    }

    pub fn column_norms(&self) -> Vec<f64> {
        self.entries.column_iter().map(|c| c.norm()).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DesignOperator {
            entries: &self.entries * factor,
            column_scaled: false,
        }
    }
}

/// Structured true parameter together with its complexity (sparsity, rank, or
/// the dimension for sign/orthogonal truths).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub parameter: Vec<f64>,
    pub complexity: usize,
}

impl GroundTruth {
    /// `s` nonzeros at uniformly random positions, values ±1.
    pub fn sparse(p: usize, s: usize, rng: &mut Rng) -> Result<Self> {
        if s == 0 || s > p {
            return Err(Error::InvalidArgument(format!(
                "sparsity must be in 1..={p}, got {s}"
            )));
        }
        let mut parameter = vec![0.0; p];
        let mut support = sample(rng, p, s).into_vec();
        support.sort_unstable();
        for i in support {
            parameter[i] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        Ok(GroundTruth {
            parameter,
            complexity: s,
        })
    }

    /// `U Vᵀ` with Haar-random orthonormal factors of width `r` (all nonzero
    /// singular values equal to one).
    pub fn low_rank(rows: usize, cols: usize, r: usize, rng: &mut Rng) -> Result<Self> {
        if r == 0 || r > rows.min(cols) {
            return Err(Error::InvalidArgument(format!(
                "rank must be in 1..={}, got {r}",
                rows.min(cols)
            )));
        }
        let u = linalg::random_orthogonal(rng, rows)
            .columns(0, r)
            .into_owned();
        let v = linalg::random_orthogonal(rng, cols)
            .columns(0, r)
            .into_owned();
        let m = u * v.transpose();
        Ok(GroundTruth {
            parameter: linalg::from_matrix(&m),
            complexity: r,
        })
    }

    pub fn sign(p: usize, rng: &mut Rng) -> Self {
        GroundTruth {
            parameter: (0..p)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect(),
            complexity: p,
        }
    }

    pub fn orthogonal(m: usize, rng: &mut Rng) -> Self {
        GroundTruth {
            parameter: linalg::from_matrix(&linalg::random_orthogonal(rng, m)),
            complexity: m,
        }
    }

    pub fn zero(p: usize) -> Self {
        GroundTruth {
            parameter: vec![0.0; p],
            complexity: 0,
        }
    }

    /// Number of entries with magnitude above `tol`.
    pub fn support_size(&self, tol: f64) -> usize {
        self.parameter.iter().filter(|v| v.abs() > tol).count()
    }

    /// Numerical rank with threshold `1e-8·σ₁`.
    pub fn numerical_rank(&self, rows: usize, cols: usize) -> usize {
        let s = SortedSvd::new(&linalg::to_matrix(&self.parameter, rows, cols)).s;
        let top = s.first().copied().unwrap_or(0.0);
        s.iter().filter(|&&v| v > 1e-8 * top).count()
    }
}

/// Observed data `(X, Y)` plus the noise level and optional attached truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub design: DesignOperator,
    pub observation: Vec<f64>,
    pub sigma: f64,
    pub shape: Shape,
    pub truth: Option<Vec<f64>>,
}

impl ProblemInstance {
    pub fn new(
        design: DesignOperator,
        observation: Vec<f64>,
        sigma: f64,
        shape: Shape,
    ) -> Result<Self> {
        check_len("observation", design.rows(), observation.len())?;
        check_len("parameter shape", design.cols(), shape.len())?;
        check_finite("observation", &observation)?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise level must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(ProblemInstance {
            design,
            observation,
            sigma,
            shape,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: Vec<f64>) -> Result<Self> {
        check_len("truth", self.design.cols(), truth.len())?;
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.design.rows()
    }

    pub fn p(&self) -> usize {
        self.design.cols()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ProblemFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

/// On-disk layout of a problem instance; the design is stored row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub p: usize,
    pub shape: Shape,
    pub sigma: f64,
    pub design: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
}

impl From<&ProblemInstance> for ProblemFile {
    fn from(pi: &ProblemInstance) -> Self {
        let x = pi.design.matrix();
        let mut design = Vec::with_capacity(x.len());
        for i in 0..x.nrows() {
            design.extend(x.row(i).iter().copied());
        }
        ProblemFile {
            n: pi.n(),
            p: pi.p(),
            shape: pi.shape,
            sigma: pi.sigma,
            design,
            y: pi.observation.clone(),
            truth: pi.truth.clone(),
        }
    }
}

impl TryFrom<ProblemFile> for ProblemInstance {
    type Error = Error;

    fn try_from(f: ProblemFile) -> Result<Self> {
        let design = DesignOperator::from_row_major(f.n, f.p, &f.design)?;
        let pi = ProblemInstance::new(design, f.y, f.sigma, f.shape)?;
        match f.truth {
            Some(t) => pi.with_truth(t),
            None => Ok(pi),
        }
    }
}

/// `Y = X(M) + Z` with `Z ~ N(0, (σ²/n) I)`. `σ = 0` gives noiseless data.
pub fn simulate_observation(
    design: &DesignOperator,
    truth: &GroundTruth,
    shape: Shape,
    sigma: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    let mut rng = rng::rng_from_seed(seed);
    simulate_observation_with(&mut rng, design, truth, shape, sigma)
}

pub fn simulate_observation_with(
    rng: &mut Rng,
    design: &DesignOperator,
    truth: &GroundTruth,
    shape: Shape,
    sigma: f64,
) -> Result<ProblemInstance> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be >= 0 (0 = noiseless), got {sigma}"
        )));
    }
    let mut y = design.apply(&truth.parameter)?;
    if sigma > 0.0 {
        let scale = sigma / (design.rows() as f64).sqrt();
        for (yi, z) in y.iter_mut().zip(gaussian_vec(rng, design.rows())) {
            *yi += scale * z;
        }
    }
    ProblemInstance::new(design.clone(), y, sigma, shape)?.with_truth(truth.parameter.clone())
}
