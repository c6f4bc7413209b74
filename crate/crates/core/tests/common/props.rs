//! Randomized property checks. Each takes a case seed and returns a
//! description of the violation, if any.

use geoinfer::linalg::{dot, gaussian_vec, norm2, sub};
use geoinfer::model::{DesignOperator, GroundTruth};
use geoinfer::rng::{stream, Rng as CaseRng};
use geoinfer::{AtomSet, Family, TangentCone};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub type Check = Result<(), String>;

fn random_atoms(rng: &mut CaseRng) -> AtomSet {
    match rng.random_range(0..4) {
        0 => AtomSet::sparse(rng.random_range(1..=12)),
        1 => AtomSet::sign(rng.random_range(1..=12)),
        2 => AtomSet::low_rank(rng.random_range(1..=5), rng.random_range(1..=5)),
        _ => AtomSet::orthogonal(rng.random_range(1..=4)),
    }
}

fn scaled_gaussian(rng: &mut CaseRng, len: usize) -> Vec<f64> {
    let s = 10f64.powf(rng.random_range(-2.0..2.0));
    gaussian_vec(rng, len).into_iter().map(|v| v * s).collect()
}

/// `⟨x, y⟩ ≤ ‖x‖_A ‖y‖_A*`.
pub fn duality(seed: u64) -> Check {
    let mut rng = stream(seed, &[1]);
    let atoms = random_atoms(&mut rng);
    let x = scaled_gaussian(&mut rng, atoms.dim());
    let y = scaled_gaussian(&mut rng, atoms.dim());
    let lhs = dot(&x, &y);
    let rhs = atoms.norm(&x).unwrap() * atoms.dual_norm(&y).unwrap();
    if lhs <= rhs * (1.0 + 1e-12) + 1e-300 {
        Ok(())
    } else {
        Err(format!("{:?}: ⟨x,y⟩ = {lhs} > {rhs}", atoms.family()))
    }
}

/// `z = prox_t(x)` iff `(x − z)/t ∈ ∂‖z‖_A`, i.e. `‖x − z‖_A* ≤ t` and
/// `⟨x − z, z⟩ = t‖z‖_A`.
pub fn prox_optimality(seed: u64) -> Check {
    let mut rng = stream(seed, &[2]);
    let atoms = random_atoms(&mut rng);
    let x = scaled_gaussian(&mut rng, atoms.dim());
    let t = 10f64.powf(rng.random_range(-2.0..1.0)) * norm2(&x).max(1e-3);
    let z = atoms.prox(&x, t).unwrap();
    let g = sub(&x, &z);
    let dual = atoms.dual_norm(&g).unwrap();
    let pairing = dot(&g, &z);
    let zn = atoms.norm(&z).unwrap();
    let scale = norm2(&x) * (t + norm2(&x)) * 1e-10 + 1e-300;
    if dual > t * (1.0 + 1e-9) + 1e-12 * norm2(&x) {
        return Err(format!("{:?}: ‖x − z‖* = {dual} > t = {t}", atoms.family()));
    }
    if (pairing - t * zn).abs() > scale {
        return Err(format!(
            "{:?}: ⟨x − z, z⟩ = {pairing} vs t‖z‖ = {}",
            atoms.family(),
            t * zn
        ));
    }
    Ok(())
}

/// `⟨Xv, w⟩ = ⟨v, Xᵀw⟩`.
pub fn adjoint(seed: u64) -> Check {
    let mut rng = stream(seed, &[3]);
    let n = rng.random_range(1..=30);
    let p = rng.random_range(1..=30);
    let x = DesignOperator::gaussian_ensemble(n, p, rng.random()).unwrap();
    let v = scaled_gaussian(&mut rng, p);
    let w = scaled_gaussian(&mut rng, n);
    let a = dot(&x.apply(&v).unwrap(), &w);
    let b = dot(&v, &x.adjoint(&w).unwrap());
    let tol = 1e-12 * norm2(&v) * norm2(&w) * x.matrix().norm().max(1.0);
    if (a - b).abs() <= tol {
        Ok(())
    } else {
        Err(format!("⟨Xv,w⟩ = {a}, ⟨v,Xᵀw⟩ = {b}"))
    }
}

fn random_anchor(rng: &mut CaseRng, atoms: &AtomSet) -> Vec<f64> {
    let amp = 10f64.powf(rng.random_range(-1.0..1.0));
    match atoms.family() {
        Family::Sparse => {
            let p = atoms.dim();
            let s = rng.random_range(1..=p);
            GroundTruth::sparse(p, s, rng)
                .unwrap()
                .parameter
                .into_iter()
                .map(|v| v * amp * rng.random_range(0.2..2.0))
                .collect()
        }
        Family::Sign => GroundTruth::sign(atoms.dim(), rng)
            .parameter
            .iter()
            .map(|v| v * amp)
            .collect(),
        Family::LowRank => {
            let (r, c) = atoms.shape().matrix_dims().unwrap();
            let k = rng.random_range(1..=r.min(c));
            let base = GroundTruth::low_rank(r, c, k, rng).unwrap().parameter;
            let extra = GroundTruth::low_rank(r, c, 1, rng).unwrap().parameter;
            // unequal singular values when the two pieces overlap in rank
            base.iter()
                .zip(&extra)
                .map(|(a, b)| amp * (a + 0.5 * b))
                .collect()
        }
        Family::Orthogonal => {
            let (m, _) = atoms.shape().matrix_dims().unwrap();
            GroundTruth::orthogonal(m, rng)
                .parameter
                .iter()
                .map(|v| v * amp)
                .collect()
        }
    }
}

/// Sampled cone directions pass the descent test, and projections land in the
/// cone.
pub fn cone_descent(seed: u64) -> Check {
    let mut rng = stream(seed, &[4]);
    let atoms = random_atoms(&mut rng);
    let anchor = random_anchor(&mut rng, &atoms);
    let cone = TangentCone::new(atoms, &anchor).map_err(|e| e.to_string())?;
    let h = cone.sample_direction(&mut rng).map_err(|e| e.to_string())?;
    if !cone.descends(&h, 1e-4, 1e-8) {
        return Err(format!(
            "{:?}: sampled direction fails the descent test",
            atoms.family()
        ));
    }
    let g = gaussian_vec(&mut rng, atoms.dim());
    let proj = cone.project(&g);
    let dd = cone.directional_derivative(&proj);
    if dd > 1e-9 * norm2(&g) {
        return Err(format!(
            "{:?}: projection has directional derivative {dd}",
            atoms.family()
        ));
    }
    Ok(())
}

struct DebiasCase {
    gram: DMatrix<f64>,
    omega: DMatrix<f64>,
    truth: DVector<f64>,
    estimate: DVector<f64>,
    atoms: AtomSet,
    design: DesignOperator,
    noise: DVector<f64>,
}

fn debias_case(rng: &mut CaseRng) -> DebiasCase {
    let atoms = random_atoms(rng);
    let p = atoms.dim();
    let n = rng.random_range(1..=2 * p + 2);
    let design = DesignOperator::gaussian_ensemble(n, p, rng.random()).unwrap();
    let gram = design.gram();
    let omega = DMatrix::from_vec(p, p, gaussian_vec(rng, p * p));
    let truth = DVector::from_vec(gaussian_vec(rng, p));
    let estimate = DVector::from_vec(gaussian_vec(rng, p));
    let noise = DVector::from_vec(gaussian_vec(rng, n)) / (n as f64).sqrt();
    DebiasCase {
        gram,
        omega,
        truth,
        estimate,
        atoms,
        design,
        noise,
    }
}

/// `M̃ − M = (ΩXᵀX − I)(M − M̂) + ΩXᵀZ`, with `M̃ = M̂ + ΩXᵀ(Y − XM̂)`.
pub fn decomposition(seed: u64) -> Check {
    let mut rng = stream(seed, &[5]);
    let c = debias_case(&mut rng);
    let x = c.design.matrix();
    let y = x * &c.truth + &c.noise;
    let tilde = &c.estimate + &c.omega * x.tr_mul(&(&y - x * &c.estimate));
    let p = c.truth.len();
    let lhs = &tilde - &c.truth;
    let rhs = (&c.omega * &c.gram - DMatrix::identity(p, p)) * (&c.truth - &c.estimate)
        + &c.omega * x.tr_mul(&c.noise);
    let err = (&lhs - &rhs).amax();
    let scale = 1e-12
        * (1.0 + c.omega.norm())
        * (1.0 + c.gram.norm())
        * (1.0 + y.norm() + c.estimate.norm());
    if err <= scale {
        Ok(())
    } else {
        Err(format!(
            "decomposition mismatch {err:e} (tolerance {scale:e})"
        ))
    }
}

/// `|Δ_i| ≤ ‖XᵀX Ω_{i·}ᵀ − e_i‖_A* · ‖M − M̂‖_A`.
pub fn holder(seed: u64) -> Check {
    let mut rng = stream(seed, &[6]);
    let c = debias_case(&mut rng);
    let p = c.truth.len();
    let diff = &c.truth - &c.estimate;
    let delta = (&c.omega * &c.gram - DMatrix::identity(p, p)) * &diff;
    let a_norm = c.atoms.norm(diff.as_slice()).unwrap();
    for i in 0..p {
        let mut row = &c.gram * c.omega.row(i).transpose();
        row[i] -= 1.0;
        let bound = c.atoms.dual_norm(row.as_slice()).unwrap() * a_norm;
        if delta[i].abs() > bound * (1.0 + 1e-10) + 1e-12 {
            return Err(format!(
                "{:?}: |Δ_{i}| = {} > {bound}",
                c.atoms.family(),
                delta[i].abs()
            ));
        }
    }
    Ok(())
}

pub type Suite = (&'static str, fn(u64) -> Check);

/// All property suites by name.
pub const SUITES: [Suite; 6] = [
    ("duality inequality", duality),
    ("prox optimality", prox_optimality),
    ("adjoint identity", adjoint),
    ("cone-membership descent", cone_descent),
    ("de-biasing decomposition identity", decomposition),
    ("Hölder step", holder),
];
