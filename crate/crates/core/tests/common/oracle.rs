//! Random small ℓ1 Dantzig instances checked against the simplex oracle.

use geoinfer::linalg::{norm2, norm_inf, sub};
use geoinfer::model::{simulate_observation, DesignOperator, GroundTruth, Shape};
use geoinfer::rng::stream;
use geoinfer::solver::{solve_constrained, SolverConfig};
use geoinfer::AtomSet;
use rand::Rng;

use super::lp::DantzigLp;

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub n: usize,
    pub p: usize,
    pub lambda: f64,
    pub lp_objective: f64,
    pub solver_objective: f64,
    pub objective_rel_err: f64,
    pub unique: bool,
    pub solution_err: f64,
    pub converged: bool,
}

impl OracleOutcome {
    pub fn passes(&self) -> bool {
        self.converged
            && self.objective_rel_err <= 1e-4
            && (!self.unique || self.solution_err <= 1e-4)
    }
}

pub fn oracle_case(seed: u64) -> OracleOutcome {
    let mut rng = stream(seed, &[0]);
    let p: usize = rng.random_range(2..=6);
    let n = rng.random_range(p.saturating_sub(2).max(2)..=3 * p);
    let s = rng.random_range(1..=p.min(2));
    let truth = GroundTruth::sparse(p, s, &mut rng).unwrap();
    let x = DesignOperator::gaussian_ensemble(n, p, rng.random()).unwrap();
    let problem = simulate_observation(&x, &truth, Shape::Vector(p), 0.5, rng.random()).unwrap();
    let gram = x.gram();
    let b = x.adjoint(&problem.observation).unwrap();
    let lambda = rng.random_range(0.05..0.7) * norm_inf(&b);

    let lp = DantzigLp {
        gram: (0..p)
            .map(|i| gram.row(i).iter().copied().collect())
            .collect(),
        b: b.clone(),
        lambda,
    };
    let (u, lp_objective) = lp
        .solve()
        .expect("Dantzig LP is always feasible and bounded");
    let unique = lp.is_unique(lp_objective).unwrap();
    let atoms = AtomSet::sparse(p);
    let est = solve_constrained(&problem, &atoms, lambda, &SolverConfig::default()).unwrap();
    OracleOutcome {
        n,
        p,
        lambda,
        lp_objective,
        solver_objective: est.atomic_norm_value,
        objective_rel_err: (est.atomic_norm_value - lp_objective).abs() / lp_objective.max(1e-12),
        unique,
        solution_err: norm2(&sub(&est.estimate, &u)),
        converged: est.converged,
    }
}
