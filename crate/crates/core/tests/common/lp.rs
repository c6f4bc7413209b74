//! Dense two-phase simplex (Bland's rule) used as an independent oracle for the
//! ℓ1 Dantzig program, which is a linear program.

const EPS: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpError {
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// rows × (cols + 1); last column is the right-hand side
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let pv = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= pv;
        }
        let row = self.t[r].clone();
        for (i, other) in self.t.iter_mut().enumerate() {
            if i != r {
                let f = other[c];
                if f != 0.0 {
                    for (o, v) in other.iter_mut().zip(&row) {
                        *o -= f * v;
                    }
                }
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost · x` over the current feasible basis restricted to
    /// columns in `allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<(), LpError> {
        loop {
            // reduced costs
            let m = self.t.len();
            let mut entering = None;
            for j in 0..self.cols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let rc = cost[j]
                    - (0..m)
                        .map(|i| cost[self.basis[i]] * self.t[i][j])
                        .sum::<f64>();
                if rc < -EPS {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else {
                return Ok(());
            };
            let mut best: Option<(f64, usize)> = None;
            for i in 0..m {
                let a = self.t[i][c];
                if a > EPS {
                    let ratio = self.t[i][self.cols] / a;
                    match best {
                        None => best = Some((ratio, i)),
                        Some((r, bi)) => {
                            if ratio < r - EPS
                                || (ratio <= r + EPS && self.basis[i] < self.basis[bi])
                            {
                                best = Some((ratio, i));
                            }
                        }
                    }
                }
            }
            let Some((_, r)) = best else {
                return Err(LpError::Unbounded);
            };
            self.pivot(r, c);
        }
    }
}

/// `min cᵀx` subject to `A x ≤ b`, `x ≥ 0`.
pub fn solve_lp(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution, LpError> {
    let m = a.len();
    let n = c.len();
    // columns: x (n), slacks (m), artificials (m)
    let cols = n + 2 * m;
    let mut t = vec![vec![0.0; cols + 1]; m];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[i][j];
        }
        t[i][n + i] = sign;
        t[i][n + m + i] = 1.0;
        t[i][cols] = sign * b[i];
    }
    let mut tab = Tableau {
        t,
        basis: (0..m).map(|i| n + m + i).collect(),
        cols,
    };
    let mut phase1 = vec![0.0; cols];
    for v in phase1.iter_mut().skip(n + m) {
        *v = 1.0;
    }
    tab.optimize(&phase1, &vec![true; cols])?;
    let infeas: f64 = (0..m)
        .filter(|&i| tab.basis[i] >= n + m)
        .map(|i| tab.t[i][cols])
        .sum();
    if infeas > 1e-8 {
        return Err(LpError::Infeasible);
    }
    // drive zero-level artificials out of the basis
    for i in 0..m {
        if tab.basis[i] >= n + m {
            if let Some(j) =
                (0..n + m).find(|&j| tab.t[i][j].abs() > 1e-9 && !tab.basis.contains(&j))
            {
                tab.pivot(i, j);
            }
        }
    }
    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(c);
    let allowed: Vec<bool> = (0..cols).map(|j| j < n + m).collect();
    tab.optimize(&cost, &allowed)?;
    let mut x = vec![0.0; n];
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.t[i][cols];
        }
    }
    let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(LpSolution { x, objective })
}

/// ℓ1 Dantzig program `min ‖u‖₁ s.t. ‖b − G u‖_∞ ≤ λ` via `u = u⁺ − u⁻`.
pub struct DantzigLp {
    pub gram: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub lambda: f64,
}

impl DantzigLp {
    fn constraints(&self, extra_objective_cap: Option<f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
        let p = self.b.len();
        let mut a = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..p {
            // G u ≤ b + λ
            let mut row: Vec<f64> = self.gram[i].clone();
            row.extend(self.gram[i].iter().map(|v| -v));
            a.push(row.clone());
            rhs.push(self.b[i] + self.lambda);
            // −G u ≤ λ − b
            a.push(row.iter().map(|v| -v).collect());
            rhs.push(self.lambda - self.b[i]);
        }
        if let Some(cap) = extra_objective_cap {
            a.push(vec![1.0; 2 * p]);
            rhs.push(cap);
        }
        (a, rhs)
    }

    pub fn solve(&self) -> Result<(Vec<f64>, f64), LpError> {
        let p = self.b.len();
        let (a, rhs) = self.constraints(None);
        let sol = solve_lp(&vec![1.0; 2 * p], &a, &rhs)?;
        let u = (0..p).map(|i| sol.x[i] - sol.x[p + i]).collect();
        Ok((u, sol.objective))
    }

    /// Whether every coordinate of the optimal solution is pinned down:
    /// minimizes and maximizes each `u_j` over the optimal face.
    pub fn is_unique(&self, optimum: f64) -> Result<bool, LpError> {
        let p = self.b.len();
        let (a, rhs) = self.constraints(Some(optimum + 1e-9 * optimum.max(1.0)));
        for j in 0..p {
            let mut c = vec![0.0; 2 * p];
            c[j] = 1.0;
            c[p + j] = -1.0;
            let lo = solve_lp(&c, &a, &rhs)?.objective;
            let neg: Vec<f64> = c.iter().map(|v| -v).collect();
            let hi = -solve_lp(&neg, &a, &rhs)?.objective;
            if hi - lo > 1e-6 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
