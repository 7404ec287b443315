//! Dense two-phase primal simplex with Bland's rule.

use crate::{Error, Result};

const EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;

/// `max c·x  s.t.  A x = b, x >= 0`, dense.
#[derive(Debug, Clone)]
pub struct StandardLp {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl StandardLp {
    pub fn rows(&self) -> usize {
        self.a.len()
    }

    pub fn cols(&self) -> usize {
        self.c.len()
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    /// Basic column of each row. Values `>= cols` are artificial columns
    /// left on redundant rows.
    pub basis: Vec<usize>,
    pub value: f64,
    /// Objective after each phase-two pivot.
    pub trace: Vec<f64>,
    pub pivots: usize,
}

struct Tableau {
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self) -> usize {
        self.n + self.t.len()
    }

    fn pivot(&mut self, r: usize, j: usize, d: &mut [f64]) {
        let rhs = self.rhs();
        let p = self.t[r][j];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let prow = self.t[r].clone();
        for (k, row) in self.t.iter_mut().enumerate() {
            if k == r {
                continue;
            }
            let f = row[j];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                row[j] = 0.0;
            }
        }
        let f = d[j];
        if f != 0.0 {
            for (v, pv) in d.iter_mut().zip(&prow).take(rhs) {
                *v -= f * pv;
            }
            d[j] = 0.0;
        }
        self.basis[r] = j;
        self.pivots += 1;
    }

    /// Runs Bland's rule on reduced costs `d` over columns `< limit`.
    fn optimize(&mut self, d: &mut [f64], limit: usize, cost: &dyn Fn(usize) -> f64, trace: Option<&mut Vec<f64>>) -> Result<()> {
        let rhs = self.rhs();
        let mut trace = trace;
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::CertificationFailure(format!("simplex exceeded {MAX_PIVOTS} pivots")));
            }
            let Some(j) = (0..limit).find(|&j| d[j] > EPS) else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for (r, row) in self.t.iter().enumerate() {
                if row[j] > EPS {
                    let ratio = row[rhs] / row[j];
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bv)) => {
                            if ratio < bv - 1e-12 || (ratio <= bv + 1e-12 && self.basis[r] < self.basis[br]) {
                                Some((r, ratio))
                            } else {
                                Some((br, bv))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Err(Error::UnboundedLp);
            };
            self.pivot(r, j, d);
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(self.objective(cost));
            }
        }
    }

    fn objective(&self, cost: &dyn Fn(usize) -> f64) -> f64 {
        let rhs = self.rhs();
        self.t.iter().zip(&self.basis).map(|(row, &j)| cost(j) * row[rhs]).sum()
    }
}

pub fn maximize(lp: &StandardLp) -> Result<SimplexResult> {
    let (m, n) = (lp.rows(), lp.cols());
    let width = n + m + 1;
    let mut t = Vec::with_capacity(m);
    for (r, (row, &b)) in lp.a.iter().zip(&lp.b).enumerate() {
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        let mut full = vec![0.0; width];
        for (v, a) in full.iter_mut().zip(row) {
            *v = sign * a;
        }
        full[n + r] = 1.0;
        full[n + m] = sign * b;
        t.push(full);
    }
    let mut tab = Tableau { t, basis: (n..n + m).collect(), n, pivots: 0 };

    // Phase one: maximize -Σ artificials.
    let mut d = vec![0.0; width];
    for row in &tab.t {
        for j in 0..n {
            d[j] += row[j];
        }
    }
    let phase1_cost = |j: usize| if j >= n { -1.0 } else { 0.0 };
    tab.optimize(&mut d, n, &phase1_cost, None)?;
    let infeasibility = -tab.objective(&phase1_cost);
    if infeasibility > 1e-7 {
        return Err(Error::Infeasible(infeasibility));
    }

    // Drive remaining artificials out where possible.
    for r in 0..m {
        if tab.basis[r] >= n {
            if let Some(j) = (0..n).find(|&j| tab.t[r][j].abs() > EPS) {
                tab.pivot(r, j, &mut d);
            }
        }
    }

    let cost = |j: usize| if j < n { lp.c[j] } else { 0.0 };
    let mut d = vec![0.0; width];
    for j in 0..n {
        d[j] = lp.c[j] - tab.t.iter().zip(&tab.basis).map(|(row, &bj)| cost(bj) * row[j]).sum::<f64>();
    }
    let mut trace = vec![tab.objective(&cost)];
    tab.optimize(&mut d, n, &cost, Some(&mut trace))?;

    let rhs = tab.rhs();
    let mut x = vec![0.0; n];
    for (row, &j) in tab.t.iter().zip(&tab.basis) {
        if j < n {
            x[j] = row[rhs].max(0.0);
        }
    }
    let value = lp.c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(SimplexResult { x, basis: tab.basis, value, trace, pivots: tab.pivots })
}

/// Solves the square system `M z = v` by Gaussian elimination with partial
/// pivoting; `None` if numerically singular.
pub fn solve_dense(mut mat: Vec<Vec<f64>>, mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = mat.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| mat[i][k].abs().total_cmp(&mat[j][k].abs()))?;
        if mat[p][k].abs() < 1e-12 {
            return None;
        }
        mat.swap(k, p);
        v.swap(k, p);
        for i in k + 1..n {
            let f = mat[i][k] / mat[k][k];
            if f != 0.0 {
                for j in k..n {
                    mat[i][j] -= f * mat[k][j];
                }
                v[i] -= f * v[k];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| mat[i][j] * z[j]).sum();
        z[i] = (v[i] - s) / mat[i][i];
    }
    Some(z)
}
