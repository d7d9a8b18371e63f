//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Solves `maximize cᵀx subject to Gx ≤ h, x ≥ 0` on a full tableau.
//! Rows with negative right-hand sides get artificial variables and a
//! phase-1 feasibility solve; phase 2 then maximizes the real objective.
//! Everything is dense and recomputes reduced costs from scratch each
//! pivot — the instances this crate feeds it are tiny, and exactness is
//! worth more here than speed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Outcome classification of an LP solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// `maximize cᵀx subject to g·x ≤ h, x ≥ 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpInstance {
    pub c: Vec<f64>,
    pub g: Mat,
    pub h: Vec<f64>,
}

/// Solver output. `x` and `objective` are meaningful only when the status
/// is `Optimal`; they are zeroed otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

/// Hard cap on pivots. Bland's rule rules out cycling, so hitting this
/// means the tableau has gone numerically bad.
const MAX_PIVOTS: usize = 50_000;

/// Pivot-element threshold below which a column entry is treated as zero.
const PIVOT_TOL: f64 = 1e-9;

struct Tableau {
    /// `rows` constraint rows, each `total + 1` wide (last entry = rhs).
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n: usize,
    num_slack: usize,
    total: usize,
}

impl Tableau {
    fn is_artificial(&self, col: usize) -> bool {
        col >= self.n + self.num_slack
    }

    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.total]
    }

    /// Reduced costs r_j = c_B·(B⁻¹A)_j − c_j and objective value under
    /// the padded cost vector `c_full` (length `total`).
    fn reduced_costs(&self, c_full: &[f64]) -> (Vec<f64>, f64) {
        let mut r = vec![0.0; self.total];
        let mut z = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let cb = c_full[self.basis[i]];
            if cb != 0.0 {
                for (j, rj) in r.iter_mut().enumerate() {
                    *rj += cb * row[j];
                }
                z += cb * row[self.total];
            }
        }
        for (j, rj) in r.iter_mut().enumerate() {
            *rj -= c_full[j];
        }
        (r, z)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= piv;
        }
        for i in 0..self.rows.len() {
            if i == row {
                continue;
            }
            let factor = self.rows[i][col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..=self.total {
                let delta = factor * self.rows[row][j];
                self.rows[i][j] -= delta;
            }
            // Kill residual round-off in the pivot column outright.
            self.rows[i][col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Bland's rule simplex loop under `c_full`, skipping `banned`
    /// columns as entering candidates. Returns Ok(true) on optimality and
    /// Ok(false) on unboundedness.
    fn maximize(&mut self, c_full: &[f64], banned: &[bool], tol: f64) -> Result<bool> {
        for _ in 0..MAX_PIVOTS {
            let (r, _) = self.reduced_costs(c_full);
            let entering = (0..self.total).find(|&j| !banned[j] && r[j] < -tol);
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let coef = self.rows[i][col];
                if coef <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i) / coef;
                let better = match leave {
                    None => true,
                    Some((best_row, best_ratio)) => {
                        ratio < best_ratio - 1e-12
                            || (ratio <= best_ratio + 1e-12
                                && self.basis[i] < self.basis[best_row])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
            match leave {
                Some((row, _)) => self.pivot(row, col),
                None => return Ok(false),
            }
        }
        Err(Error::NonConvergence(format!(
            "simplex exceeded the pivot budget of {MAX_PIVOTS}"
        )))
    }
}

/// Solve the LP with a two-phase dense simplex. `tol` is the reduced-cost
/// threshold for declaring optimality (1e-9 is a sound default).
pub fn solve_lp(lp: &LpInstance, tol: f64) -> Result<LpSolution> {
    let n = lp.c.len();
    let m = lp.h.len();
    if lp.g.rows != m {
        return Err(Error::Dimension {
            what: "LP constraint matrix rows".into(),
            expected: m,
            got: lp.g.rows,
        });
    }
    if lp.g.cols != n {
        return Err(Error::Dimension {
            what: "LP constraint matrix columns".into(),
            expected: n,
            got: lp.g.cols,
        });
    }
    let finite = lp.c.iter().chain(lp.h.iter()).chain(lp.g.data.iter());
    if finite.clone().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("LP data must be finite".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("LP tolerance must be positive".into()));
    }

    let neg_rows: Vec<usize> = (0..m).filter(|&i| lp.h[i] < 0.0).collect();
    let num_art = neg_rows.len();
    let total = n + m + num_art;
    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut art_seen = 0usize;
    for i in 0..m {
        let mut row = vec![0.0; total + 1];
        let flip = if lp.h[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            row[j] = flip * lp.g.at(i, j);
        }
        row[n + i] = flip;
        row[total] = flip * lp.h[i];
        if lp.h[i] < 0.0 {
            let art_col = n + m + art_seen;
            row[art_col] = 1.0;
            basis.push(art_col);
            art_seen += 1;
        } else {
            basis.push(n + i);
        }
        rows.push(row);
    }
    let mut tab = Tableau {
        rows,
        basis,
        n,
        num_slack: m,
        total,
    };

    let mut banned = vec![false; total];

    if num_art > 0 {
        let mut c1 = vec![0.0; total];
        for j in n + m..total {
            c1[j] = -1.0;
        }
        if !tab.maximize(&c1, &banned, tol)? {
            return Err(Error::NonConvergence(
                "phase-1 simplex reported an unbounded objective".into(),
            ));
        }
        let (_, z1) = tab.reduced_costs(&c1);
        if z1 < -tol.max(1e-7) {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                objective: 0.0,
            });
        }
        // Drive still-basic artificials out where a real pivot exists;
        // rows with none are redundant and keep a zero-valued artificial.
        for i in 0..m {
            if !tab.is_artificial(tab.basis[i]) {
                continue;
            }
            let col = (0..n + m).find(|&j| tab.rows[i][j].abs() > PIVOT_TOL);
            if let Some(col) = col {
                tab.pivot(i, col);
            }
        }
        for j in n + m..total {
            banned[j] = true;
        }
    }

    let mut c_full = vec![0.0; total];
    c_full[..n].copy_from_slice(&lp.c);
    if !tab.maximize(&c_full, &banned, tol)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![0.0; n],
            objective: 0.0,
        });
    }

    let mut x = vec![0.0; n];
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.rhs(i);
        }
    }
    for xi in x.iter_mut() {
        if *xi < 0.0 && *xi > -1e-9 {
            *xi = 0.0;
        }
    }
    for i in 0..m {
        let lhs: f64 = (0..n).map(|j| lp.g.at(i, j) * x[j]).sum();
        if lhs > lp.h[i] + 1e-8 {
            return Err(Error::NonConvergence(format!(
                "simplex returned a point violating row {i} by {:.3e}",
                lhs - lp.h[i]
            )));
        }
    }
    let objective = lp.c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
    })
}
