//! Non-negative attribute optimization (NAO) and packing integer programs.
//!
//! A NAO instance maximizes a non-negative linear objective over mixed
//! binary/continuous variables under non-negative inequality rows
//! `bᵀa ≤ d` and equality rows `cᵀa = e`. Packing integer programs (PIP)
//! reduce to the pure-binary case by reading each packing row as an
//! inequality row, which preserves the optimal value exactly.
//!
//! `approx_nao` is the randomized LP-rounding scheme: solve the LP
//! relaxation, fix the continuous part, round each binary coordinate on
//! with half its relaxed value as the probability, zero rounded entries
//! out of violated rows (largest relaxed value first), then greedily
//! raise binaries by weight to restore the relaxed equalities. For
//! packing instances with column sparsity `S` the best of several draws
//! lands within a `1/(8S)` factor of the optimum with high probability,
//! and the LP optimum is returned as an upper-bound certificate.

mod lp;

pub use lp::{solve_lp, LpInstance, LpSolution, LpStatus};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};

/// One linear row: `coeffs·a (≤ or =) rhs` depending on which list it
/// sits in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

/// Packing integer program: maximize `wᵀa` over `a ∈ {0,1}ⁿ` subject to
/// `A·a ≤ B` with all data non-negative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipInstance {
    /// Constraint rows, each of length n.
    pub a: Vec<Vec<f64>>,
    /// Row capacities, one per constraint row.
    pub b: Vec<f64>,
    /// Objective weights, length n.
    pub w: Vec<f64>,
}

impl PipInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.w.len();
        if self.a.len() != self.b.len() {
            return Err(Error::Dimension {
                what: "PIP capacity vector".into(),
                expected: self.a.len(),
                got: self.b.len(),
            });
        }
        for (i, row) in self.a.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension {
                    what: format!("PIP constraint row {i}"),
                    expected: n,
                    got: row.len(),
                });
            }
        }
        let all = self
            .w
            .iter()
            .chain(self.b.iter())
            .chain(self.a.iter().flatten());
        for v in all {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidInput(
                    "PIP data must be non-negative and finite".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Mixed binary/continuous non-negative attribute optimization instance:
/// maximize `wᵀa` subject to the inequality rows, the equality rows,
/// `a_i ∈ {0,1}` where `binary[i]`, and `a_i ≥ 0` elsewhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaoInstance {
    pub w: Vec<f64>,
    #[serde(default)]
    pub ineq: Vec<LinearRow>,
    #[serde(default)]
    pub eq: Vec<LinearRow>,
    pub binary: Vec<bool>,
}

impl NaoInstance {
    pub fn num_vars(&self) -> usize {
        self.w.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.w.len();
        if self.binary.len() != n {
            return Err(Error::Dimension {
                what: "NAO binary index mask".into(),
                expected: n,
                got: self.binary.len(),
            });
        }
        for w in &self.w {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidInput(
                    "NAO objective weights must be non-negative and finite".into(),
                ));
            }
        }
        for (kind, rows) in [("inequality", &self.ineq), ("equality", &self.eq)] {
            for (j, row) in rows.iter().enumerate() {
                if row.coeffs.len() != n {
                    return Err(Error::Dimension {
                        what: format!("NAO {kind} row {j}"),
                        expected: n,
                        got: row.coeffs.len(),
                    });
                }
                let ok = row.rhs.is_finite()
                    && row.rhs >= 0.0
                    && row.coeffs.iter().all(|c| c.is_finite() && *c >= 0.0);
                if !ok {
                    return Err(Error::InvalidInput(format!(
                        "NAO {kind} row {j} must be non-negative and finite"
                    )));
                }
            }
        }
        Ok(())
    }

    fn binaries(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_vars()).filter(|&i| self.binary[i])
    }
}

/// Output of `approx_nao`. `certificate` is the LP-relaxation optimum, an
/// upper bound on every feasible objective. `equalities_restored` reports
/// whether the greedy raise step brought every equality row back to
/// exact equality; when false the returned point satisfies each equality
/// only as `≤`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaoSolution {
    pub a: Vec<f64>,
    pub objective: f64,
    pub certificate: f64,
    pub equalities_restored: bool,
}

/// Read each packing row as a NAO inequality row. The resulting binary
/// instance has the same feasible set, hence the same optimal value.
pub fn pip_to_nao(p: &PipInstance) -> Result<NaoInstance> {
    p.validate()?;
    let ineq = p
        .a
        .iter()
        .zip(&p.b)
        .map(|(row, cap)| LinearRow {
            coeffs: row.clone(),
            rhs: *cap,
        })
        .collect();
    Ok(NaoInstance {
        w: p.w.clone(),
        ineq,
        eq: Vec::new(),
        binary: vec![true; p.w.len()],
    })
}

/// Column sparsity S: the largest number of constraint rows (inequality
/// and equality together) that touch any single variable with a strictly
/// positive coefficient.
pub fn column_sparsity(inst: &NaoInstance) -> usize {
    let n = inst.num_vars();
    let mut best = 0usize;
    for i in 0..n {
        let count = inst
            .ineq
            .iter()
            .chain(&inst.eq)
            .filter(|row| row.coeffs[i] > 0.0)
            .count();
        best = best.max(count);
    }
    best
}

const ROW_TOL: f64 = 1e-9;

/// Upper-side violation check, used for inequality rows directly and for
/// equality rows in their relaxed `≤` form.
fn exceeds_rhs(row: &LinearRow, a: &[f64]) -> bool {
    dot(&row.coeffs, a) > row.rhs + ROW_TOL
}

fn equalities_met(inst: &NaoInstance, a: &[f64]) -> bool {
    inst.eq.iter().all(|row| {
        let tol = 1e-7 * row.rhs.abs().max(1.0);
        (dot(&row.coeffs, a) - row.rhs).abs() <= tol
    })
}

/// Build the LP relaxation of the full instance: equalities become a ≤/≥
/// pair and binary variables get unit caps.
fn relaxation(inst: &NaoInstance) -> LpInstance {
    let n = inst.num_vars();
    let num_caps = inst.binaries().count();
    let rows = inst.ineq.len() + 2 * inst.eq.len() + num_caps;
    let mut g = Mat::zeros(rows, n);
    let mut h = vec![0.0; rows];
    let mut r = 0usize;
    for row in &inst.ineq {
        for j in 0..n {
            *g.at_mut(r, j) = row.coeffs[j];
        }
        h[r] = row.rhs;
        r += 1;
    }
    for row in &inst.eq {
        for j in 0..n {
            *g.at_mut(r, j) = row.coeffs[j];
            *g.at_mut(r + 1, j) = -row.coeffs[j];
        }
        h[r] = row.rhs;
        h[r + 1] = -row.rhs;
        r += 2;
    }
    for i in inst.binaries() {
        *g.at_mut(r, i) = 1.0;
        h[r] = 1.0;
        r += 1;
    }
    LpInstance {
        c: inst.w.clone(),
        g,
        h,
    }
}

/// Randomized LP-rounding approximation for NAO. `retries` independent
/// rounding draws are made from seeds `seed, seed+1, …` and the best
/// result by (equalities restored, objective) is returned.
pub fn approx_nao(inst: &NaoInstance, seed: u64, retries: usize) -> Result<NaoSolution> {
    inst.validate()?;
    if retries == 0 {
        return Err(Error::InvalidInput(
            "approx_nao needs at least one rounding draw".into(),
        ));
    }
    let relaxed = solve_lp(&relaxation(inst), 1e-9)?;
    match relaxed.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::LpInfeasible),
        LpStatus::Unbounded => return Err(Error::LpUnbounded),
    }
    let fractional = relaxed.x;
    let certificate = relaxed.objective;

    // Continuous entries are fixed at their LP values; only binaries move.
    let mut base = fractional.clone();
    let binaries: Vec<usize> = inst.binaries().collect();
    for &i in &binaries {
        base[i] = 0.0;
    }
    if binaries.is_empty() {
        return Ok(NaoSolution {
            a: fractional,
            objective: certificate,
            certificate,
            equalities_restored: true,
        });
    }

    // Greedy raise order: largest weight first, ties by index.
    let mut raise_order = binaries.clone();
    raise_order.sort_by(|&p, &q| {
        inst.w[q]
            .partial_cmp(&inst.w[p])
            .unwrap()
            .then(p.cmp(&q))
    });

    let mut best: Option<NaoSolution> = None;
    for r in 0..retries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let mut a = base.clone();
        for &i in &binaries {
            if rng.random::<f64>() < fractional[i] / 2.0 {
                a[i] = 1.0;
            }
        }

        // Repair: drop the largest-relaxed-value binary that feeds a
        // violated row until nothing is violated. Zeroing every binary
        // always succeeds because the continuous part is LP-feasible.
        loop {
            let violated: Vec<&LinearRow> = inst
                .ineq
                .iter()
                .filter(|row| exceeds_rhs(row, &a))
                .chain(inst.eq.iter().filter(|row| exceeds_rhs(row, &a)))
                .collect();
            if violated.is_empty() {
                break;
            }
            let candidate = binaries
                .iter()
                .copied()
                .filter(|&i| a[i] == 1.0 && violated.iter().any(|row| row.coeffs[i] > 0.0))
                .max_by(|&p, &q| {
                    fractional[p]
                        .partial_cmp(&fractional[q])
                        .unwrap()
                        .then(q.cmp(&p))
                });
            match candidate {
                Some(i) => a[i] = 0.0,
                None => break,
            }
        }

        // Raise by weight wherever no inequality breaks and no equality
        // overshoots; with non-negative rows a rejected raise stays
        // rejected, so a single pass settles.
        for &i in &raise_order {
            if a[i] == 1.0 {
                continue;
            }
            a[i] = 1.0;
            let ok = inst.ineq.iter().all(|row| !exceeds_rhs(row, &a))
                && inst.eq.iter().all(|row| !exceeds_rhs(row, &a));
            if !ok {
                a[i] = 0.0;
            }
        }

        let candidate = NaoSolution {
            objective: dot(&inst.w, &a),
            certificate,
            equalities_restored: equalities_met(inst, &a),
            a,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                (candidate.equalities_restored, candidate.objective)
                    > (b.equalities_restored, b.objective)
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    Ok(best.expect("retries >= 1 always yields a candidate"))
}

/// Exhaustive oracle: enumerate all binary patterns and grid the
/// continuous coordinates with pitch `grid`. Continuous upper bounds are
/// inferred from the constraint rows, so every continuous variable with
/// positive weight must be capped by some row. Equality rows are matched
/// within a tolerance that grows with the grid pitch whenever continuous
/// variables participate in them.
pub fn brute_force_nao(inst: &NaoInstance, grid: f64) -> Result<(Vec<f64>, f64)> {
    inst.validate()?;
    if !(grid > 0.0) {
        return Err(Error::InvalidInput("grid step must be positive".into()));
    }
    let binaries: Vec<usize> = inst.binaries().collect();
    let continuous: Vec<usize> = (0..inst.num_vars()).filter(|&i| !inst.binary[i]).collect();
    if binaries.len() > 15 {
        return Err(Error::InvalidInput(format!(
            "brute force handles at most 15 binary variables, got {}",
            binaries.len()
        )));
    }
    if continuous.len() > 2 {
        return Err(Error::InvalidInput(format!(
            "brute force handles at most 2 continuous variables, got {}",
            continuous.len()
        )));
    }

    let mut grids: Vec<Vec<f64>> = Vec::with_capacity(continuous.len());
    let mut eq_touched = false;
    for &i in &continuous {
        let mut upper = f64::INFINITY;
        for row in inst.ineq.iter().chain(&inst.eq) {
            if row.coeffs[i] > 0.0 {
                upper = upper.min(row.rhs / row.coeffs[i]);
            }
        }
        if inst.eq.iter().any(|row| row.coeffs[i] > 0.0) {
            eq_touched = true;
        }
        if !upper.is_finite() {
            if inst.w[i] > 0.0 {
                return Err(Error::InvalidInput(format!(
                    "continuous variable {i} is unbounded; brute force needs capped variables"
                )));
            }
            upper = 0.0;
        }
        let mut values = Vec::new();
        let mut v = 0.0;
        while v <= upper + 1e-12 {
            values.push(v.min(upper));
            v += grid;
        }
        if values.last().is_none_or(|l| (l - upper).abs() > 1e-12) {
            values.push(upper);
        }
        grids.push(values);
    }
    let eq_tol = if eq_touched { grid + 1e-9 } else { 1e-9 };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut a = vec![0.0; inst.num_vars()];
    for pattern in 0u32..(1u32 << binaries.len()) {
        for (bit, &i) in binaries.iter().enumerate() {
            a[i] = f64::from((pattern >> bit) & 1);
        }
        let mut cont_idx = vec![0usize; continuous.len()];
        loop {
            for (k, &i) in continuous.iter().enumerate() {
                a[i] = grids[k][cont_idx[k]];
            }
            let feasible = inst.ineq.iter().all(|row| !exceeds_rhs(row, &a))
                && inst
                    .eq
                    .iter()
                    .all(|row| (dot(&row.coeffs, &a) - row.rhs).abs() <= eq_tol);
            if feasible {
                let obj = dot(&inst.w, &a);
                if best.as_ref().is_none_or(|(_, b)| obj > *b) {
                    best = Some((a.clone(), obj));
                }
            }
            // Odometer over the continuous grids.
            let mut k = 0;
            loop {
                if k == continuous.len() {
                    break;
                }
                cont_idx[k] += 1;
                if cont_idx[k] < grids[k].len() {
                    break;
                }
                cont_idx[k] = 0;
                k += 1;
            }
            if k == continuous.len() {
                break;
            }
        }
    }
    best.ok_or_else(|| Error::Infeasible("no feasible point on the brute-force grid".into()))
}
