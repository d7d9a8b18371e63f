//! Feasible regions as intersections of simple convex sets, exact
//! projections for each set, Dykstra's alternating-projection composition,
//! projected supergradient ascent for concave gains, and rounding of
//! relaxed categorical solutions.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gain::GainProblem;
use crate::linalg::{dot, norm2};
use crate::schema::AttributeSchema;

/// One simple convex set with a cheap exact Euclidean projection. Sets
/// act on the full attribute vector; `UnitBall` and `BoxSimplex` read and
/// write only their listed coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ElementarySet {
    /// ‖a_block‖₂ ≤ 1 on the listed coordinates.
    UnitBall { indices: Vec<usize> },
    /// 0 ≤ a_j ≤ 1 on the listed coordinates with Σ a_j = k.
    BoxSimplex { indices: Vec<usize>, k: f64 },
    /// γᵀa ≤ c.
    HalfSpace { gamma: Vec<f64>, c: f64 },
    /// lower ≤ a ≤ upper coordinatewise.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

/// Projection onto the unit ball: radial scaling outside, identity inside.
pub fn project_ball(v: &[f64]) -> Vec<f64> {
    let n = norm2(v);
    if n <= 1.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Euclidean projection onto {0 ≤ a ≤ 1, Σ a = k} by bisection on the
/// shift θ in a_i = clamp(v_i − θ, 0, 1); the coordinate sum is monotone
/// nonincreasing in θ, so bisection finds the unique feasible shift.
pub fn project_box_simplex(v: &[f64], k: f64) -> Vec<f64> {
    let n = v.len();
    debug_assert!((0.0..=n as f64).contains(&k));
    let clamped_sum = |theta: f64| -> f64 {
        v.iter().map(|vi| (vi - theta).clamp(0.0, 1.0)).sum()
    };
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        if hi - lo <= 1e-14 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if clamped_sum(mid) >= k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    v.iter().map(|vi| (vi - theta).clamp(0.0, 1.0)).collect()
}

/// Projection onto {γᵀa ≤ c}: identity if feasible, otherwise the shift
/// along γ landing exactly on the boundary.
pub fn project_halfspace(v: &[f64], gamma: &[f64], c: f64) -> Result<Vec<f64>> {
    let gnorm2 = dot(gamma, gamma);
    if gnorm2 == 0.0 {
        return Err(Error::InvalidInput(
            "halfspace normal must be nonzero".into(),
        ));
    }
    let excess = dot(gamma, v) - c;
    if excess <= 0.0 {
        return Ok(v.to_vec());
    }
    let t = excess / gnorm2;
    Ok(v.iter().zip(gamma).map(|(vi, gi)| vi - t * gi).collect())
}

impl ElementarySet {
    /// Exact Euclidean projection of the full vector onto this set.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            ElementarySet::UnitBall { indices } => {
                let sub: Vec<f64> = indices.iter().map(|&i| v[i]).collect();
                let proj = project_ball(&sub);
                let mut out = v.to_vec();
                for (&i, p) in indices.iter().zip(&proj) {
                    out[i] = *p;
                }
                Ok(out)
            }
            ElementarySet::BoxSimplex { indices, k } => {
                let sub: Vec<f64> = indices.iter().map(|&i| v[i]).collect();
                let proj = project_box_simplex(&sub, *k);
                let mut out = v.to_vec();
                for (&i, p) in indices.iter().zip(&proj) {
                    out[i] = *p;
                }
                Ok(out)
            }
            ElementarySet::HalfSpace { gamma, c } => project_halfspace(v, gamma, *c),
            ElementarySet::Box { lower, upper } => Ok(v
                .iter()
                .enumerate()
                .map(|(i, vi)| vi.clamp(lower[i], upper[i]))
                .collect()),
        }
    }

    /// Euclidean distance from `v` to this set.
    pub fn distance(&self, v: &[f64]) -> Result<f64> {
        let p = self.project(v)?;
        let d2: f64 = v.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(d2.sqrt())
    }
}

/// Intersection of elementary sets over attribute vectors of length `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub m: usize,
    pub sets: Vec<ElementarySet>,
}

impl FeasibleRegion {
    /// The relaxed feasible region induced by a schema: a unit ball per
    /// continuous block, a box-simplex per categorical group, and the
    /// budget halfspace when present.
    pub fn from_schema(schema: &AttributeSchema) -> FeasibleRegion {
        let mut sets = Vec::new();
        for block in &schema.continuous_blocks {
            sets.push(ElementarySet::UnitBall {
                indices: block.clone(),
            });
        }
        for group in &schema.categorical_groups {
            sets.push(ElementarySet::BoxSimplex {
                indices: group.indices.clone(),
                k: group.choose_k as f64,
            });
        }
        if let (Some(costs), Some(budget)) = (&schema.costs, schema.budget) {
            if norm2(costs) > 0.0 {
                sets.push(ElementarySet::HalfSpace {
                    gamma: costs.clone(),
                    c: budget,
                });
            }
        }
        FeasibleRegion { m: schema.m, sets }
    }

    /// The schema's region with every categorical coordinate frozen at
    /// its value in `pinned`: continuous blocks keep their unit balls
    /// and the budget halfspace stays, but the box-simplex sets are
    /// replaced by an equality box on the categorical coordinates.
    /// Re-optimizing over this region polishes the continuous part of a
    /// rounded solution without disturbing the combinatorial part.
    pub fn from_schema_pinned(schema: &AttributeSchema, pinned: &[f64]) -> FeasibleRegion {
        let mut sets = Vec::new();
        for block in &schema.continuous_blocks {
            sets.push(ElementarySet::UnitBall {
                indices: block.clone(),
            });
        }
        let mut lower = vec![f64::NEG_INFINITY; schema.m];
        let mut upper = vec![f64::INFINITY; schema.m];
        for group in &schema.categorical_groups {
            for &j in &group.indices {
                lower[j] = pinned[j];
                upper[j] = pinned[j];
            }
        }
        sets.push(ElementarySet::Box { lower, upper });
        if let (Some(costs), Some(budget)) = (&schema.costs, schema.budget) {
            if norm2(costs) > 0.0 {
                sets.push(ElementarySet::HalfSpace {
                    gamma: costs.clone(),
                    c: budget,
                });
            }
        }
        FeasibleRegion { m: schema.m, sets }
    }

    /// Max Euclidean distance from `v` to any member set (0 iff feasible).
    pub fn residual(&self, v: &[f64]) -> Result<f64> {
        let mut worst = 0.0f64;
        for set in &self.sets {
            worst = worst.max(set.distance(v)?);
        }
        Ok(worst)
    }

    /// Euclidean projection onto the intersection via Dykstra's
    /// alternating projections with per-set correction terms. Converges
    /// for any intersection of closed convex sets; errors if the sweep
    /// budget runs out before the residual and iterate movement drop
    /// below `tol`.
    pub fn project(&self, v: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        if v.len() != self.m {
            return Err(Error::Dimension {
                what: "projection input".into(),
                expected: self.m,
                got: v.len(),
            });
        }
        if self.sets.is_empty() {
            return Ok(v.to_vec());
        }
        if self.sets.len() == 1 {
            return self.sets[0].project(v);
        }
        let mut x = v.to_vec();
        let mut corrections = vec![vec![0.0; self.m]; self.sets.len()];
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            let before = x.clone();
            for (set, z) in self.sets.iter().zip(&mut corrections) {
                let shifted: Vec<f64> = x.iter().zip(z.iter()).map(|(a, b)| a + b).collect();
                let y = set.project(&shifted)?;
                for ((zi, s), yi) in z.iter_mut().zip(&shifted).zip(&y) {
                    *zi = s - yi;
                }
                x = y;
            }
            let moved = x
                .iter()
                .zip(&before)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            residual = self.residual(&x)?;
            if moved <= tol && residual <= tol {
                return Ok(x);
            }
        }
        Err(Error::IterationBudget { residual, tol })
    }

    /// Verifies non-emptiness by projecting the origin and checking
    /// membership; returns the feasible point found.
    pub fn feasible_point(&self) -> Result<Vec<f64>> {
        let x = self
            .project(&vec![0.0; self.m], 1e-9, 50_000)
            .map_err(|e| match e {
                Error::IterationBudget { residual, .. } => Error::Infeasible(format!(
                    "no feasible point found (projection residual {residual:.3e}); \
                     the constraint sets appear to have empty intersection"
                )),
                other => other,
            })?;
        let res = self.residual(&x)?;
        if res > 1e-8 {
            return Err(Error::Infeasible(format!(
                "no feasible point found (residual {res:.3e}); the constraint sets \
                 appear to have empty intersection"
            )));
        }
        Ok(x)
    }
}

/// A concave objective the ascent loop can query.
pub trait ConcaveObjective {
    fn dim(&self) -> usize;
    fn value(&self, a: &[f64]) -> f64;
    fn supergradient(&self, a: &[f64]) -> Vec<f64>;
}

impl ConcaveObjective for GainProblem {
    fn dim(&self) -> usize {
        self.m()
    }

    fn value(&self, a: &[f64]) -> f64 {
        GainProblem::value(self, a)
    }

    fn supergradient(&self, a: &[f64]) -> Vec<f64> {
        GainProblem::supergradient(self, a)
    }
}

/// f(a) = wᵀa; the FUA baseline's objective.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    pub w: Vec<f64>,
}

impl ConcaveObjective for LinearObjective {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn value(&self, a: &[f64]) -> f64 {
        dot(&self.w, a)
    }

    fn supergradient(&self, _a: &[f64]) -> Vec<f64> {
        self.w.clone()
    }
}

/// Projected-supergradient settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Step-size constant; the step at iteration t is
    /// c/(‖g₀‖·√t), scaled by the initial supergradient norm.
    pub step_c: f64,
    pub max_iter: usize,
    /// Dykstra stopping tolerance.
    pub proj_tol: f64,
    pub proj_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step_c: 1.0,
            max_iter: 5000,
            proj_tol: 1e-9,
            proj_max_iter: 20_000,
        }
    }
}

/// Ascent outcome: best feasible iterate and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub a_star: Vec<f64>,
    pub objective: f64,
    /// Running best objective per iteration (monotone nondecreasing).
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Feasibility residual of `a_star`.
    pub residual: f64,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
}

/// Maximizes a concave objective over the region by projected
/// supergradient ascent with step c/√t and running-best tracking. Every
/// iterate is a projection output, so the returned point is feasible up
/// to the projection tolerance.
pub fn maximize(
    obj: &dyn ConcaveObjective,
    region: &FeasibleRegion,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    if obj.dim() != region.m {
        return Err(Error::Dimension {
            what: "objective dimension".into(),
            expected: region.m,
            got: obj.dim(),
        });
    }
    let start = Instant::now();
    let mut warnings = Vec::new();
    let mut a = region.feasible_point()?;
    let g0 = obj.supergradient(&a);
    let g0_norm = norm2(&g0);
    let step_scale = if g0_norm > 1e-12 {
        cfg.step_c / g0_norm
    } else {
        warnings.push(
            "degenerate objective: zero supergradient at the starting point".to_string(),
        );
        cfg.step_c
    };

    let mut best_a = a.clone();
    let mut best_val = obj.value(&a);
    if !best_val.is_finite() {
        return Err(Error::NonConvergence(format!(
            "objective is non-finite at the starting point ({best_val})"
        )));
    }
    let mut trace = Vec::with_capacity(cfg.max_iter);
    for t in 1..=cfg.max_iter {
        let g = obj.supergradient(&a);
        let step = step_scale / (t as f64).sqrt();
        let cand: Vec<f64> = a.iter().zip(&g).map(|(ai, gi)| ai + step * gi).collect();
        a = region.project(&cand, cfg.proj_tol, cfg.proj_max_iter)?;
        let val = obj.value(&a);
        if !val.is_finite() {
            return Err(Error::NonConvergence(format!(
                "objective became non-finite at iteration {t}"
            )));
        }
        if val > best_val {
            best_val = val;
            best_a.copy_from_slice(&a);
        }
        trace.push(best_val);
    }
    let residual = region.residual(&best_a)?;
    Ok(SolveReport {
        a_star: best_a,
        objective: best_val,
        trace,
        iterations: cfg.max_iter,
        residual,
        wall_time_s: start.elapsed().as_secs_f64(),
        warnings,
    })
}

/// Rounds the categorical groups of a relaxed solution to binary: the
/// choose_k largest entries per group become 1 (ties to the lowest
/// index), the rest 0; continuous blocks pass through. If a budget
/// constraint is violated after rounding, set entries are zeroed greedily
/// by smallest value-per-cost w_j/γ_j — never taking a group below one
/// selection — until the budget holds; `w` is the mean-feature vector
/// used for those ratios (required only when a budget is present).
pub fn round_categorical(
    a: &[f64],
    schema: &AttributeSchema,
    w: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if a.len() != schema.m {
        return Err(Error::Dimension {
            what: "attribute vector".into(),
            expected: schema.m,
            got: a.len(),
        });
    }
    let mut out = a.to_vec();
    for group in &schema.categorical_groups {
        let mut order: Vec<usize> = group.indices.clone();
        // largest value first; ties by lowest index
        order.sort_by(|&i, &j| {
            a[j].partial_cmp(&a[i])
                .unwrap()
                .then_with(|| i.cmp(&j))
        });
        for (rank, &i) in order.iter().enumerate() {
            out[i] = if rank < group.choose_k { 1.0 } else { 0.0 };
        }
    }

    let (costs, budget) = match (&schema.costs, schema.budget) {
        (Some(c), Some(b)) => (c, b),
        _ => return Ok(out),
    };
    if dot(costs, &out) <= budget + 1e-12 {
        return Ok(out);
    }
    let w = w.ok_or_else(|| {
        Error::InvalidInput(
            "budget repair needs the mean-feature weights to rank entries".into(),
        )
    })?;
    if w.len() != schema.m {
        return Err(Error::Dimension {
            what: "mean-feature weights".into(),
            expected: schema.m,
            got: w.len(),
        });
    }
    let mut ones_count: Vec<usize> = schema
        .categorical_groups
        .iter()
        .map(|g| g.indices.iter().filter(|&&i| out[i] == 1.0).count())
        .collect();
    while dot(costs, &out) > budget + 1e-12 {
        // candidates: set entries in groups that keep >= 1 selection,
        // with positive cost (zeroing a zero-cost entry cannot help)
        let mut candidate: Option<(usize, usize, f64)> = None; // (index, group, ratio)
        for (gi, group) in schema.categorical_groups.iter().enumerate() {
            if ones_count[gi] <= 1 {
                continue;
            }
            for &i in &group.indices {
                if out[i] == 1.0 && costs[i] > 0.0 {
                    let ratio = w[i] / costs[i];
                    let better = match candidate {
                        None => true,
                        Some((bi, _, br)) => ratio < br || (ratio == br && i < bi),
                    };
                    if better {
                        candidate = Some((i, gi, ratio));
                    }
                }
            }
        }
        match candidate {
            Some((i, gi, _)) => {
                out[i] = 0.0;
                ones_count[gi] -= 1;
            }
            None => {
                return Err(Error::Infeasible(
                    "budget cannot be met after rounding without emptying a \
                     categorical group"
                        .into(),
                ))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain::GainSpec;
    use crate::linalg::Mat;
    use crate::schema::CategoricalGroup;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ball_projection_examples() {
        assert_eq!(project_ball(&[3.0, 4.0]), vec![0.6, 0.8]);
        assert_eq!(project_ball(&[0.1, 0.2]), vec![0.1, 0.2]);
        assert_eq!(project_ball(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn box_simplex_symmetric_case() {
        let p = project_box_simplex(&[0.9, 0.9], 1.0);
        assert!((p[0] - 0.5).abs() < 1e-10);
        assert!((p[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn box_simplex_clamps_dominant_coordinate() {
        let v = [1.5, 0.1];
        let p = project_box_simplex(&v, 1.0);
        assert!((p[0] - 1.0).abs() < 1e-9, "{p:?}");
        assert!(p[1].abs() < 1e-9, "{p:?}");

        // dense search over the feasible segment (a, 1−a), a ∈ [0,1]
        let mut best = (f64::INFINITY, 0.0);
        let mut aa = 0.0;
        while aa <= 1.0 {
            let d = (aa - v[0]).powi(2) + ((1.0 - aa) - v[1]).powi(2);
            if d < best.0 {
                best = (d, aa);
            }
            aa += 1e-4;
        }
        assert!((p[0] - best.1).abs() < 1e-3);
    }

    #[test]
    fn box_simplex_fixes_feasible_points() {
        let v = [0.25, 0.75];
        let p = project_box_simplex(&v, 1.0);
        for (a, b) in v.iter().zip(&p) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn halfspace_projection_examples() {
        let p = project_halfspace(&[1.0, 1.0], &[1.0, 1.0], 1.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        let q = project_halfspace(&[0.2, 0.3], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(q, vec![0.2, 0.3]);
        let r = project_halfspace(&[3.0, 2.0], &[2.0, 1.0], 1.0).unwrap();
        assert!((dot(&[2.0, 1.0], &r) - 1.0).abs() < 1e-12);
        assert!(project_halfspace(&[1.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn single_set_region_projects_exactly() {
        let region = FeasibleRegion {
            m: 2,
            sets: vec![ElementarySet::UnitBall { indices: vec![0, 1] }],
        };
        let p = region.project(&[3.0, 4.0], 1e-9, 100).unwrap();
        assert_eq!(p, vec![0.6, 0.8]);
    }

    #[test]
    fn dykstra_matches_grid_oracle_on_box_halfspace() {
        let region = FeasibleRegion {
            m: 2,
            sets: vec![
                ElementarySet::Box {
                    lower: vec![0.0, 0.0],
                    upper: vec![1.0, 1.0],
                },
                ElementarySet::HalfSpace {
                    gamma: vec![1.0, 1.0],
                    c: 1.0,
                },
            ],
        };
        let v = [2.0, 2.0];
        let p = region.project(&v, 1e-10, 10_000).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-6, "{p:?}");

        // grid-search the constrained nearest point
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let mut x = 0.0;
        while x <= 1.0 {
            let y_max = (1.0_f64 - x).min(1.0);
            let mut y = 0.0;
            while y <= y_max {
                let d = (x - v[0]).powi(2) + (y - v[1]).powi(2);
                if d < best.0 {
                    best = (d, x, y);
                }
                y += 1e-3;
            }
            x += 1e-3;
        }
        assert!((p[0] - best.1).abs() < 2e-3 && (p[1] - best.2).abs() < 2e-3);
    }

    #[test]
    fn dykstra_fixes_feasible_points() {
        let region = FeasibleRegion {
            m: 3,
            sets: vec![
                ElementarySet::UnitBall { indices: vec![0, 1] },
                ElementarySet::BoxSimplex {
                    indices: vec![2],
                    k: 1.0,
                },
            ],
        };
        let v = [0.3, 0.4, 1.0];
        let p = region.project(&v, 1e-10, 10_000).unwrap();
        for (a, b) in v.iter().zip(&p) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn projections_are_idempotent_and_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sets = vec![
            ElementarySet::UnitBall {
                indices: vec![0, 1, 2],
            },
            ElementarySet::BoxSimplex {
                indices: vec![0, 1, 2],
                k: 1.5,
            },
            ElementarySet::HalfSpace {
                gamma: vec![1.0, -2.0, 0.5],
                c: 0.7,
            },
            ElementarySet::Box {
                lower: vec![-0.5, 0.0, -1.0],
                upper: vec![0.5, 1.0, 2.0],
            },
        ];
        for set in &sets {
            for _ in 0..50 {
                let u: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
                let v: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
                let pu = set.project(&u).unwrap();
                let ppu = set.project(&pu).unwrap();
                let drift: f64 = pu
                    .iter()
                    .zip(&ppu)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(drift < 1e-9, "projection not idempotent for {set:?}");
                let pv = set.project(&v).unwrap();
                let before: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
                let after: f64 = pu.iter().zip(&pv).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!(
                    after.sqrt() <= before.sqrt() + 1e-9,
                    "projection expanded distances for {set:?}"
                );
            }
        }
    }

    #[test]
    fn maximize_linear_on_ball_hits_normalized_weights() {
        let w = vec![3.0, 4.0];
        let obj = LinearObjective { w: w.clone() };
        let region = FeasibleRegion {
            m: 2,
            sets: vec![ElementarySet::UnitBall { indices: vec![0, 1] }],
        };
        let report = maximize(&obj, &region, &SolverConfig::default()).unwrap();
        assert!((report.objective - 5.0).abs() < 1e-4, "{}", report.objective);
        assert!((report.a_star[0] - 0.6).abs() < 1e-4);
        assert!((report.a_star[1] - 0.8).abs() < 1e-4);
        assert!(report.residual <= 1e-6);
    }

    #[test]
    fn maximize_linear_on_simplex_picks_argmax_vertex() {
        let obj = LinearObjective {
            w: vec![0.3, 0.9, 0.5],
        };
        let region = FeasibleRegion {
            m: 3,
            sets: vec![ElementarySet::BoxSimplex {
                indices: vec![0, 1, 2],
                k: 1.0,
            }],
        };
        let report = maximize(&obj, &region, &SolverConfig::default()).unwrap();
        assert!((report.objective - 0.9).abs() < 1e-4);
        assert!((report.a_star[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn running_best_trace_is_monotone() {
        let phi = Mat::from_rows(&[
            vec![0.4, -0.3],
            vec![-0.1, 0.8],
            vec![0.9, 0.2],
            vec![-0.5, 0.6],
        ]);
        let p = GainProblem::from_phi(phi, GainSpec::CVaR { beta: 0.3 }).unwrap();
        let region = FeasibleRegion {
            m: 2,
            sets: vec![ElementarySet::UnitBall { indices: vec![0, 1] }],
        };
        let report = maximize(&p, &region, &SolverConfig::default()).unwrap();
        for win in report.trace.windows(2) {
            assert!(win[1] >= win[0]);
        }
    }

    #[test]
    fn zero_objective_returns_feasible_point_with_warning() {
        let obj = LinearObjective { w: vec![0.0, 0.0] };
        let region = FeasibleRegion {
            m: 2,
            sets: vec![ElementarySet::UnitBall { indices: vec![0, 1] }],
        };
        let report = maximize(&obj, &region, &SolverConfig::default()).unwrap();
        assert!(!report.warnings.is_empty());
        assert!(report.objective.abs() < 1e-12);
    }

    /// A separable objective over disjoint blocks must decompose into
    /// independent per-block solves.
    #[test]
    fn separable_blocks_solve_independently() {
        let w = vec![0.5, -0.2, 0.8, 0.1, 0.9];
        let joint_obj = LinearObjective { w: w.clone() };
        let region = FeasibleRegion {
            m: 5,
            sets: vec![
                ElementarySet::UnitBall { indices: vec![0, 1] },
                ElementarySet::BoxSimplex {
                    indices: vec![2, 3, 4],
                    k: 1.0,
                },
            ],
        };
        let joint = maximize(&joint_obj, &region, &SolverConfig::default()).unwrap();

        let ball_obj = LinearObjective {
            w: vec![0.5, -0.2],
        };
        let ball_region = FeasibleRegion {
            m: 2,
            sets: vec![ElementarySet::UnitBall { indices: vec![0, 1] }],
        };
        let ball = maximize(&ball_obj, &ball_region, &SolverConfig::default()).unwrap();

        let simplex_obj = LinearObjective {
            w: vec![0.8, 0.1, 0.9],
        };
        let simplex_region = FeasibleRegion {
            m: 3,
            sets: vec![ElementarySet::BoxSimplex {
                indices: vec![0, 1, 2],
                k: 1.0,
            }],
        };
        let simplex = maximize(&simplex_obj, &simplex_region, &SolverConfig::default()).unwrap();

        assert!(
            (joint.objective - ball.objective - simplex.objective).abs() < 1e-4,
            "joint {} vs {} + {}",
            joint.objective,
            ball.objective,
            simplex.objective
        );
    }

    fn grouped_schema() -> AttributeSchema {
        AttributeSchema::new(
            3,
            vec![],
            vec![CategoricalGroup {
                indices: vec![0, 1, 2],
                choose_k: 1,
            }],
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn rounding_takes_group_argmax() {
        let schema = grouped_schema();
        let out = round_categorical(&[0.7, 0.2, 0.1], &schema, None).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn rounding_breaks_ties_by_lowest_index() {
        let schema = AttributeSchema::new(
            2,
            vec![],
            vec![CategoricalGroup {
                indices: vec![0, 1],
                choose_k: 1,
            }],
            None,
            None,
        )
        .unwrap();
        let out = round_categorical(&[0.5, 0.5], &schema, None).unwrap();
        assert_eq!(out, vec![1.0, 0.0]);
    }

    #[test]
    fn rounding_fixes_binary_feasible_vectors() {
        let schema = grouped_schema();
        let a = [0.0, 1.0, 0.0];
        let out = round_categorical(&a, &schema, None).unwrap();
        assert_eq!(out, a.to_vec());
    }

    #[test]
    fn rounding_leaves_continuous_blocks_alone() {
        let schema = AttributeSchema::new(
            4,
            vec![vec![0, 1]],
            vec![CategoricalGroup {
                indices: vec![2, 3],
                choose_k: 1,
            }],
            None,
            None,
        )
        .unwrap();
        let out = round_categorical(&[0.6, 0.8, 0.3, 0.9], &schema, None).unwrap();
        assert_eq!(out, vec![0.6, 0.8, 0.0, 1.0]);
    }

    #[test]
    fn budget_repair_zeros_cheapest_value_per_cost() {
        // choose-2 group; budget admits only one selection after rounding
        let schema = AttributeSchema::new(
            3,
            vec![],
            vec![CategoricalGroup {
                indices: vec![0, 1, 2],
                choose_k: 2,
            }],
            Some(vec![1.0, 1.0, 1.0]),
            Some(1.0),
        )
        .unwrap();
        let w = [0.9, 0.1, 0.4];
        let out = round_categorical(&[0.8, 0.7, 0.1], &schema, Some(&w)).unwrap();
        // rounding picks indices 0 and 1; the smaller w/γ ratio (index 1)
        // is zeroed to meet the budget
        assert_eq!(out, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn budget_repair_never_empties_a_group() {
        let schema = AttributeSchema::new(
            2,
            vec![],
            vec![CategoricalGroup {
                indices: vec![0, 1],
                choose_k: 1,
            }],
            Some(vec![1.0, 1.0]),
            Some(0.5),
        )
        .unwrap();
        let err = round_categorical(&[0.9, 0.1], &schema, Some(&[1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }
}
