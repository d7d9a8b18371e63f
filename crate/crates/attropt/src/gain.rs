//! Aggregate gain functionals over a target feature set.
//!
//! A linear-in-attribute model gives per-feature responses
//! h_i(a) = aᵀφ(x_i); the gain is f(a) = F(h(a)) with F either the mean
//! response or CVaR_β — the average of the worst β-fraction of responses.
//! Both functionals are concave in the response vector and the responses
//! are linear in `a`, so f is concave; the solver consumes values and
//! supergradients from here.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::predict::PredictionModel;
use crate::schema::TargetFeatureSet;

/// Which aggregate functional to apply to the response vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GainSpec {
    Mean,
    /// Average of the worst β-fraction of responses, 0 < β < 1.
    CVaR { beta: f64 },
}

impl GainSpec {
    /// The conventional significance level β = 0.05.
    pub fn default_cvar() -> GainSpec {
        GainSpec::CVaR { beta: 0.05 }
    }

    pub fn validate(&self) -> Result<()> {
        if let GainSpec::CVaR { beta } = self {
            if !(*beta > 0.0 && *beta < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "CVaR level beta must lie in (0,1), got {beta}"
                )));
            }
        }
        Ok(())
    }
}

/// Mean of a response vector.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Exact CVaR_β by the breakpoint formula: the inner maximum
/// max_τ τ − (1/(βn)) Σᵢ max(0, τ−hᵢ) is piecewise linear and concave in
/// τ, so it is attained at one of the responses.
pub fn cvar(values: &[f64], beta: f64) -> f64 {
    debug_assert!(beta > 0.0 && beta < 1.0);
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let inv = 1.0 / (beta * n as f64);
    let mut best = f64::NEG_INFINITY;
    let mut prefix = 0.0;
    for (k, &h) in sorted.iter().enumerate() {
        prefix += h;
        // Σ max(0, h−hᵢ) over all i = (k+1)·h − prefix_{k+1}
        let shortfall = (k + 1) as f64 * h - prefix;
        best = best.max(h - inv * shortfall);
    }
    best
}

/// The minimizing tail distribution of the CVaR dual
/// min{ Σ qᵢhᵢ : 0 ≤ qᵢ ≤ 1/(βn), Σ qᵢ = 1 }: full cap on the strictly
/// smallest responses, leftover mass spread evenly over the boundary-value
/// ties (even spreading always respects the cap, because at least
/// βn − #below responses tie at the boundary).
fn cvar_tail_weights(values: &[f64], beta: f64) -> Vec<f64> {
    let n = values.len();
    let cap = 1.0 / (beta * n as f64);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut q = vec![0.0; n];
    let mut remaining = 1.0;
    let mut boundary = values[order[n - 1]];
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let take = cap.min(remaining);
        q[i] = take;
        remaining -= take;
        boundary = values[i];
        if take < cap {
            break;
        }
    }
    // redistribute the mass sitting on the boundary value evenly over all
    // responses equal to it
    let tied: Vec<usize> = (0..n).filter(|&i| values[i] == boundary).collect();
    if tied.len() > 1 {
        let mass: f64 = tied.iter().map(|&i| q[i]).sum();
        let share = mass / tied.len() as f64;
        for &i in &tied {
            q[i] = share;
        }
    }
    q
}

/// A gain function f(a) = F(Φa) over a fixed target feature set, with the
/// |B|×m response matrix Φ (rows φ(x)) precomputed.
#[derive(Debug, Clone)]
pub struct GainProblem {
    phi: Mat,
    pub spec: GainSpec,
}

impl GainProblem {
    /// Builds the problem from a LAM-family model.
    pub fn new(model: &PredictionModel, b: &TargetFeatureSet, spec: GainSpec) -> Result<Self> {
        spec.validate()?;
        if b.is_empty() {
            return Err(Error::InvalidInput("empty target feature set".into()));
        }
        let m = model.m();
        let mut phi = Mat::zeros(b.len(), m);
        for (i, x) in b.features.iter().enumerate() {
            let row = model.phi(x)?;
            phi.data[i * m..(i + 1) * m].copy_from_slice(&row);
        }
        Ok(GainProblem { phi, spec })
    }

    /// Builds the problem directly from a response matrix (rows φ(x)).
    pub fn from_phi(phi: Mat, spec: GainSpec) -> Result<Self> {
        spec.validate()?;
        if phi.rows == 0 {
            return Err(Error::InvalidInput("empty target feature set".into()));
        }
        Ok(GainProblem { phi, spec })
    }

    /// Attribute dimension m.
    pub fn m(&self) -> usize {
        self.phi.cols
    }

    /// |B|.
    pub fn num_features(&self) -> usize {
        self.phi.rows
    }

    /// Per-feature responses h = Φa.
    pub fn responses(&self, a: &[f64]) -> Vec<f64> {
        self.phi.matvec(a)
    }

    /// f(a).
    pub fn value(&self, a: &[f64]) -> f64 {
        let h = self.responses(a);
        match self.spec {
            GainSpec::Mean => mean(&h),
            GainSpec::CVaR { beta } => cvar(&h, beta),
        }
    }

    /// A supergradient of the concave f at `a`. For Mean this is the
    /// constant column mean of Φ; for CVaR it is Φᵀq with q the optimal
    /// tail distribution at `a`.
    pub fn supergradient(&self, a: &[f64]) -> Vec<f64> {
        match self.spec {
            GainSpec::Mean => {
                let n = self.phi.rows as f64;
                let mut g = vec![0.0; self.phi.cols];
                for i in 0..self.phi.rows {
                    for (gj, v) in g.iter_mut().zip(self.phi.row(i)) {
                        *gj += v;
                    }
                }
                for gj in &mut g {
                    *gj /= n;
                }
                g
            }
            GainSpec::CVaR { beta } => {
                let h = self.responses(a);
                let q = cvar_tail_weights(&h, beta);
                let mut g = vec![0.0; self.phi.cols];
                for (i, qi) in q.iter().enumerate() {
                    if *qi != 0.0 {
                        for (gj, v) in g.iter_mut().zip(self.phi.row(i)) {
                            *gj += qi * v;
                        }
                    }
                }
                g
            }
        }
    }
}

/// Outcome of random concavity probing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcavityReport {
    /// Largest observed λf(a₁)+(1−λ)f(a₂) − f(λa₁+(1−λ)a₂) excess
    /// (positive = concavity violated).
    pub worst_violation: f64,
    pub trials: usize,
}

impl ConcavityReport {
    pub fn is_concave(&self, tol: f64) -> bool {
        self.worst_violation <= tol
    }
}

/// Probes concavity of an arbitrary function on random segments in
/// [−1,1]^m.
pub fn concavity_probe_fn(
    f: impl Fn(&[f64]) -> f64,
    m: usize,
    trials: usize,
    seed: u64,
) -> ConcavityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let a1: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let a2: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let lam: f64 = rng.random();
        let mix: Vec<f64> = a1
            .iter()
            .zip(&a2)
            .map(|(u, v)| lam * u + (1.0 - lam) * v)
            .collect();
        let violation = lam * f(&a1) + (1.0 - lam) * f(&a2) - f(&mix);
        worst = worst.max(violation);
    }
    ConcavityReport {
        worst_violation: worst,
        trials,
    }
}

/// Probes a gain problem's concavity on random segments.
pub fn concavity_probe(p: &GainProblem, trials: usize, seed: u64) -> ConcavityReport {
    concavity_probe_fn(|a| p.value(a), p.m(), trials, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    fn problem_from_rows(rows: Vec<Vec<f64>>, spec: GainSpec) -> GainProblem {
        GainProblem::from_phi(Mat::from_rows(&rows), spec).unwrap()
    }

    fn random_phi(n: usize, m: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phi = Mat::zeros(n, m);
        for v in &mut phi.data {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        phi
    }

    #[test]
    fn mean_of_small_list() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
    }

    #[test]
    fn cvar_of_constant_responses_is_the_constant() {
        for beta in [0.05, 0.2, 0.5, 0.9] {
            assert!((cvar(&[4.2; 7], beta) - 4.2).abs() < 1e-12);
        }
    }

    #[test]
    fn cvar_one_to_ten_at_point_two() {
        let h: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let exact = cvar(&h, 0.2);
        assert!((exact - 1.5).abs() < 1e-12, "got {exact}");

        // grid-search oracle over τ
        let inv = 1.0 / (0.2 * 10.0);
        let mut best = f64::NEG_INFINITY;
        let mut tau = 0.0;
        while tau <= 11.0 {
            let shortfall: f64 = h.iter().map(|hi| (tau - hi).max(0.0)).sum();
            best = best.max(tau - inv * shortfall);
            tau += 1e-4;
        }
        assert!((exact - best).abs() < 1e-3);
    }

    #[test]
    fn cvar_never_exceeds_mean_and_grows_with_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let h: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let mu = mean(&h);
            let mut prev = f64::NEG_INFINITY;
            for beta in [0.05, 0.1, 0.3, 0.6, 0.9] {
                let c = cvar(&h, beta);
                assert!(c <= mu + 1e-12);
                assert!(c >= prev - 1e-12, "CVaR must be nondecreasing in beta");
                prev = c;
            }
            assert!((cvar(&h, 1.0 - 1e-9) - mu).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_gain_matches_weighted_average() {
        let p = problem_from_rows(
            vec![vec![0.0, 2.0], vec![2.0, 0.0]],
            GainSpec::Mean,
        );
        let a = [1.0, 1.0];
        assert!((p.value(&a) - 2.0).abs() < 1e-12);
        let g = p.supergradient(&a);
        assert_eq!(g, vec![1.0, 1.0]);
    }

    #[test]
    fn single_feature_cvar_gradient_is_phi() {
        let p = problem_from_rows(vec![vec![3.0, -1.0]], GainSpec::CVaR { beta: 0.3 });
        let g = p.supergradient(&[0.5, 0.5]);
        assert_eq!(g, vec![3.0, -1.0]);
    }

    #[test]
    fn supergradient_inequality_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (seed, spec) in [
            (1, GainSpec::Mean),
            (2, GainSpec::CVaR { beta: 0.25 }),
            (3, GainSpec::CVaR { beta: 0.05 }),
        ] {
            let p = GainProblem::from_phi(random_phi(20, 4, seed), spec).unwrap();
            let a: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let fa = p.value(&a);
            let g = p.supergradient(&a);
            for _ in 0..100 {
                let d: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                for eps in [1e-3, -1e-3] {
                    let b: Vec<f64> = a.iter().zip(&d).map(|(ai, di)| ai + eps * di).collect();
                    assert!(
                        p.value(&b) <= fa + eps * dot(&g, &d) + 1e-8,
                        "supergradient inequality violated"
                    );
                }
            }
        }
    }

    #[test]
    fn supergradient_inequality_survives_response_ties() {
        // identical rows force maximal ties at the CVaR boundary
        let rows = vec![vec![1.0, 0.0]; 6];
        let p = problem_from_rows(rows, GainSpec::CVaR { beta: 0.5 });
        let a = [0.7, 0.3];
        let g = p.supergradient(&a);
        // every response equals a₁, so f(a) = a₁ and the gradient must be
        // (1,0) — in particular no tail weight may exceed 1/(βn)
        assert!((g[0] - 1.0).abs() < 1e-12);
        assert!(g[1].abs() < 1e-12);
    }

    #[test]
    fn mean_gain_is_positively_homogeneous() {
        let p = GainProblem::from_phi(random_phi(9, 3, 4), GainSpec::Mean).unwrap();
        let a = [0.2, -0.4, 0.9];
        let scaled: Vec<f64> = a.iter().map(|v| 3.5 * v).collect();
        assert!((p.value(&scaled) - 3.5 * p.value(&a)).abs() < 1e-12);
    }

    #[test]
    fn concavity_probe_passes_for_gains() {
        let mean_p = GainProblem::from_phi(random_phi(15, 3, 5), GainSpec::Mean).unwrap();
        let report = concavity_probe(&mean_p, 200, 9);
        assert!(report.worst_violation <= 1e-12);

        let cvar_p =
            GainProblem::from_phi(random_phi(15, 3, 6), GainSpec::CVaR { beta: 0.2 }).unwrap();
        let report = concavity_probe(&cvar_p, 200, 10);
        assert!(report.is_concave(1e-9), "violation {}", report.worst_violation);
    }

    #[test]
    fn concavity_probe_flags_psd_quadratic_form() {
        // aᵀC̄a with C̄ PSD is convex, so the probe must flag it
        let c = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let report = concavity_probe_fn(|a| dot(a, &c.matvec(a)), 2, 500, 12);
        assert!(!report.is_concave(1e-9), "PSD quadratic must not probe concave");
    }

    #[test]
    fn cvar_spec_validates_beta() {
        assert!(GainSpec::CVaR { beta: 0.0 }.validate().is_err());
        assert!(GainSpec::CVaR { beta: 1.0 }.validate().is_err());
        assert!(GainSpec::CVaR { beta: 0.05 }.validate().is_ok());
    }
}
