//! Closed-form generalization-bound calculators: numeric evaluation of the
//! same-domain and cross-domain risk bounds from user-supplied constants.
//! The discrepancy value and the two comparison losses of the cross-domain
//! bound are inputs, not estimates — estimating a discrepancy distance
//! means taking a supremum over a hypothesis class, which is out of scope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants the bounds are evaluated at. `B = b_w·b_x·b_a` bounds the
/// prediction magnitude; `m_residual` bounds the loss residual; `q ≥ 1`
/// is the loss exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundConstants {
    pub q: f64,
    /// Residual bound M > 0.
    pub m_residual: f64,
    /// Norm bound on the flattened weight matrix.
    pub b_w: f64,
    /// Norm bound on feature vectors.
    pub b_x: f64,
    /// Norm bound on attribute vectors.
    pub b_a: f64,
    /// Per-domain sample count.
    pub n: usize,
    /// Confidence level δ ∈ (0, 1]; at δ = 1 the confidence terms vanish.
    pub delta: f64,
    /// Cross-domain only: discrepancy between source and target.
    pub discrepancy: f64,
    /// Cross-domain only: target-distribution loss between the
    /// source-optimal and target-optimal hypotheses.
    pub optimal_pair_loss: f64,
    /// Cross-domain only: target-distribution loss between the
    /// target-optimal hypothesis and the true target function.
    pub target_approximation_loss: f64,
}

impl BoundConstants {
    fn validate(&self) -> Result<()> {
        let checks: [(&str, bool); 9] = [
            ("q must be >= 1", self.q >= 1.0),
            ("residual bound M must be positive", self.m_residual > 0.0),
            ("weight norm bound must be positive", self.b_w > 0.0),
            ("feature norm bound must be positive", self.b_x > 0.0),
            ("attribute norm bound must be positive", self.b_a > 0.0),
            ("sample count n must be >= 1", self.n >= 1),
            (
                "delta must lie in (0, 1]",
                self.delta > 0.0 && self.delta <= 1.0,
            ),
            ("discrepancy must be >= 0", self.discrepancy >= 0.0),
            (
                "comparison losses must be >= 0",
                self.optimal_pair_loss >= 0.0 && self.target_approximation_loss >= 0.0,
            ),
        ];
        for (msg, ok) in checks {
            if !ok {
                return Err(Error::InvalidInput(msg.into()));
            }
        }
        Ok(())
    }

    /// B = b_w·b_x·b_a.
    pub fn b(&self) -> f64 {
        self.b_w * self.b_x * self.b_a
    }
}

/// One named additive term of a bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundTerm {
    pub name: String,
    pub value: f64,
}

/// A bound split into its additive terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub terms: Vec<BoundTerm>,
    pub total: f64,
}

fn breakdown(terms: Vec<(&str, f64)>) -> BoundBreakdown {
    let total = terms.iter().map(|(_, v)| v).sum();
    BoundBreakdown {
        terms: terms
            .into_iter()
            .map(|(name, value)| BoundTerm {
                name: name.to_string(),
                value,
            })
            .collect(),
        total,
    }
}

/// Same-domain risk bound:
/// empirical + 2qM^{q−1}B/√n + M^q·√(ln(1/δ)/(2n)).
pub fn bound_same_domain(c: &BoundConstants, empirical_risk: f64) -> Result<f64> {
    Ok(bound_same_domain_terms(c, empirical_risk)?.total)
}

/// Same-domain bound with each additive term named.
pub fn bound_same_domain_terms(
    c: &BoundConstants,
    empirical_risk: f64,
) -> Result<BoundBreakdown> {
    c.validate()?;
    let n = c.n as f64;
    let complexity = 2.0 * c.q * c.m_residual.powf(c.q - 1.0) * c.b() / n.sqrt();
    let confidence = c.m_residual.powf(c.q) * ((1.0 / c.delta).ln() / (2.0 * n)).sqrt();
    Ok(breakdown(vec![
        ("empirical risk", empirical_risk),
        ("complexity", complexity),
        ("confidence", confidence),
    ]))
}

/// Cross-domain risk bound: empirical source risk + discrepancy + the two
/// comparison losses + 10qM^{q−1}B/√n + 3M^q·√(ln(3/δ)/(2n)).
pub fn bound_cross_domain(c: &BoundConstants, empirical_source_risk: f64) -> Result<f64> {
    Ok(bound_cross_domain_terms(c, empirical_source_risk)?.total)
}

/// Cross-domain bound with each additive term named.
pub fn bound_cross_domain_terms(
    c: &BoundConstants,
    empirical_source_risk: f64,
) -> Result<BoundBreakdown> {
    c.validate()?;
    let n = c.n as f64;
    let complexity = 10.0 * c.q * c.m_residual.powf(c.q - 1.0) * c.b() / n.sqrt();
    let confidence =
        3.0 * c.m_residual.powf(c.q) * ((3.0 / c.delta).ln() / (2.0 * n)).sqrt();
    Ok(breakdown(vec![
        ("empirical source risk", empirical_source_risk),
        ("discrepancy", c.discrepancy),
        ("optimal-pair loss", c.optimal_pair_loss),
        ("target approximation loss", c.target_approximation_loss),
        ("complexity", complexity),
        ("confidence", confidence),
    ]))
}
