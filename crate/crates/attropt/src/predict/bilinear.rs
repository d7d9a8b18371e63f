//! Closed-form bilinear model: g(x,a) = aᵀ W ψ(x) with a fixed basis ψ.
//!
//! Training is weighted ridge regression on the lifted design
//! x̃ = vec(ψ(x) aᵀ): with w̃ the row-major flattening of W,
//! g(x,a) = w̃ᵀx̃, so the normal equations give W exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, Mat};
use crate::schema::MultiDomainDataset;

use super::TrainConfig;

/// Fixed feature basis ψ applied to x before the bilinear form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// ψ(x) = x, b = d.
    Identity,
    /// ψ(x) = (x, 1), b = d+1 — bilinear form plus per-attribute intercepts.
    Affine,
    /// ψ(x) = (x, x², 1) termwise, b = 2d+1.
    Quadratic,
}

impl Basis {
    pub fn width(&self, d: usize) -> usize {
        match self {
            Basis::Identity => d,
            Basis::Affine => d + 1,
            Basis::Quadratic => 2 * d + 1,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Basis::Identity => x.to_vec(),
            Basis::Affine => {
                let mut v = x.to_vec();
                v.push(1.0);
                v
            }
            Basis::Quadratic => {
                let mut v = x.to_vec();
                v.extend(x.iter().map(|xi| xi * xi));
                v.push(1.0);
                v
            }
        }
    }
}

/// g(x,a) = aᵀ W ψ(x); exactly linear in a for fixed x.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BilinearLAM {
    /// m×b coefficient matrix.
    pub w: Mat,
    pub basis: Basis,
    /// Feature dimension the basis expects.
    pub d: usize,
    /// Ridge weight used at training time.
    pub lambda: f64,
}

impl BilinearLAM {
    pub fn m(&self) -> usize {
        self.w.rows
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// φ(x) = W ψ(x).
    pub fn phi(&self, x: &[f64]) -> Vec<f64> {
        self.w.matvec(&self.basis.apply(x))
    }

    pub fn predict(&self, x: &[f64], a: &[f64]) -> f64 {
        crate::linalg::dot(a, &self.phi(x))
    }
}

/// Minimizes Σ_t (1/(T·n⁽ᵗ⁾)) Σ_i (a⁽ᵗ⁾ᵀWψ(x_i) − y_i)² + λ‖vec W‖² in
/// closed form. With λ = 0 the normal matrix must be positive definite
/// (lifted design spans R^{m·b}), otherwise the solve reports a singular
/// system.
pub fn train_bilinear(data: &MultiDomainDataset, cfg: &TrainConfig) -> Result<BilinearLAM> {
    cfg.validate()?;
    let m = attribute_dim(data)?;
    let d = data.d;
    let b = cfg.basis.width(d);
    let p = m * b;

    let t = data.domains.len() as f64;
    let n_total: usize = data.domains.iter().map(|dom| dom.samples.len()).sum();
    let mut gram = Mat::zeros(p, p);
    let mut rhs = vec![0.0; p];
    let mut lifted = vec![0.0; p];
    for dom in &data.domains {
        let weight = if cfg.pooled {
            1.0 / n_total as f64
        } else {
            1.0 / (t * dom.samples.len() as f64)
        };
        for s in &dom.samples {
            let psi = cfg.basis.apply(&s.x);
            for j in 0..m {
                for l in 0..b {
                    lifted[j * b + l] = dom.attributes[j] * psi[l];
                }
            }
            // rank-1 update restricted to the upper triangle
            for i in 0..p {
                let wi = weight * lifted[i];
                rhs[i] += wi * s.y;
                for k in i..p {
                    *gram.at_mut(i, k) += wi * lifted[k];
                }
            }
        }
    }
    for i in 0..p {
        for k in 0..i {
            *gram.at_mut(i, k) = gram.at(k, i);
        }
        *gram.at_mut(i, i) += cfg.lambda;
    }

    let flat = cholesky_solve(&gram, &rhs).map_err(|_| {
        Error::Singular(
            "normal equations are singular; use a regularization weight lambda > 0".into(),
        )
    })?;
    Ok(BilinearLAM {
        w: Mat {
            rows: m,
            cols: b,
            data: flat,
        },
        basis: cfg.basis,
        d,
        lambda: cfg.lambda,
    })
}

fn attribute_dim(data: &MultiDomainDataset) -> Result<usize> {
    let first = data
        .domains
        .first()
        .ok_or_else(|| Error::InvalidInput("dataset has no domains".into()))?;
    let m = first.attributes.len();
    for dom in &data.domains {
        if dom.attributes.len() != m {
            return Err(Error::Dimension {
                what: format!("attribute vector of domain `{}`", dom.id),
                expected: m,
                got: dom.attributes.len(),
            });
        }
        if dom.samples.is_empty() {
            return Err(Error::InvalidInput(format!(
                "domain `{}` has no samples",
                dom.id
            )));
        }
    }
    Ok(m)
}
