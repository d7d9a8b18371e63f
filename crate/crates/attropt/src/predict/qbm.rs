//! Quadratic-in-binary-attribute model: g(x,a) = aᵀ Φ(x) a with
//! Φ(x) = U(x)U(x)ᵀ, where the m×r factor U(x) comes from a shared MLP
//! trunk with m·r linear output heads. The Gram structure keeps Φ(x)
//! symmetric PSD for every x, and g(x,a) = ‖U(x)ᵀa‖² ≥ 0.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::Mat;
use crate::schema::MultiDomainDataset;

use super::mlp::{
    gradient_max_rel_err, random_check_data, split_weighted, train_net, uniform_attribute_dim,
    Head, Net,
};
use super::{TrainConfig, TrainReport};

/// Rank-r quadratic attribute-interaction model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QBM {
    net: Net,
    d: usize,
    m: usize,
    r: usize,
}

impl QBM {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    /// The m×r factor U(x); Φ(x) = U(x)U(x)ᵀ.
    pub fn factor(&self, x: &[f64]) -> Mat {
        Mat {
            rows: self.m,
            cols: self.r,
            data: self.net.forward(x),
        }
    }

    /// Φ(x) as a dense symmetric matrix.
    pub fn gram(&self, x: &[f64]) -> Mat {
        let u = self.factor(x);
        let mut phi = Mat::zeros(self.m, self.m);
        for j in 0..self.m {
            for jp in 0..self.m {
                let mut s = 0.0;
                for q in 0..self.r {
                    s += u.at(j, q) * u.at(jp, q);
                }
                *phi.at_mut(j, jp) = s;
            }
        }
        phi
    }

    /// g(x,a) = ‖U(x)ᵀa‖².
    pub fn predict(&self, x: &[f64], a: &[f64]) -> f64 {
        let u = self.factor(x);
        let mut g = 0.0;
        for q in 0..self.r {
            let mut s = 0.0;
            for j in 0..self.m {
                s += a[j] * u.at(j, q);
            }
            g += s * s;
        }
        g
    }
}

/// Trains the factor network on the weighted squared-loss objective,
/// keeping the best-validation-epoch snapshot.
pub fn train_qbm(data: &MultiDomainDataset, cfg: &TrainConfig) -> Result<(QBM, TrainReport)> {
    cfg.validate()?;
    let m = uniform_attribute_dim(data)?;
    let d = data.d;
    let r = cfg.rank.max(1);
    let mut widths = vec![d];
    widths.extend_from_slice(&cfg.qbm_hidden);
    widths.push(m * r);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Net::new(&widths, &mut rng);
    let (train, val, attrs) = split_weighted(data, cfg, &mut rng);
    let (net, report) = train_net(net, Head::Qbm { m, r }, &train, &val, &attrs, cfg, &mut rng)?;
    Ok((QBM { net, d, m, r }, report))
}

/// Worst relative error between the analytic QBM gradient and central
/// finite differences over random parameter probes.
pub fn qbm_gradient_max_rel_err(seed: u64, probes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, m, r) = (4, 3, 2);
    let net = Net::new(&[d, 8, m * r], &mut rng);
    let (samples, attrs) = random_check_data(d, m, 6, &mut rng);
    gradient_max_rel_err(net, Head::Qbm { m, r }, &samples, &attrs, probes, &mut rng)
}
