//! Prediction-model families and their training routines.
//!
//! All three families predict a scalar response from a feature vector `x`
//! and an attribute vector `a`:
//!
//! - [`BilinearLAM`]: g(x,a) = aᵀ W ψ(x) with a fixed basis ψ, trained in
//!   closed form by ridge normal equations;
//! - [`MlpLAM`]: g(x,a) = aᵀ φ(x) with an MLP feature map φ, trained by
//!   mini-batch gradient descent;
//! - [`QBM`]: g(x,a) = aᵀ Φ(x) a with Φ(x) = U(x)U(x)ᵀ a rank-r Gram
//!   matrix, capturing second-order attribute interactions.
//!
//! The first two are linear in `a` for fixed `x` (the LAM property), which
//! is what makes the downstream gain maximization concave.

mod bilinear;
mod mlp;
mod qbm;

pub use bilinear::{train_bilinear, Basis, BilinearLAM};
pub use mlp::{mlp_gradient_max_rel_err, train_mlp_lam, MlpLAM};
pub(crate) use mlp::TrainSample;
pub use qbm::{qbm_gradient_max_rel_err, train_qbm, QBM};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::schema::{MultiDomainDataset, TargetFeatureSet};

/// Training hyperparameters shared by all model families. Fields that a
/// family does not use (e.g. `rank` for a LAM) are ignored by its trainer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Ridge weight on the flattened parameters; must be ≥ 0.
    pub lambda: f64,
    /// Fixed gradient step size.
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Train fraction of the per-domain train/validation split, in (0,1).
    pub split: f64,
    pub seed: u64,
    /// Replace the per-domain weights 1/(T·n⁽ᵗ⁾) with a uniform 1/N.
    pub pooled: bool,
    /// Hidden widths of the MlpLAM feature map.
    pub hidden: Vec<usize>,
    /// QBM factor rank r.
    pub rank: usize,
    /// Hidden widths of the QBM trunk.
    pub qbm_hidden: Vec<usize>,
    /// Fixed basis for BilinearLAM.
    pub basis: Basis,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-4,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
            split: 0.8,
            seed: 0,
            pooled: false,
            hidden: vec![100, 100],
            rank: 3,
            qbm_hidden: vec![100],
            basis: Basis::Affine,
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidInput("lambda must be >= 0".into()));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidInput("split must lie in (0,1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// Epoch whose snapshot was kept (0 = initialization).
    pub best_epoch: usize,
}

/// A trained model of any family, with a serialization tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum PredictionModel {
    Bilinear(BilinearLAM),
    MlpLam(MlpLAM),
    Qbm(QBM),
}

impl PredictionModel {
    pub fn family_name(&self) -> &'static str {
        match self {
            PredictionModel::Bilinear(_) => "BilinearLAM",
            PredictionModel::MlpLam(_) => "MlpLAM",
            PredictionModel::Qbm(_) => "QBM",
        }
    }

    /// True for the families with g linear in `a`.
    pub fn is_lam(&self) -> bool {
        !matches!(self, PredictionModel::Qbm(_))
    }

    /// Attribute dimension m.
    pub fn m(&self) -> usize {
        match self {
            PredictionModel::Bilinear(b) => b.m(),
            PredictionModel::MlpLam(n) => n.m(),
            PredictionModel::Qbm(q) => q.m(),
        }
    }

    /// Feature dimension d.
    pub fn d(&self) -> usize {
        match self {
            PredictionModel::Bilinear(b) => b.d(),
            PredictionModel::MlpLam(n) => n.d(),
            PredictionModel::Qbm(q) => q.d(),
        }
    }

    /// Evaluates g(x, a).
    pub fn predict(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        check_dim("feature vector", self.d(), x.len())?;
        check_dim("attribute vector", self.m(), a.len())?;
        Ok(match self {
            PredictionModel::Bilinear(b) => b.predict(x, a),
            PredictionModel::MlpLam(n) => n.predict(x, a),
            PredictionModel::Qbm(q) => q.predict(x, a),
        })
    }

    /// The attribute-coefficient vector φ(x) with g(x,a) = aᵀφ(x).
    /// Only defined for the LAM families.
    pub fn phi(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("feature vector", self.d(), x.len())?;
        match self {
            PredictionModel::Bilinear(b) => Ok(b.phi(x)),
            PredictionModel::MlpLam(n) => Ok(n.phi(x)),
            PredictionModel::Qbm(_) => Err(Error::ModelFamily {
                expected: "a linear-in-attribute family".into(),
                got: "QBM".into(),
            }),
        }
    }
}

fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what: what.into(),
            expected,
            got,
        });
    }
    Ok(())
}

/// The lifted interaction vector ā⊗ā with ā = (aᵀ, 1)ᵀ; length (m+1)².
/// Entry (i,j) of the outer product lands at index i·(m+1)+j.
pub fn lift_interactions(a: &[f64]) -> Vec<f64> {
    let mut bar = a.to_vec();
    bar.push(1.0);
    let n = bar.len();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(bar[i] * bar[j]);
        }
    }
    out
}

/// Mean attribute-coefficient vector w = (1/|B|) Σ_x φ(x), so the mean
/// gain is f(a) = aᵀw. LAM families only.
pub fn extract_mean_feature(model: &PredictionModel, b: &TargetFeatureSet) -> Result<Vec<f64>> {
    if b.is_empty() {
        return Err(Error::InvalidInput("empty target feature set".into()));
    }
    let m = model.m();
    let mut w = vec![0.0; m];
    for x in &b.features {
        let phi = model.phi(x)?;
        for (wi, pi) in w.iter_mut().zip(&phi) {
            *wi += pi;
        }
    }
    let scale = 1.0 / b.len() as f64;
    for wi in &mut w {
        *wi *= scale;
    }
    Ok(w)
}

/// Mean Gram matrix C̄ = (1/|B|) Σ_x Φ(x) for a QBM, so the mean gain is
/// f(a) = aᵀ C̄ a. Symmetric PSD as a mean of Gram matrices.
pub fn extract_mean_gram(model: &QBM, b: &TargetFeatureSet) -> Result<Mat> {
    if b.is_empty() {
        return Err(Error::InvalidInput("empty target feature set".into()));
    }
    let m = model.m();
    let mut c = Mat::zeros(m, m);
    for x in &b.features {
        check_dim("feature vector", model.d(), x.len())?;
        let u = model.factor(x);
        // Φ(x) = U Uᵀ accumulated row by row
        for j in 0..m {
            for jp in 0..m {
                let mut s = 0.0;
                for q in 0..model.rank() {
                    s += u.at(j, q) * u.at(jp, q);
                }
                *c.at_mut(j, jp) += s;
            }
        }
    }
    let scale = 1.0 / b.len() as f64;
    for v in &mut c.data {
        *v *= scale;
    }
    c.symmetrize();
    Ok(c)
}

const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    model: PredictionModel,
    config: TrainConfig,
}

/// Writes a model (with its training config) as versioned JSON.
pub fn save_model(model: &PredictionModel, config: &TrainConfig, path: &Path) -> Result<()> {
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        model: model.clone(),
        config: config.clone(),
    };
    let text = serde_json::to_string_pretty(&file).expect("model serialization");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<(PredictionModel, TrainConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if file.version != MODEL_FILE_VERSION {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: format!(
                "unsupported model file version {} (expected {MODEL_FILE_VERSION})",
                file.version
            ),
        });
    }
    Ok((file.model, file.config))
}

/// Flattens a dataset into weighted training samples: weight 1/(T·n⁽ᵗ⁾)
/// per the training objective, or 1/N when `pooled`.
pub(crate) fn weighted_samples(data: &MultiDomainDataset, pooled: bool) -> Vec<TrainSample> {
    let t = data.domains.len();
    let n_total: usize = data.domains.iter().map(|d| d.samples.len()).sum();
    let mut out = Vec::with_capacity(n_total);
    for (ti, dom) in data.domains.iter().enumerate() {
        let w = if pooled {
            1.0 / n_total as f64
        } else {
            1.0 / (t as f64 * dom.samples.len() as f64)
        };
        for s in &dom.samples {
            out.push(TrainSample {
                x: s.x.clone(),
                a_idx: ti,
                y: s.y,
                w,
            });
        }
    }
    out
}
