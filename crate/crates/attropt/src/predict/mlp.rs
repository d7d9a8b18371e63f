//! Feed-forward network machinery shared by the gradient-trained families,
//! plus the MLP-feature linear-in-attribute model.
//!
//! The network is rectifier-activated on hidden layers and linear on the
//! output layer. Training is plain mini-batch gradient descent with
//! momentum and a fixed step; the snapshot with the lowest validation loss
//! is returned.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::schema::MultiDomainDataset;

use super::{TrainConfig, TrainReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Layer {
    /// out×in weight matrix.
    pub w: Mat,
    pub b: Vec<f64>,
}

/// Fully connected network: ReLU between layers, linear output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Net {
    pub layers: Vec<Layer>,
}

/// Per-layer inputs recorded by a forward pass, for backpropagation.
pub(crate) struct Trace {
    /// acts[i] is the input to layer i (acts[0] = x).
    acts: Vec<Vec<f64>>,
    pub out: Vec<f64>,
}

impl Net {
    /// He-style uniform initialization: U(−√(6/fan_in), √(6/fan_in)),
    /// biases zero.
    pub fn new(widths: &[usize], rng: &mut ChaCha8Rng) -> Net {
        assert!(widths.len() >= 2, "need input and output widths");
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for win in widths.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let mut w = Mat::zeros(fan_out, fan_in);
            for v in &mut w.data {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * limit;
            }
            layers.push(Layer {
                w,
                b: vec![0.0; fan_out],
            });
        }
        Net { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.cols
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().w.rows
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.matvec(&h);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi += bi;
            }
            if i < last {
                for zi in &mut z {
                    if *zi < 0.0 {
                        *zi = 0.0;
                    }
                }
            }
            h = z;
        }
        h
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            acts.push(h.clone());
            let mut z = layer.w.matvec(&h);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi += bi;
            }
            if i < last {
                for zi in &mut z {
                    if *zi < 0.0 {
                        *zi = 0.0;
                    }
                }
            }
            h = z;
        }
        Trace { acts, out: h }
    }

    /// Accumulates dL/dparams into `grads` (layout of [`Net::params`])
    /// given dL/d(output) for one sample.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grads: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.w.data.len() + layer.b.len();
        }
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &trace.acts[i];
            let base = offsets[i];
            let ncols = layer.w.cols;
            for o in 0..layer.w.rows {
                let row = base + o * ncols;
                for (k, inp) in input.iter().enumerate() {
                    grads[row + k] += delta[o] * inp;
                }
                grads[base + layer.w.data.len() + o] += delta[o];
            }
            if i > 0 {
                let mut prev = layer.w.tr_matvec(&delta);
                // rectifier mask: input to this layer was relu(z_{i-1})
                for (p, inp) in prev.iter_mut().zip(input) {
                    if *inp <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.data.len() + l.b.len())
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(&layer.w.data);
            out.extend_from_slice(&layer.b);
        }
        out
    }

    pub fn set_params(&mut self, theta: &[f64]) {
        let mut off = 0;
        for layer in &mut self.layers {
            let nw = layer.w.data.len();
            layer.w.data.copy_from_slice(&theta[off..off + nw]);
            off += nw;
            let nb = layer.b.len();
            layer.b.copy_from_slice(&theta[off..off + nb]);
            off += nb;
        }
        debug_assert_eq!(off, theta.len());
    }
}

/// One weighted observation: features, index of its domain's attribute
/// vector, response, and objective weight.
#[derive(Debug, Clone)]
pub(crate) struct TrainSample {
    pub x: Vec<f64>,
    pub a_idx: usize,
    pub y: f64,
    pub w: f64,
}

/// How the network output is turned into a prediction (and how the loss
/// gradient flows back into the output).
#[derive(Debug, Clone, Copy)]
pub(crate) enum Head {
    /// Output is φ(x) ∈ R^m; prediction aᵀφ(x).
    Lam,
    /// Output is U(x) flattened row-major m×r; prediction ‖U(x)ᵀa‖².
    Qbm { m: usize, r: usize },
}

impl Head {
    fn predict(&self, out: &[f64], a: &[f64]) -> f64 {
        match self {
            Head::Lam => dot(a, out),
            Head::Qbm { m, r } => {
                let mut g = 0.0;
                for q in 0..*r {
                    let mut s = 0.0;
                    for j in 0..*m {
                        s += a[j] * out[j * r + q];
                    }
                    g += s * s;
                }
                g
            }
        }
    }

    /// dL/d(output) for squared loss L = weight·(pred − y)².
    fn d_out(&self, out: &[f64], a: &[f64], y: f64, weight: f64) -> (f64, Vec<f64>) {
        let pred = self.predict(out, a);
        let resid = pred - y;
        let loss = weight * resid * resid;
        let scale = 2.0 * weight * resid;
        let d = match self {
            Head::Lam => a.iter().map(|ai| scale * ai).collect(),
            Head::Qbm { m, r } => {
                let mut s = vec![0.0; *r];
                for q in 0..*r {
                    for j in 0..*m {
                        s[q] += a[j] * out[j * r + q];
                    }
                }
                let mut d = vec![0.0; m * r];
                for j in 0..*m {
                    for q in 0..*r {
                        d[j * r + q] = scale * 2.0 * a[j] * s[q];
                    }
                }
                d
            }
        };
        (loss, d)
    }
}

/// Weighted data loss Σᵢ wᵢ(pred − yᵢ)² over `samples` (no ridge term).
pub(crate) fn data_loss(
    net: &Net,
    head: Head,
    samples: &[TrainSample],
    attrs: &[Vec<f64>],
) -> f64 {
    samples
        .iter()
        .map(|s| {
            let out = net.forward(&s.x);
            let resid = head.predict(&out, &attrs[s.a_idx]) - s.y;
            s.w * resid * resid
        })
        .sum()
}

/// Weighted data loss and its gradient over a batch.
fn batch_loss_grad(
    net: &Net,
    head: Head,
    samples: &[TrainSample],
    indices: &[usize],
    attrs: &[Vec<f64>],
    grads: &mut [f64],
) -> f64 {
    grads.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for &i in indices {
        let s = &samples[i];
        let trace = net.forward_trace(&s.x);
        let (l, d_out) = head.d_out(&trace.out, &attrs[s.a_idx], s.y, s.w);
        loss += l;
        net.backward(&trace, &d_out, grads);
    }
    loss
}

/// Mini-batch gradient descent with momentum on the weighted ridge
/// objective; keeps the snapshot with lowest validation data loss.
/// Without a validation set there is no independent signal, so snapshot
/// selection falls back to the full training objective — data loss plus
/// ridge — which descent itself minimizes. Epoch 0 is the
/// initialization.
pub(crate) fn train_net(
    mut net: Net,
    head: Head,
    train: &[TrainSample],
    val: &[TrainSample],
    attrs: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Net, TrainReport)> {
    let holdout_loss = |net: &Net| {
        if val.is_empty() {
            let ridge: f64 = net.params().iter().map(|t| t * t).sum();
            data_loss(net, head, train, attrs) + cfg.lambda * ridge
        } else {
            data_loss(net, head, val, attrs)
        }
    };

    let p = net.num_params();
    let mut theta = net.params();
    let mut velocity = vec![0.0; p];
    let mut grads = vec![0.0; p];
    let mut best_theta = theta.clone();
    let mut best_loss = holdout_loss(&net);
    let mut best_epoch = 0usize;
    let mut train_losses = Vec::with_capacity(cfg.epochs);
    let mut val_losses = Vec::with_capacity(cfg.epochs);

    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.min(n.max(1))) {
            let loss = batch_loss_grad(&net, head, train, batch, attrs, &mut grads);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss;
            // unbiased full-gradient estimate plus ridge
            let scale = n as f64 / batch.len() as f64;
            for ((v, g), t) in velocity.iter_mut().zip(&grads).zip(&theta) {
                *v = cfg.momentum * *v
                    - cfg.learning_rate * (scale * g + 2.0 * cfg.lambda * t);
            }
            for (t, v) in theta.iter_mut().zip(&velocity) {
                *t += v;
            }
            net.set_params(&theta);
        }
        let val_loss = holdout_loss(&net);
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        train_losses.push(epoch_loss);
        val_losses.push(val_loss);
        if val_loss < best_loss {
            best_loss = val_loss;
            best_theta.copy_from_slice(&theta);
            best_epoch = epoch;
        }
    }
    net.set_params(&best_theta);
    Ok((
        net,
        TrainReport {
            train_losses,
            val_losses,
            best_epoch,
        },
    ))
}

/// Splits every domain's samples into train/validation parts (at least one
/// training sample per domain) and attaches objective weights computed on
/// each side separately.
pub(crate) fn split_weighted(
    data: &MultiDomainDataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<TrainSample>, Vec<TrainSample>, Vec<Vec<f64>>) {
    let attrs: Vec<Vec<f64>> = data.domains.iter().map(|d| d.attributes.clone()).collect();
    let mut per_domain: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(data.domains.len());
    for dom in &data.domains {
        let n = dom.samples.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let n_tr = ((cfg.split * n as f64).round() as usize).clamp(1, n);
        let val = idx.split_off(n_tr);
        per_domain.push((idx, val));
    }
    let t = data.domains.len() as f64;
    let n_train_total: usize = per_domain.iter().map(|(tr, _)| tr.len()).sum();
    let n_val_total: usize = per_domain.iter().map(|(_, va)| va.len()).sum();
    let t_val = per_domain.iter().filter(|(_, va)| !va.is_empty()).count() as f64;

    let mut train = Vec::with_capacity(n_train_total);
    let mut val = Vec::with_capacity(n_val_total);
    for (ti, (dom, (tr_idx, va_idx))) in data.domains.iter().zip(&per_domain).enumerate() {
        let w_tr = if cfg.pooled {
            1.0 / n_train_total as f64
        } else {
            1.0 / (t * tr_idx.len() as f64)
        };
        for &i in tr_idx {
            train.push(TrainSample {
                x: dom.samples[i].x.clone(),
                a_idx: ti,
                y: dom.samples[i].y,
                w: w_tr,
            });
        }
        if !va_idx.is_empty() {
            let w_va = if cfg.pooled {
                1.0 / n_val_total.max(1) as f64
            } else {
                1.0 / (t_val * va_idx.len() as f64)
            };
            for &i in va_idx {
                val.push(TrainSample {
                    x: dom.samples[i].x.clone(),
                    a_idx: ti,
                    y: dom.samples[i].y,
                    w: w_va,
                });
            }
        }
    }
    (train, val, attrs)
}

/// Feature-map LAM: g(x,a) = aᵀφ(x) with φ an MLP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpLAM {
    net: Net,
    d: usize,
    m: usize,
}

impl MlpLAM {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn phi(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    pub fn predict(&self, x: &[f64], a: &[f64]) -> f64 {
        dot(a, &self.phi(x))
    }
}

/// Trains the MLP feature map on the weighted squared-loss objective and
/// returns the best-validation-epoch snapshot.
pub fn train_mlp_lam(
    data: &MultiDomainDataset,
    cfg: &TrainConfig,
) -> Result<(MlpLAM, TrainReport)> {
    cfg.validate()?;
    let m = uniform_attribute_dim(data)?;
    let d = data.d;
    let mut widths = vec![d];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Net::new(&widths, &mut rng);
    let (train, val, attrs) = split_weighted(data, cfg, &mut rng);
    let (net, report) = train_net(net, Head::Lam, &train, &val, &attrs, cfg, &mut rng)?;
    Ok((MlpLAM { net, d, m }, report))
}

pub(crate) fn uniform_attribute_dim(data: &MultiDomainDataset) -> Result<usize> {
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

/// Compares the analytic gradient of the weighted squared loss against
/// central finite differences (step 1e-5) on `probes` randomly chosen
/// parameters; returns the worst relative error. Exposed as a numerical
/// hygiene diagnostic.
pub fn mlp_gradient_max_rel_err(seed: u64, probes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, m) = (4, 3);
    let net = Net::new(&[d, 7, 6, m], &mut rng);
    let (samples, attrs) = random_check_data(d, m, 6, &mut rng);
    gradient_max_rel_err(net, Head::Lam, &samples, &attrs, probes, &mut rng)
}

pub(crate) fn random_check_data(
    d: usize,
    m: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<TrainSample>, Vec<Vec<f64>>) {
    let attrs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    let samples = (0..n)
        .map(|i| TrainSample {
            x: (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            a_idx: i,
            y: rng.random::<f64>() * 2.0 - 1.0,
            w: 1.0 / n as f64,
        })
        .collect();
    (samples, attrs)
}

pub(crate) fn gradient_max_rel_err(
    mut net: Net,
    head: Head,
    samples: &[TrainSample],
    attrs: &[Vec<f64>],
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let p = net.num_params();
    let indices: Vec<usize> = (0..samples.len()).collect();
    let mut analytic = vec![0.0; p];
    batch_loss_grad(&net, head, samples, &indices, attrs, &mut analytic);
    let theta = net.params();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let k = rng.random_range(0..p);
        let mut plus = theta.clone();
        plus[k] += h;
        net.set_params(&plus);
        let lp = data_loss(&net, head, samples, attrs);
        let mut minus = theta.clone();
        minus[k] -= h;
        net.set_params(&minus);
        let lm = data_loss(&net, head, samples, attrs);
        let fd = (lp - lm) / (2.0 * h);
        let rel = (analytic[k] - fd).abs() / fd.abs().max(1e-6);
        worst = worst.max(rel);
    }
    net.set_params(&theta);
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predict::{train_bilinear, Basis};
    use crate::schema::{Domain, Sample};
    use rand_distr::{Distribution, Normal};

    fn planted_bilinear_dataset(seed: u64, noise: f64) -> MultiDomainDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, m, t, n) = (5, 4, 10, 40);
        let mut w = Mat::zeros(m, d + 1);
        for v in &mut w.data {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        let gauss = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let mut domains = Vec::new();
        for ti in 0..t {
            let a: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let mut samples = Vec::new();
            for _ in 0..n {
                let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                let mut y = dot(&a, &w.matvec(&Basis::Affine.apply(&x)));
                if noise > 0.0 {
                    y += gauss.sample(&mut rng);
                }
                samples.push(Sample { x, y });
            }
            domains.push(Domain {
                id: format!("t{ti}"),
                attributes: a,
                samples,
            });
        }
        MultiDomainDataset { domains, d }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let worst = mlp_gradient_max_rel_err(11, 10);
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let data = planted_bilinear_dataset(3, 0.0);
        let cfg = TrainConfig {
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let (model, report) = train_mlp_lam(&data, &cfg).unwrap();
        assert_eq!(report.best_epoch, 0);
        assert!(report.val_losses.is_empty());
        // same init as a fresh net built with the same seed and split draws
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Net::new(&[5, 100, 100, 4], &mut rng);
        assert_eq!(model.net.params(), net.params());
    }

    #[test]
    fn learns_planted_bilinear_within_noise() {
        let noise = 0.1;
        let data = planted_bilinear_dataset(7, noise);
        let cfg = TrainConfig {
            epochs: 150,
            learning_rate: 0.03,
            seed: 1,
            lambda: 1e-5,
            ..TrainConfig::default()
        };
        let (model, report) = train_mlp_lam(&data, &cfg).unwrap();
        // validation RMSE from the weighted loss: weights sum to one, so
        // the loss is a weighted mean of squared residuals
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let _ = Net::new(&[5, 100, 100, 4], &mut rng);
        let (_, val, attrs) = split_weighted(&data, &cfg, &mut rng);
        let mse: f64 = val
            .iter()
            .map(|s| {
                let r = model.predict(&s.x, &attrs[s.a_idx]) - s.y;
                s.w * r * r
            })
            .sum();
        let rmse = mse.sqrt();
        assert!(
            rmse <= 2.0 * noise,
            "validation RMSE {rmse} (best epoch {})",
            report.best_epoch
        );
    }

    #[test]
    fn exploding_step_reports_epoch() {
        let data = planted_bilinear_dataset(9, 0.0);
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e6,
            seed: 2,
            ..TrainConfig::default()
        };
        match train_mlp_lam(&data, &cfg) {
            Err(Error::NonFiniteLoss { epoch }) => assert!(epoch >= 1),
            other => panic!("expected non-finite loss, got {other:?}"),
        }
    }

    #[test]
    fn prediction_linear_in_attributes() {
        let data = planted_bilinear_dataset(13, 0.0);
        let cfg = TrainConfig {
            epochs: 3,
            seed: 4,
            ..TrainConfig::default()
        };
        let (model, _) = train_mlp_lam(&data, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.random()).collect();
            let a1: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let a2: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let (al, be): (f64, f64) = (rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0);
            let mix: Vec<f64> = a1.iter().zip(&a2).map(|(u, v)| al * u + be * v).collect();
            let lhs = model.predict(&x, &mix);
            let rhs = al * model.predict(&x, &a1) + be * model.predict(&x, &a2);
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    /// The iterative trainer agrees with the closed-form ridge solution
    /// when the "network" is a single linear layer on the affine lift.
    #[test]
    fn single_linear_layer_matches_closed_form_ridge() {
        let data = planted_bilinear_dataset(17, 0.05);
        let lambda = 0.01;
        let closed = train_bilinear(
            &data,
            &TrainConfig {
                lambda,
                basis: Basis::Affine,
                ..TrainConfig::default()
            },
        )
        .unwrap();

        // single layer d→m plus bias IS the affine-basis bilinear model;
        // full-batch descent on the identical objective (no split)
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let net = Net::new(&[5, 4], &mut rng);
        let train = crate::predict::weighted_samples(&data, false);
        let attrs: Vec<Vec<f64>> =
            data.domains.iter().map(|d| d.attributes.clone()).collect();
        let cfg = TrainConfig {
            lambda,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 6000,
            batch_size: usize::MAX,
            split: 0.8,
            seed: 23,
            ..TrainConfig::default()
        };
        let (net, _) = train_net(net, Head::Lam, &train, &[], &attrs, &cfg, &mut rng).unwrap();

        // compare as W columns: net weight row j + bias j = closed-form row j
        for j in 0..4 {
            for k in 0..5 {
                let diff = (net.layers[0].w.at(j, k) - closed.w.at(j, k)).abs();
                assert!(diff < 1e-6, "weight ({j},{k}) differs by {diff}");
            }
            let diff = (net.layers[0].b[j] - closed.w.at(j, 5)).abs();
            assert!(diff < 1e-6, "bias {j} differs by {diff}");
        }
    }
}
