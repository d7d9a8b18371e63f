//! Domain-wise evaluation protocol: train/test splits over domains with
//! attribute-disjointness, the FUA-Mean baseline, the metrics ḡ_te and
//! g̃_te, synthetic dataset generators for the linear and quadratic
//! ground truths, and histogram-data export for external plotting.
//!
//! The protocol splits the domains (not the samples) into a training and
//! a test side, trains the requested models on the training side only,
//! and then, for every test domain, optimizes a fresh attribute vector
//! against that domain's feature set and scores it under a ground-truth
//! evaluation function — either a synthetic generator's analytic g* or a
//! model trained on all data. Test domains are evaluated in parallel and
//! reduced in split order, so results are deterministic under a fixed
//! master seed.

use std::thread;

use rand::prelude::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::convex_solve::{
    maximize, round_categorical, FeasibleRegion, LinearObjective, SolveReport, SolverConfig,
};
use crate::error::{Error, Result};
use crate::gain::{GainProblem, GainSpec};
use crate::linalg::{dot, eigh_solve, Mat};
use crate::predict::{
    extract_mean_feature, extract_mean_gram, train_bilinear, train_mlp_lam, train_qbm,
    PredictionModel, TrainConfig, QBM,
};
use crate::schema::{
    AttributeSchema, CategoricalGroup, Domain, MultiDomainDataset, Sample, TargetFeatureSet,
};
use crate::sdp_qbm::{build_sdp, round_sdp_with_gram, solve_sdp};

/// A domain-wise train/test split: a permutation κ over domain indices
/// with the first `t_train` entries forming the training side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Permutation of 0..T.
    pub order: Vec<usize>,
    /// Number of leading entries of `order` used for training.
    pub t_train: usize,
    /// Seed the permutation was drawn with.
    pub seed: u64,
}

impl SplitPlan {
    pub fn train_indices(&self) -> &[usize] {
        &self.order[..self.t_train]
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.order[self.t_train..]
    }
}

/// Draws a uniformly random permutation of `t` domains and splits it so
/// that round(fraction·t) domains land on the training side, clamped so
/// both sides keep at least one domain.
pub fn make_split(t: usize, fraction: f64, seed: u64) -> Result<SplitPlan> {
    if t < 2 {
        return Err(Error::InvalidInput(format!(
            "a domain split needs at least 2 domains, got {t}"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split fraction must lie in (0,1), got {fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..t).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let t_train = ((fraction * t as f64).round() as usize).clamp(1, t - 1);
    Ok(SplitPlan {
        order,
        t_train,
        seed,
    })
}

/// Moves every test domain whose attribute vector already appears on the
/// (growing) training side over to training, so the two sides are
/// disjoint as attribute-vector sets. Exact vector equality; a single
/// pass in split order resolves chains of duplicates. The returned plan
/// may have an empty test side if every test vector collided.
pub fn enforce_attribute_disjointness(
    plan: &SplitPlan,
    data: &MultiDomainDataset,
) -> Result<SplitPlan> {
    let t = data.num_domains();
    if plan.order.len() != t {
        return Err(Error::Dimension {
            what: "split plan order".into(),
            expected: t,
            got: plan.order.len(),
        });
    }
    let mut seen = vec![false; t];
    for &idx in &plan.order {
        if idx >= t || seen[idx] {
            return Err(Error::InvalidInput(
                "split plan order is not a permutation of the domain indices".into(),
            ));
        }
        seen[idx] = true;
    }
    if plan.t_train == 0 || plan.t_train > t {
        return Err(Error::InvalidInput(format!(
            "split plan t_train {} is out of range for {t} domains",
            plan.t_train
        )));
    }
    let mut train: Vec<usize> = plan.train_indices().to_vec();
    let mut test: Vec<usize> = Vec::new();
    for &idx in plan.test_indices() {
        let a = &data.domains[idx].attributes;
        let collides = train
            .iter()
            .any(|&tr| data.domains[tr].attributes == *a);
        if collides {
            train.push(idx);
        } else {
            test.push(idx);
        }
    }
    let t_train = train.len();
    let mut order = train;
    order.extend_from_slice(&test);
    Ok(SplitPlan {
        order,
        t_train,
        seed: plan.seed,
    })
}

/// The FUA-Mean baseline: a feature-unaware linear model ȳ ≈ wᵀa + b
/// ridge-fit on (attribute vector, mean response) pairs, then maximized
/// over the feasible region. The optimized vector ignores the target
/// features entirely, so it is shared by every test domain.
#[derive(Debug, Clone)]
pub struct FuaMean {
    pub w: Vec<f64>,
    pub intercept: f64,
    /// Maximizer of wᵀa over the region, rounded to the schema.
    pub a_hat: Vec<f64>,
    pub report: SolveReport,
}

/// Fits the FUA-Mean baseline on the training domains. The ridge weight
/// penalizes `w` but not the intercept; the normal equations are solved
/// by a minimum-norm eigendecomposition solve, so the λ=0 case works
/// whenever the data determine a (possibly non-unique) exact fit.
pub fn fua_mean(
    data_tr: &MultiDomainDataset,
    schema: &AttributeSchema,
    region: &FeasibleRegion,
    lambda: f64,
    solver: &SolverConfig,
) -> Result<FuaMean> {
    if data_tr.num_domains() < 2 {
        return Err(Error::InvalidInput(format!(
            "FUA-Mean needs at least 2 training domains, got {}",
            data_tr.num_domains()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "ridge weight must be non-negative, got {lambda}"
        )));
    }
    let m = schema.m;
    // Normal equations over z = (a, 1): (Σ z zᵀ + λ diag(1,…,1,0)) θ = Σ ȳ z.
    let mut gram = Mat::zeros(m + 1, m + 1);
    let mut rhs = vec![0.0; m + 1];
    for domain in &data_tr.domains {
        if domain.attributes.len() != m {
            return Err(Error::Dimension {
                what: format!("attribute vector of domain `{}`", domain.id),
                expected: m,
                got: domain.attributes.len(),
            });
        }
        if domain.samples.is_empty() {
            return Err(Error::InvalidInput(format!(
                "domain `{}` has no samples",
                domain.id
            )));
        }
        let y_bar =
            domain.samples.iter().map(|s| s.y).sum::<f64>() / domain.samples.len() as f64;
        let mut z = domain.attributes.clone();
        z.push(1.0);
        for i in 0..=m {
            for j in 0..=m {
                *gram.at_mut(i, j) += z[i] * z[j];
            }
            rhs[i] += y_bar * z[i];
        }
    }
    for i in 0..m {
        *gram.at_mut(i, i) += lambda;
    }
    let theta = eigh_solve(&gram, &rhs);
    let w = theta[..m].to_vec();
    let intercept = theta[m];
    let objective = LinearObjective { w: w.clone() };
    let report = maximize(&objective, region, solver)?;
    let a_hat = round_categorical(&report.a_star, schema, Some(&w))?;
    Ok(FuaMean {
        w,
        intercept,
        a_hat,
        report,
    })
}

/// A model/gain pairing evaluated by the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Feature-unaware linear baseline, mean gain.
    FuaMean,
    /// Linear-in-attribute model, mean gain.
    LamMean,
    /// Linear-in-attribute model, CVaR gain.
    LamCvar,
    /// Quadratic model via the semidefinite relaxation, mean gain.
    QbmMean,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::FuaMean => "FUA-Mean",
            Method::LamMean => "LAM-Mean",
            Method::LamCvar => "LAM-CVaR",
            Method::QbmMean => "QBM-Mean",
        }
    }
}

/// Which family realizes the linear-in-attribute model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LamFamily {
    Bilinear,
    Mlp,
}

/// Full configuration of one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub train: TrainConfig,
    pub lam_family: LamFamily,
    /// CVaR level β for [`Method::LamCvar`].
    pub beta: f64,
    /// Ridge weight of the FUA-Mean fit.
    pub fua_lambda: f64,
    pub solver: SolverConfig,
    /// Residual tolerance of the semidefinite solve (QBM-Mean only).
    pub sdp_tol: f64,
    /// Hyperplane-rounding sample count (QBM-Mean only).
    pub sdp_samples: usize,
    /// Master seed: drives training and the per-domain rounding seeds.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: vec![Method::FuaMean, Method::LamMean, Method::LamCvar],
            train: TrainConfig::default(),
            lam_family: LamFamily::Bilinear,
            beta: 0.05,
            fua_lambda: 1e-6,
            solver: SolverConfig::default(),
            sdp_tol: 1e-6,
            sdp_samples: 1000,
            seed: 0,
        }
    }
}

/// The ground-truth evaluation function g*: either a synthetic
/// generator's analytic response or a model trained on all data.
pub enum GroundTruth<'a> {
    Analytic(&'a (dyn Fn(&[f64], &[f64]) -> f64 + Sync)),
    Model(&'a PredictionModel),
}

impl GroundTruth<'_> {
    pub fn score(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        match self {
            GroundTruth::Analytic(f) => Ok(f(x, a)),
            GroundTruth::Model(model) => model.predict(x, a),
        }
    }
}

/// One test domain's outcome under one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainEval {
    pub domain_id: String,
    /// The optimized (rounded) attribute vector.
    pub a_hat: Vec<f64>,
    /// The method's own estimate of the gain at `a_hat`.
    pub objective: f64,
    /// Mean ground-truth response over the domain's feature set.
    pub g_bar: f64,
    /// Relative std: population std over mean (0 for constant responses).
    pub g_tilde: f64,
}

/// All test domains' outcomes under one method, with the aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodEval {
    pub method: String,
    pub per_domain: Vec<DomainEval>,
    /// Arithmetic mean of the per-domain ḡ values.
    pub g_bar_te: f64,
    /// Arithmetic mean of the per-domain g̃ values.
    pub g_tilde_te: f64,
}

/// Outcome of one full evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub seed: u64,
    pub t_train: usize,
    pub t_test: usize,
    pub methods: Vec<MethodEval>,
}

impl EvalResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("EvalResult serializes");
        s.push('\n');
        s
    }

    /// Flat table: one row per (method, test domain) plus one aggregate
    /// row per method with domain set to `aggregate`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,domain,g_bar,g_tilde\n");
        for me in &self.methods {
            for de in &me.per_domain {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    me.method, de.domain_id, de.g_bar, de.g_tilde
                ));
            }
            out.push_str(&format!(
                "{},aggregate,{},{}\n",
                me.method, me.g_bar_te, me.g_tilde_te
            ));
        }
        out
    }
}

/// Mean and relative std (population std divided by the mean; 0 when the
/// responses are constant, which also covers the all-zero case).
fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let rel = if std == 0.0 { 0.0 } else { std / mean };
    (mean, rel)
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Extracts the choose-1 groups of a pure categorical schema, the only
/// shape the semidefinite pipeline optimizes over.
fn one_hot_groups(schema: &AttributeSchema) -> Result<Vec<Vec<usize>>> {
    let pure = schema.continuous_blocks.is_empty()
        && schema.budget.is_none()
        && schema
            .categorical_groups
            .iter()
            .all(|g| g.choose_k == 1);
    if !pure {
        return Err(Error::InvalidInput(
            "QBM-Mean optimization needs a schema of choose-1 categorical groups only".into(),
        ));
    }
    Ok(schema
        .categorical_groups
        .iter()
        .map(|g| g.indices.clone())
        .collect())
}

/// Per-domain seed: decorrelates the rounding streams of parallel test
/// domains while staying a pure function of the master seed and the
/// domain's position in the split order.
fn domain_seed(master: u64, position: usize) -> u64 {
    master.wrapping_add((position as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// The trained artifacts shared by every test-domain evaluation.
struct TrainedMethods {
    lam: Option<PredictionModel>,
    qbm: Option<QBM>,
    fua: Option<FuaMean>,
    qbm_groups: Option<Vec<Vec<usize>>>,
}

/// Runs the full protocol: enforces attribute-disjointness on the plan,
/// trains each requested model on the training domains, then for every
/// test domain optimizes an attribute vector against that domain's
/// feature set and scores it under `g_star`. Test domains run on one
/// thread each and are reduced in split order.
///
/// The reported `objective` is each method's own estimate of the gain at
/// the final (rounded) vector, so for a LAM with `g_star` set to the same
/// model the objective and ḡ coincide.
pub fn evaluate(
    cfg: &EvalConfig,
    data: &MultiDomainDataset,
    schema: &AttributeSchema,
    plan: &SplitPlan,
    g_star: &GroundTruth<'_>,
) -> Result<EvalResult> {
    if cfg.methods.is_empty() {
        return Err(Error::InvalidInput("no methods requested".into()));
    }
    let plan = enforce_attribute_disjointness(plan, data)?;
    let test_idx = plan.test_indices().to_vec();
    if test_idx.is_empty() {
        return Err(Error::InvalidInput(
            "the attribute-disjoint split has no test domains".into(),
        ));
    }
    let train_data = MultiDomainDataset {
        domains: plan
            .train_indices()
            .iter()
            .map(|&i| data.domains[i].clone())
            .collect(),
        d: data.d,
    };
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let region = FeasibleRegion::from_schema(schema);

    let needs_lam = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::LamMean | Method::LamCvar));
    let needs_qbm = cfg.methods.contains(&Method::QbmMean);
    let needs_fua = cfg.methods.contains(&Method::FuaMean);

    let trained = TrainedMethods {
        lam: if needs_lam {
            Some(match cfg.lam_family {
                LamFamily::Bilinear => {
                    PredictionModel::Bilinear(train_bilinear(&train_data, &train_cfg)?)
                }
                LamFamily::Mlp => {
                    let (net, _) = train_mlp_lam(&train_data, &train_cfg)?;
                    PredictionModel::MlpLam(net)
                }
            })
        } else {
            None
        },
        qbm: if needs_qbm {
            let (model, _) = train_qbm(&train_data, &train_cfg)?;
            Some(model)
        } else {
            None
        },
        fua: if needs_fua {
            Some(fua_mean(
                &train_data,
                schema,
                &region,
                cfg.fua_lambda,
                &cfg.solver,
            )?)
        } else {
            None
        },
        qbm_groups: if needs_qbm {
            Some(one_hot_groups(schema)?)
        } else {
            None
        },
    };

    let domain_results: Vec<Result<Vec<DomainEval>>> = thread::scope(|s| {
        let handles: Vec<_> = test_idx
            .iter()
            .enumerate()
            .map(|(pos, &idx)| {
                let trained = &trained;
                let region = &region;
                s.spawn(move || {
                    evaluate_domain(cfg, data, schema, region, trained, g_star, pos, idx)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("domain evaluation thread panicked"))
            .collect()
    });

    let mut per_method: Vec<Vec<DomainEval>> = vec![Vec::new(); cfg.methods.len()];
    for result in domain_results {
        for (k, de) in result?.into_iter().enumerate() {
            per_method[k].push(de);
        }
    }
    let methods = cfg
        .methods
        .iter()
        .zip(per_method)
        .map(|(method, per_domain)| {
            let g_bars: Vec<f64> = per_domain.iter().map(|d| d.g_bar).collect();
            let g_tildes: Vec<f64> = per_domain.iter().map(|d| d.g_tilde).collect();
            MethodEval {
                method: method.label().to_string(),
                per_domain,
                g_bar_te: mean_of(&g_bars),
                g_tilde_te: mean_of(&g_tildes),
            }
        })
        .collect();
    Ok(EvalResult {
        seed: cfg.seed,
        t_train: plan.t_train,
        t_test: test_idx.len(),
        methods,
    })
}

/// Re-optimizes the continuous blocks of a rounded solution with the
/// categorical coordinates frozen. Rounding can cost a concave objective
/// real value (the relaxed optimum may hedge across choices, and the
/// tail objectives feel that loss hardest); the continuous part can win
/// some of it back once the combinatorial part is fixed. Keeps whichever
/// vector the model scores higher, so the step never hurts.
pub fn polish_rounded(
    problem: &GainProblem<'_>,
    schema: &AttributeSchema,
    rounded: Vec<f64>,
    solver: &SolverConfig,
) -> Result<Vec<f64>> {
    if schema.categorical_groups.is_empty() || schema.continuous_blocks.is_empty() {
        return Ok(rounded);
    }
    let pinned = FeasibleRegion::from_schema_pinned(schema, &rounded);
    let polish = maximize(problem, &pinned, solver)?;
    let mut candidate = polish.a_star;
    // The projection meets the pins only to solver tolerance; snap them
    // back so the combinatorial part stays exactly binary.
    for group in &schema.categorical_groups {
        for &j in &group.indices {
            candidate[j] = rounded[j];
        }
    }
    if problem.value(&candidate) > problem.value(&rounded) {
        Ok(candidate)
    } else {
        Ok(rounded)
    }
}

/// Optimizes and scores one test domain under every requested method.
#[allow(clippy::too_many_arguments)]
fn evaluate_domain(
    cfg: &EvalConfig,
    data: &MultiDomainDataset,
    schema: &AttributeSchema,
    region: &FeasibleRegion,
    trained: &TrainedMethods,
    g_star: &GroundTruth<'_>,
    position: usize,
    idx: usize,
) -> Result<Vec<DomainEval>> {
    let domain = &data.domains[idx];
    let b = data.target_features(idx);
    if b.is_empty() {
        return Err(Error::InvalidInput(format!(
            "test domain `{}` has no samples",
            domain.id
        )));
    }
    let mut out = Vec::with_capacity(cfg.methods.len());
    for method in &cfg.methods {
        let (a_hat, objective) = match method {
            Method::FuaMean => {
                let fua = trained.fua.as_ref().expect("FUA baseline trained");
                (fua.a_hat.clone(), dot(&fua.w, &fua.a_hat))
            }
            Method::LamMean | Method::LamCvar => {
                let model = trained.lam.as_ref().expect("LAM trained");
                let spec = match method {
                    Method::LamMean => GainSpec::Mean,
                    _ => GainSpec::CVaR { beta: cfg.beta },
                };
                let problem = GainProblem::new(model, &b, spec)?;
                let report = maximize(&problem, region, &cfg.solver)?;
                let weights = extract_mean_feature(model, &b)?;
                let a_hat = round_categorical(&report.a_star, schema, Some(&weights))?;
                let a_hat = polish_rounded(&problem, schema, a_hat, &cfg.solver)?;
                let objective = problem.value(&a_hat);
                (a_hat, objective)
            }
            Method::QbmMean => {
                let model = trained.qbm.as_ref().expect("QBM trained");
                let groups = trained.qbm_groups.as_ref().expect("QBM groups checked");
                let c_bar = extract_mean_gram(model, &b)?;
                let inst = build_sdp(&c_bar, groups)?;
                let sol = solve_sdp(&inst, cfg.sdp_tol)?;
                let a_hat = round_sdp_with_gram(
                    &sol,
                    &inst,
                    &c_bar,
                    cfg.sdp_samples,
                    domain_seed(cfg.seed, position),
                )?;
                let mut objective = 0.0;
                for i in 0..c_bar.rows {
                    for j in 0..c_bar.cols {
                        objective += a_hat[i] * a_hat[j] * c_bar.at(i, j);
                    }
                }
                (a_hat, objective)
            }
        };
        let mut responses = Vec::with_capacity(b.len());
        for x in &b.features {
            responses.push(g_star.score(x, &a_hat)?);
        }
        let (g_bar, g_tilde) = moments(&responses);
        out.push(DomainEval {
            domain_id: domain.id.clone(),
            a_hat,
            objective,
            g_bar,
            g_tilde,
        });
    }
    Ok(out)
}

/// Synthetic linear ground truth: g*(x,a) = xᵀWa with a 3-dimensional
/// unit-norm continuous attribute block and a 3-way one-hot block.
pub struct SyntheticLam {
    pub data: MultiDomainDataset,
    pub schema: AttributeSchema,
    /// The d×m ground-truth interaction matrix.
    pub w: Mat,
}

impl SyntheticLam {
    /// The noiseless response xᵀWa.
    pub fn g_star(&self, x: &[f64], a: &[f64]) -> f64 {
        dot(&self.w.matvec(a), x)
    }
}

const SYNTH_NOISE_STD: f64 = 0.1;

/// Draws the linear-ground-truth benchmark: T=15 domains of n=50 samples
/// each, d=10 features ~ U(0,1), m=6 attributes (indices 0–2 a standard
/// normal draw normalized to unit norm, indices 3–5 one-hot uniform),
/// W entries ~ N(0,1), responses xᵀWa + N(0, 0.1²).
pub fn gen_synthetic_lam(seed: u64) -> SyntheticLam {
    let (d, m, t, n) = (10usize, 6usize, 15usize, 50usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SYNTH_NOISE_STD).expect("valid noise std");
    let mut w = Mat::zeros(d, m);
    for v in w.data.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let schema = AttributeSchema::new(
        m,
        vec![vec![0, 1, 2]],
        vec![CategoricalGroup {
            indices: vec![3, 4, 5],
            choose_k: 1,
        }],
        None,
        None,
    )
    .expect("synthetic schema is valid");
    let mut domains = Vec::with_capacity(t);
    for ti in 0..t {
        let mut a: Vec<f64> = vec![0.0; m];
        loop {
            for ai in a.iter_mut().take(3) {
                *ai = StandardNormal.sample(&mut rng);
            }
            let norm = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            if norm > 1e-6 {
                for ai in a.iter_mut().take(3) {
                    *ai /= norm;
                }
                break;
            }
        }
        a[3 + rng.random_range(0..3)] = 1.0;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let g = dot(&w.matvec(&a), &x);
            let y = g + noise.sample(&mut rng);
            samples.push(Sample { x, y });
        }
        domains.push(Domain {
            id: format!("synth{:02}", ti + 1),
            attributes: a,
            samples,
        });
    }
    SyntheticLam {
        data: MultiDomainDataset { domains, d },
        schema,
        w,
    }
}

/// Synthetic quadratic ground truth: g*(x,a) = (1/30)·Σ_q (φ_q(x)ᵀa)²
/// with φ_q(x) = W_q x, over three one-hot attribute groups.
pub struct SyntheticQbm {
    pub data: MultiDomainDataset,
    pub schema: AttributeSchema,
    /// The three m×d maps W_q.
    pub maps: Vec<Mat>,
}

impl SyntheticQbm {
    /// The noiseless response (1/30)·Σ_q (φ_q(x)ᵀa)².
    pub fn g_star(&self, x: &[f64], a: &[f64]) -> f64 {
        let mut total = 0.0;
        for wq in &self.maps {
            let s = dot(&wq.matvec(x), a);
            total += s * s;
        }
        total / 30.0
    }
}

/// Draws the quadratic-ground-truth benchmark: T=10 domains of n=50
/// samples, d=10 features ~ U(0,1), m=10 attributes in three one-hot
/// groups {0–2}, {3–5}, {6–9}, W_q entries ~ N(0,1), responses
/// g*(x,a) + N(0, 0.1²).
pub fn gen_synthetic_qbm(seed: u64) -> SyntheticQbm {
    let (d, m, t, n) = (10usize, 10usize, 10usize, 50usize);
    let groups: [&[usize]; 3] = [&[0, 1, 2], &[3, 4, 5], &[6, 7, 8, 9]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SYNTH_NOISE_STD).expect("valid noise std");
    let mut maps = Vec::with_capacity(3);
    for _ in 0..3 {
        let mut wq = Mat::zeros(m, d);
        for v in wq.data.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        maps.push(wq);
    }
    let schema = AttributeSchema::new(
        m,
        Vec::new(),
        groups
            .iter()
            .map(|g| CategoricalGroup {
                indices: g.to_vec(),
                choose_k: 1,
            })
            .collect(),
        None,
        None,
    )
    .expect("synthetic schema is valid");
    let synth_gain = |maps: &[Mat], x: &[f64], a: &[f64]| -> f64 {
        let mut total = 0.0;
        for wq in maps {
            let s = dot(&wq.matvec(x), a);
            total += s * s;
        }
        total / 30.0
    };
    let mut domains = Vec::with_capacity(t);
    for ti in 0..t {
        let mut a = vec![0.0; m];
        for g in &groups {
            a[g[rng.random_range(0..g.len())]] = 1.0;
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let y = synth_gain(&maps, &x, &a) + noise.sample(&mut rng);
            samples.push(Sample { x, y });
        }
        domains.push(Domain {
            id: format!("synth{:02}", ti + 1),
            attributes: a,
            samples,
        });
    }
    SyntheticQbm {
        data: MultiDomainDataset { domains, d },
        schema,
        maps,
    }
}

/// Per-feature responses under two attribute vectors, as CSV for
/// external histogram plotting: one row per feature vector plus a
/// trailing mean row.
pub fn export_histogram(
    g_star: &GroundTruth<'_>,
    a1: &[f64],
    a2: &[f64],
    b: &TargetFeatureSet,
) -> Result<String> {
    let mut out = String::from("x_index,g_a1,g_a2\n");
    let mut col1 = Vec::with_capacity(b.len());
    let mut col2 = Vec::with_capacity(b.len());
    for (i, x) in b.features.iter().enumerate() {
        let v1 = g_star.score(x, a1)?;
        let v2 = g_star.score(x, a2)?;
        out.push_str(&format!("{i},{v1},{v2}\n"));
        col1.push(v1);
        col2.push(v2);
    }
    out.push_str(&format!("mean,{},{}\n", mean_of(&col1), mean_of(&col2)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain::mean;

    /// A small dataset with hand-picked attribute vectors: each domain
    /// holds one sample so ȳ is the sample itself.
    fn toy_dataset(attrs: &[Vec<f64>], y_bars: &[f64]) -> MultiDomainDataset {
        let domains = attrs
            .iter()
            .zip(y_bars)
            .enumerate()
            .map(|(i, (a, &y))| Domain {
                id: format!("dom{i}"),
                attributes: a.clone(),
                samples: vec![Sample {
                    x: vec![0.3, 0.7],
                    y,
                }],
            })
            .collect();
        MultiDomainDataset { domains, d: 2 }
    }

    fn ball_schema(m: usize) -> AttributeSchema {
        AttributeSchema::new(m, vec![(0..m).collect()], Vec::new(), None, None).unwrap()
    }

    #[test]
    fn split_reference_cases() {
        let plan = make_split(100, 0.8, 0).unwrap();
        assert_eq!(plan.t_train, 80);
        assert_eq!(plan.test_indices().len(), 20);
        // Boundary clamps: both sides keep at least one domain.
        assert_eq!(make_split(2, 0.9, 0).unwrap().t_train, 1);
        assert_eq!(make_split(2, 0.05, 0).unwrap().t_train, 1);
        // round(0.95·5) = 5 would empty the test side; the clamp keeps one.
        assert_eq!(make_split(5, 0.95, 0).unwrap().t_train, 4);
    }

    #[test]
    fn split_is_a_deterministic_permutation() {
        let plan = make_split(30, 0.8, 42).unwrap();
        let mut sorted = plan.order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..30).collect::<Vec<_>>());
        assert_eq!(plan, make_split(30, 0.8, 42).unwrap());
        assert_ne!(plan.order, make_split(30, 0.8, 43).unwrap().order);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        assert!(make_split(1, 0.8, 0).is_err());
        assert!(make_split(0, 0.8, 0).is_err());
        assert!(make_split(10, f64::NAN, 0).is_err());
        assert!(make_split(10, 0.0, 0).is_err());
        assert!(make_split(10, 1.0, 0).is_err());
    }

    #[test]
    fn disjointness_moves_collisions_to_training() {
        let data = toy_dataset(
            &[
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0], // duplicate of domain 0
                vec![0.5, 0.5],
            ],
            &[1.0, 2.0, 3.0, 4.0],
        );
        let plan = SplitPlan {
            order: vec![0, 1, 2, 3],
            t_train: 2,
            seed: 0,
        };
        let fixed = enforce_attribute_disjointness(&plan, &data).unwrap();
        assert_eq!(fixed.train_indices(), &[0, 1, 2]);
        assert_eq!(fixed.test_indices(), &[3]);
    }

    #[test]
    fn disjointness_resolves_duplicate_chains() {
        // All three domains share one attribute vector: everything moves.
        let data = toy_dataset(
            &[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]],
            &[1.0, 2.0, 3.0],
        );
        let plan = SplitPlan {
            order: vec![0, 1, 2],
            t_train: 1,
            seed: 0,
        };
        let fixed = enforce_attribute_disjointness(&plan, &data).unwrap();
        assert_eq!(fixed.t_train, 3);
        assert!(fixed.test_indices().is_empty());
    }

    #[test]
    fn disjoint_plan_passes_through_unchanged() {
        let data = toy_dataset(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]],
            &[1.0, 2.0, 3.0],
        );
        let plan = make_split(3, 0.7, 9).unwrap();
        let fixed = enforce_attribute_disjointness(&plan, &data).unwrap();
        assert_eq!(fixed, plan);
    }

    #[test]
    fn disjointness_rejects_non_permutations() {
        let data = toy_dataset(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 2.0]);
        let bad = SplitPlan {
            order: vec![0, 0],
            t_train: 1,
            seed: 0,
        };
        assert!(enforce_attribute_disjointness(&bad, &data).is_err());
        let short = SplitPlan {
            order: vec![0],
            t_train: 1,
            seed: 0,
        };
        assert!(enforce_attribute_disjointness(&short, &data).is_err());
    }

    #[test]
    fn fua_fits_basis_vector_domains_exactly() {
        // a^(t) = e_t: the fit must satisfy w_t + b = ȳ^(t) with zero
        // residual, eliminating by hand: each equation touches its own w_t.
        let attrs = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let y_bars = [1.0, 2.0, 3.5];
        let data = toy_dataset(&attrs, &y_bars);
        let schema = ball_schema(3);
        let region = FeasibleRegion::from_schema(&schema);
        let fit = fua_mean(&data, &schema, &region, 0.0, &SolverConfig::default()).unwrap();
        for t in 0..3 {
            assert!(
                (fit.w[t] + fit.intercept - y_bars[t]).abs() < 1e-8,
                "residual at domain {t}: w={:?} b={}",
                fit.w,
                fit.intercept
            );
        }
    }

    #[test]
    fn fua_constant_targets_fit_in_the_intercept() {
        let attrs = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let data = toy_dataset(&attrs, &[2.5, 2.5, 2.5]);
        let schema = ball_schema(3);
        let region = FeasibleRegion::from_schema(&schema);
        let fit = fua_mean(&data, &schema, &region, 0.1, &SolverConfig::default()).unwrap();
        assert!((fit.intercept - 2.5).abs() < 1e-8);
        assert!(fit.w.iter().all(|wi| wi.abs() < 1e-8));
        assert!(
            !fit.report.warnings.is_empty(),
            "zero weights must surface a degenerate-objective warning"
        );
    }

    #[test]
    fn fua_large_ridge_shrinks_weights_to_zero() {
        let attrs = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let data = toy_dataset(&attrs, &[1.0, 2.0, 3.5]);
        let schema = ball_schema(3);
        let region = FeasibleRegion::from_schema(&schema);
        let fit = fua_mean(&data, &schema, &region, 1e9, &SolverConfig::default()).unwrap();
        let norm = fit.w.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "‖w‖ = {norm}");
    }

    #[test]
    fn fua_needs_two_domains() {
        let data = toy_dataset(&[vec![1.0, 0.0]], &[1.0]);
        let schema = ball_schema(2);
        let region = FeasibleRegion::from_schema(&schema);
        let err = fua_mean(&data, &schema, &region, 0.0, &SolverConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn moments_of_constant_lists_and_scaling() {
        let (mean, rel) = moments(&[2.0, 2.0, 2.0]);
        assert_eq!(mean, 2.0);
        assert_eq!(rel, 0.0);
        let (_, rel_zero) = moments(&[0.0, 0.0]);
        assert_eq!(rel_zero, 0.0);
        // Relative std is scale-invariant for positive scalings.
        let base = [1.0, 2.0, 4.0, 0.5];
        let scaled: Vec<f64> = base.iter().map(|v| v * 3.7).collect();
        let (_, r1) = moments(&base);
        let (_, r2) = moments(&scaled);
        assert!((r1 - r2).abs() < 1e-12);
    }

    /// A dataset whose responses genuinely depend on x through a planted
    /// bilinear map, so the trained models have signal to find.
    fn planted_dataset(seed: u64, t: usize, n: usize) -> (MultiDomainDataset, AttributeSchema) {
        let (d, m) = (4usize, 3usize);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Mat::zeros(d, m);
        for v in w.data.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let mut domains = Vec::with_capacity(t);
        for ti in 0..t {
            let mut a: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            for ai in &mut a {
                *ai /= norm;
            }
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                let y = dot(&w.matvec(&a), &x);
                samples.push(Sample { x, y });
            }
            domains.push(Domain {
                id: format!("dom{ti}"),
                attributes: a,
                samples,
            });
        }
        let schema = ball_schema(m);
        (MultiDomainDataset { domains, d }, schema)
    }

    #[test]
    fn evaluate_constant_oracle_gives_constant_metrics() {
        let (data, schema) = planted_dataset(3, 6, 8);
        let plan = make_split(6, 0.8, 1).unwrap();
        let cfg = EvalConfig {
            methods: vec![Method::FuaMean, Method::LamMean, Method::LamCvar],
            ..EvalConfig::default()
        };
        let constant = |_x: &[f64], _a: &[f64]| 3.0;
        let result = evaluate(
            &cfg,
            &data,
            &schema,
            &plan,
            &GroundTruth::Analytic(&constant),
        )
        .unwrap();
        for me in &result.methods {
            assert!((me.g_bar_te - 3.0).abs() < 1e-12, "{}", me.method);
            assert_eq!(me.g_tilde_te, 0.0, "{}", me.method);
            for de in &me.per_domain {
                assert!((de.g_bar - 3.0).abs() < 1e-12);
                assert_eq!(de.g_tilde, 0.0);
            }
        }
    }

    #[test]
    fn evaluate_self_consistency_with_model_ground_truth() {
        // g* set to the very LAM the run trains: the reported objective
        // (the model's mean gain at â) must equal ḡ for the mean method.
        let synth = gen_synthetic_lam(7);
        let plan = make_split(15, 0.95, 3).unwrap();
        let plan = enforce_attribute_disjointness(&plan, &synth.data).unwrap();
        assert_eq!(plan.test_indices().len(), 1);
        let cfg = EvalConfig {
            methods: vec![Method::LamMean],
            ..EvalConfig::default()
        };
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = cfg.seed;
        let train_data = MultiDomainDataset {
            domains: plan
                .train_indices()
                .iter()
                .map(|&i| synth.data.domains[i].clone())
                .collect(),
            d: synth.data.d,
        };
        let model =
            PredictionModel::Bilinear(train_bilinear(&train_data, &train_cfg).unwrap());
        let result = evaluate(
            &cfg,
            &synth.data,
            &synth.schema,
            &plan,
            &GroundTruth::Model(&model),
        )
        .unwrap();
        let de = &result.methods[0].per_domain[0];
        assert!(
            (de.objective - de.g_bar).abs() < 1e-6,
            "objective {} vs ḡ {}",
            de.objective,
            de.g_bar
        );
    }

    #[test]
    fn evaluate_aggregates_are_means_and_runs_are_byte_identical() {
        let synth = gen_synthetic_lam(5);
        let plan = make_split(15, 0.8, 1).unwrap();
        let cfg = EvalConfig {
            methods: vec![Method::FuaMean, Method::LamMean, Method::LamCvar],
            seed: 11,
            ..EvalConfig::default()
        };
        let analytic = |x: &[f64], a: &[f64]| synth.g_star(x, a);
        let gt = GroundTruth::Analytic(&analytic);
        let r1 = evaluate(&cfg, &synth.data, &synth.schema, &plan, &gt).unwrap();
        let r2 = evaluate(&cfg, &synth.data, &synth.schema, &plan, &gt).unwrap();
        assert_eq!(r1.to_json(), r2.to_json());
        assert_eq!(r1.t_train + r1.t_test, 15);
        for me in &r1.methods {
            let g_bars: Vec<f64> = me.per_domain.iter().map(|d| d.g_bar).collect();
            let g_tildes: Vec<f64> = me.per_domain.iter().map(|d| d.g_tilde).collect();
            assert!((me.g_bar_te - mean(&g_bars)).abs() < 1e-12);
            assert!((me.g_tilde_te - mean(&g_tildes)).abs() < 1e-12);
        }
        // The flat table has one row per (method, domain) plus aggregates.
        let csv = r1.to_csv();
        let expected_rows = 1 + r1.methods.len() * (r1.t_test + 1);
        assert_eq!(csv.lines().count(), expected_rows);
    }

    #[test]
    fn evaluate_mlp_family_smoke() {
        let synth = gen_synthetic_lam(9);
        let plan = make_split(15, 0.8, 2).unwrap();
        let mut cfg = EvalConfig {
            methods: vec![Method::LamMean],
            lam_family: LamFamily::Mlp,
            ..EvalConfig::default()
        };
        cfg.train.hidden = vec![16];
        cfg.train.epochs = 15;
        let analytic = |x: &[f64], a: &[f64]| synth.g_star(x, a);
        let result = evaluate(
            &cfg,
            &synth.data,
            &synth.schema,
            &plan,
            &GroundTruth::Analytic(&analytic),
        )
        .unwrap();
        let me = &result.methods[0];
        assert!(me.g_bar_te.is_finite());
        for de in &me.per_domain {
            synth.schema.validate_attribute_vector(&de.a_hat).unwrap();
        }
    }

    #[test]
    fn evaluate_qbm_pipeline_smoke() {
        let synth = gen_synthetic_qbm(2);
        let plan = make_split(10, 0.8, 0).unwrap();
        let mut cfg = EvalConfig {
            methods: vec![Method::QbmMean],
            sdp_samples: 200,
            sdp_tol: 1e-5,
            ..EvalConfig::default()
        };
        cfg.train.epochs = 40;
        // the sum-of-squares responses have heavy tails; the default step
        // size overshoots on this draw
        cfg.train.learning_rate = 0.001;
        let analytic = |x: &[f64], a: &[f64]| synth.g_star(x, a);
        let result = evaluate(
            &cfg,
            &synth.data,
            &synth.schema,
            &plan,
            &GroundTruth::Analytic(&analytic),
        )
        .unwrap();
        let me = &result.methods[0];
        assert_eq!(me.per_domain.len(), 2);
        for de in &me.per_domain {
            synth.schema.validate_attribute_vector(&de.a_hat).unwrap();
            // Sum-of-squares ground truth: responses are non-negative.
            assert!(de.g_bar >= 0.0);
            assert!(de.objective.is_finite());
        }
    }

    #[test]
    fn evaluate_rejects_bad_configurations() {
        let (data, schema) = planted_dataset(1, 4, 5);
        let plan = make_split(4, 0.75, 0).unwrap();
        let empty = EvalConfig {
            methods: Vec::new(),
            ..EvalConfig::default()
        };
        let constant = |_: &[f64], _: &[f64]| 1.0;
        let gt = GroundTruth::Analytic(&constant);
        assert!(evaluate(&empty, &data, &schema, &plan, &gt).is_err());
        // QBM-Mean needs a pure choose-1 categorical schema, not a ball.
        let qbm = EvalConfig {
            methods: vec![Method::QbmMean],
            ..EvalConfig::default()
        };
        assert!(evaluate(&qbm, &data, &schema, &plan, &gt).is_err());
        // Plan sized for a different dataset.
        let wrong = make_split(7, 0.8, 0).unwrap();
        let ok = EvalConfig::default();
        assert!(evaluate(&ok, &data, &schema, &wrong, &gt).is_err());
    }

    #[test]
    fn gen_lam_attribute_structure_holds() {
        let synth = gen_synthetic_lam(0);
        assert_eq!(synth.data.num_domains(), 15);
        assert_eq!(synth.data.d, 10);
        assert_eq!(synth.w.rows, 10);
        assert_eq!(synth.w.cols, 6);
        for domain in &synth.data.domains {
            assert_eq!(domain.samples.len(), 50);
            let a = &domain.attributes;
            let norm = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            assert!((norm - 1.0).abs() <= 1e-12, "continuous norm {norm}");
            let ones = a[3..6].iter().filter(|&&v| v == 1.0).count();
            let zeros = a[3..6].iter().filter(|&&v| v == 0.0).count();
            assert_eq!((ones, zeros), (1, 2));
        }
    }

    #[test]
    fn gen_lam_is_deterministic_per_seed() {
        let a = gen_synthetic_lam(4);
        let b = gen_synthetic_lam(4);
        let c = gen_synthetic_lam(5);
        let js = |s: &SyntheticLam| serde_json::to_string(&s.data).unwrap();
        assert_eq!(js(&a), js(&b));
        assert_ne!(js(&a), js(&c));
    }

    #[test]
    fn gen_lam_noise_level_matches_monte_carlo() {
        // Pool the additive-noise residuals y − g*(x,a) across seeds until
        // we exceed 10⁵ draws; their std must sit at 0.1 within ±0.005.
        let mut residuals = Vec::with_capacity(135 * 750);
        let mut seed = 0u64;
        while residuals.len() < 100_000 {
            let synth = gen_synthetic_lam(seed);
            for domain in &synth.data.domains {
                for s in &domain.samples {
                    residuals.push(s.y - synth.g_star(&s.x, &domain.attributes));
                }
            }
            seed += 1;
        }
        let (_, _) = moments(&residuals); // exercise the helper on a big list
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(
            (std - SYNTH_NOISE_STD).abs() <= 0.005,
            "noise std {std} over {} draws",
            residuals.len()
        );
    }

    #[test]
    fn gen_qbm_attribute_structure_holds() {
        let synth = gen_synthetic_qbm(1);
        assert_eq!(synth.data.num_domains(), 10);
        assert_eq!(synth.maps.len(), 3);
        let groups: [&[usize]; 3] = [&[0, 1, 2], &[3, 4, 5], &[6, 7, 8, 9]];
        for domain in &synth.data.domains {
            assert_eq!(domain.samples.len(), 50);
            for g in &groups {
                let sum: f64 = g.iter().map(|&j| domain.attributes[j]).sum();
                assert_eq!(sum, 1.0);
            }
            // Sum-of-squares ground truth is non-negative everywhere.
            for s in &domain.samples {
                assert!(synth.g_star(&s.x, &domain.attributes) >= 0.0);
            }
        }
    }

    #[test]
    fn histogram_rows_and_means_are_consistent() {
        let synth = gen_synthetic_lam(3);
        let train_cfg = TrainConfig::default();
        let model =
            PredictionModel::Bilinear(train_bilinear(&synth.data, &train_cfg).unwrap());
        let b = synth.data.target_features(0);
        let a1 = &synth.data.domains[1].attributes;
        let a2 = &synth.data.domains[2].attributes;
        let gt = GroundTruth::Model(&model);
        let csv = export_histogram(&gt, a1, a2, &b).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + b.len() + 1); // header + rows + mean
        let mean_row: Vec<&str> = lines.last().unwrap().split(',').collect();
        assert_eq!(mean_row[0], "mean");
        // Column means agree with the mean-gain functional of the model.
        let problem = GainProblem::new(&model, &b, GainSpec::Mean).unwrap();
        let m1: f64 = mean_row[1].parse().unwrap();
        let m2: f64 = mean_row[2].parse().unwrap();
        assert!((m1 - problem.value(a1)).abs() < 1e-12);
        assert!((m2 - problem.value(a2)).abs() < 1e-12);
        // Identical attribute vectors give identical columns.
        let dup = export_histogram(&gt, a1, a1, &b).unwrap();
        for line in dup.lines().skip(1) {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells[1], cells[2]);
        }
    }
}
