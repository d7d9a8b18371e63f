//! Batch front end for the library: train a model on a multi-domain
//! dataset, optimize an attribute vector against a trained model, run the
//! full evaluation protocol, generate the synthetic benchmark suites,
//! solve NAO/PIP instances, and evaluate the closed-form risk bounds.
//!
//! Conventions shared by every subcommand:
//! - machine outputs are JSON, tabular outputs are CSV;
//! - files land in `--out-dir`, defaulting to `$ATTROPT_OUT_DIR`, then `.`;
//! - `--config FILE` points at a JSON file whose entries override the
//!   corresponding flags;
//! - `--seed` fully determines all stochastic behavior;
//! - every error exits nonzero after printing a single
//!   `error[CODE]: message` line to stderr.

use std::env;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use attropt::bounds::{bound_cross_domain_terms, bound_same_domain_terms, BoundConstants};
use attropt::convex_solve::{
    maximize, round_categorical, FeasibleRegion, SolverConfig,
};
use attropt::eval_harness::{
    evaluate, export_histogram, fua_mean, gen_synthetic_lam, gen_synthetic_qbm, make_split,
    EvalConfig, EvalResult, GroundTruth, LamFamily, Method,
};
use attropt::gain::{GainProblem, GainSpec};
use attropt::linalg::{dot, Mat};
use attropt::nao_pip::{approx_nao, column_sparsity, pip_to_nao, NaoInstance, PipInstance};
use attropt::predict::{
    extract_mean_feature, extract_mean_gram, load_model, save_model, train_bilinear,
    train_mlp_lam, train_qbm, Basis, PredictionModel, TrainConfig, TrainReport,
};
use attropt::schema::{
    load_dataset, save_dataset, AttributeSchema, LoadOptions, MultiDomainDataset,
};
use attropt::sdp_qbm::{build_sdp, round_sdp, solve_sdp};
use attropt::{Error, Result};

#[derive(Parser)]
#[command(
    name = "attropt",
    version,
    about = "Attribute-aware prediction and inverse attribute optimization",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a prediction model on a dataset and write it as JSON.
    Train(TrainArgs),
    /// Maximize a gain over the feasible attribute region of a schema.
    Optimize(OptimizeArgs),
    /// Run the domain-wise evaluation protocol and write metrics.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic benchmark dataset trio.
    Synth(SynthArgs),
    /// Approximately solve a non-negative attribute optimization instance.
    Nao(NaoArgs),
    /// Evaluate a generalization bound and print its additive terms.
    Bound(BoundArgs),
}

/// Flags every subcommand shares.
#[derive(Args)]
struct CommonArgs {
    /// Directory output files are written to (default: $ATTROPT_OUT_DIR, then `.`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// JSON config file; entries set in it override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all stochastic behavior.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

/// The samples/attributes/schema file trio describing one dataset.
#[derive(Args)]
struct DataArgs {
    /// samples.csv with columns domain_id, x_1..x_d, y.
    #[arg(long)]
    samples: PathBuf,
    /// attributes.csv with columns domain_id, a_1..a_m.
    #[arg(long)]
    attributes: PathBuf,
    /// schema.json describing the attribute space.
    #[arg(long)]
    schema: PathBuf,
    /// Replace missing response cells with the domain mean instead of rejecting.
    #[arg(long)]
    impute_missing: bool,
}

/// Training hyperparameters; unset flags keep the library defaults.
#[derive(Args)]
struct TrainingArgs {
    /// Ridge weight on the flattened parameters.
    #[arg(long)]
    lambda: Option<f64>,
    /// Fixed gradient step size.
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Train fraction of the per-domain train/validation split, in (0,1).
    #[arg(long)]
    split: Option<f64>,
    /// Weight all samples uniformly instead of per-domain.
    #[arg(long)]
    pooled: bool,
    /// Hidden widths of the MlpLAM feature map, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// QBM factor rank.
    #[arg(long)]
    rank: Option<usize>,
    /// Hidden widths of the QBM trunk, comma separated.
    #[arg(long, value_delimiter = ',')]
    qbm_hidden: Option<Vec<usize>>,
    /// Fixed basis of the BilinearLAM feature map.
    #[arg(long, value_enum)]
    basis: Option<BasisArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Identity,
    Affine,
    Quadratic,
}

impl From<BasisArg> for Basis {
    fn from(b: BasisArg) -> Basis {
        match b {
            BasisArg::Identity => Basis::Identity,
            BasisArg::Affine => Basis::Affine,
            BasisArg::Quadratic => Basis::Quadratic,
        }
    }
}

/// Projected-supergradient solver settings; unset flags keep the defaults.
#[derive(Args)]
struct SolverArgs {
    /// Step-size constant of the c/√t schedule.
    #[arg(long)]
    step_c: Option<f64>,
    /// Ascent iteration count.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Dykstra projection tolerance.
    #[arg(long)]
    proj_tol: Option<f64>,
    /// Dykstra iteration cap.
    #[arg(long)]
    proj_max_iter: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Method whose model family is trained: LAM-Mean, LAM-CVaR, or QBM-Mean.
    #[arg(long, default_value = "LAM-Mean")]
    method: String,
    /// LAM realization for the LAM methods.
    #[arg(long, value_enum, default_value_t = FamilyArg::Bilinear)]
    family: FamilyArg,
    #[command(flatten)]
    training: TrainingArgs,
    /// Model output filename (relative paths land in --out-dir).
    #[arg(long, default_value = "model.json")]
    model_out: PathBuf,
    /// Training-report output filename.
    #[arg(long, default_value = "train_report.json")]
    report_out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum FamilyArg {
    Bilinear,
    Mlp,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Trained model file (unused by FUA-Mean).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Gain/method pairing; defaults to the model family's mean gain.
    #[arg(long)]
    method: Option<String>,
    /// Domain id whose feature set is the optimization target (default: first domain).
    #[arg(long)]
    domain: Option<String>,
    /// CVaR level β for LAM-CVaR.
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    /// Ridge weight of the FUA-Mean fit.
    #[arg(long, default_value_t = 1e-6)]
    fua_lambda: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Residual tolerance of the semidefinite solve (QBM-Mean).
    #[arg(long, default_value_t = 1e-6)]
    sdp_tol: f64,
    /// Hyperplane-rounding sample count (QBM-Mean).
    #[arg(long, default_value_t = 1000)]
    sdp_samples: usize,
    /// Report output filename.
    #[arg(long, default_value = "optimize_report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Synthetic benchmark suite to evaluate on (alternative to the dataset trio).
    #[arg(long, value_enum)]
    suite: Option<SuiteArg>,
    /// samples.csv of an on-disk dataset (requires --truth-model).
    #[arg(long, requires = "truth_model")]
    samples: Option<PathBuf>,
    /// attributes.csv of an on-disk dataset.
    #[arg(long)]
    attributes: Option<PathBuf>,
    /// schema.json of an on-disk dataset.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Model file scored as the ground-truth g* for an on-disk dataset.
    #[arg(long)]
    truth_model: Option<PathBuf>,
    /// Methods to evaluate, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [
        "FUA-Mean".to_string(), "LAM-Mean".to_string(), "LAM-CVaR".to_string()
    ])]
    methods: Vec<String>,
    /// LAM realization for the LAM methods.
    #[arg(long, value_enum, default_value_t = FamilyArg::Bilinear)]
    lam_family: FamilyArg,
    /// CVaR level β for LAM-CVaR.
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    /// Ridge weight of the FUA-Mean baseline.
    #[arg(long, default_value_t = 1e-6)]
    fua_lambda: f64,
    /// Train fraction of the domain-wise split.
    #[arg(long, default_value_t = 0.8)]
    split_fraction: f64,
    #[command(flatten)]
    training: TrainingArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Residual tolerance of the semidefinite solve (QBM-Mean).
    #[arg(long, default_value_t = 1e-6)]
    sdp_tol: f64,
    /// Hyperplane-rounding sample count (QBM-Mean).
    #[arg(long, default_value_t = 1000)]
    sdp_samples: usize,
    /// Number of independent trials; trial t runs with seed seed+t.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Also export per-domain response histograms of the first two methods.
    #[arg(long)]
    histogram: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    /// Linear ground truth, 15 domains, mixed ball/one-hot attributes.
    Lam,
    /// Quadratic ground truth, 10 domains, three one-hot groups.
    Qbm,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Benchmark suite to generate.
    #[arg(long, value_enum)]
    suite: SuiteArg,
}

#[derive(Args)]
struct NaoArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Instance file: a NAO instance or a PIP instance as JSON.
    #[arg(long)]
    instance: PathBuf,
    /// Rounding restarts.
    #[arg(long, default_value_t = 20)]
    retries: usize,
    /// Report output filename.
    #[arg(long, default_value = "nao_solution.json")]
    out: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Loss exponent q ≥ 1.
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Residual bound M.
    #[arg(long, default_value_t = 1.0)]
    m_residual: f64,
    /// Norm bound on the flattened weight matrix.
    #[arg(long, default_value_t = 1.0)]
    b_w: f64,
    /// Norm bound on feature vectors.
    #[arg(long, default_value_t = 1.0)]
    b_x: f64,
    /// Norm bound on attribute vectors.
    #[arg(long, default_value_t = 1.0)]
    b_a: f64,
    /// Per-domain sample count.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Confidence level δ in (0, 1].
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Empirical risk the bound is anchored at.
    #[arg(long, default_value_t = 0.0)]
    empirical: f64,
    /// Evaluate the cross-domain bound instead of the same-domain one.
    #[arg(long)]
    cross: bool,
    /// Cross-domain: discrepancy between source and target.
    #[arg(long, default_value_t = 0.0)]
    discrepancy: f64,
    /// Cross-domain: loss between source-optimal and target-optimal hypotheses.
    #[arg(long, default_value_t = 0.0)]
    optimal_pair_loss: f64,
    /// Cross-domain: loss between the target-optimal hypothesis and the truth.
    #[arg(long, default_value_t = 0.0)]
    target_approximation_loss: f64,
    /// Print the breakdown as JSON instead of aligned text.
    #[arg(long)]
    json: bool,
}

/// Config-file schema. Every field is optional; present fields override
/// the corresponding flags. Unknown keys are rejected so typos surface.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    method: Option<String>,
    methods: Option<Vec<String>>,
    beta: Option<f64>,
    fua_lambda: Option<f64>,
    split_fraction: Option<f64>,
    sdp_tol: Option<f64>,
    sdp_samples: Option<usize>,
    trials: Option<usize>,
    retries: Option<usize>,
    train: Option<TrainOverride>,
    solver: Option<SolverOverride>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverride {
    lambda: Option<f64>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    split: Option<f64>,
    pooled: Option<bool>,
    hidden: Option<Vec<usize>>,
    rank: Option<usize>,
    qbm_hidden: Option<Vec<usize>>,
    basis: Option<Basis>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverOverride {
    step_c: Option<f64>,
    max_iter: Option<usize>,
    proj_tol: Option<f64>,
    proj_max_iter: Option<usize>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    fn apply_train(&self, cfg: &mut TrainConfig) {
        let Some(t) = &self.train else { return };
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &t.$field {
                    cfg.$field = v.clone();
                }
            };
        }
        take!(lambda);
        take!(learning_rate);
        take!(momentum);
        take!(epochs);
        take!(batch_size);
        take!(split);
        take!(pooled);
        take!(hidden);
        take!(rank);
        take!(qbm_hidden);
        take!(basis);
    }

    fn apply_solver(&self, cfg: &mut SolverConfig) {
        let Some(s) = &self.solver else { return };
        if let Some(v) = s.step_c {
            cfg.step_c = v;
        }
        if let Some(v) = s.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = s.proj_tol {
            cfg.proj_tol = v;
        }
        if let Some(v) = s.proj_max_iter {
            cfg.proj_max_iter = v;
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Compress clap's multi-line usage error into the one-line format.
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid usage")
                .trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Nao(args) => cmd_nao(args),
        Command::Bound(args) => cmd_bound(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn parse_method(s: &str) -> Result<Method> {
    let all = [
        Method::FuaMean,
        Method::LamMean,
        Method::LamCvar,
        Method::QbmMean,
    ];
    all.into_iter()
        .find(|m| s.eq_ignore_ascii_case(m.label()))
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown method `{s}`; valid methods are FUA-Mean, LAM-Mean, LAM-CVaR, QBM-Mean"
            ))
        })
}

fn resolve_out_dir(flag: &Option<PathBuf>, file: &FileConfig) -> Result<PathBuf> {
    let dir = file
        .out_dir
        .clone()
        .or_else(|| flag.clone())
        .or_else(|| env::var_os("ATTROPT_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    Ok(dir)
}

/// Relative output filenames land in the output directory; absolute
/// ones are honored as given.
fn place(out_dir: &Path, name: &Path) -> PathBuf {
    if name.is_absolute() {
        name.to_path_buf()
    } else {
        out_dir.join(name)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn training_config(args: &TrainingArgs, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.split {
        cfg.split = v;
    }
    if args.pooled {
        cfg.pooled = true;
    }
    if let Some(v) = &args.hidden {
        cfg.hidden = v.clone();
    }
    if let Some(v) = args.rank {
        cfg.rank = v;
    }
    if let Some(v) = &args.qbm_hidden {
        cfg.qbm_hidden = v.clone();
    }
    if let Some(v) = args.basis {
        cfg.basis = v.into();
    }
    cfg
}

fn solver_config(args: &SolverArgs) -> SolverConfig {
    let mut cfg = SolverConfig::default();
    if let Some(v) = args.step_c {
        cfg.step_c = v;
    }
    if let Some(v) = args.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = args.proj_tol {
        cfg.proj_tol = v;
    }
    if let Some(v) = args.proj_max_iter {
        cfg.proj_max_iter = v;
    }
    cfg
}

fn load_trio(data: &DataArgs) -> Result<(AttributeSchema, MultiDomainDataset)> {
    let schema = AttributeSchema::from_json_file(&data.schema)?;
    let opts = LoadOptions {
        impute_missing_responses: data.impute_missing,
    };
    let mut dataset = load_dataset(&data.samples, &data.attributes, &schema, &opts)?;
    dataset.normalize_attributes(&schema)?;
    Ok((schema, dataset))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let fc = FileConfig::load(args.common.config.as_deref())?;
    let seed = fc.seed.unwrap_or(args.common.seed);
    let out_dir = resolve_out_dir(&args.common.out_dir, &fc)?;
    let method = parse_method(fc.method.as_deref().unwrap_or(&args.method))?;
    let (schema, dataset) = load_trio(&args.data)?;
    let mut cfg = training_config(&args.training, seed);
    fc.apply_train(&mut cfg);

    let (model, report) = match method {
        Method::FuaMean => {
            return Err(Error::InvalidInput(
                "FUA-Mean is a dataset-level baseline with no trainable model; \
                 train expects LAM-Mean, LAM-CVaR, or QBM-Mean"
                    .into(),
            ));
        }
        Method::LamMean | Method::LamCvar => match args.family {
            FamilyArg::Bilinear => {
                let lam = train_bilinear(&dataset, &cfg)?;
                // Closed form: no epoch trace, the solution is the snapshot.
                let report = TrainReport {
                    train_losses: Vec::new(),
                    val_losses: Vec::new(),
                    best_epoch: 0,
                };
                (PredictionModel::Bilinear(lam), report)
            }
            FamilyArg::Mlp => {
                let (lam, report) = train_mlp_lam(&dataset, &cfg)?;
                (PredictionModel::MlpLam(lam), report)
            }
        },
        Method::QbmMean => {
            let (qbm, report) = train_qbm(&dataset, &cfg)?;
            (PredictionModel::Qbm(qbm), report)
        }
    };
    let _ = schema; // the trio loader already validated attributes against it

    let model_path = place(&out_dir, &args.model_out);
    save_model(&model, &cfg, &model_path)?;
    let report_path = place(&out_dir, &args.report_out);
    let mut report_text =
        serde_json::to_string_pretty(&report).expect("train report serializes");
    report_text.push('\n');
    write_file(&report_path, &report_text)?;

    println!(
        "trained {} on {} domains ({} samples); model -> {}, report -> {}",
        model.family_name(),
        dataset.num_domains(),
        dataset.num_samples(),
        model_path.display(),
        report_path.display()
    );
    Ok(())
}

/// aᵀCa for the symmetric gain matrix C.
fn quad_form(c: &Mat, a: &[f64]) -> f64 {
    dot(a, &c.matvec(a))
}

fn cmd_optimize(args: OptimizeArgs) -> Result<()> {
    let fc = FileConfig::load(args.common.config.as_deref())?;
    let seed = fc.seed.unwrap_or(args.common.seed);
    let out_dir = resolve_out_dir(&args.common.out_dir, &fc)?;
    let (schema, dataset) = load_trio(&args.data)?;
    let mut solver = solver_config(&args.solver);
    fc.apply_solver(&mut solver);
    let beta = fc.beta.unwrap_or(args.beta);
    let sdp_tol = fc.sdp_tol.unwrap_or(args.sdp_tol);
    let sdp_samples = fc.sdp_samples.unwrap_or(args.sdp_samples);
    let fua_lambda = fc.fua_lambda.unwrap_or(args.fua_lambda);

    let domain_index = match &args.domain {
        Some(id) => dataset
            .domains
            .iter()
            .position(|d| &d.id == id)
            .ok_or_else(|| Error::UnknownDomain {
                id: id.clone(),
                context: "optimization target".into(),
            })?,
        None => 0,
    };
    let domain_id = dataset.domains[domain_index].id.clone();
    let b = dataset.target_features(domain_index);
    let region = FeasibleRegion::from_schema(&schema);

    // The method defaults to the loaded model family's mean gain;
    // FUA-Mean ignores the model file entirely.
    let method_flag = fc.method.clone().or_else(|| args.method.clone());
    let loaded = match &args.model {
        Some(path) => Some(load_model(path)?.0),
        None => None,
    };
    let method = match &method_flag {
        Some(s) => parse_method(s)?,
        None => match &loaded {
            Some(PredictionModel::Qbm(_)) => Method::QbmMean,
            Some(_) => Method::LamMean,
            None => Method::FuaMean,
        },
    };

    let need_model = |loaded: Option<PredictionModel>| {
        loaded.ok_or_else(|| {
            Error::InvalidInput("this method needs a trained model; pass --model".into())
        })
    };

    let report = match method {
        Method::FuaMean => {
            let fit = fua_mean(&dataset, &schema, &region, fua_lambda, &solver)?;
            json!({
                "method": method.label(),
                "domain_id": domain_id,
                "relaxed": {
                    "a": fit.report.a_star,
                    "objective": fit.report.objective,
                    "iterations": fit.report.iterations,
                    "residual": fit.report.residual,
                    "warnings": fit.report.warnings,
                },
                "rounded": {
                    "a": fit.a_hat,
                    "objective": dot(&fit.w, &fit.a_hat) + fit.intercept,
                },
                "fit": { "w": fit.w, "intercept": fit.intercept },
            })
        }
        Method::LamMean | Method::LamCvar => {
            let model = need_model(loaded)?;
            if !model.is_lam() {
                return Err(Error::ModelFamily {
                    expected: "LAM",
                    got: model.family_name(),
                });
            }
            let spec = if method == Method::LamCvar {
                GainSpec::CVaR { beta }
            } else {
                GainSpec::Mean
            };
            let problem = GainProblem::new(&model, &b, spec)?;
            let solve = maximize(&problem, &region, &solver)?;
            let w = extract_mean_feature(&model, &b)?;
            let rounded = round_categorical(&solve.a_star, &schema, Some(&w))?;
            let rounded = polish_rounded(&problem, &schema, rounded, &solver)?;
            let rounded_objective = problem.value(&rounded);
            json!({
                "method": method.label(),
                "domain_id": domain_id,
                "model_family": model.family_name(),
                "relaxed": {
                    "a": solve.a_star,
                    "objective": solve.objective,
                    "iterations": solve.iterations,
                    "residual": solve.residual,
                    "warnings": solve.warnings,
                },
                "rounded": { "a": rounded, "objective": rounded_objective },
            })
        }
        Method::QbmMean => {
            let model = need_model(loaded)?;
            let PredictionModel::Qbm(qbm) = &model else {
                return Err(Error::ModelFamily {
                    expected: "QBM",
                    got: model.family_name(),
                });
            };
            let groups = choice_groups(&schema)?;
            let c_bar = extract_mean_gram(qbm, &b)?;
            let inst = build_sdp(&c_bar, &groups)?;
            let sol = solve_sdp(&inst, sdp_tol)?;
            let a_hat = round_sdp(&sol, &inst, qbm, &b, sdp_samples, seed)?;
            let rounded_gain = quad_form(&c_bar, &a_hat);
            json!({
                "method": method.label(),
                "domain_id": domain_id,
                "model_family": model.family_name(),
                "sdp": {
                    "certificate": sol.objective,
                    "residual": sol.residual,
                    "min_eigenvalue": sol.min_eigenvalue,
                    "iterations": sol.iterations,
                },
                "rounded": { "a": a_hat, "objective": rounded_gain },
            })
        }
    };

    let out_path = place(&out_dir, &args.out);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_file(&out_path, &text)?;
    let rounded_obj = report["rounded"]["objective"].as_f64().unwrap_or(f64::NAN);
    println!(
        "{} on domain {}: rounded objective {rounded_obj}; report -> {}",
        method.label(),
        domain_id,
        out_path.display()
    );
    Ok(())
}

/// The pure choose-1 categorical shape required by the semidefinite
/// pipeline, extracted from a schema.
fn choice_groups(schema: &AttributeSchema) -> Result<Vec<Vec<usize>>> {
    let pure = schema.continuous_blocks.is_empty()
        && schema.budget.is_none()
        && schema.categorical_groups.iter().all(|g| g.choose_k == 1);
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

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let fc = FileConfig::load(args.common.config.as_deref())?;
    let seed = fc.seed.unwrap_or(args.common.seed);
    let out_dir = resolve_out_dir(&args.common.out_dir, &fc)?;
    let trials = fc.trials.unwrap_or(args.trials);
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    let method_names = fc.methods.clone().unwrap_or_else(|| args.methods.clone());
    let methods: Vec<Method> = method_names
        .iter()
        .map(|s| parse_method(s))
        .collect::<Result<_>>()?;
    let split_fraction = fc.split_fraction.unwrap_or(args.split_fraction);

    let on_disk = args.samples.is_some() || args.attributes.is_some() || args.schema.is_some();
    if args.suite.is_some() && on_disk {
        return Err(Error::InvalidInput(
            "pass either --suite or the dataset trio, not both".into(),
        ));
    }
    if args.suite.is_none() && !on_disk {
        return Err(Error::InvalidInput(
            "evaluate needs a data source: --suite lam|qbm, or --samples/--attributes/--schema \
             with --truth-model"
                .into(),
        ));
    }

    let mut cfg = EvalConfig {
        methods,
        train: training_config(&args.training, seed),
        lam_family: match args.lam_family {
            FamilyArg::Bilinear => LamFamily::Bilinear,
            FamilyArg::Mlp => LamFamily::Mlp,
        },
        beta: fc.beta.unwrap_or(args.beta),
        fua_lambda: fc.fua_lambda.unwrap_or(args.fua_lambda),
        solver: solver_config(&args.solver),
        sdp_tol: fc.sdp_tol.unwrap_or(args.sdp_tol),
        sdp_samples: fc.sdp_samples.unwrap_or(args.sdp_samples),
        seed,
    };
    fc.apply_train(&mut cfg.train);
    fc.apply_solver(&mut cfg.solver);

    // On-disk data and its ground-truth model are fixed across trials;
    // synthetic suites are redrawn per trial from the trial seed.
    let disk: Option<(AttributeSchema, MultiDomainDataset, PredictionModel)> =
        if let (Some(samples), Some(attributes), Some(schema_path)) =
            (&args.samples, &args.attributes, &args.schema)
        {
            let trio = DataArgs {
                samples: samples.clone(),
                attributes: attributes.clone(),
                schema: schema_path.clone(),
                impute_missing: false,
            };
            let (schema, dataset) = load_trio(&trio)?;
            let truth_path = args.truth_model.as_ref().ok_or_else(|| {
                Error::InvalidInput("on-disk evaluation needs --truth-model".into())
            })?;
            let (truth, _) = load_model(truth_path)?;
            Some((schema, dataset, truth))
        } else if on_disk {
            return Err(Error::InvalidInput(
                "on-disk evaluation needs all three of --samples, --attributes, --schema".into(),
            ));
        } else {
            None
        };

    let mut trial_results: Vec<EvalResult> = Vec::with_capacity(trials);
    for trial in 0..trials {
        let trial_seed = seed.wrapping_add(trial as u64);
        cfg.seed = trial_seed;
        cfg.train.seed = trial_seed;
        let trial_run = TrialRun {
            cfg: &cfg,
            split_fraction,
            trial,
            trial_seed,
            out_dir: &out_dir,
            stem: if trials == 1 {
                "eval".to_string()
            } else {
                format!("eval_trial{trial:02}")
            },
            histogram: args.histogram,
        };

        // Generators own their data per trial, so each arm materializes
        // the trio and the ground-truth view before the shared runner.
        let result = match (&disk, args.suite) {
            (Some((schema, dataset, truth)), _) => {
                trial_run.run(schema, dataset, &GroundTruth::Model(truth))?
            }
            (None, Some(SuiteArg::Lam)) => {
                let synth = gen_synthetic_lam(trial_seed);
                let truth = |x: &[f64], a: &[f64]| synth.g_star(x, a);
                trial_run.run(&synth.schema, &synth.data, &GroundTruth::Analytic(&truth))?
            }
            (None, Some(SuiteArg::Qbm)) => {
                let synth = gen_synthetic_qbm(trial_seed);
                let truth = |x: &[f64], a: &[f64]| synth.g_star(x, a);
                trial_run.run(&synth.schema, &synth.data, &GroundTruth::Analytic(&truth))?
            }
            (None, None) => unreachable!("validated above"),
        };
        trial_results.push(result);
    }

    if trials > 1 {
        let labels: Vec<String> = trial_results[0]
            .methods
            .iter()
            .map(|m| m.method.clone())
            .collect();
        let mut summary = Vec::with_capacity(labels.len());
        for label in &labels {
            let mut g_bar = 0.0;
            let mut g_tilde = 0.0;
            for r in &trial_results {
                let me = r
                    .methods
                    .iter()
                    .find(|m| &m.method == label)
                    .expect("every trial reports every method");
                g_bar += me.g_bar_te;
                g_tilde += me.g_tilde_te;
            }
            let n = trials as f64;
            summary.push(json!({
                "method": label,
                "mean_g_bar_te": g_bar / n,
                "mean_g_tilde_te": g_tilde / n,
            }));
        }
        let doc = json!({ "seed": seed, "trials": trials, "methods": summary });
        let mut text = serde_json::to_string_pretty(&doc).expect("summary serializes");
        text.push('\n');
        write_file(&place(&out_dir, Path::new("summary.json")), &text)?;
    }
    Ok(())
}

/// One evaluation trial: split, evaluate, write the metric files, and
/// optionally export histograms — shared by the suite and on-disk arms.
struct TrialRun<'a> {
    cfg: &'a EvalConfig,
    split_fraction: f64,
    trial: usize,
    trial_seed: u64,
    out_dir: &'a Path,
    stem: String,
    histogram: bool,
}

impl TrialRun<'_> {
    fn run(
        &self,
        schema: &AttributeSchema,
        dataset: &MultiDomainDataset,
        g_star: &GroundTruth<'_>,
    ) -> Result<EvalResult> {
        let plan = make_split(dataset.num_domains(), self.split_fraction, self.trial_seed)?;
        let result = evaluate(self.cfg, dataset, schema, &plan, g_star)?;

        let json_name = format!("{}.json", self.stem);
        let csv_name = format!("{}.csv", self.stem);
        write_file(&place(self.out_dir, Path::new(&json_name)), &result.to_json())?;
        write_file(&place(self.out_dir, Path::new(&csv_name)), &result.to_csv())?;

        if self.histogram && result.methods.len() >= 2 {
            export_domain_histograms(self.out_dir, &self.stem, &result, dataset, g_star)?;
        }

        for me in &result.methods {
            println!(
                "trial {} (seed {}) {}: g_bar_te={:.6} g_tilde_te={:.6}",
                self.trial, self.trial_seed, me.method, me.g_bar_te, me.g_tilde_te
            );
        }
        Ok(result)
    }
}

/// Per-test-domain response histograms comparing the first two methods'
/// optimized vectors under the ground truth.
fn export_domain_histograms(
    out_dir: &Path,
    stem: &str,
    result: &EvalResult,
    dataset: &MultiDomainDataset,
    g_star: &GroundTruth<'_>,
) -> Result<()> {
    let first = &result.methods[0];
    let second = &result.methods[1];
    for (de1, de2) in first.per_domain.iter().zip(&second.per_domain) {
        let index = dataset
            .domains
            .iter()
            .position(|d| d.id == de1.domain_id)
            .ok_or_else(|| Error::UnknownDomain {
                id: de1.domain_id.clone(),
                context: "histogram export".into(),
            })?;
        let b = dataset.target_features(index);
        let csv = export_histogram(g_star, &de1.a_hat, &de2.a_hat, &b)?;
        let name = format!("{stem}_histogram_{}.csv", de1.domain_id);
        write_file(&place(out_dir, Path::new(&name)), &csv)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let fc = FileConfig::load(args.common.config.as_deref())?;
    let seed = fc.seed.unwrap_or(args.common.seed);
    let out_dir = resolve_out_dir(&args.common.out_dir, &fc)?;
    let (schema, dataset) = match args.suite {
        SuiteArg::Lam => {
            let synth = gen_synthetic_lam(seed);
            (synth.schema, synth.data)
        }
        SuiteArg::Qbm => {
            let synth = gen_synthetic_qbm(seed);
            (synth.schema, synth.data)
        }
    };
    let samples_path = out_dir.join("samples.csv");
    let attributes_path = out_dir.join("attributes.csv");
    let schema_path = out_dir.join("schema.json");
    save_dataset(&dataset, &samples_path, &attributes_path)?;
    write_file(&schema_path, &schema.to_json_string())?;
    println!(
        "wrote {} domains ({} samples) -> {}, {}, {}",
        dataset.num_domains(),
        dataset.num_samples(),
        samples_path.display(),
        attributes_path.display(),
        schema_path.display()
    );
    Ok(())
}

fn cmd_nao(args: NaoArgs) -> Result<()> {
    let fc = FileConfig::load(args.common.config.as_deref())?;
    let seed = fc.seed.unwrap_or(args.common.seed);
    let out_dir = resolve_out_dir(&args.common.out_dir, &fc)?;
    let retries = fc.retries.unwrap_or(args.retries);

    let text = std::fs::read_to_string(&args.instance).map_err(|e| Error::Io {
        path: args.instance.display().to_string(),
        source: e,
    })?;
    // The two instance shapes are disjoint: NAO requires `binary`, PIP
    // requires `a`/`b`. Try NAO first, fall back to PIP.
    let inst = match serde_json::from_str::<NaoInstance>(&text) {
        Ok(inst) => inst,
        Err(nao_err) => match serde_json::from_str::<PipInstance>(&text) {
            Ok(pip) => pip_to_nao(&pip)?,
            Err(pip_err) => {
                return Err(Error::Parse {
                    path: args.instance.display().to_string(),
                    message: format!(
                        "not a NAO instance ({nao_err}) nor a PIP instance ({pip_err})"
                    ),
                });
            }
        },
    };

    let solution = approx_nao(&inst, seed, retries)?;
    let report = json!({
        "column_sparsity": column_sparsity(&inst),
        "seed": seed,
        "retries": retries,
        "solution": solution,
    });
    let out_path = place(&out_dir, &args.out);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_file(&out_path, &text)?;
    println!(
        "objective {} (LP certificate {}); report -> {}",
        solution.objective,
        solution.certificate,
        out_path.display()
    );
    Ok(())
}

fn cmd_bound(args: BoundArgs) -> Result<()> {
    let fc = FileConfig::load(args.common.config.as_deref())?;
    let _ = fc; // bound has no file-overridable settings beyond the flags
    let constants = BoundConstants {
        q: args.q,
        m_residual: args.m_residual,
        b_w: args.b_w,
        b_x: args.b_x,
        b_a: args.b_a,
        n: args.n,
        delta: args.delta,
        discrepancy: args.discrepancy,
        optimal_pair_loss: args.optimal_pair_loss,
        target_approximation_loss: args.target_approximation_loss,
    };
    let breakdown = if args.cross {
        bound_cross_domain_terms(&constants, args.empirical)?
    } else {
        bound_same_domain_terms(&constants, args.empirical)?
    };
    if args.json {
        let mut text = serde_json::to_string_pretty(&breakdown).expect("breakdown serializes");
        text.push('\n');
        print!("{text}");
    } else {
        let width = breakdown
            .terms
            .iter()
            .map(|t| t.name.len())
            .max()
            .unwrap_or(0)
            .max("total".len());
        for term in &breakdown.terms {
            println!("{:<width$}  {:.6}", term.name, term.value);
        }
        println!("{:<width$}  {:.6}", "total", breakdown.total);
    }
    Ok(())
}
