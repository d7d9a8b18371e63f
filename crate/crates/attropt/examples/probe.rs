//! Scratch diagnostic for the Mean-vs-CVaR gap on one synthetic trial.

use attropt::convex_solve::{maximize, round_categorical, ElementarySet, FeasibleRegion, SolverConfig};
use attropt::eval_harness::{gen_synthetic_lam, make_split};
use attropt::gain::{GainProblem, GainSpec};
use attropt::predict::{extract_mean_feature, train_mlp_lam, PredictionModel, TrainConfig};
use attropt::schema::MultiDomainDataset;

fn moments(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt() / mean)
}

fn main() {
    let trial_seed = 7u64;
    let synth = gen_synthetic_lam(trial_seed);
    let t = synth.data.domains.len();
    let plan = make_split(t, 0.8, trial_seed).unwrap();
    let train_data = MultiDomainDataset {
        domains: plan
            .train_indices()
            .iter()
            .map(|&i| synth.data.domains[i].clone())
            .collect(),
        d: synth.data.d,
    };
    let mut cfg = TrainConfig::default();
    cfg.seed = trial_seed;
    let (net, report) = train_mlp_lam(&train_data, &cfg).unwrap();
    println!(
        "train: best_epoch={} final_val={:.5}",
        report.best_epoch,
        report.val_losses.last().copied().unwrap_or(f64::NAN)
    );
    let model = PredictionModel::MlpLam(net);
    let region = FeasibleRegion::from_schema(&synth.schema);
    let solver = SolverConfig::default();

    for &idx in plan.test_indices() {
        let b = synth.data.target_features(idx);
        let p_mean = GainProblem::new(&model, &b, GainSpec::Mean).unwrap();
        let p_cvar = GainProblem::new(&model, &b, GainSpec::CVaR { beta: 0.05 }).unwrap();
        let r_mean = maximize(&p_mean, &region, &solver).unwrap();
        let r_cvar = maximize(&p_cvar, &region, &solver).unwrap();
        let weights = extract_mean_feature(&model, &b).unwrap();
        let a_mean = round_categorical(&r_mean.a_star, &synth.schema, Some(&weights)).unwrap();
        let a_cvar = round_categorical(&r_cvar.a_star, &synth.schema, Some(&weights)).unwrap();

        println!("domain {} ({} feats)", synth.data.domains[idx].id, b.len());
        println!(
            "  relaxed:  mean_obj(a_m)={:.4}  cvar_obj(a_c)={:.4}  iters m/c = {}/{}",
            r_mean.objective, r_cvar.objective, r_mean.iterations, r_cvar.iterations
        );
        println!(
            "  model at rounded: mean(a_m)={:.4} mean(a_c)={:.4} | cvar(a_m)={:.4} cvar(a_c)={:.4}",
            p_mean.value(&a_mean),
            p_mean.value(&a_cvar),
            p_cvar.value(&a_mean),
            p_cvar.value(&a_cvar)
        );
        println!(
            "  relaxed model cvar(a*_m)={:.4} cvar(a*_c)={:.4}",
            p_cvar.value(&r_mean.a_star),
            p_cvar.value(&r_cvar.a_star)
        );
        // Pinned-region polish: freeze the categorical coordinates at the
        // rounded vertex and re-optimize the continuous blocks.
        let pin = |a: &[f64]| {
            let mut lower = vec![-1.0; synth.schema.m];
            let mut upper = vec![1.0; synth.schema.m];
            for g in &synth.schema.categorical_groups {
                for &j in &g.indices {
                    lower[j] = a[j];
                    upper[j] = a[j];
                }
            }
            let mut sets: Vec<ElementarySet> = synth
                .schema
                .continuous_blocks
                .iter()
                .map(|blk| ElementarySet::UnitBall { indices: blk.clone() })
                .collect();
            sets.push(ElementarySet::Box { lower, upper });
            FeasibleRegion { m: synth.schema.m, sets }
        };
        let polished_c = maximize(&p_cvar, &pin(&a_cvar), &solver).unwrap().a_star;
        let polished_m = maximize(&p_mean, &pin(&a_mean), &solver).unwrap().a_star;
        println!(
            "  polished: mean(a_m')={:.4} cvar(a_c')={:.4}",
            p_mean.value(&polished_m),
            p_cvar.value(&polished_c)
        );
        let truth = |a: &[f64]| {
            let vals: Vec<f64> = b.features.iter().map(|x| synth.g_star(x, a)).collect();
            moments(&vals)
        };
        let (tb_m, tt_m) = truth(&a_mean);
        let (tb_c, tt_c) = truth(&a_cvar);
        println!("  true: mean a_m {:.4} ({:.4})  a_c {:.4} ({:.4})", tb_m, tt_m, tb_c, tt_c);
        let (pb_m, pt_m) = truth(&polished_m);
        let (pb_c, pt_c) = truth(&polished_c);
        println!("  true polished: a_m' {:.4} ({:.4})  a_c' {:.4} ({:.4})", pb_m, pt_m, pb_c, pt_c);
        println!("  a_m = {:?}", a_mean.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
        println!("  a_c = {:?}", a_cvar.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
}
