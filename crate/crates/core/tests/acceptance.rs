//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criterion 9 trains a 4×4 predictor grid on ten seeds and takes several
//! minutes; it runs only when `COSTROUTE_ACCEPTANCE_FULL=1` is set.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use costroute::dataset::split;
use costroute::evaluation::{
    aiq, default_lambda_grid, lambda_sensitivity, metrics_report, pareto_hull, sweep, OracleRouter, PredictiveRouter,
    Router, SweepResult,
};
use costroute::experiment::{build_reps, run_ablation, ExperimentConfig, RepresentationConfig, ABLATION_ARCHS};
use costroute::predictors::{
    fit_least_squares, fit_linear_gradient, predict_matrix, softmax_rows, train, AttentionNet, AttentionShape, Head,
    TrainOptions, RIDGE,
};
use costroute::routing::{reward, route};
use costroute::synth::synth_generate;
use costroute::{Architecture, PredictorConfig, RewardFamily, RewardSpec, SplitSpec, SynthSpec, Target};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

fn random_attention(rng: &mut ChaCha8Rng, shape: AttentionShape, head: Head) -> AttentionNet {
    let params = (0..shape.num_params()).map(|_| 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
    AttentionNet::from_params(shape, head, params).unwrap()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let shape = AttentionShape { query_dim: 8, rep_dim: 4, internal_dim: 4 };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let head = if i % 2 == 0 { Head::Logistic } else { Head::Softplus };
        let net = random_attention(&mut rng, shape, head);
        let emb = normal_matrix(&mut rng, 5, 8, 1.0);
        let reps = Array2::from_shape_fn((3, 4), |_| rng.random_range(0.0..1.0));
        let targets = Array2::from_shape_fn((5, 3), |_| rng.random_range(0.0..1.0));
        let (_, grad) = net.loss_and_gradient(emb.view(), reps.view(), targets.view()).unwrap();
        let base = net.params().to_vec();
        let loss_at = |params: Vec<f64>| {
            let n = AttentionNet::from_params(shape, head, params).unwrap();
            n.loss_and_gradient(emb.view(), reps.view(), targets.view()).unwrap().0
        };
        for (j, &g) in grad.iter().enumerate() {
            let mut up = base.clone();
            up[j] += h;
            let mut down = base.clone();
            down[j] -= h;
            let fd = (loss_at(up) - loss_at(down)) / (2.0 * h);
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-8));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-4 && secs < 10.0, format!("max relative error {worst:.2e} (≤ 1e-4), {secs:.2}s (< 10s)"))
}

fn softmax_and_equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let shape = AttentionShape { query_dim: 8, rep_dim: 4, internal_dim: 4 };
    let (mut sum_err, mut shift_err): (f64, f64) = (0.0, 0.0);
    let mut inexact = 0usize;
    for _ in 0..1000 {
        let k = rng.random_range(1..=8);
        let net = random_attention(&mut rng, shape, Head::Logistic);
        let emb = normal_matrix(&mut rng, 1, 8, 1.0);
        let reps = Array2::from_shape_fn((k, 4), |_| rng.random_range(0.0..1.0));
        let t = net.forward_one(emb.row(0), reps.view()).unwrap();
        sum_err = sum_err.max((t.weights.sum() - 1.0).abs());
        assert!(t.weights.iter().all(|&w| w >= 0.0));

        let logits = t.logits.clone().insert_axis(Axis(0));
        let shifted = softmax_rows(&(&logits + rng.random_range(-50.0..50.0)));
        shift_err = shift_err.max((&shifted.row(0) - &t.weights).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)));

        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let permuted = reps.select(Axis(0), &perm);
        let tp = net.forward_one(emb.row(0), permuted.view()).unwrap();
        let batch = net.predict(emb.view(), permuted.view()).unwrap();
        for (j, &p) in perm.iter().enumerate() {
            inexact += usize::from(tp.output[j] != t.output[p]) + usize::from(batch[(0, j)] != t.output[p]);
        }
    }
    outcome(
        sum_err <= 1e-12 && shift_err <= 1e-12 && inexact == 0,
        format!("Σα error {sum_err:.1e}, logit-shift error {shift_err:.1e}, {inexact} permuted outputs not bit-identical"),
    )
}

fn random_cloud(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    loop {
        let n = rng.random_range(2..=8);
        let dyadic = rng.random_bool(0.5);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                if dyadic {
                    (rng.random_range(0..8) as f64 / 8.0, rng.random_range(0..16) as f64 / 16.0)
                } else {
                    (rng.random_range(0.0..0.05), rng.random_range(0.0..1.0))
                }
            })
            .collect();
        if pts.iter().any(|p| p.0 != pts[0].0) {
            return pts;
        }
    }
}

fn hull_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut vertex_mismatch, mut worst): (usize, f64) = (0, 0.0);
    for _ in 0..500 {
        let pts = random_cloud(&mut rng);
        let curve = pareto_hull(&pts).unwrap();
        vertex_mismatch += usize::from(curve.hull != common::brute_hull(&pts));
        worst = worst.max((aiq(&curve).unwrap() - common::brute_aiq(&pts)).abs());
    }
    outcome(vertex_mismatch == 0 && worst <= 1e-9, format!("{vertex_mismatch}/500 vertex mismatches, max AIQ error {worst:.1e}"))
}

fn reward_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut bound, mut shift, mut scale) = (0usize, 0usize, 0usize);
    for _ in 0..100_000 {
        let lambda = 10f64.powf(rng.random_range(-6.0..3.0));
        let s = rng.random_range(0.0..=1.0);
        let c = rng.random_range(0.0..0.1);
        let r2 = reward(s, c, &RewardSpec::new(RewardFamily::Exponential, lambda).unwrap());
        bound += usize::from(!(0.0..=s).contains(&r2));

        let k = rng.random_range(1..=6);
        let q: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let cost: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.05)).collect();
        let r1 = RewardSpec::new(RewardFamily::Linear, lambda).unwrap();
        let delta = rng.random_range(-1.0..1.0);
        let shifted: Vec<f64> = q.iter().map(|x| x + delta).collect();
        shift += usize::from(route(&q, &cost, &r1).unwrap().index != route(&shifted, &cost, &r1).unwrap().index);
        let r2s = RewardSpec::new(RewardFamily::Exponential, lambda).unwrap();
        let gamma = 10f64.powf(rng.random_range(-2.0..2.0));
        let scaled: Vec<f64> = q.iter().map(|x| x * gamma).collect();
        scale += usize::from(route(&q, &cost, &r2s).unwrap().index != route(&scaled, &cost, &r2s).unwrap().index);
    }
    outcome(
        bound + shift + scale == 0,
        format!("violations: R₂ bound {bound}, R₁ shift {shift}, R₂ scale {scale} over 1e5 samples"),
    )
}

fn oracle_dominance() -> Outcome {
    let lambdas = default_lambda_grid();
    let (mut query_violations, mut aiq_violations, mut runs) = (0usize, 0usize, 0usize);
    let mut worst_gap: f64 = f64::INFINITY;
    for seed in 0..50u64 {
        let spec = SynthSpec { n: 300, models: 5, dim: 8, clusters: 5, ..SynthSpec::default() };
        let ds = synth_generate(&spec, seed).unwrap();
        let (tr, va, te) = split(&ds, &SplitSpec { seed, ..SplitSpec::default() }).unwrap();
        let reps = build_reps(&RepresentationConfig { clusters: 5, seed, ..RepresentationConfig::default() }, &tr).unwrap();
        let mut routers = Vec::new();
        for arch in [Architecture::Regression, Architecture::Knn, Architecture::Fcn2, Architecture::Attention] {
            let fit = |target| {
                let mut c = PredictorConfig::new(arch, target);
                c.epochs = 30;
                c.seed = seed;
                let (p, _) = train(&tr, &va, Some(&reps), &c).unwrap();
                predict_matrix(&p, &te, Some(&reps)).unwrap()
            };
            routers.push(PredictiveRouter::new(fit(Target::Quality), fit(Target::Cost)).unwrap());
        }
        for family in [RewardFamily::Linear, RewardFamily::Exponential] {
            let oracle = sweep(&OracleRouter, &te, &lambdas, family).unwrap();
            let oracle_aiq = aiq_of(&oracle);
            for router in &routers {
                runs += 1;
                for &l in &lambdas {
                    let rs = RewardSpec::new(family, l).unwrap();
                    for (i, r) in te.records().iter().enumerate() {
                        let o = OracleRouter.decide(i, r, te.pool(), &rs).unwrap().model_index;
                        let p = router.decide(i, r, te.pool(), &rs).unwrap().model_index;
                        let (ro, rp) = (reward(r.quality[o], r.cost[o], &rs), reward(r.quality[p], r.cost[p], &rs));
                        query_violations += usize::from(ro < rp);
                    }
                }
                let s = sweep(router, &te, &lambdas, family).unwrap();
                if let (Some(a), Some(b)) = (oracle_aiq, aiq_of(&s)) {
                    worst_gap = worst_gap.min(a - b);
                    aiq_violations += usize::from(a < b);
                }
            }
        }
    }
    outcome(
        query_violations == 0 && aiq_violations == 0,
        format!(
            "{runs} runs: {query_violations} per-query reward violations, {aiq_violations} AIQ violations, \
             smallest oracle AIQ margin {worst_gap:.4}"
        ),
    )
}

fn aiq_of(s: &SweepResult) -> Option<f64> {
    let curve = pareto_hull(&s.cost_perf()).ok()?;
    aiq(&curve).ok()
}

fn regression_duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let x = normal_matrix(&mut rng, 200, 8, 1.0);
    let w = normal_matrix(&mut rng, 8, 1, 1.0);
    let noise = normal_matrix(&mut rng, 200, 1, 0.1);
    let t = x.dot(&w) + 0.3 + noise;
    let closed = fit_least_squares(x.view(), t.view(), true, RIDGE).unwrap();
    let opts = TrainOptions { learning_rate: 1e-2, batch_size: 200, weight_decay: 0.0, epochs: 5000, seed: 6 };
    let (grad, _) = fit_linear_gradient(x.view(), t.view(), &opts).unwrap();
    let diff = closed.predict(x.view()).unwrap() - grad.predict(x.view()).unwrap();
    let rmse = diff.mapv(|v| v * v).mean().unwrap().sqrt();
    outcome(rmse <= 1e-3, format!("prediction RMSE between closed form and 5000 Adam steps {rmse:.2e} (≤ 1e-3)"))
}

fn sensitivity_closed_form() -> Outcome {
    let got = lambda_sensitivity(&[1.0, 10.0, 100.0], &[0.5, 0.6, 0.7], false).unwrap();
    let err = (got - 0.1).abs();
    outcome(err <= 2.0 * f64::EPSILON * 0.1, format!("sensitivity {got:?}, error {err:.1e}"))
}

fn sensitivity_ordering() -> Outcome {
    let lambdas = default_lambda_grid();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10u64 {
        let ds = synth_generate(&SynthSpec { n: 2000, models: 5, ..SynthSpec::default() }, seed).unwrap();
        let strongest = ds.pool().last().unwrap().clone();
        let sens = |family| {
            let s = sweep(&OracleRouter, &ds, &lambdas, family).unwrap();
            metrics_report(&s, &strongest, false).unwrap().sens_perf
        };
        let (r1, r2) = (sens(RewardFamily::Linear), sens(RewardFamily::Exponential));
        wins += usize::from(r2 < r1);
        pairs.push(format!("{r2:.4}/{r1:.4}"));
    }
    outcome(wins >= 8, format!("R₂ < R₁ on {wins}/10 pools (≥ 8); R₂/R₁ sens_perf: {}", pairs.join(" ")))
}

fn ablation_shape() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut cells = Vec::new();
    let mut slowest: f64 = 0.0;
    for seed in 0..10u64 {
        let t0 = Instant::now();
        let cfg = ExperimentConfig {
            seed,
            synth: Some(SynthSpec { n: 2000, ..SynthSpec::default() }),
            ..ExperimentConfig::default()
        };
        let grid = run_ablation(&cfg, &ABLATION_ARCHS).unwrap();
        slowest = slowest.max(t0.elapsed().as_secs_f64());
        let attn = grid.cell(Architecture::Attention, Architecture::Attention).unwrap_or(f64::NEG_INFINITY);
        let others = [Architecture::Regression, Architecture::Fcn2, Architecture::Fcn3];
        let best = others
            .iter()
            .flat_map(|&q| others.iter().map(move |&c| (q, c)))
            .filter_map(|(q, c)| grid.cell(q, c))
            .fold(f64::NEG_INFINITY, f64::max);
        wins += usize::from(attn >= best);
        cells.push(format!("{attn:.3}/{best:.3}"));
    }
    let total = start.elapsed().as_secs_f64();
    outcome(
        wins >= 7 && slowest < 900.0,
        format!(
            "attention pair best on {wins}/10 seeds (≥ 7); attention/best-baseline AIQ: {}; \
             slowest grid {slowest:.0}s (< 900s), total {total:.0}s",
            cells.join(" ")
        ),
    )
}

fn main() -> ExitCode {
    let full = std::env::var("COSTROUTE_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 gradient check", gradient_check),
        ("2 softmax and permutation equivariance", softmax_and_equivariance),
        ("3 hull oracle", hull_oracle),
        ("4 reward properties", reward_properties),
        ("5 oracle dominance", oracle_dominance),
        ("6 regression duality", regression_duality),
        ("7 sensitivity closed form", sensitivity_closed_form),
        ("8 R₂ vs R₁ oracle sensitivity", sensitivity_ordering),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = run();
        failed += usize::from(!o.pass);
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if full {
        let o = ablation_shape();
        failed += usize::from(!o.pass);
        println!("criterion 9 ablation shape: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    } else {
        println!("criterion 9 ablation shape: SKIPPED (set COSTROUTE_ACCEPTANCE_FULL=1; about 7 minutes)");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

