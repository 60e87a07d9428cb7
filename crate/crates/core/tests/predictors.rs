use costroute::dataset::split;
use costroute::experiment::build_reps;
use costroute::experiment::RepresentationConfig;
use costroute::predictors::{
    fit_linear_gradient, fit_regression, load_predictor, predict_matrix, predictor_from_bytes, predictor_to_bytes,
    save_predictor, train, Architecture, PredictorConfig, Target, TrainOptions,
};
use costroute::representations::{ModelRepresentation, RepresentationSet};
use costroute::synth::synth_generate;
use costroute::{Error, QueryRecord, RoutingDataset, SplitSpec, SynthSpec};
use ndarray::{Array2, Axis};

struct Fixture {
    train: RoutingDataset,
    val: RoutingDataset,
    test: RoutingDataset,
    reps: RepresentationSet,
}

fn fixture(n: usize, noise: f64, seed: u64) -> Fixture {
    let spec = SynthSpec { n, noise, ..SynthSpec::default() };
    let ds = synth_generate(&spec, seed).unwrap();
    let (train, val, test) = split(&ds, &SplitSpec { seed, ..SplitSpec::default() }).unwrap();
    let reps = build_reps(&RepresentationConfig::default(), &train).unwrap();
    Fixture { train, val, test, reps }
}

fn config(arch: Architecture, target: Target, epochs: usize) -> PredictorConfig {
    let mut c = PredictorConfig::new(arch, target);
    c.epochs = epochs;
    c.seed = 11;
    c
}

fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(|x| x * x).mean().unwrap()
}

#[test]
fn training_is_bitwise_deterministic() {
    let f = fixture(300, 0.1, 1);
    for arch in [Architecture::Attention, Architecture::Fcn2Emb, Architecture::Fcn3] {
        for target in [Target::Quality, Target::Cost] {
            let c = config(arch, target, 15);
            let (a, ra) = train(&f.train, &f.val, Some(&f.reps), &c).unwrap();
            let (b, rb) = train(&f.train, &f.val, Some(&f.reps), &c).unwrap();
            assert_eq!(a.params().unwrap(), b.params().unwrap(), "{arch} {target}");
            assert_eq!(ra, rb);
        }
    }
}

#[test]
fn best_validation_snapshot_is_kept() {
    let f = fixture(300, 0.1, 2);
    let (p, r) = train(&f.train, &f.val, Some(&f.reps), &config(Architecture::Fcn2, Target::Quality, 40)).unwrap();
    let best = r.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_loss, best);
    assert_eq!(r.val_loss[r.best_epoch], best);
    let pm = predict_matrix(&p, &f.val, None).unwrap();
    assert!((mse(&pm.values, &f.val.quality_matrix()) - best).abs() < 1e-12);
}

#[test]
fn constant_targets_are_learned() {
    let f = fixture(2000, 0.1, 3);
    let flatten = |ds: &RoutingDataset| {
        let recs = ds
            .records()
            .iter()
            .map(|r| QueryRecord { quality: vec![0.7; r.quality.len()], ..r.clone() })
            .collect();
        RoutingDataset::new(ds.pool().to_vec(), ds.dim(), recs).unwrap()
    };
    let (tr, va, te) = (flatten(&f.train), flatten(&f.val), flatten(&f.test));
    let mut c = config(Architecture::Fcn2, Target::Quality, 1000);
    c.batch_size = 32;
    let (p, _) = train(&tr, &va, None, &c).unwrap();
    let pm = predict_matrix(&p, &te, None).unwrap();
    let (lo, hi) = pm.values.iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    assert!(lo >= 0.69 && hi <= 0.71, "{lo} {hi} {}", pm.values.mean().unwrap());
}

#[test]
fn attention_beats_the_mean_baseline() {
    let f = fixture(1000, 0.1, 4);
    let (p, _) = train(&f.train, &f.val, Some(&f.reps), &config(Architecture::Attention, Target::Quality, 1000)).unwrap();
    let pm = predict_matrix(&p, &f.test, Some(&f.reps)).unwrap();
    let truth = f.test.quality_matrix();
    let mean = f.train.quality_matrix().mean_axis(Axis(0)).unwrap();
    let baseline = mse(&(Array2::zeros(truth.dim()) + &mean), &truth);
    let attention = mse(&pm.values, &truth);
    assert!(attention < baseline, "attention {attention} vs mean {baseline}");
}

#[test]
fn fcn2_emb_is_competitive_with_fcn2() {
    let f = fixture(1000, 0.0, 5);
    let truth = f.test.quality_matrix();
    let run = |arch| {
        let (p, _) = train(&f.train, &f.val, Some(&f.reps), &config(arch, Target::Quality, 1000)).unwrap();
        mse(&predict_matrix(&p, &f.test, Some(&f.reps)).unwrap().values, &truth)
    };
    let (emb, plain) = (run(Architecture::Fcn2Emb), run(Architecture::Fcn2));
    assert!(emb <= 1.5 * plain, "fcn2_emb {emb} vs fcn2 {plain}");
}

#[test]
fn heads_respect_target_ranges() {
    let f = fixture(200, 0.1, 6);
    for arch in Architecture::ALL {
        for target in [Target::Quality, Target::Cost] {
            let (p, _) = train(&f.train, &f.val, Some(&f.reps), &config(arch, target, 5)).unwrap();
            let pm = predict_matrix(&p, &f.test, Some(&f.reps)).unwrap();
            for &v in &pm.values {
                match target {
                    Target::Quality => assert!((0.0..=1.0).contains(&v), "{arch}: {v}"),
                    Target::Cost => assert!(v >= 0.0, "{arch}: {v}"),
                }
            }
        }
    }
}

#[test]
fn identical_representations_get_identical_predictions() {
    let f = fixture(200, 0.1, 7);
    let mut models: Vec<ModelRepresentation> = f.reps.models().to_vec();
    models[1].values = models[0].values.clone();
    let twins = RepresentationSet::new(models).unwrap();
    for arch in [Architecture::Attention, Architecture::RegressionEmb, Architecture::Fcn2Emb, Architecture::Fcn3Emb] {
        let (p, _) = train(&f.train, &f.val, Some(&f.reps), &config(arch, Target::Quality, 5)).unwrap();
        let pm = predict_matrix(&p, &f.test, Some(&twins)).unwrap();
        for row in pm.values.outer_iter() {
            assert_eq!(row[0], row[1], "{arch}");
        }
    }
}

#[test]
fn batch_prediction_equals_per_query_loop() {
    let f = fixture(500, 0.1, 8);
    for arch in Architecture::ALL {
        let (p, _) = train(&f.train, &f.val, Some(&f.reps), &config(arch, Target::Quality, 5)).unwrap();
        let batch = predict_matrix(&p, &f.test, Some(&f.reps)).unwrap();
        assert_eq!(batch.num_queries(), 100);
        for i in 0..f.test.len() {
            let one = f.test.select(&[i]);
            let row = predict_matrix(&p, &one, Some(&f.reps)).unwrap();
            for (a, b) in row.values.iter().zip(batch.row(i)) {
                assert!((a - b).abs() <= 1e-12, "{arch}");
            }
        }
        let order: Vec<usize> = (0..f.test.len()).rev().collect();
        let reversed = predict_matrix(&p, &f.test.select(&order), Some(&f.reps)).unwrap();
        for (i, &o) in order.iter().enumerate() {
            for (a, b) in reversed.row(i).iter().zip(batch.row(o)) {
                assert!((a - b).abs() <= 1e-12, "{arch}");
            }
        }
    }
}

#[test]
fn artifacts_round_trip_every_architecture() {
    let f = fixture(200, 0.1, 9);
    let dir = tempfile::tempdir().unwrap();
    for arch in Architecture::ALL {
        for target in [Target::Quality, Target::Cost] {
            let (p, _) = train(&f.train, &f.val, Some(&f.reps), &config(arch, target, 3)).unwrap();
            let path = dir.path().join(format!("{arch}-{target}.bin"));
            save_predictor(&p, &path).unwrap();
            let back = load_predictor(&path, Some((arch, target))).unwrap();
            assert_eq!(back, p);
            let a = predict_matrix(&p, &f.test, Some(&f.reps)).unwrap();
            let b = predict_matrix(&back, &f.test, Some(&f.reps)).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn artifacts_reject_corruption_and_mismatches() {
    let f = fixture(200, 0.1, 10);
    let (p, _) = train(&f.train, &f.val, Some(&f.reps), &config(Architecture::Attention, Target::Quality, 3)).unwrap();
    let bytes = predictor_to_bytes(&p);
    assert!(predictor_from_bytes(&bytes).is_ok());

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_version = bytes.clone();
    bad_version[8] = 99;
    let mut trailing = bytes.clone();
    trailing.push(0);
    for corrupt in [bad_magic, bad_version, bytes[..bytes.len() - 8].to_vec(), trailing, bytes[..10].to_vec()] {
        assert!(matches!(predictor_from_bytes(&corrupt), Err(Error::Artifact(_))));
    }

    // A header claiming a different architecture no longer matches the arrays.
    let text = String::from_utf8_lossy(&bytes).replace("\"architecture\":\"attention\"", "\"architecture\":\"fcn2\"");
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let mut swapped = bytes.clone();
    let header = &text.as_bytes()[16..16 + len - 5];
    swapped.splice(16..16 + len, header.iter().copied());
    swapped[12..16].copy_from_slice(&((len - 5) as u32).to_le_bytes());
    assert!(predictor_from_bytes(&swapped).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.bin");
    save_predictor(&p, &path).unwrap();
    assert!(load_predictor(&path, Some((Architecture::Fcn2, Target::Quality))).is_err());
    assert!(load_predictor(&path, Some((Architecture::Attention, Target::Cost))).is_err());
    assert!(load_predictor(&dir.path().join("missing.bin"), None).is_err());
}

#[test]
fn closed_form_regression_is_optimal() {
    let f = fixture(300, 0.1, 11);
    let x = f.train.embedding_matrix();
    let t = f.train.quality_matrix();
    let closed = fit_regression(&f.train, Target::Quality).unwrap();
    let opts = TrainOptions { learning_rate: 1e-2, batch_size: 1024, weight_decay: 0.0, epochs: 2000, seed: 1 };
    let (grad, _) = fit_linear_gradient(x.view(), t.view(), &opts).unwrap();
    let unclamped = costroute::predictors::fit_least_squares(x.view(), t.view(), true, costroute::predictors::RIDGE).unwrap();
    let closed_mse = mse(&unclamped.predict(x.view()).unwrap(), &t);
    let grad_mse = mse(&grad.predict(x.view()).unwrap(), &t);
    assert!(closed_mse <= grad_mse + 1e-6, "{closed_mse} vs {grad_mse}");
    // The routed predictor clamps into the quality range.
    let pm = predict_matrix(&closed, &f.test, None).unwrap();
    assert!(pm.values.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn divergence_is_reported_with_the_epoch() {
    let x = Array2::from_shape_fn((20, 2), |(i, j)| (i + j) as f64);
    let t = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
    let opts = TrainOptions { learning_rate: 1e300, batch_size: 4, weight_decay: 0.0, epochs: 50, seed: 0 };
    match fit_linear_gradient(x.view(), t.view(), &opts) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch < 50),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn missing_representations_are_an_error() {
    let f = fixture(200, 0.1, 12);
    assert!(train(&f.train, &f.val, None, &config(Architecture::Attention, Target::Quality, 2)).is_err());
    let (p, _) = train(&f.train, &f.val, Some(&f.reps), &config(Architecture::Fcn2Emb, Target::Quality, 2)).unwrap();
    assert!(predict_matrix(&p, &f.test, None).is_err());
}
