use proptest::prelude::*;
use tukey_gh::eval::{self, IntervalVariant};
use tukey_gh::io::{Dataset, ExperimentConfig, Split};
use tukey_gh::synth::{generate_gandh, GAndHFunctions};
use tukey_gh::transform::{log_density, quantile, sample, tau, tau_inverse};
use tukey_gh::{InverseSolverConfig, Matrix, ShapeParams, TghParams, TrainedModel};

fn dataset(n: usize, seed: u64) -> Dataset {
    let data = generate_gandh(n, &GAndHFunctions::default(), seed).unwrap();
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    Dataset::from_reader(buf.as_slice(), "y", &["x".to_string()], &[]).unwrap()
}

fn config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{"epochs": 4, "hidden_layers": [16, 16], "batch_size": 64,
            "optimizer": {"lr": 0.003}, "split": {"kind": "fraction", "train": 0.75, "seed": 2}}"#,
    )
    .unwrap()
}

#[test]
fn fit_save_load_predict() {
    let mut ds = dataset(800, 1);
    let (model, history) = TrainedModel::fit(&config(), &mut ds).unwrap();
    assert_eq!(history.epochs.len(), 4);
    assert!(history.best_epoch.is_some());
    assert_eq!(ds.indices(Split::Train).len() + ds.indices(Split::Val).len(), 800);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tghn");
    model.save(&path).unwrap();
    assert!(TrainedModel::sidecar_path(&path).exists());
    let loaded = TrainedModel::load(&path).unwrap();

    let x = Matrix::from_rows(&[vec![0.1], vec![0.5], vec![0.9]]);
    let a = model.predict_params(&x).unwrap();
    let b = loaded.predict_params(&x).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(
            [p.mu, p.sigma, p.g, p.h].map(f64::to_bits),
            [q.mu, q.sigma, q.g, q.h].map(f64::to_bits)
        );
        assert!(p.sigma > 0.0 && p.h >= 0.0);
    }
}

#[test]
fn fit_is_deterministic() {
    let run = || {
        let mut ds = dataset(500, 4);
        TrainedModel::fit(&config(), &mut ds).unwrap().0.to_bytes().unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn fit_rejects_feature_mismatch() {
    let mut ds = dataset(100, 1);
    let mut cfg = config();
    cfg.features = vec!["z".into()];
    assert!(TrainedModel::fit(&cfg, &mut ds).is_err());
}

#[test]
fn intervals_cover_samples_from_their_law() {
    let p = TghParams::new(1.0, 0.7, 0.6, 0.15).unwrap();
    let ys = sample(&p, 40_000, 11).unwrap();
    for variant in [IntervalVariant::Symmetric, IntervalVariant::Shortest] {
        let iv = eval::interval(&p, 0.1, variant).unwrap();
        let cov = ys.iter().filter(|&&y| iv.contains(y)).count() as f64 / ys.len() as f64;
        // binomial sd at n = 40000 is 0.0015
        assert!((cov - 0.9).abs() < 0.006, "{variant:?}: {cov}");
    }
}

#[test]
fn true_parameters_give_uniform_pit() {
    let data = generate_gandh(5_000, &GAndHFunctions::default(), 8).unwrap();
    let fns = GAndHFunctions::default();
    let params: Vec<TghParams> = (0..data.len())
        .map(|i| fns.params_at(data.x.get(i, 0)).unwrap())
        .collect();
    let report = eval::residuals(&data.y, &params, &InverseSolverConfig::default()).unwrap();
    let crit = eval::ks_critical_value(0.01, data.len()).unwrap();
    assert!(report.ks_statistic < crit, "{} vs {crit}", report.ks_statistic);
}

proptest! {
    #[test]
    fn inverse_roundtrip(z in -5.0f64..5.0, g in -1.0f64..1.0, h in 0.0f64..0.5) {
        let shape = ShapeParams::new(g, h).unwrap();
        let t = tau(z, shape).unwrap();
        let back = tau_inverse(t, shape, &InverseSolverConfig::default()).unwrap();
        prop_assert!((back - z).abs() < 1e-9);
    }

    #[test]
    fn quantiles_are_monotone_and_densities_finite(
        a in 0.01f64..0.98, g in -1.0f64..1.0, h in 0.0f64..0.4, sigma in 0.1f64..3.0,
    ) {
        let p = TghParams::new(0.5, sigma, g, h).unwrap();
        let lo = quantile(a, &p).unwrap();
        let hi = quantile(a + 0.01, &p).unwrap();
        prop_assert!(lo < hi);
        let ld = log_density(lo, &p, &InverseSolverConfig::default()).unwrap();
        prop_assert!(ld.is_finite());
    }
}
