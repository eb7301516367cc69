mod common;

use common::{features, proxies, rng};
use inmap_core::theory::mean_nearest_similarity;
use inmap_core::{
    build_synthetic_model, evaluate, run_inmap, text_logits, InmapParams, Mode, SyntheticModel,
    SyntheticSpec,
};

fn gap_model(seed: u64, samples: usize) -> SyntheticModel {
    let mut spec = SyntheticSpec::new(16, 10, samples, 0.6, 3).with_seed(seed);
    spec.ambient_dim = Some(32);
    build_synthetic_model(&spec).unwrap()
}

#[test]
fn logits_match_double_loop() {
    let mut r = rng(11);
    let x = features(&mut r, 3, 4);
    let z = proxies(&mut r, 2, 4);
    let m = text_logits(&x, &z).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let mut dot = 0.0;
            for k in 0..4 {
                dot += x.view()[[i, k]] * z.view()[[j, k]];
            }
            assert!((m.view()[[i, j]] - dot).abs() < 1e-6);
        }
    }
}

#[test]
fn disabled_refinements_reproduce_baseline() {
    let model = gap_model(4, 400);
    let off = InmapParams {
        alpha: 1.0,
        gamma: 1.0,
        pgd_iters: 0,
        ..InmapParams::default()
    };
    let base = InmapParams {
        mode: Mode::Baseline,
        ..InmapParams::default()
    };
    let a = run_inmap(&model.features, &model.text_proxies, None, &off).unwrap();
    let b = run_inmap(&model.features, &model.text_proxies, None, &base).unwrap();
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(a.proxies, model.text_proxies);
}

#[test]
fn identical_inputs_identical_outputs() {
    let model = gap_model(5, 300);
    let params = InmapParams {
        pgd_iters: 100,
        ..InmapParams::default()
    };
    let a = run_inmap(&model.features, &model.text_proxies, None, &params).unwrap();
    let b = run_inmap(&model.features, &model.text_proxies, None, &params).unwrap();
    assert_eq!(a.predictions, b.predictions);
    let bits = |w: &inmap_core::ProxySet| w.view().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.proxies), bits(&b.proxies));
}

#[test]
fn separate_training_set_drives_the_proxies() {
    let train = gap_model(6, 600);
    let target = gap_model(6, 200);
    let params = InmapParams {
        pgd_iters: 200,
        ..InmapParams::for_separate_train_set()
    };
    assert_eq!((params.tau_i, params.alpha), (0.03, 0.4));
    let out = run_inmap(&target.features, &target.text_proxies, Some(&train.features), &params)
        .unwrap();
    assert_eq!(out.labels.rows(), 600);
    assert_eq!(out.predictions.len(), 200);
}

#[test]
fn similarity_grows_with_image_temperature() {
    let temps = [0.01, 0.02, 0.03, 0.04, 0.05];
    let seeds = 5;
    let mut sims = vec![0.0; temps.len()];
    for seed in 0..seeds {
        let model = gap_model(100 + seed, 500);
        for (k, &tau_i) in temps.iter().enumerate() {
            let params = InmapParams {
                tau_i,
                ..InmapParams::default()
            };
            let out = run_inmap(&model.features, &model.text_proxies, None, &params).unwrap();
            let m = evaluate(&out.predictions, &model.labels, &model.features, &out.proxies).unwrap();
            sims[k] += m.sim / seeds as f64;
        }
    }
    let text_sim = {
        let model = gap_model(100, 500);
        mean_nearest_similarity(model.features.view(), model.text_proxies.view())
    };
    assert!(sims.windows(2).all(|w| w[1] >= w[0]), "{sims:?}");
    assert!(sims[0] > text_sim, "{} vs text {text_sim}", sims[0]);
}
