use std::fs;
use std::path::{Path, PathBuf};

use inmap_core::theory::{
    prop1_check, prop2_check, prop3_check, thm1_check, thm2_check, CheckSummary, TheoryConfig,
    TheoryReport,
};
use inmap_core::{
    build_synthetic_model, evaluate, learn_proxies, load_labels, load_matrix, predict,
    pseudo_labels, run_inmap, save_array, save_labels, save_matrix, save_proxies,
    EmbeddingMatrix, LabelDistribution, LabelRole, LabelVector, Metrics, ProxySet,
    SyntheticSpec, TrainTrace,
};
use serde::Serialize;

use crate::args::{EvalArgs, LearnArgs, PipelineArgs, SynthArgs, TheoryArgs};
use crate::config::{required, Settings};
use crate::failure::{At, Failure};
use crate::output::{write_json, Manifest};

/// Row sums of labels read back from binary32 may drift by this much.
const STORED_ROW_SUM_TOL: f64 = 1e-3;

fn load_images(path: &Path, stage: &str) -> Result<EmbeddingMatrix, Failure> {
    load_matrix(path).at(stage)
}

fn load_proxies(path: &Path, stage: &str) -> Result<ProxySet, Failure> {
    ProxySet::from_matrix(load_matrix(path).at(stage)?).at(stage)
}

fn load_label_matrix(path: &Path, role: LabelRole) -> Result<LabelDistribution, Failure> {
    let stage = "load-pseudo-labels";
    let mut probs = load_matrix(path).at(stage)?.into_inner();
    for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
        let sum = row.sum();
        if !((sum - 1.0).abs() <= STORED_ROW_SUM_TOL) {
            return Err(Failure::at(
                stage,
                inmap_core::Error::Data(format!("label row {i} sums to {sum}")),
            ));
        }
        row.mapv_inplace(|p| p / sum);
    }
    LabelDistribution::new(probs, role).at(stage)
}

fn parse_role(name: &str) -> Result<LabelRole, Failure> {
    match name {
        "raw" => Ok(LabelRole::Raw),
        "refined" => Ok(LabelRole::Refined),
        "thresholded" => Ok(LabelRole::Thresholded),
        "ground_truth" => Ok(LabelRole::GroundTruth),
        other => Err(Failure::config(format!("unknown label role {other:?}"))),
    }
}

fn prepare_out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| {
        Failure::at(
            "write-outputs",
            inmap_core::Error::Data(format!("{}: {e}", dir.display())),
        )
    })
}

fn out_dir(settings: &Settings) -> Result<PathBuf, Failure> {
    let dir = required(&settings.out_dir, "out-dir")?;
    prepare_out_dir(&dir)?;
    Ok(dir)
}

fn write_trace(trace: &TrainTrace, path: &Path) -> Result<(), Failure> {
    trace.write_csv(path).at("write-outputs")
}

fn metrics_with_entropy(
    pred: &LabelVector,
    truth_path: &Path,
    x: &EmbeddingMatrix,
    w: &ProxySet,
    labels: Option<&LabelDistribution>,
) -> Result<Metrics, Failure> {
    let truth = load_labels(truth_path).at("load-labels")?;
    let mut metrics = evaluate(pred, &truth, x, w).at("evaluate")?;
    metrics.label_entropy = labels.map(LabelDistribution::mean_entropy);
    Ok(metrics)
}

pub fn infer(args: &PipelineArgs) -> Result<(), Failure> {
    let s = Settings::resolve(args)?;
    let x = load_images(&required(&s.images, "images")?, "load-images")?;
    let z = load_proxies(&required(&s.text_proxies, "text-proxies")?, "load-text-proxies")?;
    let train = match &s.proxy_train_images {
        Some(p) => Some(load_images(p, "load-proxy-train-images")?),
        None => None,
    };
    let dir = out_dir(&s)?;

    let out = run_inmap(&x, &z, train.as_ref(), &s.params)?;

    let mut manifest = Manifest::new("infer", &s);
    save_labels(&out.predictions, dir.join("predictions.bin")).at("write-outputs")?;
    manifest.output("predictions", "predictions.bin", None);
    save_proxies(&out.proxies, dir.join("proxies.bin")).at("write-outputs")?;
    manifest.output("proxies", "proxies.bin", None);
    save_array(out.labels.view(), dir.join("pseudo_labels.bin")).at("write-outputs")?;
    manifest.output("pseudo_labels", "pseudo_labels.bin", Some(out.labels.role()));
    if let Some(trace) = &out.trace {
        write_trace(trace, &dir.join("trace.csv"))?;
        manifest.output("trace", "trace.csv", None);
    }
    if let Some(truth) = &s.labels {
        let metrics = metrics_with_entropy(&out.predictions, truth, &x, &out.proxies, Some(&out.labels))?;
        write_json(&metrics, &dir.join("metrics.json"))?;
        manifest.output("metrics", "metrics.json", None);
    }
    manifest.write(&dir)
}

pub fn pseudo(args: &PipelineArgs) -> Result<(), Failure> {
    let s = Settings::resolve(args)?;
    let source = s.proxy_train_images.clone().or(s.images.clone());
    let x = load_images(&required(&source, "images")?, "load-images")?;
    let z = load_proxies(&required(&s.text_proxies, "text-proxies")?, "load-text-proxies")?;
    let dir = out_dir(&s)?;

    let labels = pseudo_labels(&x, &z, &s.params)?;

    let mut manifest = Manifest::new("pseudo", &s);
    save_array(labels.view(), dir.join("pseudo_labels.bin")).at("write-outputs")?;
    manifest.output("pseudo_labels", "pseudo_labels.bin", Some(labels.role()));
    manifest.write(&dir)
}

pub fn learn_proxy(args: &LearnArgs) -> Result<(), Failure> {
    let s = Settings::resolve(&args.pipeline)?;
    let role = parse_role(&args.label_role)?;
    let target = load_images(&required(&s.images, "images")?, "load-images")?;
    let train = match &s.proxy_train_images {
        Some(p) => Some(load_images(p, "load-proxy-train-images")?),
        None => None,
    };
    let z = load_proxies(&required(&s.text_proxies, "text-proxies")?, "load-text-proxies")?;
    let labels = load_label_matrix(&args.pseudo_labels, role)?;
    let dir = out_dir(&s)?;

    let learn_on = train.as_ref().unwrap_or(&target);
    let (w, trace) = learn_proxies(learn_on, &labels, &z, &s.params.pgd()).at("proxy-learning")?;
    let predictions = predict(&target, &w).at("predict")?;

    let mut manifest = Manifest::new("learn-proxy", &s);
    manifest.input("pseudo_labels", &args.pseudo_labels, Some(role));
    save_labels(&predictions, dir.join("predictions.bin")).at("write-outputs")?;
    manifest.output("predictions", "predictions.bin", None);
    save_proxies(&w, dir.join("proxies.bin")).at("write-outputs")?;
    manifest.output("proxies", "proxies.bin", None);
    write_trace(&trace, &dir.join("trace.csv"))?;
    manifest.output("trace", "trace.csv", None);
    if let Some(truth) = &s.labels {
        let metrics = metrics_with_entropy(&predictions, truth, &target, &w, Some(&labels))?;
        write_json(&metrics, &dir.join("metrics.json"))?;
        manifest.output("metrics", "metrics.json", None);
    }
    manifest.write(&dir)
}

pub fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let pred = load_labels(&args.predictions).at("load-predictions")?;
    let x = load_images(&args.images, "load-images")?;
    let w = load_proxies(&args.proxies, "load-proxies")?;
    let labels = match &args.pseudo_labels {
        Some(p) => Some(load_label_matrix(p, LabelRole::Thresholded)?),
        None => None,
    };
    let metrics = metrics_with_entropy(&pred, &args.labels, &x, &w, labels.as_ref())?;
    let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    println!("{text}");
    if let Some(dir) = &args.out_dir {
        prepare_out_dir(dir)?;
        write_json(&metrics, &dir.join("metrics.json"))?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let mut spec = SyntheticSpec::new(args.dim, args.classes, args.samples, args.overlap, args.rank)
        .with_seed(args.seed)
        .with_concentration(args.concentration);
    spec.ambient_dim = args.ambient_dim;
    if args.full_overlap {
        spec = spec.with_full_overlap();
    }
    let model = build_synthetic_model(&spec).at("synth")?;
    prepare_out_dir(&args.out_dir)?;
    let dir = &args.out_dir;
    save_matrix(&model.features, dir.join("images.bin")).at("write-outputs")?;
    save_proxies(&model.text_proxies, dir.join("text_proxies.bin")).at("write-outputs")?;
    save_proxies(&model.true_proxies, dir.join("true_proxies.bin")).at("write-outputs")?;
    save_labels(&model.labels, dir.join("labels.bin")).at("write-outputs")?;

    #[derive(Serialize)]
    struct SynthManifest<'a> {
        command: &'static str,
        spec: &'a SyntheticSpec,
        singular_values: &'a [f64],
        renorm_slack: f64,
        outputs: [&'static str; 4],
    }
    write_json(
        &SynthManifest {
            command: "synth",
            spec: &model.spec,
            singular_values: &model.singular_values,
            renorm_slack: model.renorm_slack,
            outputs: ["images.bin", "text_proxies.bin", "true_proxies.bin", "labels.bin"],
        },
        &dir.join("manifest.json"),
    )
}

#[derive(Serialize)]
struct TheoryOutput<'a> {
    seed: u64,
    passed: bool,
    config: &'a TheoryConfig,
    checks: &'a [CheckSummary],
}

pub fn verify_theory(args: &TheoryArgs) -> Result<(), Failure> {
    let mut cfg = TheoryConfig {
        seed: args.seed,
        ..TheoryConfig::default()
    };
    if let Some(n) = args.prop1_samples {
        cfg.prop1_samples = n;
    }
    if let Some(n) = args.thm1_seeds {
        cfg.thm1_seeds = n;
    }
    if let Some(n) = args.thm2_models {
        cfg.thm2_models = n;
    }
    if let Some(n) = args.thm2_samples {
        cfg.thm2_samples = n;
    }
    let stage = "verify-theory";
    let mut checks = Vec::new();
    for &batch in &cfg.prop1_batches {
        for &t in &cfg.prop1_temperatures {
            checks.push(prop1_check(&cfg, batch, t).at(stage)?);
        }
    }
    for &a in &cfg.prop3_overlaps {
        checks.push(prop3_check(&cfg, a).at(stage)?);
    }
    for &a in &cfg.thm1_overlaps {
        for &r in &cfg.thm1_ranks {
            checks.push(thm1_check(&cfg, a, r).at(stage)?);
        }
    }
    if !args.skip_fitting {
        checks.push(prop2_check(&cfg).at(stage)?);
        checks.push(thm2_check(&cfg).at(stage)?);
    }
    let report = TheoryReport { checks };
    let output = TheoryOutput {
        seed: cfg.seed,
        passed: report.passed(),
        config: &cfg,
        checks: &report.checks,
    };
    println!("{}", serde_json::to_string_pretty(&output).expect("report serializes"));
    if let Some(dir) = &args.out_dir {
        prepare_out_dir(dir)?;
        write_json(&output, &dir.join("theory.json"))?;
    }
    Ok(())
}

