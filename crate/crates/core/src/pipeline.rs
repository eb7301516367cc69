//! End-to-end proxy learning: text logits, pseudo labels, transport
//! refinement, thresholding, proxy fitting and prediction, plus evaluation.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::proxy::{learn_proxies, predict, PgdConfig, TrainTrace};
use crate::pseudo_label::{
    sinkhorn_refine, smooth_reference, softmax_labels, text_logits, threshold_labels,
    LabelDistribution, SinkhornConfig,
};
use crate::store::{EmbeddingMatrix, LabelVector, ProxySet};
use crate::theory::mean_nearest_similarity;

/// Which stages of the method run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Nearest text proxy.
    Baseline,
    /// Proxy learning on raw softmax labels.
    Inmap25,
    /// Proxy learning on thresholded softmax labels.
    Inmap50,
    /// Transport-refined labels, no proxy learning.
    Sinkhorn,
    /// Refinement, thresholding and proxy learning.
    Inmap,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Baseline,
        Mode::Inmap25,
        Mode::Inmap50,
        Mode::Sinkhorn,
        Mode::Inmap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Inmap25 => "inmap25",
            Mode::Inmap50 => "inmap50",
            Mode::Sinkhorn => "sinkhorn",
            Mode::Inmap => "inmap",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InmapParams {
    pub tau_t: f64,
    pub tau_i: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub sinkhorn_iters: usize,
    pub pgd_iters: usize,
    pub lr: f64,
    pub stop_tolerance: Option<f64>,
    pub mode: Mode,
}

impl Default for InmapParams {
    fn default() -> Self {
        Self {
            tau_t: 0.01,
            tau_i: 0.04,
            alpha: 0.6,
            gamma: 0.0,
            sinkhorn_iters: 20,
            pgd_iters: 2000,
            lr: 10.0,
            stop_tolerance: None,
            mode: Mode::Inmap,
        }
    }
}

impl InmapParams {
    /// Defaults when proxies are learned on a separate unlabeled set.
    pub fn for_separate_train_set() -> Self {
        Self {
            tau_i: 0.03,
            alpha: 0.4,
            ..Self::default()
        }
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            temperature: self.tau_t,
            iterations: self.sinkhorn_iters,
        }
    }

    pub fn pgd(&self) -> PgdConfig {
        PgdConfig {
            temperature: self.tau_i,
            iterations: self.pgd_iters,
            learning_rate: self.lr,
            stop_tolerance: self.stop_tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TextLogits,
    Softmax,
    Reference,
    Sinkhorn,
    Threshold,
    ProxyLearning,
    Predict,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::TextLogits => "text-logits",
            Stage::Softmax => "softmax-labels",
            Stage::Reference => "reference-distribution",
            Stage::Sinkhorn => "sinkhorn-refine",
            Stage::Threshold => "threshold-labels",
            Stage::ProxyLearning => "proxy-learning",
            Stage::Predict => "predict",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Pseudo labels for `x` under `params.mode`.
///
/// Baseline and inmap25 return raw softmax labels, inmap50 thresholds them,
/// sinkhorn and inmap refine by transport before thresholding.
pub fn pseudo_labels(
    x: &EmbeddingMatrix,
    z: &ProxySet,
    params: &InmapParams,
) -> std::result::Result<LabelDistribution, StageError> {
    let logits = text_logits(x, z).at(Stage::TextLogits)?;
    let raw = softmax_labels(&logits, params.tau_t).at(Stage::Softmax)?;
    match params.mode {
        Mode::Baseline | Mode::Inmap25 => Ok(raw),
        Mode::Inmap50 => threshold_labels(&raw, params.alpha).at(Stage::Threshold),
        Mode::Sinkhorn | Mode::Inmap => {
            let q = smooth_reference(&raw, params.gamma).at(Stage::Reference)?;
            let refined = sinkhorn_refine(&logits, &q, &params.sinkhorn()).at(Stage::Sinkhorn)?;
            threshold_labels(&refined, params.alpha).at(Stage::Threshold)
        }
    }
}

#[derive(Debug, Clone)]
pub struct InmapOutput {
    pub predictions: LabelVector,
    pub proxies: ProxySet,
    /// Labels the proxies were fitted to, or that produced the predictions.
    pub labels: LabelDistribution,
    pub trace: Option<TrainTrace>,
}

/// Runs the method on `target`. When `proxy_train` is given, pseudo labels
/// and proxies come from that set and only prediction uses `target`.
pub fn run_inmap(
    target: &EmbeddingMatrix,
    z: &ProxySet,
    proxy_train: Option<&EmbeddingMatrix>,
    params: &InmapParams,
) -> std::result::Result<InmapOutput, StageError> {
    match params.mode {
        Mode::Baseline => {
            let labels = pseudo_labels(target, z, params)?;
            let predictions = predict(target, z).at(Stage::Predict)?;
            Ok(InmapOutput {
                predictions,
                proxies: z.clone(),
                labels,
                trace: None,
            })
        }
        Mode::Sinkhorn => {
            let labels = pseudo_labels(target, z, params)?;
            Ok(InmapOutput {
                predictions: labels.argmax(),
                proxies: z.clone(),
                labels,
                trace: None,
            })
        }
        Mode::Inmap25 | Mode::Inmap50 | Mode::Inmap => {
            let learn_on = proxy_train.unwrap_or(target);
            let labels = pseudo_labels(learn_on, z, params)?;
            let (proxies, trace) =
                learn_proxies(learn_on, &labels, z, &params.pgd()).at(Stage::ProxyLearning)?;
            let predictions = predict(target, &proxies).at(Stage::Predict)?;
            Ok(InmapOutput {
                predictions,
                proxies,
                labels,
                trace: Some(trace),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Mean over examples of the largest similarity to any proxy.
    pub sim: f64,
    /// `None` for classes without examples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Mean row entropy of the pseudo labels, when known.
    pub label_entropy: Option<f64>,
}

pub fn evaluate(
    pred: &LabelVector,
    truth: &LabelVector,
    x: &EmbeddingMatrix,
    w: &ProxySet,
) -> Result<Metrics> {
    if pred.len() != truth.len() || pred.len() != x.rows() {
        return Err(Error::Shape(format!(
            "{} predictions, {} labels, {} examples",
            pred.len(),
            truth.len(),
            x.rows()
        )));
    }
    if x.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "features have {} columns, proxies have {}",
            x.cols(),
            w.cols()
        )));
    }
    let classes = w.classes();
    truth.validate(classes)?;
    pred.validate(classes)?;

    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
        counts[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    Ok(Metrics {
        accuracy: correct as f64 / pred.len() as f64,
        sim: mean_nearest_similarity(x.view(), w.view()),
        per_class_accuracy: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
            .collect(),
        label_entropy: None,
    })
}
