use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::synthetic::SyntheticModel;
use crate::error::{Error, Result};
use crate::proxy::{learn_proxies, PgdConfig};
use crate::pseudo_label::{softmax_rows_in_place, LabelDistribution, LabelRole};
use crate::store::{EmbeddingMatrix, LabelVector};

/// One contrastive batch seen from a single anchor: the anchor feature, `m`
/// text embeddings and the index of the paired text.
#[derive(Debug, Clone)]
pub struct ContrastiveSample {
    pub anchor: Array1<f64>,
    pub texts: Array2<f64>,
    pub positive: usize,
}

/// Random unit anchors and texts, positive pair at index 0.
pub fn random_contrastive_samples(
    count: usize,
    batch: usize,
    dim: usize,
    seed: u64,
) -> Vec<ContrastiveSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_row = |rng: &mut ChaCha8Rng| {
        let v: Array1<f64> = Array1::from_shape_simple_fn(dim, || StandardNormal.sample(rng));
        let norm = v.dot(&v).sqrt();
        v / norm
    };
    (0..count)
        .map(|_| {
            let anchor = unit_row(&mut rng);
            let mut texts = Array2::zeros((batch, dim));
            for mut row in texts.axis_iter_mut(Axis(0)) {
                row.assign(&unit_row(&mut rng));
            }
            ContrastiveSample {
                anchor,
                texts,
                positive: 0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityBounds {
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    /// Nearest negative text.
    pub nearest_negative: usize,
    /// `x.t_pos - (x.t_k + c1 tau)`.
    pub lower_slack: f64,
    /// `(x.t_k + c2 tau) - x.t_pos`.
    pub upper_slack: f64,
    /// Softmax probability rounded to exactly 0 or 1.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Report {
    pub batch: usize,
    pub temperature: f64,
    pub samples: Vec<SimilarityBounds>,
}

impl Prop1Report {
    pub fn checked(&self) -> impl Iterator<Item = &SimilarityBounds> {
        self.samples.iter().filter(|s| !s.degenerate)
    }

    pub fn excluded(&self) -> usize {
        self.samples.iter().filter(|s| s.degenerate).count()
    }

    pub fn violations(&self, tol: f64) -> usize {
        self.checked()
            .filter(|s| s.lower_slack < -tol || s.upper_slack < -tol)
            .count()
    }

    pub fn min_slack(&self) -> f64 {
        self.checked()
            .map(|s| s.lower_slack.min(s.upper_slack))
            .fold(f64::INFINITY, f64::min)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Bounds on the positive-pair similarity in terms of the nearest negative,
/// with `c1 = ln(delta / (1 - delta))` and `c2 = ln(delta (m - 1) / (1 - delta))`.
///
/// `delta` and `1 - delta` are carried in log form so that confident samples
/// keep full precision.
pub fn similarity_bounds(sample: &ContrastiveSample, temperature: f64) -> Result<SimilarityBounds> {
    let m = sample.texts.nrows();
    if m < 2 {
        return Err(Error::Config(format!("batch size must be at least 2, got {m}")));
    }
    if sample.positive >= m {
        return Err(Error::Shape(format!("positive index {} outside batch {m}", sample.positive)));
    }
    let sims = sample.texts.dot(&sample.anchor);
    let pos = sample.positive;
    let negatives = sims
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != pos)
        .map(|(_, &s)| s / temperature);
    let lse_neg = log_sum_exp(negatives);
    let lse_all = log_sum_exp(sims.iter().map(|&s| s / temperature));
    let log_delta = sims[pos] / temperature - lse_all;
    let log_rest = lse_neg - lse_all;
    let delta = log_delta.exp();

    let nearest_negative = (0..m)
        .filter(|&j| j != pos)
        .fold(None, |best: Option<usize>, j| match best {
            Some(b) if sims[b] >= sims[j] => Some(b),
            _ => Some(j),
        })
        .expect("batch has a negative");

    let c1 = log_delta - log_rest;
    let c2 = c1 + ((m - 1) as f64).ln();
    let (s_pos, s_neg) = (sims[pos], sims[nearest_negative]);
    Ok(SimilarityBounds {
        delta,
        c1,
        c2,
        nearest_negative,
        lower_slack: s_pos - (s_neg + c1 * temperature),
        upper_slack: (s_neg + c2 * temperature) - s_pos,
        degenerate: delta == 0.0 || delta == 1.0,
    })
}

pub fn verify_prop1(samples: &[ContrastiveSample], temperature: f64) -> Result<Prop1Report> {
    let batch = samples.first().map_or(0, |s| s.texts.nrows());
    let samples = samples
        .iter()
        .map(|s| similarity_bounds(s, temperature))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prop1Report {
        batch,
        temperature,
        samples,
    })
}

fn softmax_of(scores: Array2<f64>) -> Array2<f64> {
    let mut p = scores;
    softmax_rows_in_place(&mut p);
    p
}

fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest `|P' - P|` between text-proxy predictions at `text_temperature` and
/// true-proxy predictions at `image_temperature`.
pub fn prediction_gap(
    model: &SyntheticModel,
    text_temperature: f64,
    image_temperature: f64,
) -> f64 {
    let x = model.features.view();
    let from_text = softmax_of(x.dot(&model.text_proxies.view().t()) / text_temperature);
    let from_truth = softmax_of(x.dot(&model.true_proxies.view().t()) / image_temperature);
    max_abs_diff(from_text.view(), from_truth.view())
}

/// Prediction gap at the calibrated image temperature `tau_T / sqrt(a)`.
pub fn verify_prop3(model: &SyntheticModel, text_temperature: f64) -> Result<f64> {
    if !model.spec.full_overlap && model.spec.overlap < 1.0 {
        return Err(Error::Config(
            "calibration check needs a model whose in-span text part equals the true proxies"
                .into(),
        ));
    }
    let a = model.spec.overlap;
    if a <= 0.0 {
        return Err(Error::Config("overlap 0 leaves the image temperature undefined".into()));
    }
    Ok(prediction_gap(model, text_temperature, text_temperature / a.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapBound {
    /// `||Z - W*||_F^2`
    pub lhs: f64,
    /// `2C(1 - sqrt(a)) + sqrt(a) sum_{i>r} s_i^2`
    pub rhs: f64,
    pub holds: bool,
    pub renorm_slack: f64,
}

/// Tolerance used when comparing the two sides of the proxy-gap bound.
pub const GAP_BOUND_TOL: f64 = 1e-6;

pub fn verify_thm1(model: &SyntheticModel) -> GapBound {
    let diff = &model.text_proxies.view() - &model.true_proxies.view();
    let lhs = diff.iter().map(|v| v * v).sum::<f64>();
    let c = model.spec.classes as f64;
    let sa = model.spec.overlap.sqrt();
    let tail: f64 = model
        .singular_values
        .iter()
        .skip(model.spec.rank)
        .map(|s| s * s)
        .sum();
    let rhs = 2.0 * c * (1.0 - sa) + sa * tail;
    GapBound {
        lhs,
        rhs,
        holds: lhs >= rhs - GAP_BOUND_TOL,
        renorm_slack: model.renorm_slack,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointResidual {
    pub class: usize,
    pub denominator: f64,
    pub residual: f64,
    /// Distance from the unit numerator direction, ignoring the denominator's sign.
    pub direction_residual: f64,
}

/// Compares each proxy with the closed-form stationary point of the
/// supervised squared-distance objective,
/// `normalize((sum_{y_i=j} (1-p_ij) x_i - sum_{y_k!=j} p_kj x_k) / denominator)`,
/// where `p` is evaluated at `w` itself.
pub fn prop2_residuals(
    x: &EmbeddingMatrix,
    labels: &LabelVector,
    w: ArrayView2<'_, f64>,
    temperature: f64,
) -> Result<Vec<FixedPointResidual>> {
    let c = w.nrows();
    labels.validate(c)?;
    if labels.len() != x.rows() || x.cols() != w.ncols() {
        return Err(Error::Shape("labels, features and proxies disagree".into()));
    }
    let xv = x.view();
    let mut scores = Array2::<f64>::zeros((x.rows(), c));
    for (i, xi) in xv.axis_iter(Axis(0)).enumerate() {
        for (j, wj) in w.axis_iter(Axis(0)).enumerate() {
            let d = &xi - &wj;
            scores[[i, j]] = -d.dot(&d) / (2.0 * temperature);
        }
    }
    let p = softmax_of(scores);
    let y = LabelDistribution::one_hot(labels, c)?;
    let weights = &y.view() - &p;
    let numerators = weights.t().dot(&xv);
    let denominators = weights.sum_axis(Axis(0));

    Ok((0..c)
        .map(|j| {
            let num = numerators.row(j);
            let distance = |v: Array1<f64>| {
                let norm = v.dot(&v).sqrt();
                if norm > 0.0 && norm.is_finite() {
                    let diff = &w.row(j) - &(&v / norm);
                    diff.dot(&diff).sqrt()
                } else {
                    f64::INFINITY
                }
            };
            let residual = distance(&num / denominators[j]);
            let direction_residual = distance(num.to_owned());
            FixedPointResidual {
                class: j,
                denominator: denominators[j],
                residual,
                direction_residual,
            }
        })
        .collect())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let rank = (start + end - 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            out[k] = rank;
        }
        start = end;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSweep {
    pub noise_levels: Vec<f64>,
    /// `||P' - Y||_F` per level.
    pub label_gaps: Vec<f64>,
    /// `||W' - W_clean||_F` per level.
    pub proxy_gaps: Vec<f64>,
    pub rank_correlation: f64,
}

/// Default noise grid `0, 0.05, ..., 0.5`.
pub fn default_noise_levels() -> Vec<f64> {
    (0..=10).map(|k| k as f64 * 0.05).collect()
}

/// Mixes the true one-hot labels with the uniform distribution,
/// `(1 - eps) Y + eps / C`.
pub fn noisy_labels(labels: &LabelVector, classes: usize, eps: f64) -> Result<LabelDistribution> {
    let y = LabelDistribution::one_hot(labels, classes)?;
    let mixed = y.view().mapv(|v| (1.0 - eps) * v + eps / classes as f64);
    LabelDistribution::new(mixed, LabelRole::Raw)
}

/// Trains proxies on increasingly noisy labels and relates the label error to
/// the distance from the clean-label proxies.
pub fn thm2_noise_sweep(
    model: &SyntheticModel,
    noise_levels: &[f64],
    cfg: &PgdConfig,
) -> Result<NoiseSweep> {
    let c = model.spec.classes;
    let x = &model.features;
    let clean = LabelDistribution::one_hot(&model.labels, c)?;
    let (w_clean, _) = learn_proxies(x, &clean, &model.text_proxies, cfg)?;

    let mut label_gaps = Vec::with_capacity(noise_levels.len());
    let mut proxy_gaps = Vec::with_capacity(noise_levels.len());
    for &eps in noise_levels {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Config(format!("noise level {eps} outside [0, 1]")));
        }
        let noisy = noisy_labels(&model.labels, c, eps)?;
        let (w, _) = learn_proxies(x, &noisy, &model.text_proxies, cfg)?;
        label_gaps.push(frobenius(&noisy.view(), &clean.view()));
        proxy_gaps.push(frobenius(&w.view(), &w_clean.view()));
    }
    Ok(NoiseSweep {
        noise_levels: noise_levels.to_vec(),
        rank_correlation: spearman(&label_gaps, &proxy_gaps),
        label_gaps,
        proxy_gaps,
    })
}

fn frobenius(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean over examples of the best similarity to any proxy.
pub fn mean_nearest_similarity(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>) -> f64 {
    let sims = x.dot(&w.t());
    let total: f64 = sims
        .axis_iter(Axis(0))
        .map(|row: ArrayView1<'_, f64>| row.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .sum();
    total / x.nrows() as f64
}
