//! Pseudo labels from text-proxy logits: softmax labeling, transport-based
//! refinement against a reference class distribution, and confidence
//! thresholding.

mod sinkhorn;

pub use sinkhorn::{sinkhorn_refine, SinkhornConfig, SinkhornSolver, Q_FLOOR};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::{EmbeddingMatrix, LabelVector, ProxySet};

/// Tolerance on row sums of a label distribution.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Similarities between examples and proxies, `n x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsMatrix {
    data: Array2<f64>,
}

impl LogitsMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Empty("logits matrix has no entries".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("logits contain non-finite values".into()));
        }
        Ok(Self { data })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn classes(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    /// Row-wise argmax, ties to the lowest class index.
    pub fn argmax(&self) -> LabelVector {
        argmax_rows(self.data.view())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRole {
    Raw,
    Refined,
    Thresholded,
    GroundTruth,
}

/// Row-stochastic `n x C` matrix of per-example class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    probs: Array2<f64>,
    role: LabelRole,
}

impl LabelDistribution {
    pub fn new(probs: Array2<f64>, role: LabelRole) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::Empty("label distribution has no entries".into()));
        }
        for (i, row) in probs.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Data(format!(
                    "label row {i} has a negative or non-finite entry"
                )));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Data(format!("label row {i} sums to {sum}")));
            }
        }
        Ok(Self { probs, role })
    }

    /// One-hot rows from hard labels.
    pub fn one_hot(labels: &LabelVector, classes: usize) -> Result<Self> {
        labels.validate(classes)?;
        let mut probs = Array2::zeros((labels.len(), classes));
        for (i, &y) in labels.as_slice().iter().enumerate() {
            probs[[i, y]] = 1.0;
        }
        Ok(Self {
            probs,
            role: LabelRole::GroundTruth,
        })
    }

    pub(crate) fn from_parts_unchecked(probs: Array2<f64>, role: LabelRole) -> Self {
        Self { probs, role }
    }

    pub fn rows(&self) -> usize {
        self.probs.nrows()
    }

    pub fn classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn role(&self) -> LabelRole {
        self.role
    }

    pub fn with_role(mut self, role: LabelRole) -> Self {
        self.role = role;
        self
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.probs
    }

    pub fn argmax(&self) -> LabelVector {
        argmax_rows(self.probs.view())
    }

    /// Mean Shannon entropy of the rows, in nats.
    pub fn mean_entropy(&self) -> f64 {
        let total: f64 = self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        total / self.rows() as f64
    }
}

/// Target class marginal for the transport refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDistribution {
    probs: Array1<f64>,
    gamma: f64,
}

impl ReferenceDistribution {
    pub fn new(probs: Array1<f64>, gamma: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("reference distribution has no classes".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Config(
                "reference distribution entries must be finite and non-negative".into(),
            ));
        }
        let sum = probs.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "reference distribution sums to {sum}"
            )));
        }
        Ok(Self { probs, gamma })
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        Self::new(Array1::from_elem(classes, 1.0 / classes as f64), 0.0)
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.probs.view()
    }
}

/// Pairwise dot products `M[i][j] = x_i . z_j`.
pub fn text_logits(x: &EmbeddingMatrix, z: &ProxySet) -> Result<LogitsMatrix> {
    if x.cols() != z.cols() {
        return Err(Error::Shape(format!(
            "features have {} columns, proxies have {}",
            x.cols(),
            z.cols()
        )));
    }
    LogitsMatrix::new(x.view().dot(&z.view().t()))
}

/// Row-wise softmax of `M / temperature`.
pub fn softmax_labels(m: &LogitsMatrix, temperature: f64) -> Result<LabelDistribution> {
    check_temperature(temperature)?;
    let mut probs = m.data.mapv(|v| v / temperature);
    softmax_rows_in_place(&mut probs);
    Ok(LabelDistribution::from_parts_unchecked(probs, LabelRole::Raw))
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(())
}

/// In-place row softmax with max subtraction.
pub(crate) fn softmax_rows_in_place(scores: &mut Array2<f64>) {
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row.mapv_inplace(|v| v / sum);
    }
}

/// Class marginal implied by `p`, sharpened or flattened by `gamma`.
///
/// `gamma = 0` gives the uniform distribution, `gamma = 1` the implied
/// marginal itself.
pub fn smooth_reference(p: &LabelDistribution, gamma: f64) -> Result<ReferenceDistribution> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let n = p.rows() as f64;
    let implied = p.probs.sum_axis(Axis(0)).mapv(|s| s / n);
    let powered = implied.mapv(|v| v.powf(gamma));
    let total = powered.sum();
    ReferenceDistribution::new(powered.mapv(|v| v / total), gamma)
}

/// Replaces every row whose largest entry strictly exceeds `alpha` with the
/// one-hot vector of its argmax.
pub fn threshold_labels(p: &LabelDistribution, alpha: f64) -> Result<LabelDistribution> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut probs = p.probs.clone();
    for mut row in probs.axis_iter_mut(Axis(0)) {
        let k = argmax(row.view());
        if row[k] > alpha {
            row.fill(0.0);
            row[k] = 1.0;
        }
    }
    Ok(LabelDistribution::from_parts_unchecked(
        probs,
        LabelRole::Thresholded,
    ))
}

/// Index of the first maximum.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub(crate) fn argmax_rows(m: ArrayView2<'_, f64>) -> LabelVector {
    LabelVector::new(m.axis_iter(Axis(0)).map(argmax).collect())
        .expect("matrix has at least one row")
}
