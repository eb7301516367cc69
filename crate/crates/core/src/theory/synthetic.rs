use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::{EmbeddingMatrix, LabelVector, ProxySet, DEGENERATE_NORM};

/// Parameters of a synthetic modality-gap model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SyntheticSpec {
    /// Dimension of the image/vision span.
    pub dim: usize,
    pub classes: usize,
    pub samples: usize,
    /// Overlap coefficient `a`: share of each text proxy lying in the vision span.
    pub overlap: f64,
    /// Rank of the vision-span part of the text proxies.
    pub rank: usize,
    /// Inverse of the per-coordinate noise scale around each class proxy.
    pub concentration: f64,
    pub seed: u64,
    /// Total embedding width; defaults to `2 * dim`.
    pub ambient_dim: Option<usize>,
    /// Use the true proxies themselves as the in-span text component.
    pub full_overlap: bool,
}

impl SyntheticSpec {
    pub fn new(dim: usize, classes: usize, samples: usize, overlap: f64, rank: usize) -> Self {
        Self {
            dim,
            classes,
            samples,
            overlap,
            rank,
            concentration: 8.0,
            seed: 0,
            ambient_dim: None,
            full_overlap: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_concentration(mut self, concentration: f64) -> Self {
        self.concentration = concentration;
        self
    }

    pub fn with_full_overlap(mut self) -> Self {
        self.full_overlap = true;
        self.rank = self.dim.min(self.classes);
        self
    }

    pub fn ambient(&self) -> usize {
        self.ambient_dim.unwrap_or(2 * self.dim)
    }
}

/// Ground-truth proxies, text proxies split into an in-span and an orthogonal
/// part, and labelled features drawn around the ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    pub spec: SyntheticSpec,
    pub true_proxies: ProxySet,
    /// Singular values of the true proxies, descending.
    pub singular_values: Vec<f64>,
    pub text_in_span: Array2<f64>,
    pub text_orthogonal: Array2<f64>,
    pub text_proxies: ProxySet,
    pub features: EmbeddingMatrix,
    pub labels: LabelVector,
    /// Largest `|1 - norm|` over rows of the rank-r projection before renormalization.
    pub renorm_slack: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn unit(v: ArrayView1<'_, f64>) -> Option<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    (norm >= DEGENERATE_NORM).then(|| v.mapv(|x| x / norm))
}

/// Modified Gram-Schmidt over rows; rows beyond the column count are only
/// normalized.
fn orthonormalize_rows(m: &mut Array2<f64>) -> Result<()> {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        if i < cols {
            for k in 0..i {
                let prev = m.row(k).to_owned();
                let proj = m.row(i).dot(&prev);
                m.row_mut(i).scaled_add(-proj, &prev);
            }
        }
        let u = unit(m.row(i))
            .ok_or_else(|| Error::Construction(format!("orthogonal row {i} collapsed")))?;
        m.row_mut(i).assign(&u);
    }
    Ok(())
}

/// Draws a reproducible synthetic model.
///
/// Features and true proxies occupy the first `dim` coordinates of the
/// ambient space, the orthogonal text component the remaining ones. The
/// in-span text component is each true proxy projected onto the top-`rank`
/// right singular subspace of the true proxy matrix, renormalized.
pub fn build_synthetic_model(spec: &SyntheticSpec) -> Result<SyntheticModel> {
    let (d, c, n) = (spec.dim, spec.classes, spec.samples);
    let ambient = spec.ambient();
    if d == 0 || n == 0 || c < 2 {
        return Err(Error::Config(format!(
            "need dim >= 1, samples >= 1 and classes >= 2, got {d}, {n}, {c}"
        )));
    }
    if !(0.0..=1.0).contains(&spec.overlap) {
        return Err(Error::Config(format!("overlap must lie in [0, 1], got {}", spec.overlap)));
    }
    if spec.rank == 0 || spec.rank > d.min(c) {
        return Err(Error::Config(format!(
            "rank must lie in [1, {}], got {}",
            d.min(c),
            spec.rank
        )));
    }
    if !(spec.concentration > 0.0) {
        return Err(Error::Config("concentration must be positive".into()));
    }
    if ambient < d {
        return Err(Error::Config(format!("ambient dimension {ambient} is below dim {d}")));
    }
    let complement = ambient - d;
    if spec.overlap < 1.0 && complement == 0 {
        return Err(Error::Construction(
            "no orthogonal complement for the text-specific component".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut w_span = gaussian(&mut rng, c, d);
    for (j, mut row) in w_span.axis_iter_mut(Axis(0)).enumerate() {
        let u = unit(row.view())
            .ok_or_else(|| Error::Construction(format!("true proxy {j} collapsed")))?;
        row.assign(&u);
    }

    let svd = DMatrix::from_fn(c, d, |i, j| w_span[[i, j]]).svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerics("SVD did not return singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();

    let mut in_span = Array2::<f64>::zeros((c, ambient));
    let mut renorm_slack: f64 = 0.0;
    if spec.full_overlap {
        in_span.slice_mut(s![.., ..d]).assign(&w_span);
    } else {
        let basis = Array2::from_shape_fn((spec.rank, d), |(k, j)| v_t[(order[k], j)]);
        let projected = w_span.dot(&basis.t()).dot(&basis);
        for (j, row) in projected.axis_iter(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            renorm_slack = renorm_slack.max((1.0 - norm).abs());
            let u = unit(row).ok_or_else(|| {
                Error::Construction(format!("proxy {j} has no component in the rank-{} span", spec.rank))
            })?;
            in_span.slice_mut(s![j, ..d]).assign(&u);
        }
    }

    let mut orthogonal = Array2::<f64>::zeros((c, ambient));
    if complement > 0 {
        let mut block = gaussian(&mut rng, c, complement);
        orthonormalize_rows(&mut block)?;
        orthogonal.slice_mut(s![.., d..]).assign(&block);
    }

    let sa = spec.overlap.sqrt();
    let sb = (1.0 - spec.overlap).sqrt();
    let text = &in_span * sa + &orthogonal * sb;

    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let noise = gaussian(&mut rng, n, d);
    let scale = 1.0 / spec.concentration;
    let mut features = Array2::<f64>::zeros((n, ambient));
    for (i, &y) in labels.iter().enumerate() {
        let point = &w_span.row(y) + &(&noise.row(i) * scale);
        let u = unit(point.view())
            .ok_or_else(|| Error::Construction(format!("feature {i} collapsed")))?;
        features.slice_mut(s![i, ..d]).assign(&u);
    }

    let mut true_proxies = Array2::<f64>::zeros((c, ambient));
    true_proxies.slice_mut(s![.., ..d]).assign(&w_span);

    Ok(SyntheticModel {
        spec: *spec,
        true_proxies: ProxySet::new(true_proxies)?,
        singular_values,
        text_in_span: in_span,
        text_orthogonal: orthogonal,
        text_proxies: ProxySet::new(text)?,
        features: EmbeddingMatrix::new(features)?,
        labels: LabelVector::new(labels)?,
        renorm_slack,
    })
}
