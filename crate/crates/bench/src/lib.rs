//! Seeded inputs at desk scale for the solver benchmarks.

use inmap_core::{
    pseudo_labels, EmbeddingMatrix, InmapParams, LabelDistribution, LogitsMatrix, ProxySet,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn unit_rows(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m: Array2<f64> =
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng));
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

/// Cosine logits between `n` random features and `classes` random proxies of width 512.
pub fn cosine_logits(seed: u64, n: usize, classes: usize) -> LogitsMatrix {
    let x = unit_rows(seed, n, 512);
    let z = unit_rows(seed + 1, classes, 512);
    LogitsMatrix::new(x.dot(&z.t())).expect("finite logits")
}

pub struct ProxyProblem {
    pub features: EmbeddingMatrix,
    pub text_proxies: ProxySet,
    pub labels: LabelDistribution,
}

/// Random features and text proxies with the default refined pseudo labels.
pub fn proxy_problem(seed: u64, n: usize, dim: usize, classes: usize) -> ProxyProblem {
    let features = EmbeddingMatrix::new(unit_rows(seed, n, dim)).expect("unit rows");
    let text_proxies = ProxySet::new(unit_rows(seed + 1, classes, dim)).expect("unit rows");
    let labels = pseudo_labels(&features, &text_proxies, &InmapParams::default())
        .expect("pseudo labels");
    ProxyProblem {
        features,
        text_proxies,
        labels,
    }
}
