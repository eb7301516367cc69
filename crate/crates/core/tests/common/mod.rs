#![allow(dead_code)]

use inmap_core::{EmbeddingMatrix, LogitsMatrix, ProxySet};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = gaussian(rng, rows, cols);
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

pub fn features(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> EmbeddingMatrix {
    EmbeddingMatrix::new(unit_rows(rng, rows, cols)).unwrap()
}

pub fn proxies(rng: &mut ChaCha8Rng, classes: usize, cols: usize) -> ProxySet {
    ProxySet::new(unit_rows(rng, classes, cols)).unwrap()
}

/// Cosine logits between random unit features and random unit proxies.
pub fn random_logits(seed: u64, n: usize, classes: usize, dim: usize) -> LogitsMatrix {
    let mut r = rng(seed);
    let x = unit_rows(&mut r, n, dim);
    let z = unit_rows(&mut r, classes, dim);
    LogitsMatrix::new(x.dot(&z.t())).unwrap()
}

pub fn max_abs_diff(a: ndarray::ArrayView2<'_, f64>, b: ndarray::ArrayView2<'_, f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
