//! Vision-proxy fitting: KL objective between pseudo labels and proxy
//! predictions, its gradient, and projected gradient descent over unit-norm
//! proxy rows.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pseudo_label::{argmax_rows, check_temperature, LabelDistribution};
use crate::store::{normalize_rows_in_place, EmbeddingMatrix, LabelVector, ProxySet};

/// Step sizes below this leave the proxies in place; iterations still run and
/// are traced.
pub const MIN_STEP: f64 = 1e-12;

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-30;

/// Step-size divisor applied whenever the gradient norm grows.
pub const DECAY_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PgdConfig {
    pub temperature: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Stop once the Riemannian gradient norm of the mean objective drops
    /// below this value.
    pub stop_tolerance: Option<f64>,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            temperature: 0.04,
            iterations: 2000,
            learning_rate: 10.0,
            stop_tolerance: None,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(tol) = self.stop_tolerance {
            if !(tol > 0.0) {
                return Err(Error::Config(format!("stop tolerance must be positive, got {tol}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Objective after this iteration's step.
    pub objective: f64,
    /// Frobenius norm of the gradient the step was taken along.
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    pub initial_objective: f64,
    pub entries: Vec<TraceEntry>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn final_objective(&self) -> f64 {
        self.entries
            .last()
            .map_or(self.initial_objective, |e| e.objective)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    /// CSV with columns `iteration,objective,grad_norm,step`.
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| Error::Data(e.to_string());
        let mut writer = csv::Writer::from_writer(out);
        writer
            .write_record(["iteration", "objective", "grad_norm", "step"])
            .map_err(err)?;
        for e in &self.entries {
            writer
                .write_record([
                    e.iteration.to_string(),
                    format!("{:e}", e.objective),
                    format!("{:e}", e.grad_norm),
                    format!("{:e}", e.step),
                ])
                .map_err(err)?;
        }
        writer.flush().map_err(|e| Error::Data(e.to_string()))
    }
}

fn check_shapes(p: &LabelDistribution, x: &EmbeddingMatrix, w: ArrayView2<'_, f64>) -> Result<()> {
    if p.rows() != x.rows() {
        return Err(Error::Shape(format!(
            "{} label rows for {} examples",
            p.rows(),
            x.rows()
        )));
    }
    if p.classes() != w.nrows() {
        return Err(Error::Shape(format!(
            "{} label classes for {} proxies",
            p.classes(),
            w.nrows()
        )));
    }
    if x.cols() != w.ncols() {
        return Err(Error::Shape(format!(
            "features have {} columns, proxies have {}",
            x.cols(),
            w.ncols()
        )));
    }
    Ok(())
}

/// `sum_ij p_ij ln p_ij`, the part of the objective that does not depend on `W`.
fn label_self_term(p: ArrayView2<'_, f64>) -> f64 {
    p.iter().filter(|&&t| t > 0.0).map(|&t| t * t.ln()).sum()
}

/// Objective value and model probabilities at `w`.
struct Evaluation {
    objective: f64,
    probs: Array2<f64>,
}

fn evaluate(
    p: &LabelDistribution,
    x: &EmbeddingMatrix,
    w: ArrayView2<'_, f64>,
    temperature: f64,
    self_term: f64,
) -> Result<Evaluation> {
    let floor = PROB_FLOOR.ln();
    let inv = 1.0 / temperature;
    let mut probs = x.view().dot(&w.t());
    let mut shifted = vec![0.0; w.nrows()];
    let mut cross = 0.0;
    for (mut row, target) in probs.rows_mut().into_iter().zip(p.view().rows()) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b)) * inv;
        let mut sum = 0.0;
        for (v, s) in row.iter_mut().zip(shifted.iter_mut()) {
            *s = *v * inv - max;
            *v = s.exp();
            sum += *v;
        }
        let log_sum = sum.ln();
        for (&s, &t) in shifted.iter().zip(&target) {
            if t > 0.0 {
                cross += t * (s - log_sum).max(floor);
            }
        }
        row /= sum;
    }
    let objective = self_term - cross;
    if !objective.is_finite() {
        return Err(Error::Numerics(format!("KL objective is {objective}")));
    }
    Ok(Evaluation { objective, probs })
}

/// `sum_i KL(p_i || softmax(x_i W^T / t))`.
pub fn kl_objective(
    p: &LabelDistribution,
    x: &EmbeddingMatrix,
    w: ArrayView2<'_, f64>,
    temperature: f64,
) -> Result<f64> {
    check_temperature(temperature)?;
    check_shapes(p, x, w)?;
    Ok(evaluate(p, x, w, temperature, label_self_term(p.view()))?.objective)
}

fn gradient_from_probs(
    p: &LabelDistribution,
    x: &EmbeddingMatrix,
    probs: &Array2<f64>,
    temperature: f64,
) -> Result<Array2<f64>> {
    let residual = probs - &p.view();
    let grad = residual.t().dot(&x.view()) / temperature;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerics("KL gradient is not finite".into()));
    }
    Ok(grad)
}

/// Gradient of [`kl_objective`] with respect to the proxies, laid out `C x d`:
/// row `j` is `(1/t) sum_i (P_ij - p_ij) x_i`.
pub fn kl_gradient(
    p: &LabelDistribution,
    x: &EmbeddingMatrix,
    w: ArrayView2<'_, f64>,
    temperature: f64,
) -> Result<Array2<f64>> {
    check_temperature(temperature)?;
    check_shapes(p, x, w)?;
    let eval = evaluate(p, x, w, temperature, label_self_term(p.view()))?;
    gradient_from_probs(p, x, &eval.probs, temperature)
}

/// Rescales each row onto the unit sphere.
pub fn project_unit_rows(w: ArrayView2<'_, f64>) -> Result<ProxySet> {
    let mut data = w.to_owned();
    normalize_rows_in_place(&mut data)?;
    if data.nrows() < 2 {
        return Err(Error::Data("a proxy set needs at least 2 classes".into()));
    }
    Ok(ProxySet::from_unit_rows_unchecked(data))
}

/// Frobenius norm of the gradient with each row's radial part removed.
fn tangent_norm(grad: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for (g, u) in grad.rows().into_iter().zip(w.rows()) {
        let radial = g.dot(&u);
        total += g.dot(&g) - radial * radial;
    }
    total.max(0.0).sqrt()
}

/// Fits vision proxies to pseudo labels by projected gradient descent,
/// starting from `init`.
///
/// Each step moves along the gradient of the per-example mean objective and
/// renormalizes the rows. The step size is halved whenever the gradient norm
/// exceeds the previous iteration's. Returns the lowest-objective iterate
/// seen, which is the last one for a monotone run.
pub fn learn_proxies(
    x: &EmbeddingMatrix,
    p: &LabelDistribution,
    init: &ProxySet,
    cfg: &PgdConfig,
) -> Result<(ProxySet, TrainTrace)> {
    cfg.validate()?;
    check_shapes(p, x, init.view())?;
    let t = cfg.temperature;
    let n = x.rows() as f64;

    let mut w = init.view().to_owned();
    let self_term = label_self_term(p.view());
    let mut eval = evaluate(p, x, w.view(), t, self_term)?;
    let mut trace = TrainTrace {
        initial_objective: eval.objective,
        entries: Vec::with_capacity(cfg.iterations),
    };
    let mut best = (eval.objective, w.clone());
    let mut step = cfg.learning_rate;
    let mut prev_norm = f64::INFINITY;

    for iteration in 0..cfg.iterations {
        let grad = gradient_from_probs(p, x, &eval.probs, t)?;
        let grad_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm > prev_norm {
            step /= DECAY_FACTOR;
        }
        prev_norm = grad_norm;
        if let Some(tol) = cfg.stop_tolerance {
            if tangent_norm(&grad, &w) / n < tol {
                break;
            }
        }

        if step < MIN_STEP {
            // W is frozen from here on, so every later iteration repeats this one.
            trace.entries.extend((iteration..cfg.iterations).map(|iteration| TraceEntry {
                iteration,
                objective: eval.objective,
                grad_norm,
                step,
            }));
            break;
        }
        w.scaled_add(-step / n, &grad);
        normalize_rows_in_place(&mut w)?;
        eval = evaluate(p, x, w.view(), t, self_term)?;
        trace.entries.push(TraceEntry {
            iteration,
            objective: eval.objective,
            grad_norm,
            step,
        });
        if eval.objective < best.0 {
            best = (eval.objective, w.clone());
        }
    }

    Ok((ProxySet::from_unit_rows_unchecked(best.1), trace))
}

/// Nearest-proxy labels by maximum dot product, ties to the lowest index.
pub fn predict(x: &EmbeddingMatrix, w: &ProxySet) -> Result<LabelVector> {
    if x.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "features have {} columns, proxies have {}",
            x.cols(),
            w.cols()
        )));
    }
    Ok(argmax_rows(x.view().dot(&w.view().t()).view()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo_label::{softmax_rows_in_place, LabelRole};
    use ndarray::array;
    use proptest::prelude::*;

    fn tiny() -> (EmbeddingMatrix, Array2<f64>, LabelDistribution) {
        let x = EmbeddingMatrix::new(array![
            [0.6, 0.8, 0.0],
            [0.0, 0.6, 0.8],
            [0.8, 0.0, 0.6],
            [0.48, 0.6, 0.64]
        ])
        .unwrap();
        let w = array![[0.3, -0.2, 0.9], [-0.5, 0.7, 0.1]];
        let p = LabelDistribution::new(
            array![[0.9, 0.1], [0.25, 0.75], [0.5, 0.5], [0.0, 1.0]],
            LabelRole::Thresholded,
        )
        .unwrap();
        (x, w, p)
    }

    /// Straight double loop over examples and classes.
    fn naive_objective(x: &Array2<f64>, w: &Array2<f64>, p: &Array2<f64>, t: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..x.nrows() {
            let mut s = vec![0.0; w.nrows()];
            for j in 0..w.nrows() {
                for k in 0..x.ncols() {
                    s[j] += x[[i, k]] * w[[j, k]];
                }
                s[j] /= t;
            }
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            for j in 0..w.nrows() {
                let q = s[j].exp() / z;
                if p[[i, j]] > 0.0 {
                    total += p[[i, j]] * (p[[i, j]] / q).ln();
                }
            }
        }
        total
    }

    #[test]
    fn objective_matches_double_loop() {
        let (x, w, p) = tiny();
        let fast = kl_objective(&p, &x, w.view(), 0.5).unwrap();
        let slow = naive_objective(&x.view().to_owned(), &w, &p.view().to_owned(), 0.5);
        assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn objective_zero_at_self_labels() {
        let (x, w, _) = tiny();
        let t = 0.04;
        let mut probs = x.view().dot(&w.t()) / t;
        softmax_rows_in_place(&mut probs);
        let p = LabelDistribution::new(probs, LabelRole::Raw).unwrap();
        assert!(kl_objective(&p, &x, w.view(), t).unwrap().abs() < 1e-9);
        let g = kl_gradient(&p, &x, w.view(), t).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn objective_zero_with_identical_proxies() {
        let (x, _, _) = tiny();
        let w = array![[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
        let p = LabelDistribution::new(Array2::from_elem((4, 2), 0.5), LabelRole::Raw).unwrap();
        assert!(kl_objective(&p, &x, w.view(), 0.04).unwrap().abs() < 1e-9);
    }

    #[test]
    fn shape_errors() {
        let (x, w, _) = tiny();
        let p = LabelDistribution::new(Array2::from_elem((3, 2), 0.5), LabelRole::Raw).unwrap();
        assert!(matches!(kl_objective(&p, &x, w.view(), 0.04), Err(Error::Shape(_))));
    }

    #[test]
    fn projection_examples() {
        let w = project_unit_rows(array![[2.0, 0.0], [1.0, 1.0]].view()).unwrap();
        assert_eq!(w.row(0), array![1.0, 0.0]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((w.row(1)[0] - h).abs() < 1e-7 && (w.row(1)[1] - h).abs() < 1e-7);
        let again = project_unit_rows(w.view()).unwrap();
        for (a, b) in again.view().iter().zip(w.view().iter()) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(matches!(
            project_unit_rows(array![[1.0, 0.0], [0.0, 0.0]].view()),
            Err(Error::DegenerateRow { row: 1, .. })
        ));
    }

    #[test]
    fn orthonormal_identity_recovers_classes() {
        let c = 4;
        let x = EmbeddingMatrix::new(Array2::eye(c)).unwrap();
        let p = LabelDistribution::new(Array2::eye(c), LabelRole::GroundTruth).unwrap();
        let init = ProxySet::normalized(Array2::from_shape_fn((c, c), |(i, j)| {
            if j == (i + 1) % c { 1.0 } else { 0.3 }
        }))
        .unwrap();
        let (w, trace) = learn_proxies(&x, &p, &init, &PgdConfig::default()).unwrap();
        assert_eq!(predict(&x, &w).unwrap().as_slice(), &[0, 1, 2, 3]);
        assert!(trace.final_objective() <= trace.initial_objective);
    }

    #[test]
    fn zero_iterations_return_init() {
        let (x, w, p) = tiny();
        let init = project_unit_rows(w.view()).unwrap();
        let cfg = PgdConfig {
            iterations: 0,
            ..PgdConfig::default()
        };
        let (out, trace) = learn_proxies(&x, &p, &init, &cfg).unwrap();
        assert_eq!(out, init);
        assert!(trace.is_empty());
    }

    #[test]
    fn trace_length_and_unit_rows() {
        let (x, w, p) = tiny();
        let init = project_unit_rows(w.view()).unwrap();
        let cfg = PgdConfig {
            iterations: 150,
            ..PgdConfig::default()
        };
        let (out, trace) = learn_proxies(&x, &p, &init, &cfg).unwrap();
        assert_eq!(trace.len(), 150);
        assert!(crate::store::max_unit_deviation(out.view()) < 1e-5);
        let fin = kl_objective(&p, &x, out.view(), cfg.temperature).unwrap();
        assert!(fin <= trace.initial_objective);
    }

    #[test]
    fn collapsed_step_still_traces_every_iteration() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut draw = |r: usize, c: usize| -> Array2<f64> {
            Array2::from_shape_simple_fn((r, c), || StandardNormal.sample(&mut rng))
        };
        let x = EmbeddingMatrix::new(draw(300, 16)).unwrap().normalize_rows().unwrap();
        let init = ProxySet::normalized(draw(6, 16)).unwrap();
        let mut scores = x.view().dot(&init.view().t()) / 0.01;
        softmax_rows_in_place(&mut scores);
        let p = LabelDistribution::new(scores, LabelRole::Raw).unwrap();
        let cfg = PgdConfig {
            iterations: 3000,
            ..PgdConfig::default()
        };
        let (_, trace) = learn_proxies(&x, &p, &init, &cfg).unwrap();
        assert_eq!(trace.len(), 3000);
        assert!(trace.entries.last().unwrap().step < MIN_STEP);
        assert!(trace.entries.iter().enumerate().all(|(i, e)| e.iteration == i));
    }

    #[test]
    fn predict_ties_and_identity() {
        let w = ProxySet::new(array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [0.8, 0.6]]).unwrap();
        let x = EmbeddingMatrix::new(array![[0.8, 0.6]]).unwrap();
        assert_eq!(predict(&x, &w).unwrap().as_slice(), &[3]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let x = EmbeddingMatrix::new(array![[h, h]]).unwrap();
        let w2 = ProxySet::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(predict(&x, &w2).unwrap().as_slice(), &[0]);
    }

    #[test]
    fn trace_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = TrainTrace {
            initial_objective: 2.0,
            entries: vec![TraceEntry {
                iteration: 0,
                objective: 1.5,
                grad_norm: 0.25,
                step: 10.0,
            }],
        };
        trace.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "iteration,objective,grad_norm,step\n0,1.5e0,2.5e-1,1e1\n");
    }

    proptest! {
        #[test]
        fn objective_convex_in_proxies(
            a in proptest::collection::vec(-1.0f64..1.0, 6),
            b in proptest::collection::vec(-1.0f64..1.0, 6),
            lambda in 0.01f64..0.99,
        ) {
            let (x, _, p) = tiny();
            let w1 = Array2::from_shape_vec((2, 3), a).unwrap();
            let w2 = Array2::from_shape_vec((2, 3), b).unwrap();
            let mix = &w1 * lambda + &w2 * (1.0 - lambda);
            let t = 0.2;
            let f = |w: &Array2<f64>| kl_objective(&p, &x, w.view(), t).unwrap();
            prop_assert!(f(&mix) <= lambda * f(&w1) + (1.0 - lambda) * f(&w2) + 1e-9);
        }
    }
}
