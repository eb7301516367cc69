use ndarray::{Array1, Array2, Axis, Zip};

use super::{
    check_temperature, LabelDistribution, LabelRole, LogitsMatrix, ReferenceDistribution,
};
use crate::error::{Error, Result};

/// Lower clamp applied to reference masses before scaling.
pub const Q_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub temperature: f64,
    pub iterations: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            temperature: 0.01,
            iterations: 20,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if self.iterations == 0 {
            return Err(Error::Config("Sinkhorn needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Scalings beyond `exp(±ABSORB_LOG)` are folded into the log potentials.
const ABSORB_LOG: f64 = 100.0;

/// Entropic transport between uniform row mass `1/n` and a class marginal
/// `q`, solved by alternating row and column scaling.
///
/// The plan is `P[i][j] = exp(M[i][j] / temperature + a[i] + b[j])`. The
/// potentials are split into absorbed log parts and multiplicative scalings
/// `u`, `v` on the cached kernel `exp(M / temperature + a_abs + b_abs)`, so
/// a scaling update costs one matrix-vector product. When a scaling leaves
/// `exp(±ABSORB_LOG)` or a kernel sum underflows, the scalings are absorbed
/// and the update is redone in the log domain. Each update is an exact block
/// maximization of [`SinkhornSolver::dual_objective`].
#[derive(Debug, Clone)]
pub struct SinkhornSolver {
    scores: Array2<f64>,
    log_row_mass: f64,
    q: Array1<f64>,
    log_q: Array1<f64>,
    row_potential: Array1<f64>,
    col_potential: Array1<f64>,
    kernel: Array2<f64>,
    row_scale: Array1<f64>,
    col_scale: Array1<f64>,
    temperature: f64,
}

fn scaling_ok(v: f64) -> bool {
    v.is_finite() && v > 0.0 && v.ln().abs() < ABSORB_LOG
}

impl SinkhornSolver {
    pub fn new(m: &LogitsMatrix, q: &ReferenceDistribution, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        let (n, c) = (m.rows(), m.classes());
        if q.classes() != c {
            return Err(Error::Shape(format!(
                "reference distribution has {} classes, logits have {c}",
                q.classes()
            )));
        }
        let clamped = q.view().mapv(|v| v.max(Q_FLOOR));
        let total = clamped.sum();
        let q = clamped.mapv(|v| v / total);
        let log_q = q.mapv(f64::ln);
        if log_q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reference distribution has a zero class mass".into()));
        }
        let mut solver = Self {
            scores: m.view().mapv(|v| v / temperature),
            log_row_mass: -(n as f64).ln(),
            q,
            log_q,
            row_potential: Array1::zeros(n),
            col_potential: Array1::zeros(c),
            kernel: Array2::zeros((n, c)),
            row_scale: Array1::ones(n),
            col_scale: Array1::ones(c),
            temperature,
        };
        solver.log_update_rows();
        Ok(solver)
    }

    fn absorb(&mut self) {
        Zip::from(&mut self.row_potential)
            .and(&mut self.row_scale)
            .for_each(|a, u| {
                *a += u.ln();
                *u = 1.0;
            });
        Zip::from(&mut self.col_potential)
            .and(&mut self.col_scale)
            .for_each(|b, v| {
                *b += v.ln();
                *v = 1.0;
            });
    }

    fn rebuild_kernel(&mut self) {
        let b = &self.col_potential;
        Zip::from(self.kernel.rows_mut())
            .and(self.scores.rows())
            .and(&self.row_potential)
            .for_each(|mut k, s, &a| {
                Zip::from(&mut k)
                    .and(&s)
                    .and(b)
                    .for_each(|k, &s, &b| *k = (s + a + b).exp());
            });
    }

    fn log_update_rows(&mut self) {
        self.absorb();
        let b = &self.col_potential;
        let target = self.log_row_mass;
        Zip::from(&mut self.row_potential)
            .and(self.scores.rows())
            .for_each(|a, row| {
                let max = row
                    .iter()
                    .zip(b)
                    .fold(f64::NEG_INFINITY, |acc, (s, bj)| acc.max(s + bj));
                let sum: f64 = row.iter().zip(b).map(|(s, bj)| (s + bj - max).exp()).sum();
                *a = target - (max + sum.ln());
            });
        self.rebuild_kernel();
    }

    fn log_update_columns(&mut self) {
        self.absorb();
        let c = self.col_potential.len();
        let mut max = Array1::from_elem(c, f64::NEG_INFINITY);
        for (row, &a) in self.scores.rows().into_iter().zip(&self.row_potential) {
            Zip::from(&mut max).and(&row).for_each(|m, &s| *m = m.max(s + a));
        }
        let mut sum = Array1::<f64>::zeros(c);
        for (row, &a) in self.scores.rows().into_iter().zip(&self.row_potential) {
            Zip::from(&mut sum)
                .and(&row)
                .and(&max)
                .for_each(|acc, &s, &m| *acc += (s + a - m).exp());
        }
        Zip::from(&mut self.col_potential)
            .and(&self.log_q)
            .and(&max)
            .and(&sum)
            .for_each(|b, &lq, &m, &s| *b = lq - (m + s.ln()));
        self.rebuild_kernel();
    }

    /// Makes every row sum to `1/n`.
    pub fn update_rows(&mut self) {
        let r = self.log_row_mass.exp();
        let sums = self.kernel.dot(&self.col_scale);
        let scale = sums.mapv(|s| r / s);
        if scale.iter().all(|&u| scaling_ok(u)) {
            self.row_scale = scale;
        } else {
            self.log_update_rows();
        }
    }

    /// Makes every column sum to its reference mass.
    pub fn update_columns(&mut self) {
        let sums = self.kernel.t().dot(&self.row_scale);
        let scale = &self.q / &sums;
        if scale.iter().all(|&v| scaling_ok(v)) {
            self.col_scale = scale;
        } else {
            self.log_update_columns();
        }
    }

    /// One column update followed by one row update.
    pub fn step(&mut self) {
        self.update_columns();
        self.update_rows();
    }

    pub fn run(&mut self, iterations: usize) -> Result<()> {
        for _ in 0..iterations {
            self.step();
        }
        self.check_finite()
    }

    fn check_finite(&self) -> Result<()> {
        if self
            .row_potential
            .iter()
            .chain(self.col_potential.iter())
            .chain(self.row_scale.iter())
            .chain(self.col_scale.iter())
            .all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Numerics("Sinkhorn scaling variables are not finite".into()))
        }
    }

    /// Row and column log potentials of the current plan.
    pub fn potentials(&self) -> (Array1<f64>, Array1<f64>) {
        (
            &self.row_potential + &self.row_scale.mapv(f64::ln),
            &self.col_potential + &self.col_scale.mapv(f64::ln),
        )
    }

    /// Current transport plan; rows sum to `1/n` after a row update.
    pub fn plan(&self) -> Array2<f64> {
        let mut plan = self.kernel.clone();
        Zip::from(plan.rows_mut())
            .and(&self.row_scale)
            .for_each(|mut row, &u| {
                Zip::from(&mut row)
                    .and(&self.col_scale)
                    .for_each(|p, &v| *p *= u * v);
            });
        plan
    }

    /// Largest absolute deviations of the row and column sums from their targets.
    pub fn marginal_errors(&self) -> (f64, f64) {
        let plan = self.plan();
        let r = self.log_row_mass.exp();
        let row_err = plan
            .sum_axis(Axis(1))
            .iter()
            .map(|s| (s - r).abs())
            .fold(0.0, f64::max);
        let col_err = plan
            .sum_axis(Axis(0))
            .iter()
            .zip(&self.q)
            .map(|(s, q)| (s - q).abs())
            .fold(0.0, f64::max);
        (row_err, col_err)
    }

    /// Lagrangian dual of the entropic problem in minimization form,
    /// `t * (sum_i a_i / n + sum_j q_j b_j - sum_ij P_ij)`.
    ///
    /// Non-decreasing under both updates. `-dual - t` upper-bounds the optimal
    /// `<P, M> + t H(P)` over feasible plans and meets it at convergence.
    pub fn dual_objective(&self) -> f64 {
        let (a, b) = self.potentials();
        let r = self.log_row_mass.exp();
        self.temperature * (a.sum() * r + b.dot(&self.q) - self.plan().sum())
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Refines pseudo labels by entropic optimal transport.
///
/// Runs `cfg.iterations` column/row scaling rounds (ending on a row update),
/// multiplies the plan by `n` and renormalizes each row to sum to one.
pub fn sinkhorn_refine(
    m: &LogitsMatrix,
    q: &ReferenceDistribution,
    cfg: &SinkhornConfig,
) -> Result<LabelDistribution> {
    cfg.validate()?;
    let mut solver = SinkhornSolver::new(m, q, cfg.temperature)?;
    solver.run(cfg.iterations)?;
    let n = m.rows() as f64;
    let mut plan = solver.plan();
    for mut row in plan.rows_mut() {
        row *= n;
        let sum = row.sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::Numerics("transport plan has an empty row".into()));
        }
        row /= sum;
    }
    Ok(LabelDistribution::from_parts_unchecked(plan, LabelRole::Refined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo_label::softmax_labels;
    use ndarray::array;

    #[test]
    fn constant_logits_uniform_q() {
        let m = LogitsMatrix::new(Array2::from_elem((5, 3), 0.4)).unwrap();
        let q = ReferenceDistribution::uniform(3).unwrap();
        let p = sinkhorn_refine(&m, &q, &SinkhornConfig::default()).unwrap();
        for &v in p.view().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(p.role(), LabelRole::Refined);
    }

    #[test]
    fn implied_marginal_is_a_fixed_point() {
        let m = LogitsMatrix::new(array![
            [0.21, 0.30, 0.05],
            [0.10, 0.02, 0.28],
            [0.33, 0.12, 0.19],
            [0.04, 0.25, 0.22]
        ])
        .unwrap();
        let soft = softmax_labels(&m, 0.01).unwrap();
        let q = ReferenceDistribution::new(soft.view().sum_axis(Axis(0)) / 4.0, 1.0).unwrap();
        let refined = sinkhorn_refine(&m, &q, &SinkhornConfig::default()).unwrap();
        for (a, b) in refined.view().iter().zip(soft.view().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_mass_is_clamped() {
        let m = LogitsMatrix::new(array![[0.2, 0.1], [0.0, 0.3]]).unwrap();
        let q = ReferenceDistribution::new(array![1.0, 0.0], 0.0).unwrap();
        let p = sinkhorn_refine(&m, &q, &SinkhornConfig::default()).unwrap();
        assert!(p.view().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_config() {
        let m = LogitsMatrix::new(array![[0.2, 0.1]]).unwrap();
        let q = ReferenceDistribution::uniform(2).unwrap();
        let cfg = SinkhornConfig {
            temperature: 0.01,
            iterations: 0,
        };
        assert!(matches!(sinkhorn_refine(&m, &q, &cfg), Err(Error::Config(_))));
        let q3 = ReferenceDistribution::uniform(3).unwrap();
        assert!(matches!(
            sinkhorn_refine(&m, &q3, &SinkhornConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn large_logit_range_stays_finite() {
        let m = LogitsMatrix::new(array![[50.0, -50.0], [-50.0, 50.0], [0.0, 0.0]]).unwrap();
        let q = ReferenceDistribution::uniform(2).unwrap();
        let p = sinkhorn_refine(&m, &q, &SinkhornConfig::default()).unwrap();
        assert!(p.view().iter().all(|v| v.is_finite()));
    }
}
