//! Synthetic modality-gap models and numerical checks of the similarity
//! bounds, temperature calibration, proxy-gap lower bound and label-noise
//! sensitivity.

mod checks;
mod synthetic;

use std::collections::BTreeMap;

use serde::Serialize;

pub use checks::{
    default_noise_levels, mean_nearest_similarity, noisy_labels, prediction_gap,
    prop2_residuals, random_contrastive_samples, similarity_bounds, spearman, thm2_noise_sweep,
    verify_prop1, verify_prop3, verify_thm1, ContrastiveSample, FixedPointResidual, GapBound,
    NoiseSweep, Prop1Report, SimilarityBounds, GAP_BOUND_TOL,
};
pub use synthetic::{build_synthetic_model, SyntheticModel, SyntheticSpec};

use crate::error::Result;
use crate::proxy::{learn_proxies, PgdConfig};
use crate::pseudo_label::LabelDistribution;

/// Sizes and grids for [`run_theory_suite`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryConfig {
    pub seed: u64,
    pub prop1_samples: usize,
    pub prop1_batches: Vec<usize>,
    pub prop1_temperatures: Vec<f64>,
    pub prop1_dim: usize,
    pub prop3_overlaps: Vec<f64>,
    pub text_temperature: f64,
    pub thm1_seeds: usize,
    pub thm1_overlaps: Vec<f64>,
    pub thm1_ranks: Vec<usize>,
    pub thm2_models: usize,
    pub thm2_samples: usize,
    /// Solver for the noise sweep. A step that converges without collapsing
    /// keeps the sweep from measuring optimizer path differences.
    pub thm2_pgd: PgdConfig,
    pub prop2_concentration: f64,
    pub prop2_pgd: PgdConfig,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            prop1_samples: 10_000,
            prop1_batches: vec![2, 8, 64],
            prop1_temperatures: vec![0.01, 0.07],
            prop1_dim: 16,
            prop3_overlaps: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            text_temperature: 0.01,
            thm1_seeds: 1000,
            thm1_overlaps: vec![0.3, 0.5, 0.8],
            thm1_ranks: vec![1, 2, 4],
            thm2_models: 10,
            thm2_samples: 500,
            thm2_pgd: PgdConfig {
                learning_rate: 0.3,
                ..PgdConfig::default()
            },
            prop2_concentration: 4.0,
            prop2_pgd: PgdConfig {
                learning_rate: 1.0,
                iterations: 20_000,
                ..PgdConfig::default()
            },
        }
    }
}

/// Slack tolerance for the similarity bounds.
pub const PROP1_TOL: f64 = 1e-9;
/// Maximum allowed prediction gap at the calibrated temperature.
pub const PROP3_TOL: f64 = 1e-10;
/// Renormalization slack above which gap-bound violations are only reported.
pub const THM1_SLACK_LIMIT: f64 = 0.01;
/// Minimum rank correlation for the label-noise trend.
pub const THM2_MIN_CORRELATION: f64 = 0.9;
/// Maximum distance of a proxy from its closed-form stationary point.
pub const PROP2_TOL: f64 = 1e-2;
/// Denominators smaller than this make the stationary point ill-defined.
pub const PROP2_MIN_DENOMINATOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub trials: usize,
    pub excluded: usize,
    pub violations: usize,
    /// Extreme value of the check's slack or deviation; see `slack_kind`.
    pub max_slack: f64,
    pub slack_kind: String,
    pub parameters: BTreeMap<String, f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub checks: Vec<CheckSummary>,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn prop1_check(cfg: &TheoryConfig, batch: usize, temperature: f64) -> Result<CheckSummary> {
    let samples = random_contrastive_samples(
        cfg.prop1_samples,
        batch,
        cfg.prop1_dim,
        cfg.seed ^ (batch as u64) << 8,
    );
    let report = verify_prop1(&samples, temperature)?;
    let violations = report.violations(PROP1_TOL);
    let positive_c1 = report
        .checked()
        .filter(|s| s.delta > 0.5)
        .all(|s| s.c1 > 0.0);
    Ok(CheckSummary {
        name: "similarity_bounds".into(),
        trials: report.samples.len(),
        excluded: report.excluded(),
        violations,
        max_slack: report.min_slack(),
        slack_kind: "min_slack".into(),
        parameters: BTreeMap::from([
            ("batch".into(), batch as f64),
            ("temperature".into(), temperature),
            ("dim".into(), cfg.prop1_dim as f64),
        ]),
        passed: violations == 0 && positive_c1 && report.excluded() < report.samples.len(),
    })
}

pub fn prop3_check(cfg: &TheoryConfig, overlap: f64) -> Result<CheckSummary> {
    let spec = SyntheticSpec::new(8, 5, 200, overlap, 5)
        .with_seed(cfg.seed)
        .with_full_overlap();
    let model = build_synthetic_model(&spec)?;
    let gap = verify_prop3(&model, cfg.text_temperature)?;
    Ok(CheckSummary {
        name: "temperature_calibration".into(),
        trials: 1,
        excluded: 0,
        violations: usize::from(gap >= PROP3_TOL),
        max_slack: gap,
        slack_kind: "max_abs_deviation".into(),
        parameters: BTreeMap::from([
            ("overlap".into(), overlap),
            ("text_temperature".into(), cfg.text_temperature),
            ("image_temperature".into(), cfg.text_temperature / overlap.sqrt()),
        ]),
        passed: gap < PROP3_TOL,
    })
}

pub fn thm1_check(cfg: &TheoryConfig, overlap: f64, rank: usize) -> Result<CheckSummary> {
    let mut violations = 0;
    let mut excluded = 0;
    let mut excluded_violations = 0;
    let mut min_slack = f64::INFINITY;
    for k in 0..cfg.thm1_seeds {
        let spec = SyntheticSpec::new(8, 5, 10, overlap, rank).with_seed(cfg.seed + k as u64);
        let bound = verify_thm1(&build_synthetic_model(&spec)?);
        if bound.renorm_slack >= THM1_SLACK_LIMIT {
            excluded += 1;
            excluded_violations += usize::from(!bound.holds);
            continue;
        }
        min_slack = min_slack.min(bound.lhs - bound.rhs);
        if !bound.holds {
            violations += 1;
        }
    }
    Ok(CheckSummary {
        name: "proxy_gap_bound".into(),
        trials: cfg.thm1_seeds,
        excluded,
        violations,
        max_slack: min_slack,
        slack_kind: "min_lhs_minus_rhs".into(),
        parameters: BTreeMap::from([
            ("overlap".into(), overlap),
            ("rank".into(), rank as f64),
            ("dim".into(), 8.0),
            ("classes".into(), 5.0),
            ("excluded_violations".into(), excluded_violations as f64),
        ]),
        passed: violations == 0,
    })
}

pub fn thm2_check(cfg: &TheoryConfig) -> Result<CheckSummary> {
    let levels = default_noise_levels();
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    for k in 0..cfg.thm2_models {
        let spec = SyntheticSpec::new(8, 5, cfg.thm2_samples, 0.5, 2).with_seed(cfg.seed + k as u64);
        let sweep = thm2_noise_sweep(&build_synthetic_model(&spec)?, &levels, &cfg.thm2_pgd)?;
        worst = worst.min(sweep.rank_correlation);
        if sweep.rank_correlation < THM2_MIN_CORRELATION {
            violations += 1;
        }
    }
    Ok(CheckSummary {
        name: "label_noise_trend".into(),
        trials: cfg.thm2_models,
        excluded: 0,
        violations,
        max_slack: worst,
        slack_kind: "min_rank_correlation".into(),
        parameters: BTreeMap::from([
            ("samples".into(), cfg.thm2_samples as f64),
            ("levels".into(), levels.len() as f64),
            ("image_temperature".into(), cfg.thm2_pgd.temperature),
            ("learning_rate".into(), cfg.thm2_pgd.learning_rate),
        ]),
        passed: violations == 0,
    })
}

/// Stationarity of learned proxies under one-hot labels.
///
/// Classes with a small denominator are excluded. Alongside the closed-form
/// residual the summary carries the sign-free direction residual, which
/// measures stationarity on the sphere directly.
pub fn prop2_check(cfg: &TheoryConfig) -> Result<CheckSummary> {
    let spec = SyntheticSpec::new(8, 5, 500, 0.5, 2)
        .with_seed(cfg.seed)
        .with_concentration(cfg.prop2_concentration);
    let model = build_synthetic_model(&spec)?;
    let y = LabelDistribution::one_hot(&model.labels, spec.classes)?;
    let pgd = cfg.prop2_pgd;
    let (w, _) = learn_proxies(&model.features, &y, &model.text_proxies, &pgd)?;
    let residuals = prop2_residuals(&model.features, &model.labels, w.view(), pgd.temperature)?;
    let checked: Vec<_> = residuals
        .iter()
        .filter(|r| r.denominator.abs() > PROP2_MIN_DENOMINATOR)
        .collect();
    let violations = checked.iter().filter(|r| !(r.residual < PROP2_TOL)).count();
    let worst = |pick: fn(&FixedPointResidual) -> f64, positive_only: bool| {
        checked
            .iter()
            .filter(|r| !positive_only || r.denominator > 0.0)
            .map(|r| pick(r))
            .fold(0.0, f64::max)
    };
    Ok(CheckSummary {
        name: "stationary_proxies".into(),
        trials: residuals.len(),
        excluded: residuals.len() - checked.len(),
        violations,
        max_slack: worst(|r| r.residual, false),
        slack_kind: "max_residual".into(),
        parameters: BTreeMap::from([
            ("image_temperature".into(), pgd.temperature),
            ("iterations".into(), pgd.iterations as f64),
            ("learning_rate".into(), pgd.learning_rate),
            ("concentration".into(), spec.concentration),
            (
                "negative_denominators".into(),
                checked.iter().filter(|r| r.denominator < 0.0).count() as f64,
            ),
            ("max_residual_positive_denominator".into(), worst(|r| r.residual, true)),
            ("max_direction_residual".into(), worst(|r| r.direction_residual, false)),
        ]),
        passed: violations == 0 && !checked.is_empty(),
    })
}

/// Runs every check over the configured grids.
pub fn run_theory_suite(cfg: &TheoryConfig) -> Result<TheoryReport> {
    let mut checks = Vec::new();
    for &batch in &cfg.prop1_batches {
        for &t in &cfg.prop1_temperatures {
            checks.push(prop1_check(cfg, batch, t)?);
        }
    }
    for &a in &cfg.prop3_overlaps {
        checks.push(prop3_check(cfg, a)?);
    }
    for &a in &cfg.thm1_overlaps {
        for &r in &cfg.thm1_ranks {
            checks.push(thm1_check(cfg, a, r)?);
        }
    }
    checks.push(prop2_check(cfg)?);
    checks.push(thm2_check(cfg)?);
    Ok(TheoryReport { checks })
}
