//! End-to-end fits with repeated cross-fitting.
//!
//! Repetition `s` partitions the sample with seed `seed + s`. With a single
//! repetition the robust set is the closed-form one; otherwise it comes from
//! the median score curves (see [`crate::aggregate`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_point, AggregatedQ, VarianceCorrection};
use crate::confidence::{ConfidenceSet, QCoefficients};
use crate::crossfit::{compute_residuals, iv_strength, InstrumentMode, NuisanceSpecs, ResidualSet};
use crate::data::{make_folds, Sample};
use crate::error::{Error, Result};
use crate::het::{check_grid, default_grid, estimate_het, wald, HetCurve, HetPoint};
use crate::hom::estimate_hom;
use crate::kernel::{bandwidth, BandwidthRule, Kernel};
use crate::stats::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub folds: usize,
    pub repetitions: usize,
    pub alpha: f64,
    pub mode: InstrumentMode,
    pub learners: NuisanceSpecs,
    pub seed: u64,
    /// Multiply the spread term of the aggregated variance by `N h`.
    pub scale_correction: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            repetitions: 10,
            alpha: 0.05,
            mode: InstrumentMode::MlIv,
            learners: NuisanceSpecs::default(),
            seed: 0,
            scale_correction: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidParameter("repetitions must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidFolds { k: self.folds, n: 0 });
        }
        crate::confidence::check_alpha(self.alpha)?;
        for spec in [&self.learners.l, &self.learners.phi1, &self.learners.f, self.learners.phi2(), self.learners.mu()] {
            spec.validate()?;
        }
        Ok(())
    }
}

/// One residual set per repetition, in repetition order.
pub fn repeated_residuals(sample: &Sample, cfg: &FitConfig) -> Result<Vec<ResidualSet>> {
    cfg.validate()?;
    (0..cfg.repetitions as u64)
        .into_par_iter()
        .map(|s| {
            let part = make_folds(sample.len(), cfg.folds, cfg.seed.wrapping_add(s))?;
            compute_residuals(sample, &part, &cfg.learners, cfg.mode)
        })
        .collect()
}

/// Aggregated point estimate with its standard interval and robust set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inference {
    pub beta: f64,
    pub sigma2: f64,
    pub se: f64,
    pub standard: ConfidenceSet,
    pub robust: ConfidenceSet,
    pub repetitions: usize,
    pub per_repetition: Vec<(f64, f64)>,
    #[serde(skip)]
    scores: Option<AggregatedQ>,
}

impl Inference {
    /// Exact robust-set membership: evaluated on the median score curves
    /// when several repetitions were combined.
    pub fn robust_contains(&self, gamma: f64) -> bool {
        match &self.scores {
            Some(q) => q.contains(gamma, self.robust.alpha).unwrap_or(false),
            None => self.robust.contains(gamma),
        }
    }
}

fn combine(coefs: Vec<QCoefficients>, estimates: Vec<(f64, f64)>, alpha: f64, correction: VarianceCorrection) -> Result<Inference> {
    let nh = coefs[0].nh();
    let agg = aggregate_point(&estimates, correction)?;
    let se = (agg.sigma2_star / nh).sqrt();
    let standard = wald(agg.beta_star, se, alpha)?;
    let (robust, scores) = if coefs.len() == 1 {
        (coefs[0].robust_set(alpha)?, None)
    } else {
        let sig: Vec<f64> = estimates.iter().map(|e| e.1).collect();
        let q = AggregatedQ::from_estimates(coefs, agg.beta_star, &sig)?;
        (q.robust_set(alpha)?, Some(q))
    };
    Ok(Inference {
        beta: agg.beta_star,
        sigma2: agg.sigma2_star,
        se,
        standard,
        robust,
        repetitions: agg.repetitions,
        per_repetition: agg.per_repetition,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomFit {
    #[serde(flatten)]
    pub inference: Inference,
    pub n: usize,
    /// Median over repetitions of `mean((R_Y - beta R_D)^2 R_f^2)`.
    pub iv_strength: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn hom_from_residuals(sets: &[ResidualSet], alpha: f64, scale_correction: bool) -> Result<HomFit> {
    if sets.is_empty() {
        return Err(Error::Empty("repetitions"));
    }
    let ests = sets.iter().map(estimate_hom).collect::<Result<Vec<_>>>()?;
    let n = sets[0].len();
    let correction = if scale_correction { VarianceCorrection::Scaled(n as f64) } else { VarianceCorrection::Literal };
    let inference = combine(
        ests.iter().map(|e| e.qcoef).collect(),
        ests.iter().map(|e| (e.beta_hat, e.sigma2_hat)).collect(),
        alpha,
        correction,
    )?;
    let strengths: Vec<f64> = sets.iter().map(iv_strength).collect();
    let mut warnings: Vec<String> = sets.iter().flat_map(|s| s.warnings().iter().cloned()).collect();
    warnings.extend(inference.robust.warnings.iter().cloned());
    warnings.dedup();
    Ok(HomFit { inference, n, iv_strength: median(&strengths), warnings })
}

pub fn fit_hom(sample: &Sample, cfg: &FitConfig) -> Result<HomFit> {
    let sets = repeated_residuals(sample, cfg)?;
    hom_from_residuals(&sets, cfg.alpha, cfg.scale_correction)
}

/// Local inference at `v` combined over repetitions. Repetitions where the
/// instrument is locally irrelevant are left out. The inner `Err` carries the
/// reason when no repetition produced an estimate.
pub fn het_from_residuals(
    sets: &[ResidualSet],
    v: f64,
    h: f64,
    kernel: Kernel,
    alpha: f64,
    scale_correction: bool,
) -> Result<std::result::Result<Inference, String>> {
    if sets.is_empty() {
        return Err(Error::Empty("repetitions"));
    }
    let mut coefs = Vec::with_capacity(sets.len());
    let mut estimates = Vec::with_capacity(sets.len());
    let mut last_err = None;
    for res in sets {
        match estimate_het(res, v, h, kernel) {
            Ok(est) => {
                coefs.push(est.qcoef);
                estimates.push((est.beta_hat_v, est.sigma2_hat_v));
            }
            Err(e @ (Error::NotEstimable(_) | Error::LocallyIrrelevantInstrument(_) | Error::NonFinite(_))) => {
                last_err = Some(e.to_string())
            }
            Err(e) => return Err(e),
        }
    }
    if coefs.is_empty() {
        return Ok(Err(last_err.unwrap_or_else(|| "not estimable".into())));
    }
    let nh = coefs[0].nh();
    let correction = if scale_correction { VarianceCorrection::Scaled(nh) } else { VarianceCorrection::Literal };
    Ok(Ok(combine(coefs, estimates, alpha, correction)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HetConfig {
    pub kernel: Kernel,
    pub bandwidth: BandwidthRule,
    /// Evaluation points; defaults to 101 points spanning the central 95% of `V`.
    pub grid: Option<Vec<f64>>,
}

impl Default for HetConfig {
    fn default() -> Self {
        Self { kernel: Kernel::Epanechnikov, bandwidth: BandwidthRule::undersmoothed(), grid: None }
    }
}

pub fn het_curve_from_residuals(sets: &[ResidualSet], het: &HetConfig, alpha: f64, scale_correction: bool) -> Result<HetCurve> {
    if sets.is_empty() {
        return Err(Error::Empty("repetitions"));
    }
    let v = sets[0].v();
    let grid = match &het.grid {
        Some(g) => g.clone(),
        None => default_grid(v)?,
    };
    check_grid(&grid)?;
    let h = bandwidth(&het.bandwidth, v)?;
    let points = grid
        .par_iter()
        .map(|&x| -> Result<HetPoint> {
            Ok(match het_from_residuals(sets, x, h, het.kernel, alpha, scale_correction)? {
                Ok(inf) => HetPoint {
                    v: x,
                    estimable: true,
                    beta: Some(inf.beta),
                    sigma2: Some(inf.sigma2),
                    se: Some(inf.se),
                    standard: Some(inf.standard),
                    robust: Some(inf.robust),
                    reason: None,
                },
                Err(reason) => HetPoint::not_estimable(x, reason),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut warnings: Vec<String> = sets.iter().flat_map(|s| s.warnings().iter().cloned()).collect();
    warnings.dedup();
    Ok(HetCurve { kernel: het.kernel, bandwidth_rule: het.bandwidth, h, alpha, points, warnings })
}

pub fn fit_het(sample: &Sample, cfg: &FitConfig, het: &HetConfig) -> Result<HetCurve> {
    let sets = repeated_residuals(sample, cfg)?;
    het_curve_from_residuals(&sets, het, cfg.alpha, cfg.scale_correction)
}
