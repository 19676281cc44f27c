//! Kernel-localized effect `beta(v)`.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::confidence::{check_alpha, ConfidenceSet, QCoefficients, Region};
use crate::crossfit::ResidualSet;
use crate::error::{Error, Result};
use crate::kernel::{bandwidth, gaussian_quantile, BandwidthRule, Kernel};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HetEstimate {
    pub v: f64,
    pub beta_hat_v: f64,
    /// Asymptotic variance of `sqrt(N h) (beta_hat_v - beta(v))`.
    pub sigma2_hat_v: f64,
    pub h: f64,
    pub n_total: usize,
    pub qcoef: QCoefficients,
}

impl HetEstimate {
    pub fn se(&self) -> f64 {
        (self.sigma2_hat_v / (self.n_total as f64 * self.h)).sqrt()
    }

    pub fn standard_ci(&self, alpha: f64) -> Result<ConfidenceSet> {
        wald(self.beta_hat_v, self.se(), alpha)
    }
}

pub(crate) fn wald(center: f64, se: f64, alpha: f64) -> Result<ConfidenceSet> {
    check_alpha(alpha)?;
    let z = gaussian_quantile(1.0 - alpha / 2.0)?;
    Ok(ConfidenceSet::interval(center - z * se, center + z * se, alpha))
}

/// Kernel-weighted moments at `v`; `A, B` use `K`, `C, E, F` use `K^2`.
pub fn het_coefficients(res: &ResidualSet, v: f64, h: f64, kernel: Kernel) -> Result<QCoefficients> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("bandwidth {h} must be positive")));
    }
    let (ry, rd, rf, vs) = (res.r_y(), res.r_d(), res.r_f(), res.v());
    let (mut a, mut b, mut c, mut e, mut f, mut mass) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..res.len() {
        let k = kernel.eval((vs[i] - v) / h);
        if k == 0.0 {
            continue;
        }
        let k2 = k * k;
        let f2 = rf[i] * rf[i];
        mass += k;
        a += ry[i] * rf[i] * k;
        b += rd[i] * rf[i] * k;
        c += ry[i] * ry[i] * f2 * k2;
        e += ry[i] * rd[i] * f2 * k2;
        f += rd[i] * rd[i] * f2 * k2;
    }
    if mass <= 0.0 {
        return Err(Error::NotEstimable(v));
    }
    let nh = res.len() as f64 * h;
    Ok(QCoefficients { a: a / nh, b: b / nh, c: c / nh, e: 2.0 * e / nh, f: f / nh, n: res.len(), h })
}

pub fn estimate_het(res: &ResidualSet, v: f64, h: f64, kernel: Kernel) -> Result<HetEstimate> {
    let qcoef = het_coefficients(res, v, h, kernel)?;
    let beta = qcoef.beta_hat().ok_or(Error::LocallyIrrelevantInstrument(v))?;
    let (ry, rd, rf, vs) = (res.r_y(), res.r_d(), res.r_f(), res.v());
    let mut num = 0.0;
    for i in 0..res.len() {
        let k = kernel.eval((vs[i] - v) / h);
        let u = ry[i] - beta * rd[i];
        num += u * u * rf[i] * rf[i] * k * k;
    }
    num /= res.len() as f64 * h;
    let sigma2 = num / (qcoef.b * qcoef.b);
    if !beta.is_finite() || !sigma2.is_finite() {
        return Err(Error::NonFinite("local estimate"));
    }
    Ok(HetEstimate { v, beta_hat_v: beta, sigma2_hat_v: sigma2, h, n_total: res.len(), qcoef })
}

pub fn robust_set_het(qcoef: &QCoefficients, alpha: f64) -> Result<ConfidenceSet> {
    if ![qcoef.a, qcoef.b, qcoef.c, qcoef.e, qcoef.f].iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("coefficients"));
    }
    qcoef.robust_set(alpha)
}

/// One evaluation point of a curve. Non-estimable points carry a reason
/// and no numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HetPoint {
    pub v: f64,
    pub estimable: bool,
    pub beta: Option<f64>,
    pub sigma2: Option<f64>,
    pub se: Option<f64>,
    pub standard: Option<ConfidenceSet>,
    pub robust: Option<ConfidenceSet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl HetPoint {
    pub fn not_estimable(v: f64, reason: impl Into<String>) -> Self {
        Self { v, estimable: false, beta: None, sigma2: None, se: None, standard: None, robust: None, reason: Some(reason.into()) }
    }

    pub fn from_estimate(est: &HetEstimate, alpha: f64) -> Result<Self> {
        Ok(Self {
            v: est.v,
            estimable: true,
            beta: Some(est.beta_hat_v),
            sigma2: Some(est.sigma2_hat_v),
            se: Some(est.se()),
            standard: Some(est.standard_ci(alpha)?),
            robust: Some(robust_set_het(&est.qcoef, alpha)?),
            reason: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HetCurve {
    pub kernel: Kernel,
    pub bandwidth_rule: BandwidthRule,
    pub h: f64,
    pub alpha: f64,
    pub points: Vec<HetPoint>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn robust_columns(set: &ConfidenceSet) -> (String, String) {
    let fmt = |x: f64| x.to_string();
    match &set.region {
        Region::Interval { lo, hi } | Region::TwoRays { lo, hi } => (fmt(*lo), fmt(*hi)),
        Region::LowerRay { hi } => ("-inf".into(), fmt(*hi)),
        Region::UpperRay { lo } => (fmt(*lo), "inf".into()),
        Region::Union(pieces) => (fmt(pieces[0].0), fmt(pieces[pieces.len() - 1].1)),
        Region::WholeLine | Region::Empty => (String::new(), String::new()),
    }
}

impl HetCurve {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.v).collect()
    }

    /// Plot data with one row per grid point.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| Error::Io { path: path.display().to_string(), message: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["v", "beta", "se", "ci_lo", "ci_hi", "robust_shape", "robust_b1", "robust_b2", "estimable"])
            .map_err(io)?;
        for p in &self.points {
            let opt = |x: Option<f64>| x.map(|x| x.to_string()).unwrap_or_default();
            let (ci_lo, ci_hi) = match &p.standard {
                Some(ci) => {
                    let b = ci.bounds();
                    (b[0].to_string(), b[1].to_string())
                }
                None => (String::new(), String::new()),
            };
            let (shape, b1, b2) = match &p.robust {
                Some(set) => {
                    let (b1, b2) = robust_columns(set);
                    (set.shape().to_string(), b1, b2)
                }
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([
                p.v.to_string(),
                opt(p.beta),
                opt(p.se),
                ci_lo,
                ci_hi,
                shape,
                b1,
                b2,
                p.estimable.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
    }
}

/// 101 equispaced points between the 2.5% and 97.5% empirical quantiles.
pub fn default_grid(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("V"));
    }
    let sorted = stats::sorted_copy(v);
    let lo = stats::quantile_sorted(&sorted, 0.025);
    let hi = stats::quantile_sorted(&sorted, 0.975);
    if hi <= lo {
        return Err(Error::DegenerateDistribution);
    }
    Ok((0..101).map(|i| lo + (hi - lo) * i as f64 / 100.0).collect())
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Empty("grid"));
    }
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("grid"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Estimates on a grid with one bandwidth computed from all `V` values.
/// Failures at single points are recorded on the point.
pub fn estimate_curve(
    res: &ResidualSet,
    grid: Option<&[f64]>,
    rule: BandwidthRule,
    kernel: Kernel,
    alpha: f64,
) -> Result<HetCurve> {
    check_alpha(alpha)?;
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => default_grid(res.v())?,
    };
    check_grid(&grid)?;
    let h = bandwidth(&rule, res.v())?;
    let points = grid
        .par_iter()
        .map(|&v| match estimate_het(res, v, h, kernel).and_then(|est| HetPoint::from_estimate(&est, alpha)) {
            Ok(p) => p,
            Err(e) => HetPoint::not_estimable(v, e.to_string()),
        })
        .collect();
    Ok(HetCurve { kernel, bandwidth_rule: rule, h, alpha, points, warnings: res.warnings().to_vec() })
}
