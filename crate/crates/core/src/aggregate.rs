//! Median aggregation over repeated cross-fitting.
//!
//! Each repetition draws a fresh fold partition. Point estimates and variances
//! are combined through medians, and the score curves `Q_s` and `SE_s^2` are
//! combined argument-wise. The median of several parabolas is not a parabola,
//! so the aggregated robust set is found numerically on a grid.

use serde::{Deserialize, Serialize};

use crate::confidence::{check_alpha, ConfidenceSet, QCoefficients, Region};
use crate::error::{Error, Result};
use crate::kernel::gaussian_quantile;
use crate::stats::median;

/// How the spread term `(beta_s - beta*)^2` enters the aggregated variance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceCorrection {
    /// `median{sigma2_s + (beta_s - beta*)^2}`.
    #[default]
    Literal,
    /// `median{sigma2_s + factor (beta_s - beta*)^2}`, e.g. `factor = N h`.
    Scaled(f64),
}

impl VarianceCorrection {
    fn factor(&self) -> f64 {
        match self {
            VarianceCorrection::Literal => 1.0,
            VarianceCorrection::Scaled(c) => *c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatedEstimate {
    pub beta_star: f64,
    pub sigma2_star: f64,
    pub repetitions: usize,
    /// `(beta_s, sigma2_s)` per repetition, in repetition order.
    pub per_repetition: Vec<(f64, f64)>,
}

pub fn aggregate_point(estimates: &[(f64, f64)], correction: VarianceCorrection) -> Result<AggregatedEstimate> {
    if estimates.is_empty() {
        return Err(Error::Empty("repetitions"));
    }
    let betas: Vec<f64> = estimates.iter().map(|e| e.0).collect();
    let beta_star = median(&betas);
    let c = correction.factor();
    let adjusted: Vec<f64> = estimates.iter().map(|(b, s2)| s2 + c * (b - beta_star).powi(2)).collect();
    Ok(AggregatedEstimate {
        beta_star,
        sigma2_star: median(&adjusted),
        repetitions: estimates.len(),
        per_repetition: estimates.to_vec(),
    })
}

/// Argument-wise medians `Q*` and `SE*^2 = median{SE_s^2 + (Q_s - Q*)^2}` of
/// curves sampled on a shared grid.
pub fn aggregate_q(q_curves: &[Vec<f64>], se2_curves: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if q_curves.is_empty() {
        return Err(Error::Empty("curves"));
    }
    if se2_curves.len() != q_curves.len() {
        return Err(Error::GridMismatch);
    }
    let m = q_curves[0].len();
    if q_curves.iter().chain(se2_curves).any(|c| c.len() != m) {
        return Err(Error::GridMismatch);
    }
    let mut q_star = Vec::with_capacity(m);
    let mut se2_star = Vec::with_capacity(m);
    let mut col = vec![0.0; q_curves.len()];
    for j in 0..m {
        for (slot, c) in col.iter_mut().zip(q_curves) {
            *slot = c[j];
        }
        let q = median(&col);
        for (s, slot) in col.iter_mut().enumerate() {
            *slot = se2_curves[s][j] + (q_curves[s][j] - q).powi(2);
        }
        q_star.push(q);
        se2_star.push(median(&col));
    }
    Ok((q_star, se2_star))
}

const GRID_POINTS: usize = 2001;

/// Aggregated score curves built from per-repetition coefficients, which
/// lets `Q*` and `SE*^2` be evaluated at any `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedQ {
    coefs: Vec<QCoefficients>,
    nh: f64,
    center: f64,
    half_width: f64,
}

impl AggregatedQ {
    /// The search window is `center +/- half_width`; by default `beta*` plus
    /// ten times the largest per-repetition standard error.
    pub fn new(coefs: Vec<QCoefficients>, center: f64, half_width: f64) -> Result<Self> {
        if coefs.is_empty() {
            return Err(Error::Empty("repetitions"));
        }
        let nh = coefs[0].nh();
        if coefs.iter().any(|c| (c.nh() - nh).abs() > 1e-12 * nh) {
            return Err(Error::GridMismatch);
        }
        if !(center.is_finite() && half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidParameter(format!("search window {center} +/- {half_width}")));
        }
        Ok(Self { coefs, nh, center, half_width })
    }

    /// Window from `beta*` and the largest `sigma_s / sqrt(N h)`.
    pub fn from_estimates(coefs: Vec<QCoefficients>, beta_star: f64, sigma2_per_rep: &[f64]) -> Result<Self> {
        let nh = coefs.first().map(|c| c.nh()).unwrap_or(1.0);
        let widest = sigma2_per_rep.iter().filter(|s| s.is_finite()).map(|s| (s / nh).sqrt()).fold(0.0, f64::max);
        let mut half = 10.0 * widest;
        if !(half > 0.0 && half.is_finite()) {
            half = 1.0 + beta_star.abs();
        }
        Self::new(coefs, beta_star, half)
    }

    pub fn q_star(&self, gamma: f64) -> f64 {
        let qs: Vec<f64> = self.coefs.iter().map(|c| c.q(gamma)).collect();
        median(&qs)
    }

    pub fn se2_star(&self, gamma: f64) -> f64 {
        let q = self.q_star(gamma);
        let vals: Vec<f64> = self.coefs.iter().map(|c| c.se2(gamma).max(0.0) + (c.q(gamma) - q).powi(2)).collect();
        median(&vals)
    }

    /// `Q*^2 - z^2 SE*^2 / (N h)`; non-positive on the robust set.
    fn gap(&self, gamma: f64, z: f64) -> f64 {
        let q = self.q_star(gamma);
        q * q - z * z * self.se2_star(gamma) / self.nh
    }

    /// `|Q*(gamma)| <= z SE*(gamma) / sqrt(N h)`.
    pub fn contains(&self, gamma: f64, alpha: f64) -> Result<bool> {
        check_alpha(alpha)?;
        let z = gaussian_quantile(1.0 - alpha / 2.0)?;
        Ok(self.gap(gamma, z) <= 0.0)
    }

    pub fn grid(&self) -> Vec<f64> {
        let lo = self.center - self.half_width;
        let step = 2.0 * self.half_width / (GRID_POINTS - 1) as f64;
        (0..GRID_POINTS).map(|i| lo + step * i as f64).collect()
    }

    /// Grid scan plus bisection at each membership change. Runs that reach a
    /// grid edge are reported as unbounded.
    pub fn robust_set(&self, alpha: f64) -> Result<ConfidenceSet> {
        check_alpha(alpha)?;
        let z = gaussian_quantile(1.0 - alpha / 2.0)?;
        let grid = self.grid();
        let inside: Vec<bool> = grid.iter().map(|&g| self.gap(g, z) <= 0.0).collect();
        let refine = |mut a: f64, mut b: f64| -> f64 {
            // Invariant: membership at `a` differs from membership at `b`.
            let a_in = self.gap(a, z) <= 0.0;
            for _ in 0..200 {
                if (b - a).abs() <= 1e-12 * (1.0 + a.abs()) {
                    break;
                }
                let mid = 0.5 * (a + b);
                if (self.gap(mid, z) <= 0.0) == a_in {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        };
        let mut pieces = Vec::new();
        let mut start: Option<f64> = if inside[0] { Some(f64::NEG_INFINITY) } else { None };
        for j in 1..grid.len() {
            match (inside[j - 1], inside[j]) {
                (false, true) => start = Some(refine(grid[j - 1], grid[j])),
                (true, false) => {
                    let end = refine(grid[j - 1], grid[j]);
                    pieces.push((start.take().unwrap_or(f64::NEG_INFINITY), end));
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            pieces.push((s, f64::INFINITY));
        }
        let mut warnings = Vec::new();
        if pieces.is_empty() {
            warnings.push("aggregated robust set empty on the search grid".to_string());
        }
        Ok(ConfidenceSet { alpha, region: Region::from_pieces(pieces), warnings })
    }
}
