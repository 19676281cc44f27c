//! Homogeneous effect: point estimate, variance, Wald interval and robust set.

use serde::Serialize;

use crate::confidence::{check_alpha, ConfidenceSet, QCoefficients};
use crate::crossfit::ResidualSet;
use crate::error::{Error, Result};
use crate::kernel::gaussian_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomEstimate {
    pub beta_hat: f64,
    /// Asymptotic variance of `sqrt(N) (beta_hat - beta)`.
    pub sigma2_hat: f64,
    pub n_total: usize,
    pub qcoef: QCoefficients,
}

impl HomEstimate {
    /// Standard error of `beta_hat`, `sqrt(sigma2_hat / N)`.
    pub fn se(&self) -> f64 {
        (self.sigma2_hat / self.n_total as f64).sqrt()
    }
}

/// Pooled moments with unit weights and `h = 1`.
pub fn hom_coefficients(res: &ResidualSet) -> QCoefficients {
    let (ry, rd, rf) = (res.r_y(), res.r_d(), res.r_f());
    let n = res.len();
    let (mut a, mut b, mut c, mut e, mut f) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let f2 = rf[i] * rf[i];
        a += ry[i] * rf[i];
        b += rd[i] * rf[i];
        c += ry[i] * ry[i] * f2;
        e += ry[i] * rd[i] * f2;
        f += rd[i] * rd[i] * f2;
    }
    let m = n as f64;
    QCoefficients { a: a / m, b: b / m, c: c / m, e: 2.0 * e / m, f: f / m, n, h: 1.0 }
}

pub fn estimate_hom(res: &ResidualSet) -> Result<HomEstimate> {
    let qcoef = hom_coefficients(res);
    if qcoef.b == 0.0 || !qcoef.b.is_finite() {
        return Err(Error::IrrelevantInstrument);
    }
    let beta_hat = qcoef.a / qcoef.b;
    let (ry, rd, rf) = (res.r_y(), res.r_d(), res.r_f());
    let num = (0..res.len())
        .map(|i| {
            let u = ry[i] - beta_hat * rd[i];
            u * u * rf[i] * rf[i]
        })
        .sum::<f64>()
        / res.len() as f64;
    let sigma2_hat = num / (qcoef.b * qcoef.b);
    if !beta_hat.is_finite() || !sigma2_hat.is_finite() {
        return Err(Error::NonFinite("homogeneous estimate"));
    }
    Ok(HomEstimate { beta_hat, sigma2_hat, n_total: res.len(), qcoef })
}

/// Wald interval `beta_hat +/- z sigma_hat / sqrt(N)`.
pub fn standard_ci(est: &HomEstimate, alpha: f64) -> Result<ConfidenceSet> {
    check_alpha(alpha)?;
    let z = gaussian_quantile(1.0 - alpha / 2.0)?;
    let half = z * est.se();
    Ok(ConfidenceSet::interval(est.beta_hat - half, est.beta_hat + half, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QStat {
    pub q: f64,
    pub se: f64,
    /// The variance came out negative through rounding and was set to zero.
    pub clamped: bool,
}

/// `Q(beta) = mean((R_Y - beta R_D) R_f)` and its standard deviation proxy.
pub fn q_stat(res: &ResidualSet, beta: f64) -> Result<QStat> {
    if res.is_empty() {
        return Err(Error::Empty("residuals"));
    }
    let (ry, rd, rf) = (res.r_y(), res.r_d(), res.r_f());
    let m = res.len() as f64;
    let (mut q, mut s2) = (0.0, 0.0);
    for i in 0..res.len() {
        let u = (ry[i] - beta * rd[i]) * rf[i];
        q += u;
        s2 += u * u;
    }
    q /= m;
    let var = s2 / m - q * q;
    let clamped = var < 0.0;
    Ok(QStat { q, se: var.max(0.0).sqrt(), clamped })
}

pub fn robust_set_hom(res: &ResidualSet, alpha: f64) -> Result<ConfidenceSet> {
    if res.is_empty() {
        return Err(Error::Empty("residuals"));
    }
    hom_coefficients(res).robust_set(alpha)
}
