//! Smoothing kernels, normal-reference bandwidths and Gaussian quantiles.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

const SQRT_5: f64 = 2.236_067_977_499_79;

/// Built-in kernels, both normalized to unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `3/(4 sqrt 5) (1 - x^2/5)` on `|x| <= sqrt 5`.
    #[default]
    #[serde(alias = "epanechnikov_scaled")]
    Epanechnikov,
    Gaussian,
}

impl Kernel {
    pub fn eval(&self, x: f64) -> f64 {
        let x2 = x * x;
        match self {
            Kernel::Epanechnikov => {
                if x2 <= 5.0 {
                    3.0 / (4.0 * SQRT_5) * (1.0 - x2 / 5.0)
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => (-0.5 * x2).exp() / (2.0 * PI).sqrt(),
        }
    }

    /// Half-width of the support; infinite for the Gaussian.
    pub fn support_radius(&self) -> f64 {
        match self {
            Kernel::Epanechnikov => SQRT_5,
            Kernel::Gaussian => f64::INFINITY,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Gaussian => "gaussian",
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epanechnikov" | "epanechnikov_scaled" => Ok(Kernel::Epanechnikov),
            "gaussian" => Ok(Kernel::Gaussian),
            other => Err(Error::Config(format!("unknown kernel {other:?}"))),
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthKind {
    Silverman,
    #[serde(alias = "undersmoothed")]
    Undersmooth,
}

/// `h = 1.06 min(s, IQR/1.34) N^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRule {
    pub kind: BandwidthKind,
    pub exponent: f64,
}

impl BandwidthRule {
    pub fn silverman() -> Self {
        Self { kind: BandwidthKind::Silverman, exponent: 0.2 }
    }

    /// Rule of thumb with the rate `N^(-2/7)`, shrinking faster than `N^(-1/5)`.
    pub fn undersmoothed() -> Self {
        Self { kind: BandwidthKind::Undersmooth, exponent: 2.0 / 7.0 }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "silverman" => Ok(Self::silverman()),
            "undersmooth" | "undersmoothed" => Ok(Self::undersmoothed()),
            other => Err(Error::Config(format!("unknown bandwidth rule {other:?}"))),
        }
    }
}

impl Default for BandwidthRule {
    fn default() -> Self {
        Self::undersmoothed()
    }
}

pub fn bandwidth(rule: &BandwidthRule, v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: v.len() });
    }
    if !(rule.exponent.is_finite() && rule.exponent > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth exponent {}", rule.exponent)));
    }
    let s = stats::sample_sd(v);
    let sorted = stats::sorted_copy(v);
    let iqr = stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25);
    if s.is_nan() || s <= 0.0 {
        return Err(Error::DegenerateDistribution);
    }
    let spread = if iqr > 0.0 { s.min(iqr / 1.34) } else { s };
    Ok(1.06 * spread * (v.len() as f64).powf(-rule.exponent))
}

pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn gaussian_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Newton step on the CDF.
pub fn gaussian_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    let density = gaussian_pdf(x);
    if density > 0.0 {
        Ok(x - (gaussian_cdf(x) - p) / density)
    } else {
        Ok(x)
    }
}

/// Numerical checks of the kernel regularity conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelReport {
    pub integral: f64,
    pub second_moment: f64,
    pub symmetry_defect: f64,
    pub sup_bound: f64,
    /// Integral within 1e-8 of one, exact symmetry on the grid, finite bound
    /// and a positive finite second moment.
    pub passes: bool,
}

pub fn check_kernel(kernel: &Kernel) -> KernelReport {
    check_kernel_fn(|x| kernel.eval(x))
}

/// Integrates on `[-10, 10]` by adaptive Simpson and scans a 4001-point grid
/// for asymmetry and the supremum.
pub fn check_kernel_fn(k: impl Fn(f64) -> f64) -> KernelReport {
    const TOL: f64 = 1e-10;
    let integral = adaptive_simpson(&k, -10.0, 10.0, TOL);
    let second_moment = adaptive_simpson(&|x: f64| x * x * k(x), -10.0, 10.0, TOL);
    let mut symmetry_defect: f64 = 0.0;
    let mut sup_bound: f64 = 0.0;
    for i in 0..=2000 {
        let x = 10.0 * i as f64 / 2000.0;
        let (a, b) = (k(x), k(-x));
        symmetry_defect = symmetry_defect.max((a - b).abs());
        sup_bound = sup_bound.max(a.abs()).max(b.abs());
    }
    let passes = (integral - 1.0).abs() <= 1e-8
        && symmetry_defect == 0.0
        && sup_bound.is_finite()
        && second_moment > 0.0
        && second_moment.is_finite();
    KernelReport { integral, second_moment, symmetry_defect, sup_bound, passes }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    // Start from a uniform split so narrow features are not missed by the
    // first three samples.
    let pieces = 64;
    let width = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = lo + width;
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            recurse(f, lo, hi, fa, fm, fb, simpson(fa, fm, fb, lo, hi), tol / pieces as f64, 40)
        })
        .sum()
}
