//! Confidence sets and the quadratic score-test coefficients behind them.
//!
//! For a candidate effect `gamma`, the score is `Q(gamma) = A - gamma B` and
//! its variance proxy is `SE^2(gamma) = C - gamma E + gamma^2 F - h Q(gamma)^2`.
//! The robust set `{gamma : |Q| <= z SE / sqrt(N h)}` is the sublevel set
//! `{R gamma^2 + S gamma + T <= 0}` of a parabola, which is an interval, the
//! complement of an interval, or the whole line.

use serde::ser::{Serialize, SerializeStruct, Serializer};

use crate::error::{Error, Result};
use crate::kernel::gaussian_quantile;

/// Weighted residual moments for one evaluation point.
///
/// Homogeneous fits use unit weights and `h = 1`:
/// `A = mean(R_Y R_f)`, `B = mean(R_D R_f)`, `C = mean(R_Y^2 R_f^2)`,
/// `E = 2 mean(R_Y R_D R_f^2)`, `F = mean(R_D^2 R_f^2)`. Kernel fits weight
/// `A, B` by `K((V_i - v)/h)` and `C, E, F` by its square, all divided by `N h`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct QCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub e: f64,
    pub f: f64,
    /// Total sample size `N`.
    pub n: usize,
    pub h: f64,
}

/// Quadratic `R g^2 + S g + T`, non-positive exactly on the robust set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parabola {
    pub r: f64,
    pub s: f64,
    pub t: f64,
}

impl QCoefficients {
    pub fn nh(&self) -> f64 {
        self.n as f64 * self.h
    }

    pub fn q(&self, gamma: f64) -> f64 {
        self.a - gamma * self.b
    }

    /// Raw `SE^2(gamma)`; may dip below zero through rounding.
    pub fn se2(&self, gamma: f64) -> f64 {
        let q = self.q(gamma);
        self.c - gamma * self.e + gamma * gamma * self.f - self.h * q * q
    }

    /// `A / B`, or `None` when the first-stage moment is numerically zero.
    pub fn beta_hat(&self) -> Option<f64> {
        if self.b.abs() < 1e-12 * (1.0 + self.a.abs()) {
            None
        } else {
            Some(self.a / self.b)
        }
    }

    /// Membership in `{gamma : |Q| <= z SE / sqrt(N h)}`, evaluated directly.
    pub fn in_robust_set(&self, gamma: f64, z: f64) -> bool {
        let q = self.q(gamma);
        q * q <= z * z * self.se2(gamma).max(0.0) / self.nh()
    }

    pub fn parabola(&self, z: f64) -> Parabola {
        let kappa = z * z / self.nh();
        let (a, b, h) = (self.a, self.b, self.h);
        Parabola {
            r: b * b + kappa * (h * b * b - self.f),
            s: -2.0 * a * b + kappa * (self.e - 2.0 * h * a * b),
            t: a * a + kappa * (h * a * a - self.c),
        }
    }

    /// Closed-form robust confidence set at level `1 - alpha`.
    pub fn robust_set(&self, alpha: f64) -> Result<ConfidenceSet> {
        check_alpha(alpha)?;
        let z = gaussian_quantile(1.0 - alpha / 2.0)?;
        let Parabola { r, s, t } = self.parabola(z);
        let kappa = z * z / self.nh();
        let scale = self.b * self.b + kappa * (self.h * self.b * self.b + self.f);
        let beta_hat = self.beta_hat();
        let mut warnings = Vec::new();

        let region = if r.abs() <= 1e-13 * scale {
            // Linear inequality s g + t <= 0.
            if s > 0.0 {
                Region::LowerRay { hi: -t / s }
            } else if s < 0.0 {
                Region::UpperRay { lo: -t / s }
            } else if t <= 0.0 {
                Region::WholeLine
            } else {
                Region::Empty
            }
        } else {
            let disc = s * s - 4.0 * r * t;
            if disc < 0.0 {
                if r < 0.0 {
                    Region::WholeLine
                } else {
                    Region::Empty
                }
            } else {
                let sq = disc.sqrt();
                let qq = -0.5 * (s + s.signum() * sq);
                let (r1, r2) = if qq == 0.0 { (0.0, 0.0) } else { (qq / r, t / qq) };
                let (lo, hi) = (r1.min(r2), r1.max(r2));
                if r > 0.0 {
                    Region::Interval { lo, hi }
                } else {
                    Region::TwoRays { lo, hi }
                }
            }
        };

        let region = match (region, beta_hat) {
            (Region::Empty, Some(bh)) => {
                warnings.push("robust set numerically empty; returning the point estimate".to_string());
                Region::Interval { lo: bh, hi: bh }
            }
            (region, Some(bh)) if !region.contains(bh) => {
                warnings.push("robust set widened to contain the point estimate after rounding".to_string());
                region.widen_to(bh)
            }
            (region, _) => region,
        };
        Ok(ConfidenceSet { alpha, region, warnings })
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")))
    }
}

/// Shape of a subset of the real line.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    /// `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
    /// `(-inf, lo] U [hi, inf)`.
    TwoRays { lo: f64, hi: f64 },
    WholeLine,
    /// `(-inf, hi]`.
    LowerRay { hi: f64 },
    /// `[lo, inf)`.
    UpperRay { lo: f64 },
    /// Disjoint closed pieces in increasing order; ends may be infinite.
    Union(Vec<(f64, f64)>),
    Empty,
}

impl Region {
    pub fn contains(&self, x: f64) -> bool {
        match self {
            Region::Interval { lo, hi } => *lo <= x && x <= *hi,
            Region::TwoRays { lo, hi } => x <= *lo || x >= *hi,
            Region::WholeLine => true,
            Region::LowerRay { hi } => x <= *hi,
            Region::UpperRay { lo } => x >= *lo,
            Region::Union(pieces) => pieces.iter().any(|(a, b)| *a <= x && x <= *b),
            Region::Empty => false,
        }
    }

    pub fn shape(&self) -> &'static str {
        match self {
            Region::Interval { .. } => "interval",
            Region::TwoRays { .. } => "two_rays",
            Region::WholeLine => "whole_line",
            Region::LowerRay { .. } => "lower_ray",
            Region::UpperRay { .. } => "upper_ray",
            Region::Union(_) => "union",
            Region::Empty => "empty",
        }
    }

    /// Finite boundary points (union pieces flattened, infinities kept).
    pub fn bounds(&self) -> Vec<f64> {
        match self {
            Region::Interval { lo, hi } | Region::TwoRays { lo, hi } => vec![*lo, *hi],
            Region::LowerRay { hi } => vec![*hi],
            Region::UpperRay { lo } => vec![*lo],
            Region::Union(pieces) => pieces.iter().flat_map(|(a, b)| [*a, *b]).collect(),
            Region::WholeLine | Region::Empty => Vec::new(),
        }
    }

    /// Lebesgue measure; infinite for unbounded shapes.
    pub fn length(&self) -> f64 {
        match self {
            Region::Interval { lo, hi } => hi - lo,
            Region::Union(pieces) => pieces.iter().map(|(a, b)| b - a).sum(),
            Region::Empty => 0.0,
            _ => f64::INFINITY,
        }
    }

    /// Canonical shape from sorted disjoint pieces.
    pub fn from_pieces(pieces: Vec<(f64, f64)>) -> Self {
        match pieces.as_slice() {
            [] => Region::Empty,
            [(a, b)] => match (a.is_infinite(), b.is_infinite()) {
                (true, true) => Region::WholeLine,
                (true, false) => Region::LowerRay { hi: *b },
                (false, true) => Region::UpperRay { lo: *a },
                (false, false) => Region::Interval { lo: *a, hi: *b },
            },
            [(a1, b1), (a2, b2)] if a1.is_infinite() && b2.is_infinite() => Region::TwoRays { lo: *b1, hi: *a2 },
            _ => Region::Union(pieces),
        }
    }

    fn widen_to(self, x: f64) -> Self {
        match self {
            Region::Interval { lo, hi } => Region::Interval { lo: lo.min(x), hi: hi.max(x) },
            Region::TwoRays { lo, hi } => {
                if x - lo < hi - x {
                    Region::TwoRays { lo: x, hi }
                } else {
                    Region::TwoRays { lo, hi: x }
                }
            }
            Region::LowerRay { .. } => Region::LowerRay { hi: x },
            Region::UpperRay { .. } => Region::UpperRay { lo: x },
            other => other,
        }
    }
}

/// A confidence set at level `1 - alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    pub alpha: f64,
    pub region: Region,
    pub warnings: Vec<String>,
}

impl ConfidenceSet {
    pub fn interval(lo: f64, hi: f64, alpha: f64) -> Self {
        Self { alpha, region: Region::Interval { lo, hi }, warnings: Vec::new() }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.region.contains(x)
    }

    pub fn shape(&self) -> &'static str {
        self.region.shape()
    }

    pub fn bounds(&self) -> Vec<f64> {
        self.region.bounds()
    }

    pub fn length(&self) -> f64 {
        self.region.length()
    }
}

impl Serialize for ConfidenceSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = if self.warnings.is_empty() { 3 } else { 4 };
        let mut st = serializer.serialize_struct("ConfidenceSet", n)?;
        st.serialize_field("shape", self.shape())?;
        st.serialize_field("bounds", &self.bounds())?;
        st.serialize_field("alpha", &self.alpha)?;
        if !self.warnings.is_empty() {
            st.serialize_field("warnings", &self.warnings)?;
        }
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coef(a: f64, b: f64, c: f64, e: f64, f: f64, n: usize) -> QCoefficients {
        QCoefficients { a, b, c, e, f, n, h: 1.0 }
    }

    #[test]
    fn strong_instrument_gives_interval_around_estimate() {
        let q = coef(2.0, 1.0, 5.0, 4.0, 1.0, 400);
        let set = q.robust_set(0.05).unwrap();
        assert_eq!(set.shape(), "interval");
        assert!(set.contains(2.0));
    }

    #[test]
    fn zero_first_stage_gives_whole_line() {
        // B = 0 makes R = -kappa F < 0 and the discriminant negative when C F > E^2/4.
        let q = coef(0.0, 0.0, 1.0, 0.0, 1.0, 100);
        let set = q.robust_set(0.05).unwrap();
        assert_eq!(set.region, Region::WholeLine);
    }

    #[test]
    fn linear_fallback_when_leading_coefficient_vanishes() {
        // Choose F so that R = B^2 + kappa (B^2 - F) = 0 exactly.
        let z = gaussian_quantile(0.975).unwrap();
        let n = 50;
        let kappa = z * z / n as f64;
        let b: f64 = 1.0;
        let f = b * b * (1.0 + kappa) / kappa;
        let q = coef(1.0, b, 3.0, 0.5, f, n);
        let p = q.parabola(z);
        assert!(p.r.abs() < 1e-12);
        let set = q.robust_set(0.05).unwrap();
        assert!(matches!(set.region, Region::LowerRay { .. } | Region::UpperRay { .. } | Region::WholeLine));
        assert!(set.contains(1.0));
    }

    #[test]
    fn region_pieces_canonicalize() {
        let inf = f64::INFINITY;
        assert_eq!(Region::from_pieces(vec![]), Region::Empty);
        assert_eq!(Region::from_pieces(vec![(-inf, inf)]), Region::WholeLine);
        assert_eq!(Region::from_pieces(vec![(-inf, 1.0), (2.0, inf)]), Region::TwoRays { lo: 1.0, hi: 2.0 });
        assert_eq!(Region::from_pieces(vec![(0.0, 1.0)]), Region::Interval { lo: 0.0, hi: 1.0 });
        assert_eq!(Region::from_pieces(vec![(3.0, inf)]), Region::UpperRay { lo: 3.0 });
        assert!(matches!(Region::from_pieces(vec![(0.0, 1.0), (2.0, 3.0)]), Region::Union(_)));
    }

    #[test]
    fn serializes_shape_and_bounds() {
        let set = ConfidenceSet { alpha: 0.05, region: Region::TwoRays { lo: -1.0, hi: 2.0 }, warnings: vec![] };
        let v = serde_json::to_value(&set).unwrap();
        assert_eq!(v["shape"], "two_rays");
        assert_eq!(v["bounds"], serde_json::json!([-1.0, 2.0]));
        assert!(v.get("warnings").is_none());
    }
}
