//! Penalized least squares on an additive natural-cubic-spline basis.
//!
//! Each input column is standardized and expanded into its linear term plus
//! `M - 2` natural spline functions, where `M` counts the knots including the
//! two boundary knots at the training min and max. With no interior knots the
//! expansion is just the standardized column, which makes OLS the zero-knot
//! special case. Only the nonlinear coefficients are penalized.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::stats;

#[derive(Debug, Clone, PartialEq)]
struct ColumnBasis {
    center: f64,
    scale: f64,
    /// Knots in standardized units, ascending, boundaries included.
    knots: Vec<f64>,
}

impl ColumnBasis {
    fn build(col: &[f64], interior: usize) -> Option<Self> {
        let center = stats::mean(col);
        let var = col.iter().map(|v| (v - center).powi(2)).sum::<f64>() / col.len() as f64;
        if var <= 0.0 || !var.is_finite() {
            return None;
        }
        let scale = var.sqrt();
        let sorted = stats::sorted_copy(&col.iter().map(|v| (v - center) / scale).collect::<Vec<_>>());
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let mut knots = vec![lo];
        let gap = 1e-6 * (hi - lo);
        for j in 1..=interior {
            let q = stats::quantile_sorted(&sorted, j as f64 / (interior + 1) as f64);
            if q - knots[knots.len() - 1] > gap && hi - q > gap {
                knots.push(q);
            }
        }
        knots.push(hi);
        Some(Self { center, scale, knots })
    }

    fn n_features(&self) -> usize {
        1 + self.knots.len().saturating_sub(2)
    }

    fn expand(&self, raw: f64, out: &mut Vec<f64>) {
        let x = (raw - self.center) / self.scale;
        out.push(x);
        let m = self.knots.len();
        if m < 3 {
            return;
        }
        let last = self.knots[m - 1];
        let cube = |t: f64| if t > 0.0 { t * t * t } else { 0.0 };
        let tail = cube(x - last);
        let d = |k: usize| (cube(x - self.knots[k]) - tail) / (last - self.knots[k]);
        let d_ref = d(m - 2);
        for k in 0..m - 2 {
            out.push(d(k) - d_ref);
        }
    }
}

/// A fitted additive (spline or linear) least-squares model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    columns: Vec<Option<ColumnBasis>>,
    coef: Vec<f64>,
    intercept: f64,
    rank_deficient: bool,
}

impl LinearModel {
    pub(crate) fn constant(value: f64, q: usize) -> Self {
        Self { columns: vec![None; q], coef: Vec::new(), intercept: value, rank_deficient: false }
    }

    pub(crate) fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    fn features(&self, x: &DMatrix<f64>, row: usize, out: &mut Vec<f64>) {
        out.clear();
        for (j, col) in self.columns.iter().enumerate() {
            if let Some(basis) = col {
                basis.expand(x[(row, j)], out);
            }
        }
    }

    /// Minimizes `(1/m)||y - b0 - F theta||^2 + ridge * ||theta_nonlinear||^2`.
    pub(crate) fn fit(x: &DMatrix<f64>, y: &[f64], interior_knots: usize, ridge: f64) -> Self {
        let (m, q) = x.shape();
        let mut dropped = false;
        let columns: Vec<Option<ColumnBasis>> = (0..q)
            .map(|j| {
                let col: Vec<f64> = x.column(j).iter().copied().collect();
                let basis = ColumnBasis::build(&col, interior_knots);
                dropped |= basis.is_none();
                basis
            })
            .collect();
        let mut penalized = Vec::new();
        for basis in columns.iter().flatten() {
            penalized.push(false);
            penalized.extend(std::iter::repeat_n(true, basis.n_features() - 1));
        }
        let p = penalized.len();
        let mut model = Self { columns, coef: vec![0.0; p], intercept: stats::mean(y), rank_deficient: dropped };
        if p == 0 {
            return model;
        }

        let mut design = DMatrix::zeros(m, p);
        let mut buf = Vec::with_capacity(p);
        for i in 0..m {
            model.features(x, i, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                design[(i, j)] = *v;
            }
        }
        let means: Vec<f64> = (0..p).map(|j| design.column(j).sum() / m as f64).collect();
        for (j, mu) in means.iter().enumerate() {
            design.column_mut(j).add_scalar_mut(-mu);
        }
        let y_mean = model.intercept;
        let yc = DVector::from_iterator(m, y.iter().map(|v| v - y_mean));
        let inv_m = 1.0 / m as f64;
        let mut gram = design.tr_mul(&design) * inv_m;
        for (j, &pen) in penalized.iter().enumerate() {
            if pen {
                gram[(j, j)] += ridge;
            }
        }
        let rhs = design.tr_mul(&yc) * inv_m;

        // Pseudo-inverse through the eigendecomposition gives the
        // minimum-norm solution when the Gram matrix is singular.
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let tol = top * 1e-12;
        let mut theta = DVector::zeros(p);
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > tol {
                let u = eig.eigenvectors.column(k);
                theta += u * (u.dot(&rhs) / lambda);
            } else {
                model.rank_deficient = true;
            }
        }
        model.intercept = y_mean - theta.iter().zip(&means).map(|(t, mu)| t * mu).sum::<f64>();
        model.coef = theta.iter().copied().collect();
        model
    }

    pub(crate) fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.coef.len());
        (0..x.nrows())
            .map(|i| {
                self.features(x, i, &mut buf);
                self.intercept + buf.iter().zip(&self.coef).map(|(f, c)| f * c).sum::<f64>()
            })
            .collect()
    }
}
