//! Cross-fitted residuals.
//!
//! For every fold `k` the nuisance regressions are trained on the other
//! folds only and evaluated on fold `k`:
//!
//! * `R_Y = Y - l(X)` with `l` from `Y ~ X`,
//! * `R_D = D - phi1(X)` with `phi1` from `D ~ X`,
//! * `R_f = f(Z, X) - phi2(X)` with `f` from `D ~ (Z, X)` and `phi2` from
//!   regressing the training-fold predictions of `f` on `X` (two-stage).
//!
//! In linear-IV mode the last residual is replaced by `R_Z = Z - mu(X)` with
//! `mu` from `Z ~ X`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FoldPartition, Sample};
use crate::error::{Error, Result};
use crate::learners::{Learner, LearnerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentMode {
    /// Learned instrument `E[D | Z, X]`.
    #[default]
    #[serde(alias = "ml")]
    MlIv,
    /// The raw scalar instrument, used only linearly.
    #[serde(alias = "linear")]
    LinearIv,
}

impl InstrumentMode {
    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "ml" | "ml_iv" | "mliv" => Ok(InstrumentMode::MlIv),
            "linear" | "linear_iv" | "lineariv" => Ok(InstrumentMode::LinearIv),
            other => Err(Error::Config(format!("unknown instrument mode {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InstrumentMode::MlIv => "ml_iv",
            InstrumentMode::LinearIv => "linear_iv",
        }
    }
}

/// One learner spec per nuisance regression. `phi2` and `mu` default to `phi1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSpecs {
    pub l: LearnerSpec,
    pub phi1: LearnerSpec,
    pub f: LearnerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi2: Option<LearnerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<LearnerSpec>,
}

impl NuisanceSpecs {
    pub fn uniform(spec: LearnerSpec) -> Self {
        Self { l: spec.clone(), phi1: spec.clone(), f: spec, phi2: None, mu: None }
    }

    pub fn phi2(&self) -> &LearnerSpec {
        self.phi2.as_ref().unwrap_or(&self.phi1)
    }

    pub fn mu(&self) -> &LearnerSpec {
        self.mu.as_ref().unwrap_or(&self.phi1)
    }

    pub fn learners(&self) -> NuisanceLearners<'_> {
        NuisanceLearners { l: &self.l, phi1: &self.phi1, f: &self.f, phi2: self.phi2(), mu: self.mu() }
    }
}

impl Default for NuisanceSpecs {
    fn default() -> Self {
        Self::uniform(LearnerSpec::default())
    }
}

/// Borrowed learners for each nuisance, allowing custom [`Learner`]s.
#[derive(Clone, Copy)]
pub struct NuisanceLearners<'a> {
    pub l: &'a dyn Learner,
    pub phi1: &'a dyn Learner,
    pub f: &'a dyn Learner,
    pub phi2: &'a dyn Learner,
    pub mu: &'a dyn Learner,
}

/// Cross-fitted residuals aligned with the sample rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    r_y: Vec<f64>,
    r_d: Vec<f64>,
    r_f: Vec<f64>,
    v: Vec<f64>,
    fold_of: Vec<usize>,
    mode: InstrumentMode,
    warnings: Vec<String>,
}

impl ResidualSet {
    /// Builds a residual set directly, e.g. from externally computed residuals.
    /// All observations are placed in a single fold.
    pub fn from_parts(r_y: Vec<f64>, r_d: Vec<f64>, r_f: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = r_y.len();
        if n == 0 {
            return Err(Error::Empty("residuals"));
        }
        for got in [r_d.len(), r_f.len(), v.len()] {
            if got != n {
                return Err(Error::DimensionMismatch { expected: n, got });
            }
        }
        if ![&r_y, &r_d, &r_f, &v].iter().all(|c| c.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("residuals"));
        }
        Ok(Self { r_y, r_d, r_f, v, fold_of: vec![0; n], mode: InstrumentMode::MlIv, warnings: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.r_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_y.is_empty()
    }

    pub fn r_y(&self) -> &[f64] {
        &self.r_y
    }

    pub fn r_d(&self) -> &[f64] {
        &self.r_d
    }

    /// Instrument residual: `R_f` in ML mode, `R_Z` in linear mode.
    pub fn r_f(&self) -> &[f64] {
        &self.r_f
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn mode(&self) -> InstrumentMode {
        self.mode
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Copy with the instrument residual multiplied by `c`.
    pub fn with_scaled_instrument(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.r_f.iter_mut().for_each(|x| *x *= c);
        out
    }

    /// Writes `fold, v, r_y, r_d, r_f` rows for debugging.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| Error::Io { path: path.display().to_string(), message: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["fold", "v", "r_y", "r_d", "r_f"]).map_err(io)?;
        for i in 0..self.len() {
            w.write_record([
                self.fold_of[i].to_string(),
                self.v[i].to_string(),
                self.r_y[i].to_string(),
                self.r_d[i].to_string(),
                self.r_f[i].to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
    }
}

/// Cross-fitted residuals with learners built from `specs`.
pub fn compute_residuals(
    sample: &Sample,
    partition: &FoldPartition,
    specs: &NuisanceSpecs,
    mode: InstrumentMode,
) -> Result<ResidualSet> {
    compute_residuals_with(sample, partition, specs.learners(), mode)
}

struct FoldResiduals {
    r_y: Vec<f64>,
    r_d: Vec<f64>,
    r_f: Vec<f64>,
    warnings: Vec<String>,
}

pub fn compute_residuals_with(
    sample: &Sample,
    partition: &FoldPartition,
    learners: NuisanceLearners<'_>,
    mode: InstrumentMode,
) -> Result<ResidualSet> {
    let n = sample.len();
    if partition.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: partition.n() });
    }
    if mode == InstrumentMode::LinearIv && sample.z().ncols() != 1 {
        return Err(Error::LinearIvNeedsUnivariateZ(sample.z().ncols()));
    }
    let zx = match mode {
        InstrumentMode::MlIv => Some(sample.zx()),
        InstrumentMode::LinearIv => None,
    };

    let per_fold: Vec<FoldResiduals> = (0..partition.k())
        .into_par_iter()
        .map(|k| fold_residuals(sample, partition, k, zx.as_ref(), learners, mode))
        .collect::<Result<_>>()?;

    let mut r_y = vec![0.0; n];
    let mut r_d = vec![0.0; n];
    let mut r_f = vec![0.0; n];
    let mut warnings = Vec::new();
    for (k, fold) in per_fold.into_iter().enumerate() {
        for (j, &i) in partition.fold(k).iter().enumerate() {
            r_y[i] = fold.r_y[j];
            r_d[i] = fold.r_d[j];
            r_f[i] = fold.r_f[j];
        }
        warnings.extend(fold.warnings);
    }
    if ![&r_y, &r_d, &r_f].iter().all(|c| c.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite("residuals"));
    }
    Ok(ResidualSet { r_y, r_d, r_f, v: sample.v(), fold_of: partition.fold_of(), mode, warnings })
}

fn fold_residuals(
    sample: &Sample,
    partition: &FoldPartition,
    k: usize,
    zx: Option<&DMatrix<f64>>,
    learners: NuisanceLearners<'_>,
    mode: InstrumentMode,
) -> Result<FoldResiduals> {
    let train = partition.complement(k);
    let test = partition.fold(k);
    if train.len() < 2 {
        return Err(Error::FoldTooSmall { fold: k, size: train.len() });
    }
    let pick = |v: &[f64], rows: &[usize]| -> Vec<f64> { rows.iter().map(|&i| v[i]).collect() };
    let x_train = sample.x().select_rows(&train);
    let x_test = sample.x().select_rows(test);
    let y_train = pick(sample.y(), &train);
    let d_train = pick(sample.d(), &train);
    let mut warnings = Vec::new();
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(&y_train) {
        warnings.push(format!("fold {k}: constant Y in training folds"));
    }
    if constant(&d_train) {
        warnings.push(format!("fold {k}: constant D in training folds"));
    }
    let too_small = |e: Error| match e {
        Error::TooFewObservations { got, .. } => Error::FoldTooSmall { fold: k, size: got },
        other => other,
    };

    let l_hat = learners.l.fit_boxed(&x_train, &y_train).map_err(too_small)?;
    let r_y: Vec<f64> = test.iter().zip(l_hat.predict(&x_test)?).map(|(&i, p)| sample.y()[i] - p).collect();

    let phi1_hat = learners.phi1.fit_boxed(&x_train, &d_train).map_err(too_small)?;
    let r_d: Vec<f64> = test.iter().zip(phi1_hat.predict(&x_test)?).map(|(&i, p)| sample.d()[i] - p).collect();

    let r_f = match (mode, zx) {
        (InstrumentMode::MlIv, Some(zx)) => {
            let zx_train = zx.select_rows(&train);
            let f_hat = learners.f.fit_boxed(&zx_train, &d_train).map_err(too_small)?;
            let f_train = f_hat.predict(&zx_train)?;
            let phi2_hat = learners.phi2.fit_boxed(&x_train, &f_train).map_err(too_small)?;
            let f_test = f_hat.predict(&zx.select_rows(test))?;
            f_test.iter().zip(phi2_hat.predict(&x_test)?).map(|(f, p)| f - p).collect()
        }
        _ => {
            let z = sample.z().column(0);
            let z_train: Vec<f64> = train.iter().map(|&i| z[i]).collect();
            let mu_hat = learners.mu.fit_boxed(&x_train, &z_train).map_err(too_small)?;
            test.iter().zip(mu_hat.predict(&x_test)?).map(|(&i, p)| z[i] - p).collect()
        }
    };
    Ok(FoldResiduals { r_y, r_d, r_f, warnings })
}

/// Sample analogue of `E[eps^2 (f - phi)^2]`: `mean((R_Y - b R_D)^2 R_f^2)`
/// at the point estimate `b`. A diagnostic of instrument strength.
pub fn iv_strength(residuals: &ResidualSet) -> f64 {
    let n = residuals.len() as f64;
    let num: f64 = residuals.r_y.iter().zip(&residuals.r_f).map(|(y, f)| y * f).sum();
    let den: f64 = residuals.r_d.iter().zip(&residuals.r_f).map(|(d, f)| d * f).sum();
    let beta = if den == 0.0 { 0.0 } else { num / den };
    (0..residuals.len())
        .map(|i| {
            let u = residuals.r_y[i] - beta * residuals.r_d[i];
            u * u * residuals.r_f[i] * residuals.r_f[i]
        })
        .sum::<f64>()
        / n
}
