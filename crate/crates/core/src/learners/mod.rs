//! Regression learners for the nuisance functions.
//!
//! Three learners are provided: ordinary least squares, an additive natural
//! cubic spline regressor with a small ridge penalty (a GAM surrogate), and
//! histogram-based gradient-boosted regression trees. All are deterministic
//! functions of their training data.
//!
//! [`LearnerSpec`] is the serializable description; the [`Learner`] and
//! [`Predictor`] traits are the seam the cross-fitting code uses, so custom
//! learners can be injected.

mod linear;
mod trees;


use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::make_folds;
use crate::error::{Error, Result};

pub use linear::LinearModel;
pub use trees::TreeEnsemble;

/// Something that can be trained on `(X, y)`.
pub trait Learner: Send + Sync {
    fn fit_boxed(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Box<dyn Predictor>>;
}

/// A trained regression function.
pub trait Predictor: Send + Sync {
    fn input_dim(&self) -> usize;
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineParams {
    /// Interior knots per coordinate, placed at empirical quantiles.
    pub knots: usize,
    /// Ridge penalty on the nonlinear basis coefficients.
    pub ridge: f64,
}

impl Default for SplineParams {
    fn default() -> Self {
        Self { knots: 8, ridge: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub depth: usize,
    pub learning_rate: f64,
    pub rounds: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { depth: 3, learning_rate: 0.1, rounds: 200, min_leaf: 5 }
    }
}

/// Serializable learner description, `{"kind": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub enum LearnerSpec {
    Ols,
    AdditiveSpline(SplineParams),
    BoostedTrees(TreeParams),
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::AdditiveSpline(SplineParams::default())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: String,
    #[serde(default)]
    params: Map<String, Value>,
}

impl TryFrom<RawSpec> for LearnerSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let params = Value::Object(raw.params);
        let bad = |e: serde_json::Error| Error::Config(format!("learner {}: {e}", raw.kind));
        let spec = match raw.kind.as_str() {
            "ols" => {
                if params.as_object().is_some_and(|m| !m.is_empty()) {
                    return Err(Error::Config("learner ols takes no params".into()));
                }
                LearnerSpec::Ols
            }
            "additive_spline" => LearnerSpec::AdditiveSpline(serde_json::from_value(params).map_err(bad)?),
            "boosted_trees" => LearnerSpec::BoostedTrees(serde_json::from_value(params).map_err(bad)?),
            other => return Err(Error::Config(format!("unknown learner kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<LearnerSpec> for RawSpec {
    fn from(spec: LearnerSpec) -> Self {
        let (kind, params) = match spec {
            LearnerSpec::Ols => ("ols", Value::Object(Map::new())),
            LearnerSpec::AdditiveSpline(p) => ("additive_spline", serde_json::to_value(p).expect("plain struct")),
            LearnerSpec::BoostedTrees(p) => ("boosted_trees", serde_json::to_value(p).expect("plain struct")),
        };
        let params = match params {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        RawSpec { kind: kind.to_string(), params }
    }
}

impl LearnerSpec {
    pub fn spline() -> Self {
        LearnerSpec::AdditiveSpline(SplineParams::default())
    }

    pub fn boosted_trees() -> Self {
        LearnerSpec::BoostedTrees(TreeParams::default())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LearnerSpec::Ols => "ols",
            LearnerSpec::AdditiveSpline(_) => "additive_spline",
            LearnerSpec::BoostedTrees(_) => "boosted_trees",
        }
    }

    /// Parses a bare kind name with default hyperparameters.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "ols" => Ok(LearnerSpec::Ols),
            "spline" | "additive_spline" | "gam" => Ok(Self::spline()),
            "trees" | "boosted_trees" | "xgboost" => Ok(Self::boosted_trees()),
            other => Err(Error::Config(format!("unknown learner kind {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Ols => Ok(()),
            LearnerSpec::AdditiveSpline(p) => {
                if p.knots > 100 {
                    return Err(Error::InvalidParameter(format!("spline knots {} > 100", p.knots)));
                }
                if !(p.ridge.is_finite() && p.ridge >= 0.0) {
                    return Err(Error::InvalidParameter(format!("spline ridge {} must be >= 0", p.ridge)));
                }
                Ok(())
            }
            LearnerSpec::BoostedTrees(p) => {
                if !(1..=16).contains(&p.depth) {
                    return Err(Error::InvalidParameter(format!("tree depth {} outside 1..=16", p.depth)));
                }
                if !(0.0..=1.0).contains(&p.learning_rate) {
                    return Err(Error::InvalidParameter(format!(
                        "learning rate {} outside [0, 1]",
                        p.learning_rate
                    )));
                }
                if p.min_leaf == 0 {
                    return Err(Error::InvalidParameter("min_leaf must be >= 1".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Linear(LinearModel),
    Trees(TreeEnsemble),
}

/// A trained learner together with the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    spec: LearnerSpec,
    dim: usize,
    params: Params,
    fitted: Vec<f64>,
    rank_deficient: bool,
    constant_target: bool,
}

impl FittedModel {
    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    /// Predictions on the training inputs.
    pub fn fitted_values(&self) -> &[f64] {
        &self.fitted
    }

    /// The least-squares design was singular and a minimum-norm solution was used.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// The training target was constant, so the model predicts that constant.
    pub fn constant_target(&self) -> bool {
        self.constant_target
    }

    pub fn training_mse(&self, y: &[f64]) -> f64 {
        y.iter().zip(&self.fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
    }

    fn predict_unchecked(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match &self.params {
            Params::Linear(m) => m.predict(x),
            Params::Trees(t) => t.predict(x),
        }
    }
}

impl Predictor for FittedModel {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        predict(self, x)
    }
}

impl Learner for LearnerSpec {
    fn fit_boxed(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(fit(self, x, y)?))
    }
}

/// Trains `spec` on the rows of `x` against `y`.
pub fn fit(spec: &LearnerSpec, x: &DMatrix<f64>, y: &[f64]) -> Result<FittedModel> {
    spec.validate()?;
    let (m, q) = x.shape();
    if y.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: y.len() });
    }
    let needed = match spec {
        LearnerSpec::Ols => q + 1,
        _ => 2,
    };
    if m < needed {
        return Err(Error::TooFewObservations { needed, got: m });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("learner inputs"));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("learner target"));
    }

    let constant_target = y.iter().all(|&v| v == y[0]);
    let (params, rank_deficient) = match spec {
        _ if constant_target => match spec {
            LearnerSpec::BoostedTrees(p) => (Params::Trees(TreeEnsemble::constant(y[0], p.learning_rate, q)), false),
            _ => (Params::Linear(LinearModel::constant(y[0], q)), false),
        },
        LearnerSpec::Ols => {
            let m = LinearModel::fit(x, y, 0, 0.0);
            let rd = m.rank_deficient();
            (Params::Linear(m), rd)
        }
        LearnerSpec::AdditiveSpline(p) => {
            let m = LinearModel::fit(x, y, p.knots, p.ridge);
            let rd = m.rank_deficient();
            (Params::Linear(m), rd)
        }
        LearnerSpec::BoostedTrees(p) => (Params::Trees(TreeEnsemble::fit(x, y, p)), false),
    };
    let mut model = FittedModel { spec: spec.clone(), dim: q, params, fitted: Vec::new(), rank_deficient, constant_target };
    model.fitted = model.predict_unchecked(x);
    Ok(model)
}

/// Evaluates a fitted model row by row.
pub fn predict(model: &FittedModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: x.ncols() });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("prediction inputs"));
    }
    Ok(model.predict_unchecked(x))
}

/// Result of cross-validated selection over a learner grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub selected: LearnerSpec,
    pub index: usize,
    /// Cross-validated MSE per grid element, in grid order.
    pub cv_mse: Vec<f64>,
    /// `y` had zero variance; the first grid element was returned untested.
    pub degenerate_target: bool,
}

/// Picks the grid element with the smallest `folds`-fold cross-validated MSE.
/// Ties go to the earlier grid element.
pub fn tune(grid: &[LearnerSpec], x: &DMatrix<f64>, y: &[f64], folds: usize, seed: u64) -> Result<TuneOutcome> {
    if grid.is_empty() {
        return Err(Error::Empty("learner grid"));
    }
    if folds < 2 {
        return Err(Error::InvalidFolds { k: folds, n: y.len() });
    }
    if y.iter().all(|&v| v == y[0]) {
        return Ok(TuneOutcome { selected: grid[0].clone(), index: 0, cv_mse: Vec::new(), degenerate_target: true });
    }
    let partition = make_folds(y.len(), folds, seed)?;
    let mut cv_mse = Vec::with_capacity(grid.len());
    for spec in grid {
        let mut sse = 0.0;
        for k in 0..partition.k() {
            let train = partition.complement(k);
            let test = partition.fold(k);
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = fit(spec, &xt, &yt)?;
            let pred = predict(&model, &x.select_rows(test))?;
            sse += test.iter().zip(&pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>();
        }
        cv_mse.push(sse / y.len() as f64);
    }
    let mut index = 0;
    for (i, &mse) in cv_mse.iter().enumerate() {
        if mse < cv_mse[index] {
            index = i;
        }
    }
    Ok(TuneOutcome { selected: grid[index].clone(), index, cv_mse, degenerate_target: false })
}

/// Per-kind default hyperparameter grids used by CLI tuning.
pub fn default_grid() -> Vec<LearnerSpec> {
    let mut grid = vec![LearnerSpec::Ols];
    for knots in [4, 8, 12] {
        grid.push(LearnerSpec::AdditiveSpline(SplineParams { knots, ridge: 1e-4 }));
    }
    for depth in [2, 3, 4] {
        grid.push(LearnerSpec::BoostedTrees(TreeParams { depth, ..TreeParams::default() }));
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, NormalStream};

    fn linear_data(m: usize) -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(m, 2, |i, j| ((i * 7 + j * 13) % 17) as f64 / 3.0 - 2.0 + 0.01 * i as f64);
        let y = (0..m).map(|i| 3.0 * x[(i, 0)] - 2.0 * x[(i, 1)] + 1.0).collect();
        (x, y)
    }

    #[test]
    fn ols_recovers_exact_linear_map() {
        let (x, y) = linear_data(50);
        let model = fit(&LearnerSpec::Ols, &x, &y).unwrap();
        for (a, b) in model.fitted_values().iter().zip(&y) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
        assert!(!model.rank_deficient());
    }

    #[test]
    fn ols_zero_row_gives_intercept() {
        let (x, y) = linear_data(50);
        let model = fit(&LearnerSpec::Ols, &x, &y).unwrap();
        let p = predict(&model, &DMatrix::zeros(1, 2)).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ols_rank_deficient_is_flagged() {
        let x = DMatrix::from_fn(20, 2, |i, _| i as f64);
        let y: Vec<f64> = (0..20).map(|i| 2.0 * i as f64 + 1.0).collect();
        let model = fit(&LearnerSpec::Ols, &x, &y).unwrap();
        assert!(model.rank_deficient());
        for (a, b) in model.fitted_values().iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ols_needs_enough_rows() {
        let x = DMatrix::zeros(2, 2);
        assert_eq!(
            fit(&LearnerSpec::Ols, &x, &[1.0, 2.0]).unwrap_err(),
            Error::TooFewObservations { needed: 3, got: 2 }
        );
    }

    /// Dense-basis oracle: a degree-11 polynomial least-squares fit of sin on
    /// the same grid. Its RMSE is far below the 0.05 bound, confirming the
    /// bound is loose enough for a smooth target yet tight enough to catch a
    /// broken basis (the best linear fit has RMSE ~0.38).
    fn polynomial_oracle_rmse(xs: &[f64], ys: &[f64], degree: usize) -> f64 {
        let m = xs.len();
        let a = DMatrix::from_fn(m, degree + 1, |i, j| (xs[i] / 3.0).powi(j as i32));
        let b = nalgebra::DVector::from_column_slice(ys);
        let coef = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        let pred = a * coef;
        (pred.iter().zip(ys).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / m as f64).sqrt()
    }

    #[test]
    fn spline_fits_sine() {
        let m = 200;
        let xs: Vec<f64> = (0..m).map(|i| -3.0 + 6.0 * i as f64 / (m - 1) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|v| v.sin()).collect();
        let oracle = polynomial_oracle_rmse(&xs, &ys, 11);
        assert!(oracle < 0.01);
        let x = DMatrix::from_column_slice(m, 1, &xs);
        let model = fit(&LearnerSpec::spline(), &x, &ys).unwrap();
        let rmse = model.training_mse(&ys).sqrt();
        assert!(rmse <= 0.05, "rmse {rmse}");
        let lin = fit(&LearnerSpec::Ols, &x, &ys).unwrap().training_mse(&ys).sqrt();
        assert!(lin > 0.3);
    }

    #[test]
    fn spline_with_zero_knots_is_ols() {
        let mut s = NormalStream::new(seeded(3));
        let x = DMatrix::from_fn(80, 3, |_, _| s.next());
        let y: Vec<f64> = (0..80).map(|i| x[(i, 0)].sin() + x[(i, 2)] + 0.1 * s.next()).collect();
        let ols = fit(&LearnerSpec::Ols, &x, &y).unwrap();
        let spl = fit(&LearnerSpec::AdditiveSpline(SplineParams { knots: 0, ridge: 1e-4 }), &x, &y).unwrap();
        let xt = DMatrix::from_fn(10, 3, |_, _| s.next());
        let a = predict(&ols, &xt).unwrap();
        let b = predict(&spl, &xt).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-10);
        }
    }

    #[test]
    fn boosting_training_error_non_increasing_in_rounds() {
        let mut s = NormalStream::new(seeded(5));
        let x = DMatrix::from_fn(150, 2, |_, _| s.next());
        let y: Vec<f64> = (0..150).map(|i| (2.0 * x[(i, 0)]).tanh() + x[(i, 1)].powi(2) + 0.3 * s.next()).collect();
        let mut prev = f64::INFINITY;
        for rounds in [0, 1, 2, 5, 10, 11, 30, 60] {
            let spec = LearnerSpec::BoostedTrees(TreeParams { rounds, ..TreeParams::default() });
            let mse = fit(&spec, &x, &y).unwrap().training_mse(&y);
            assert!(mse <= prev * (1.0 + 1e-12), "rounds {rounds}: {mse} > {prev}");
            prev = mse;
        }
    }

    #[test]
    fn boosting_with_zero_rate_predicts_mean() {
        let mut s = NormalStream::new(seeded(6));
        let x = DMatrix::from_fn(40, 2, |_, _| s.next());
        let y: Vec<f64> = (0..40).map(|_| s.next()).collect();
        let spec = LearnerSpec::BoostedTrees(TreeParams { learning_rate: 0.0, ..TreeParams::default() });
        let model = fit(&spec, &x, &y).unwrap();
        let mean = y.iter().sum::<f64>() / 40.0;
        let p = predict(&model, &DMatrix::from_fn(5, 2, |_, _| s.next())).unwrap();
        assert!(p.iter().all(|v| (v - mean).abs() < 1e-12));
    }

    #[test]
    fn predict_matches_fitted_and_permutes() {
        let mut s = NormalStream::new(seeded(8));
        let x = DMatrix::from_fn(60, 2, |_, _| s.next());
        let y: Vec<f64> = (0..60).map(|i| x[(i, 0)].cos() + s.next()).collect();
        for spec in [LearnerSpec::Ols, LearnerSpec::spline(), LearnerSpec::boosted_trees()] {
            let model = fit(&spec, &x, &y).unwrap();
            assert_eq!(predict(&model, &x).unwrap(), model.fitted_values());
            let perm: Vec<usize> = (0..60).rev().collect();
            let p = predict(&model, &x.select_rows(&perm)).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                assert_eq!(p[j].to_bits(), model.fitted_values()[i].to_bits());
            }
            // Purity: a second fit is bit-identical.
            assert_eq!(fit(&spec, &x, &y).unwrap(), model);
        }
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let (x, y) = linear_data(20);
        let model = fit(&LearnerSpec::Ols, &x, &y).unwrap();
        assert_eq!(
            predict(&model, &DMatrix::zeros(3, 3)).unwrap_err(),
            Error::DimensionMismatch { expected: 2, got: 3 }
        );
    }

    #[test]
    fn constant_target_falls_back_to_constant() {
        let x = DMatrix::from_fn(30, 1, |i, _| i as f64);
        let y = vec![2.5; 30];
        for spec in [LearnerSpec::Ols, LearnerSpec::spline(), LearnerSpec::boosted_trees()] {
            let model = fit(&spec, &x, &y).unwrap();
            assert!(model.constant_target());
            assert!(model.fitted_values().iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn tune_singleton_and_determinism() {
        let (x, y) = linear_data(60);
        let one = tune(&[LearnerSpec::boosted_trees()], &x, &y, 5, 1).unwrap();
        assert_eq!(one.selected, LearnerSpec::boosted_trees());
        let a = tune(&default_grid(), &x, &y, 5, 3).unwrap();
        let b = tune(&default_grid(), &x, &y, 5, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tune_prefers_ols_on_linear_data() {
        let mut s = NormalStream::new(seeded(21));
        let x = DMatrix::from_fn(120, 2, |_, _| s.next());
        let y: Vec<f64> = (0..120).map(|i| 3.0 * x[(i, 0)] - 2.0 * x[(i, 1)] + 1.0).collect();
        let grid = [LearnerSpec::Ols, LearnerSpec::BoostedTrees(TreeParams { depth: 4, ..TreeParams::default() })];
        let out = tune(&grid, &x, &y, 5, 9).unwrap();
        // Direct CV check: the exact linear fit has essentially zero held-out error.
        assert!(out.cv_mse[0] < 1e-20);
        assert!(out.cv_mse[1] > 1e-3);
        assert_eq!(out.selected, LearnerSpec::Ols);
    }

    #[test]
    fn tune_flags_degenerate_target() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let out = tune(&[LearnerSpec::boosted_trees(), LearnerSpec::Ols], &x, &[1.0; 20], 5, 0).unwrap();
        assert!(out.degenerate_target);
        assert_eq!(out.index, 0);
    }

    #[test]
    fn spec_json_shape() {
        let spec = LearnerSpec::boosted_trees();
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(json["kind"], "boosted_trees");
        assert_eq!(json["params"]["depth"], 3);
        let back: LearnerSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, spec);
        let partial: LearnerSpec = serde_json::from_str(r#"{"kind":"additive_spline","params":{"knots":4}}"#).unwrap();
        assert_eq!(partial, LearnerSpec::AdditiveSpline(SplineParams { knots: 4, ridge: 1e-4 }));
        let ols: LearnerSpec = serde_json::from_str(r#"{"kind":"ols"}"#).unwrap();
        assert_eq!(ols, LearnerSpec::Ols);
        assert!(serde_json::from_str::<LearnerSpec>(r#"{"kind":"forest"}"#).is_err());
        assert!(serde_json::from_str::<LearnerSpec>(r#"{"kind":"boosted_trees","params":{"depth":0}}"#).is_err());
        assert!(serde_json::from_str::<LearnerSpec>(r#"{"kind":"boosted_trees","params":{"dpth":3}}"#).is_err());
    }
}
