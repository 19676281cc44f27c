//! Synthetic designs and Monte-Carlo experiments.
//!
//! The one-dimensional design draws `X, H, E_Z, E_delta, E_eps ~ N(0, 1)` and sets
//!
//! ```text
//! Z = 0.5 X + E_Z
//! delta = 0.7 H + 0.7 E_delta
//! eps = sign(H) - 0.5 + 0.5 E_eps
//! D = f(Z, X) + delta,  V = X,  Y = beta(V) D + tanh(X) + eps
//! ```
//!
//! with `f(z, x) = -sin x + s z` or `-sin x + s (cos z + 0.2 z)`. The strong
//! endogeneity variant uses `delta = 0.7 H + 0.1 E_delta`, `eps = 0.7 H + 0.1 E_eps`.
//! The five-dimensional design draws `X ~ N(0, Sigma)` with unit variances and
//! correlations 0.5, sets `Z = 0.5 X1 - 0.5 X2 + E_Z`, `V = X1`,
//! `g(x) = tanh(x1) - x3` and adds `x2` to `f`.

use std::path::Path;

use nalgebra::{DMatrix, Matrix5, Vector5};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossfit::{InstrumentMode, NuisanceSpecs};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::kernel::{bandwidth, BandwidthRule, Kernel};
use crate::learners::LearnerSpec;
use crate::pipeline::{het_from_residuals, hom_from_residuals, repeated_residuals, FitConfig, Inference};
use crate::rng::{seeded, split_seed, NormalStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    #[default]
    OneD,
    FiveD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    #[default]
    Hom,
    Het,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FKind {
    #[default]
    ZLin,
    ZNonlin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endogeneity {
    #[default]
    Baseline,
    Strong,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    #[serde(default)]
    pub dimension: Dimension,
    #[serde(default)]
    pub beta_kind: BetaKind,
    #[serde(default)]
    pub f_kind: FKind,
    /// Multiplier of the instrument's effect on the treatment.
    #[serde(default = "one")]
    pub strength: f64,
    #[serde(default)]
    pub endogeneity: Endogeneity,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(beta_kind: BetaKind, f_kind: FKind, n: usize, seed: u64) -> Self {
        Self {
            dimension: Dimension::OneD,
            beta_kind,
            f_kind,
            strength: 1.0,
            endogeneity: Endogeneity::Baseline,
            n,
            seed,
        }
    }

    /// Builds a spec from comma-separated tokens such as `het,z_nonlin,5d,strong`.
    pub fn from_tokens(tokens: &str, n: usize, seed: u64) -> Result<Self> {
        let mut spec = Self::new(BetaKind::Hom, FKind::ZLin, n, seed);
        for tok in tokens.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "hom" => spec.beta_kind = BetaKind::Hom,
                "het" => spec.beta_kind = BetaKind::Het,
                "z_lin" | "zlin" => spec.f_kind = FKind::ZLin,
                "z_nonlin" | "znonlin" => spec.f_kind = FKind::ZNonlin,
                "one_d" | "1d" => spec.dimension = Dimension::OneD,
                "five_d" | "5d" => spec.dimension = Dimension::FiveD,
                "baseline" => spec.endogeneity = Endogeneity::Baseline,
                "strong" => spec.endogeneity = Endogeneity::Strong,
                other => {
                    if let Some(s) = other.strip_prefix("s=") {
                        spec.strength = s.parse().map_err(|_| Error::Config(format!("bad strength {s:?}")))?;
                    } else {
                        return Err(Error::Config(format!("unknown design token {other:?}")));
                    }
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::TooFewObservations { needed: 10, got: self.n });
        }
        if !(self.strength.is_finite() && self.strength >= 0.0) {
            return Err(Error::InvalidParameter(format!("strength {} must be finite and >= 0", self.strength)));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let dim = match self.dimension {
            Dimension::OneD => "one_d",
            Dimension::FiveD => "five_d",
        };
        let beta = match self.beta_kind {
            BetaKind::Hom => "hom",
            BetaKind::Het => "het",
        };
        let f = match self.f_kind {
            FKind::ZLin => "z_lin",
            FKind::ZNonlin => "z_nonlin",
        };
        let endo = match self.endogeneity {
            Endogeneity::Baseline => "baseline",
            Endogeneity::Strong => "strong",
        };
        format!("{dim}/{beta}/{f}/s={}/{endo}", self.strength)
    }

    pub fn truth(&self) -> Truth {
        Truth { kind: self.beta_kind }
    }

    /// Learners used when none are configured: splines in one dimension,
    /// boosted trees in five.
    pub fn default_learners(&self) -> NuisanceSpecs {
        match self.dimension {
            Dimension::OneD => NuisanceSpecs::uniform(LearnerSpec::spline()),
            Dimension::FiveD => NuisanceSpecs::uniform(LearnerSpec::boosted_trees()),
        }
    }
}

/// The true effect function `beta(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truth {
    kind: BetaKind,
}

impl Truth {
    pub fn eval(&self, v: f64) -> f64 {
        match self.kind {
            BetaKind::Hom => 1.0,
            BetaKind::Het => 2.0 * (-0.5 * v * v).exp(),
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn five_d_factor() -> Matrix5<f64> {
    let sigma = Matrix5::from_fn(|i, j| if i == j { 1.0 } else { 0.5 });
    sigma.cholesky().expect("equicorrelation matrix is positive definite").l()
}

/// Draws one dataset; deterministic in `dgp.seed`.
pub fn generate(dgp: &DgpSpec) -> Result<(Sample, Truth)> {
    dgp.validate()?;
    let n = dgp.n;
    let s = dgp.strength;
    let mut normal = NormalStream::new(seeded(dgp.seed));
    let p = match dgp.dimension {
        Dimension::OneD => 1,
        Dimension::FiveD => 5,
    };
    let chol = five_d_factor();
    let truth = dgp.truth();
    let mut x = DMatrix::zeros(n, p);
    let mut z = DMatrix::zeros(n, 1);
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let xi: Vec<f64> = match dgp.dimension {
            Dimension::OneD => vec![normal.next()],
            Dimension::FiveD => {
                let e = Vector5::from_fn(|_, _| normal.next());
                (chol * e).iter().copied().collect()
            }
        };
        let h = normal.next();
        let e_z = normal.next();
        let e_delta = normal.next();
        let e_eps = normal.next();
        let zi = match dgp.dimension {
            Dimension::OneD => 0.5 * xi[0] + e_z,
            Dimension::FiveD => 0.5 * xi[0] - 0.5 * xi[1] + e_z,
        };
        let (delta, eps) = match dgp.endogeneity {
            Endogeneity::Baseline => (0.7 * h + 0.7 * e_delta, sign(h) - 0.5 + 0.5 * e_eps),
            Endogeneity::Strong => (0.7 * h + 0.1 * e_delta, 0.7 * h + 0.1 * e_eps),
        };
        let z_term = match dgp.f_kind {
            FKind::ZLin => s * zi,
            FKind::ZNonlin => s * (zi.cos() + 0.2 * zi),
        };
        let (f, g) = match dgp.dimension {
            Dimension::OneD => (-xi[0].sin() + z_term, xi[0].tanh()),
            Dimension::FiveD => (-xi[0].sin() + xi[1] + z_term, xi[0].tanh() - xi[2]),
        };
        let di = f + delta;
        y.push(truth.eval(xi[0]) * di + g + eps);
        d.push(di);
        z[(i, 0)] = zi;
        for (j, v) in xi.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    Ok((Sample::new(y, d, z, x, 0)?, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "hom_linearIV")]
    HomLinearIv,
    #[serde(alias = "hom_mlIV")]
    HomMlIv,
    #[serde(alias = "het_linearIV")]
    HetLinearIv,
    #[serde(alias = "het_mlIV")]
    HetMlIv,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::HomLinearIv, Method::HomMlIv, Method::HetLinearIv, Method::HetMlIv];

    pub fn mode(&self) -> InstrumentMode {
        match self {
            Method::HomLinearIv | Method::HetLinearIv => InstrumentMode::LinearIv,
            Method::HomMlIv | Method::HetMlIv => InstrumentMode::MlIv,
        }
    }

    pub fn is_het(&self) -> bool {
        matches!(self, Method::HetLinearIv | Method::HetMlIv)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::HomLinearIv => "hom_linear_iv",
            Method::HomMlIv => "hom_ml_iv",
            Method::HetLinearIv => "het_linear_iv",
            Method::HetMlIv => "het_ml_iv",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace("iv", "_iv").replace("__", "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dgps: Vec<DgpSpec>,
    pub methods: Vec<Method>,
    pub targets: Vec<f64>,
    pub replications: usize,
    pub alpha: f64,
    pub folds: usize,
    pub repetitions: usize,
    /// Nuisance learners; `None` picks the design's default.
    pub learners: Option<NuisanceSpecs>,
    pub kernel: Kernel,
    pub bandwidth: BandwidthRule,
    pub seed: u64,
    pub scale_correction: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dgps: Vec::new(),
            methods: Method::ALL.to_vec(),
            targets: vec![0.0, 1.5],
            replications: 200,
            alpha: 0.05,
            folds: 5,
            repetitions: 10,
            learners: None,
            kernel: Kernel::Epanechnikov,
            bandwidth: BandwidthRule::undersmoothed(),
            seed: 0,
            scale_correction: false,
        }
    }
}

/// Summary for one (design, method, target) cell. Rates are over the
/// replications that produced an estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub dgp: String,
    pub method: Method,
    pub target: f64,
    pub truth: f64,
    pub n_replications: usize,
    pub not_estimable: usize,
    pub mean_estimate: Option<f64>,
    pub mse: Option<f64>,
    pub mse_se: Option<f64>,
    pub coverage_standard: Option<f64>,
    pub coverage_standard_se: Option<f64>,
    pub coverage_robust: Option<f64>,
    pub coverage_robust_se: Option<f64>,
    pub mean_ci_length: Option<f64>,
    pub median_robust_length: Option<f64>,
    pub robust_unbounded: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn row(&self, method: Method, target: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.target == target)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| Error::Io { path: path.display().to_string(), message: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record([
            "dgp",
            "method",
            "target",
            "truth",
            "n_replications",
            "not_estimable",
            "mean_estimate",
            "mse",
            "mse_se",
            "coverage_standard",
            "coverage_standard_se",
            "coverage_robust",
            "coverage_robust_se",
            "mean_ci_length",
            "median_robust_length",
            "robust_unbounded",
        ])
        .map_err(io)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.dgp.clone(),
                r.method.name().to_string(),
                r.target.to_string(),
                r.truth.to_string(),
                r.n_replications.to_string(),
                r.not_estimable.to_string(),
                opt(r.mean_estimate),
                opt(r.mse),
                opt(r.mse_se),
                opt(r.coverage_standard),
                opt(r.coverage_standard_se),
                opt(r.coverage_robust),
                opt(r.coverage_robust_se),
                opt(r.mean_ci_length),
                opt(r.median_robust_length),
                opt(r.robust_unbounded),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
    }
}

/// What one replication recorded for one (method, target) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub estimate: f64,
    pub covered_standard: bool,
    pub covered_robust: bool,
    pub ci_length: f64,
    pub robust_length: f64,
}

fn outcome(inf: &Inference, truth: f64) -> Outcome {
    Outcome {
        estimate: inf.beta,
        covered_standard: inf.standard.contains(truth),
        covered_robust: inf.robust_contains(truth),
        ci_length: inf.standard.length(),
        robust_length: inf.robust.length(),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dgps.is_empty() {
            return Err(Error::Config("no designs configured".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("no targets configured".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        for d in &self.dgps {
            d.validate()?;
        }
        self.fit_config(&self.dgps[0], InstrumentMode::MlIv, 0).validate()
    }

    fn fit_config(&self, dgp: &DgpSpec, mode: InstrumentMode, seed: u64) -> FitConfig {
        FitConfig {
            folds: self.folds,
            repetitions: self.repetitions,
            alpha: self.alpha,
            mode,
            learners: self.learners.clone().unwrap_or_else(|| dgp.default_learners()),
            seed,
            scale_correction: self.scale_correction,
        }
    }

    /// Data seed of replication `r` of design `d`. Does not depend on the
    /// number of replications.
    pub fn replication_seed(&self, d: usize, r: usize) -> u64 {
        split_seed(split_seed(self.seed, d as u64), r as u64)
    }

    /// Runs one replication: cell outcomes in `methods x targets` order,
    /// `None` where nothing could be estimated.
    pub fn replicate(&self, d: usize, r: usize) -> Result<Vec<Option<Outcome>>> {
        let seed = self.replication_seed(d, r);
        let dgp = DgpSpec { seed, ..self.dgps[d].clone() };
        let (sample, truth) = generate(&dgp)?;
        let mut out = Vec::with_capacity(self.methods.len() * self.targets.len());
        let modes = [InstrumentMode::LinearIv, InstrumentMode::MlIv];
        let mut residuals = Vec::new();
        for mode in modes {
            if self.methods.iter().any(|m| m.mode() == mode) {
                let cfg = self.fit_config(&dgp, mode, split_seed(seed, 1));
                residuals.push((mode, repeated_residuals(&sample, &cfg).ok()));
            }
        }
        let h = if self.methods.iter().any(Method::is_het) {
            Some(bandwidth(&self.bandwidth, &sample.v())?)
        } else {
            None
        };
        for method in &self.methods {
            let sets = residuals.iter().find(|(m, _)| *m == method.mode()).and_then(|(_, s)| s.as_ref());
            let hom = match (sets, method.is_het()) {
                (Some(sets), false) => hom_from_residuals(sets, self.alpha, self.scale_correction).ok(),
                _ => None,
            };
            for &target in &self.targets {
                let t = truth.eval(target);
                let cell = match (sets, method.is_het(), h) {
                    (Some(_), false, _) => hom.as_ref().map(|f| outcome(&f.inference, t)),
                    (Some(sets), true, Some(h)) => {
                        match het_from_residuals(sets, target, h, self.kernel, self.alpha, self.scale_correction) {
                            Ok(Ok(inf)) => Some(outcome(&inf, t)),
                            _ => None,
                        }
                    }
                    _ => None,
                };
                out.push(cell);
            }
        }
        Ok(out)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (s / n as f64, n)
}

fn summarize(dgp: &DgpSpec, method: Method, target: f64, cells: &[Option<Outcome>]) -> ReportRow {
    let truth = dgp.truth().eval(target);
    let ok: Vec<&Outcome> = cells.iter().flatten().collect();
    let m = ok.len();
    let some = |x: f64| if m > 0 { Some(x) } else { None };
    let (mean_est, _) = mean(ok.iter().map(|o| o.estimate));
    let sq: Vec<f64> = ok.iter().map(|o| (o.estimate - truth).powi(2)).collect();
    let (mse, _) = mean(sq.iter().copied());
    let mse_se = if m > 1 {
        let var = sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (m - 1) as f64;
        (var / m as f64).sqrt()
    } else {
        0.0
    };
    let rate = |f: &dyn Fn(&Outcome) -> bool| {
        let p = ok.iter().filter(|o| f(o)).count() as f64 / m as f64;
        (p, (p * (1.0 - p) / m as f64).sqrt())
    };
    let (cov_s, cov_s_se) = rate(&|o| o.covered_standard);
    let (cov_r, cov_r_se) = rate(&|o| o.covered_robust);
    let (unbounded, _) = rate(&|o| o.robust_length.is_infinite());
    let (ci_len, _) = mean(ok.iter().map(|o| o.ci_length));
    let robust_lengths: Vec<f64> = ok.iter().map(|o| o.robust_length).collect();
    ReportRow {
        dgp: dgp.label(),
        method,
        target,
        truth,
        n_replications: cells.len(),
        not_estimable: cells.len() - m,
        mean_estimate: some(mean_est),
        mse: some(mse),
        mse_se: some(mse_se),
        coverage_standard: some(cov_s),
        coverage_standard_se: some(cov_s_se),
        coverage_robust: some(cov_r),
        coverage_robust_se: some(cov_r_se),
        mean_ci_length: some(ci_len),
        median_robust_length: if m > 0 { Some(crate::stats::median(&robust_lengths)) } else { None },
        robust_unbounded: some(unbounded),
    }
}

/// Runs every replication of every design in parallel and reduces in
/// replication order, so the report does not depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (d, dgp) in cfg.dgps.iter().enumerate() {
        let reps: Vec<Vec<Option<Outcome>>> =
            (0..cfg.replications).into_par_iter().map(|r| cfg.replicate(d, r)).collect::<Result<_>>()?;
        let mut idx = 0;
        for &method in &cfg.methods {
            for &target in &cfg.targets {
                let cells: Vec<Option<Outcome>> = reps.iter().map(|rep| rep[idx]).collect();
                rows.push(summarize(dgp, method, target, &cells));
                idx += 1;
            }
        }
    }
    Ok(ExperimentReport { config: cfg.clone(), rows })
}
