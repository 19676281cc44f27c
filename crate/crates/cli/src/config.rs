//! Resolved run configurations. Each is embedded in the command's output, and
//! feeding that output back through `--config` reproduces it.

use std::path::{Path, PathBuf};

use ivdml_core::pipeline::HetConfig;
use ivdml_core::simulate::ExperimentConfig;
use ivdml_core::{
    BandwidthRule, ColumnRef, ColumnSchema, DgpSpec, Error, FitConfig, InstrumentMode, Kernel, LearnerSpec, Method,
    NuisanceSpecs, Result,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::{CheckKernelArgs, EstimationArgs, FitHetArgs, LearnerArgs, SimulateArgs, SmoothingArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRun {
    pub data: PathBuf,
    pub columns: ColumnSchema,
    pub estimation: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitHetRun {
    pub data: PathBuf,
    pub columns: ColumnSchema,
    pub estimation: FitConfig,
    pub het: HetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelRun {
    pub kernel: Kernel,
}

/// Reads a config file. A previous output is recognised by its `config` key.
fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(inner) = value.get_mut("config") {
        value = inner.take();
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_opt<T: DeserializeOwned>(path: Option<&PathBuf>) -> Result<Option<T>> {
    path.map(|p| load(p)).transpose()
}

fn apply_learners(base: NuisanceSpecs, args: &LearnerArgs) -> Result<NuisanceSpecs> {
    let mut specs = match &args.learner {
        Some(name) => NuisanceSpecs::uniform(LearnerSpec::from_name(name)?),
        None => base,
    };
    if let Some(n) = &args.learner_l {
        specs.l = LearnerSpec::from_name(n)?;
    }
    if let Some(n) = &args.learner_phi1 {
        specs.phi1 = LearnerSpec::from_name(n)?;
    }
    if let Some(n) = &args.learner_f {
        specs.f = LearnerSpec::from_name(n)?;
    }
    if let Some(n) = &args.learner_phi2 {
        specs.phi2 = Some(LearnerSpec::from_name(n)?);
    }
    if let Some(n) = &args.learner_mu {
        specs.mu = Some(LearnerSpec::from_name(n)?);
    }
    Ok(specs)
}

fn any_learner_flag(args: &LearnerArgs) -> bool {
    [&args.learner, &args.learner_l, &args.learner_phi1, &args.learner_f, &args.learner_phi2, &args.learner_mu]
        .iter()
        .any(|a| a.is_some())
}

fn apply_smoothing(mut kernel: Kernel, mut rule: BandwidthRule, args: &SmoothingArgs) -> Result<(Kernel, BandwidthRule)> {
    if let Some(k) = &args.kernel {
        kernel = k.parse()?;
    }
    if let Some(b) = &args.bandwidth {
        let named = BandwidthRule::from_name(b)?;
        // Switching rules resets the exponent unless it is given explicitly.
        if named.kind != rule.kind {
            rule = named;
        }
    }
    if let Some(e) = args.exponent {
        rule.exponent = e;
    }
    Ok((kernel, rule))
}

fn resolve_estimation(
    args: &EstimationArgs,
    base: Option<(PathBuf, ColumnSchema, FitConfig)>,
) -> Result<(PathBuf, ColumnSchema, FitConfig)> {
    let (base_data, base_cols, mut cfg) = match base {
        Some((d, c, f)) => (Some(d), Some(c), f),
        None => (None, None, FitConfig::default()),
    };
    let a = &args.data;
    let data = a.data.clone().or(base_data).ok_or_else(|| Error::Config("missing --data".into()))?;
    let need = |flag: &str| Error::Config(format!("missing --{flag}"));
    let refs = |v: &Vec<String>| v.iter().map(|s| ColumnRef::parse(s)).collect::<Vec<_>>();
    let columns = match base_cols {
        Some(mut c) => {
            if let Some(y) = &a.y {
                c.y = ColumnRef::parse(y);
            }
            if let Some(d) = &a.d {
                c.d = ColumnRef::parse(d);
            }
            if let Some(z) = &a.z {
                c.z = refs(z);
            }
            if let Some(x) = &a.x {
                c.x = refs(x);
                if a.v.is_none() {
                    c.v = c.x.first().cloned().ok_or_else(|| need("v"))?;
                }
            }
            if let Some(v) = &a.v {
                c.v = ColumnRef::parse(v);
            }
            c
        }
        None => {
            let x = refs(a.x.as_ref().ok_or_else(|| need("x"))?);
            let v = match &a.v {
                Some(v) => ColumnRef::parse(v),
                None => x.first().cloned().ok_or_else(|| need("v"))?,
            };
            ColumnSchema {
                y: ColumnRef::parse(a.y.as_deref().ok_or_else(|| need("y"))?),
                d: ColumnRef::parse(a.d.as_deref().ok_or_else(|| need("d"))?),
                z: refs(a.z.as_ref().ok_or_else(|| need("z"))?),
                x,
                v,
            }
        }
    };
    if let Some(k) = args.k {
        cfg.folds = k;
    }
    if let Some(s) = args.reps {
        cfg.repetitions = s;
    }
    if let Some(alpha) = args.alpha {
        cfg.alpha = alpha;
    }
    if let Some(m) = &args.mode {
        cfg.mode = InstrumentMode::from_name(m)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.scale_correction |= args.scale_correction;
    cfg.learners = apply_learners(cfg.learners, &args.learners)?;
    if cfg.mode == InstrumentMode::LinearIv && columns.z.len() != 1 {
        return Err(Error::LinearIvNeedsUnivariateZ(columns.z.len()));
    }
    if columns.z.is_empty() {
        return Err(Error::Config("at least one instrument column is required".into()));
    }
    cfg.validate()?;
    Ok((data, columns, cfg))
}

pub fn resolve_fit(args: &EstimationArgs) -> Result<FitRun> {
    let base: Option<FitRun> = load_opt(args.config.as_ref())?;
    let (data, columns, estimation) = resolve_estimation(args, base.map(|b| (b.data, b.columns, b.estimation)))?;
    Ok(FitRun { data, columns, estimation })
}

pub fn resolve_fit_het(args: &FitHetArgs) -> Result<FitHetRun> {
    let base: Option<FitHetRun> = load_opt(args.est.config.as_ref())?;
    let (mut het, base) = match base {
        Some(b) => (b.het, Some((b.data, b.columns, b.estimation))),
        None => (HetConfig::default(), None),
    };
    let (data, columns, estimation) = resolve_estimation(&args.est, base)?;
    let (kernel, bandwidth) = apply_smoothing(het.kernel, het.bandwidth, &args.smoothing)?;
    het.kernel = kernel;
    het.bandwidth = bandwidth;
    if let Some(g) = &args.grid {
        het.grid = Some(g.clone());
    }
    Ok(FitHetRun { data, columns, estimation, het })
}

pub fn resolve_simulate(args: &SimulateArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = load_opt(args.config.as_ref())?.unwrap_or_default();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if !args.dgp.is_empty() {
        let n = args.n.or(cfg.dgps.first().map(|d| d.n)).unwrap_or(1000);
        cfg.dgps = args.dgp.iter().map(|t| DgpSpec::from_tokens(t, n, cfg.seed)).collect::<Result<_>>()?;
    } else if let Some(n) = args.n {
        cfg.dgps.iter_mut().for_each(|d| d.n = n);
    }
    cfg.dgps.iter_mut().for_each(|d| d.seed = cfg.seed);
    if let Some(r) = args.reps {
        cfg.replications = r;
    }
    if let Some(s) = args.repetitions {
        cfg.repetitions = s;
    }
    if let Some(t) = &args.targets {
        cfg.targets = t.clone();
    }
    if let Some(m) = &args.methods {
        cfg.methods = m.iter().map(|s| Method::from_name(s)).collect::<Result<_>>()?;
    }
    if let Some(k) = args.k {
        cfg.folds = k;
    }
    if let Some(alpha) = args.alpha {
        cfg.alpha = alpha;
    }
    if any_learner_flag(&args.learners) {
        let base = cfg.learners.take().unwrap_or_default();
        cfg.learners = Some(apply_learners(base, &args.learners)?);
    }
    let (kernel, bandwidth) = apply_smoothing(cfg.kernel, cfg.bandwidth, &args.smoothing)?;
    cfg.kernel = kernel;
    cfg.bandwidth = bandwidth;
    cfg.scale_correction |= args.scale_correction;
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_kernel(args: &CheckKernelArgs) -> Result<KernelRun> {
    Ok(KernelRun { kernel: args.kernel.parse()? })
}
