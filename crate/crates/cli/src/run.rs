use std::io::Write;
use std::path::{Path, PathBuf};

use ivdml_core::pipeline::{het_curve_from_residuals, hom_from_residuals, repeated_residuals};
use ivdml_core::{check_kernel, load_csv, run_experiment, Error, HetCurve, HomFit, KernelReport, ResidualSet, Result};
use serde::Serialize;

use crate::args::{CheckKernelArgs, FitArgs, FitHetArgs, SimulateArgs};
use crate::config::{resolve_fit, resolve_fit_het, resolve_kernel, resolve_simulate, FitHetRun, FitRun, KernelRun};

#[derive(Serialize)]
struct FitOutput<'a> {
    #[serde(flatten)]
    fit: &'a HomFit,
    ci: Vec<f64>,
    config: &'a FitRun,
}

#[derive(Serialize)]
struct FitHetOutput<'a> {
    #[serde(flatten)]
    curve: &'a HetCurve,
    config: &'a FitHetRun,
}

#[derive(Serialize)]
struct KernelOutput<'a> {
    kernel: &'static str,
    #[serde(flatten)]
    report: &'a KernelReport,
    config: &'a KernelRun,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Pretty JSON with a trailing newline, to `path` or stdout.
fn emit(value: &impl Serialize, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| io_err(Path::new("<stdout>"), e))
        }
    }
}

/// `res.csv` for a single repetition, `res.s0.csv`, `res.s1.csv`, ... otherwise.
fn residual_paths(base: &Path, count: usize) -> Vec<PathBuf> {
    if count == 1 {
        return vec![base.to_path_buf()];
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = base.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    (0..count).map(|s| base.with_file_name(format!("{stem}.s{s}.{ext}"))).collect()
}

fn write_residuals(sets: &[ResidualSet], base: Option<&PathBuf>) -> Result<()> {
    if let Some(base) = base {
        for (set, path) in sets.iter().zip(residual_paths(base, sets.len())) {
            set.write_csv(&path)?;
        }
    }
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let run = resolve_fit(&args.est)?;
    let sample = load_csv(&run.data, &run.columns)?;
    let sets = repeated_residuals(&sample, &run.estimation)?;
    write_residuals(&sets, args.est.residuals_out.as_ref())?;
    let fit = hom_from_residuals(&sets, run.estimation.alpha, run.estimation.scale_correction)?;
    let ci = fit.inference.standard.bounds();
    emit(&FitOutput { fit: &fit, ci, config: &run }, args.est.out.as_deref())
}

pub fn fit_het(args: &FitHetArgs) -> Result<()> {
    let run = resolve_fit_het(args)?;
    let sample = load_csv(&run.data, &run.columns)?;
    let sets = repeated_residuals(&sample, &run.estimation)?;
    write_residuals(&sets, args.est.residuals_out.as_ref())?;
    let curve = het_curve_from_residuals(&sets, &run.het, run.estimation.alpha, run.estimation.scale_correction)?;
    let csv = args.csv.clone().or_else(|| args.est.out.as_ref().map(|p| p.with_extension("csv")));
    if let Some(path) = csv {
        curve.write_csv(path)?;
    }
    emit(&FitHetOutput { curve: &curve, config: &run }, args.est.out.as_deref())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = resolve_simulate(args)?;
    let report = run_experiment(&cfg)?;
    if let Some(path) = &args.csv {
        report.write_csv(path)?;
    }
    emit(&report, args.out.as_deref())
}

pub fn check_kernel_cmd(args: &CheckKernelArgs) -> Result<()> {
    let run = resolve_kernel(args)?;
    let report = check_kernel(&run.kernel);
    emit(&KernelOutput { kernel: run.kernel.name(), report: &report, config: &run }, args.out.as_deref())
}
