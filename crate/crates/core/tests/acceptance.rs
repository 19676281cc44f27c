//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.
//!
//! The Monte-Carlo criteria use 200 replications and spline nuisance learners.

use std::time::Instant;

use ivdml_core::confidence::Region;
use ivdml_core::crossfit::ResidualSet;
use ivdml_core::pipeline::{hom_from_residuals, repeated_residuals, FitConfig};
use ivdml_core::simulate::{BetaKind, Endogeneity, FKind};
use ivdml_core::{
    bandwidth, check_kernel, compute_residuals, estimate_het, estimate_hom, generate, het_coefficients, make_folds,
    q_stat, robust_set_het, robust_set_hom, run_experiment, BandwidthRule, DgpSpec, ExperimentConfig, ExperimentReport,
    InstrumentMode, Kernel, LearnerSpec, Method, NuisanceSpecs,
};
use rayon::prelude::*;

const REPLICATIONS: usize = 200;
const Z_975: f64 = 1.959_963_984_540_054;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn spline() -> NuisanceSpecs {
    NuisanceSpecs::uniform(LearnerSpec::spline())
}

fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn hand_examples() -> Outcome {
    let res = ResidualSet::from_parts(vec![1.0, 2.0], vec![1.0, 1.0], vec![1.0, 2.0], vec![0.0; 2]).unwrap();
    let hom = estimate_hom(&res).unwrap();
    let e_beta = rel_err(hom.beta_hat, 5.0 / 3.0);
    let e_sigma = rel_err(hom.sigma2_hat, 16.0 / 81.0);
    let three = ResidualSet::from_parts(vec![1.0, 2.0, 3.0], vec![1.0; 3], vec![1.0; 3], vec![0.0, 1.0, 2.0]).unwrap();
    let het = estimate_het(&three, 0.0, 1.0, Kernel::Epanechnikov).unwrap();
    let e_het = (het.beta_hat_v - 1.6).abs();
    outcome(
        e_beta <= 1e-12 && e_sigma <= 1e-12 && e_het <= 1e-9,
        format!("rel err beta {e_beta:.1e}, sigma2 {e_sigma:.1e}; |beta(0) - 1.6| = {e_het:.1e}"),
    )
}

/// Membership by direct summation over residuals, independent of the
/// closed-form coefficients.
fn scan_member(res: &ResidualSet, gamma: f64, v: Option<(f64, f64)>) -> bool {
    let (ry, rd, rf, vs) = (res.r_y(), res.r_d(), res.r_f(), res.v());
    let n = res.len() as f64;
    let (h, weight): (f64, Box<dyn Fn(usize) -> f64>) = match v {
        None => (1.0, Box::new(|_| 1.0)),
        Some((v0, h)) => (
            h,
            Box::new(move |i| {
                let u = (vs[i] - v0) / h;
                if u * u <= 5.0 {
                    3.0 / (4.0 * 5f64.sqrt()) * (1.0 - u * u / 5.0)
                } else {
                    0.0
                }
            }),
        ),
    };
    let (mut q, mut m2) = (0.0, 0.0);
    for i in 0..res.len() {
        let k = weight(i);
        let t = (ry[i] - gamma * rd[i]) * rf[i];
        q += t * k;
        m2 += t * t * k * k;
    }
    let nh = n * h;
    q /= nh;
    let se2 = (m2 / nh - h * q * q).max(0.0);
    q.abs() <= Z_975 * se2.sqrt() / nh.sqrt()
}

fn oracle_equivalence() -> Outcome {
    const STEP: f64 = 1e-3;
    let results: Vec<(bool, bool, String)> = (0..50u64)
        .into_par_iter()
        .map(|i| {
            let het = i % 2 == 1;
            let kind = if het { BetaKind::Het } else { BetaKind::Hom };
            let f = if i % 4 < 2 { FKind::ZLin } else { FKind::ZNonlin };
            let (sample, _) = generate(&DgpSpec::new(kind, f, 200, 1000 + i)).unwrap();
            let part = make_folds(200, 5, i).unwrap();
            let res = compute_residuals(&sample, &part, &spline(), InstrumentMode::MlIv).unwrap();
            let (set, beta, local) = if het {
                let v0 = [-0.5, 0.0, 0.5][(i as usize / 2) % 3];
                let h = bandwidth(&BandwidthRule::undersmoothed(), res.v()).unwrap();
                let q = het_coefficients(&res, v0, h, Kernel::Epanechnikov).unwrap();
                let est = estimate_het(&res, v0, h, Kernel::Epanechnikov).unwrap();
                (robust_set_het(&q, 0.05).unwrap(), est.beta_hat_v, Some((v0, h)))
            } else {
                (robust_set_hom(&res, 0.05).unwrap(), estimate_hom(&res).unwrap().beta_hat, None)
            };
            let bounds = set.bounds();
            let lo = bounds.iter().copied().fold(beta, f64::min) - 5.0;
            let hi = bounds.iter().copied().fold(beta, f64::max) + 5.0;
            let steps = ((hi - lo) / STEP).ceil() as usize;
            let mut ok = true;
            let mut worst = String::new();
            for j in 0..=steps {
                let g = lo + j as f64 * STEP;
                if scan_member(&res, g, local) != set.contains(g) && !bounds.iter().any(|b| (b - g).abs() <= STEP) {
                    ok = false;
                    worst = format!("dataset {i}: disagreement at {g:.4} ({})", set.shape());
                    break;
                }
            }
            (ok, set.contains(beta), worst)
        })
        .collect();
    let agree = results.iter().filter(|r| r.0).count();
    let member = results.iter().filter(|r| r.1).count();
    let first_bad = results.iter().find(|r| !r.0).map(|r| r.2.clone()).unwrap_or_default();
    outcome(agree == 50 && member == 50, format!("grid agreement {agree}/50, estimate membership {member}/50 {first_bad}"))
}

fn strong_config(f: FKind, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        dgps: vec![DgpSpec::new(BetaKind::Hom, f, 1000, 0)],
        methods: Method::ALL.to_vec(),
        targets: vec![0.0],
        replications: REPLICATIONS,
        learners: Some(spline()),
        seed,
        ..ExperimentConfig::default()
    }
}

fn coverage(lin: &ExperimentReport, nonlin: &ExperimentReport) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, rep) in [("z_lin", lin), ("z_nonlin", nonlin)] {
        let row = rep.row(Method::HomMlIv, 0.0).unwrap();
        let (s, r) = (row.coverage_standard.unwrap(), row.coverage_robust.unwrap());
        pass &= (0.91..=0.98).contains(&s) && (0.91..=0.98).contains(&r) && row.not_estimable == 0;
        parts.push(format!("{label}: standard {s:.3}, robust {r:.3}"));
    }
    outcome(pass, parts.join("; "))
}

fn efficiency(lin: &ExperimentReport, nonlin: &ExperimentReport) -> Outcome {
    let ratio = |rep: &ExperimentReport, ml: Method, linear: Method| {
        rep.row(ml, 0.0).unwrap().mse.unwrap() / rep.row(linear, 0.0).unwrap().mse.unwrap()
    };
    let nl_hom = ratio(nonlin, Method::HomMlIv, Method::HomLinearIv);
    let nl_het = ratio(nonlin, Method::HetMlIv, Method::HetLinearIv);
    let l_hom = ratio(lin, Method::HomMlIv, Method::HomLinearIv);
    let l_het = ratio(lin, Method::HetMlIv, Method::HetLinearIv);
    let near = |r: f64| (0.8..=1.25).contains(&r);
    outcome(
        nl_hom < 0.8 && nl_het < 0.8 && near(l_hom) && near(l_het),
        format!(
            "MSE ratio ml/linear: z_nonlin hom {nl_hom:.3}, beta(0) {nl_het:.3}; z_lin hom {l_hom:.3}, beta(0) {l_het:.3}"
        ),
    )
}

fn weak_iv_row(f: FKind) -> (f64, f64, usize) {
    let dgp = DgpSpec { strength: 0.1, endogeneity: Endogeneity::Strong, ..DgpSpec::new(BetaKind::Hom, f, 500, 0) };
    let cfg = ExperimentConfig {
        dgps: vec![dgp],
        methods: vec![Method::HomLinearIv],
        targets: vec![0.0],
        replications: REPLICATIONS,
        learners: Some(spline()),
        seed: 0,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    let row = report.row(Method::HomLinearIv, 0.0).unwrap();
    (row.coverage_standard.unwrap(), row.coverage_robust.unwrap(), row.not_estimable)
}

/// Judged on the nonlinear first stage, where a linear instrument is weakest.
/// The linear first stage at the same strength sits near 0.91 standard
/// coverage and is reported for context only.
fn weak_iv() -> Outcome {
    let (s, r, failures) = weak_iv_row(FKind::ZNonlin);
    let (ls, lr, _) = weak_iv_row(FKind::ZLin);
    outcome(
        s < 0.90 && r >= 0.90,
        format!(
            "z_nonlin hom_linear_iv standard {s:.3} (target < 0.90), robust {r:.3} (target >= 0.90), failures {failures}; \
             z_lin for reference: standard {ls:.3}, robust {lr:.3}"
        ),
    )
}

fn adaptivity() -> Outcome {
    let hits: Vec<bool> = (0..REPLICATIONS as u64)
        .into_par_iter()
        .map(|r| {
            let (sample, _) = generate(&DgpSpec::new(BetaKind::Hom, FKind::ZLin, 5000, 7_000 + r)).unwrap();
            let cfg = FitConfig { repetitions: 1, learners: spline(), seed: r, ..FitConfig::default() };
            let sets = repeated_residuals(&sample, &cfg).unwrap();
            let fit = hom_from_residuals(&sets, 0.05, false).unwrap();
            let ci = fit.inference.standard.bounds();
            let width = ci[1] - ci[0];
            match fit.inference.robust.region {
                Region::Interval { lo, hi } => (lo - ci[0]).abs() < 0.2 * width && (hi - ci[1]).abs() < 0.2 * width,
                _ => false,
            }
        })
        .collect();
    let frac = hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64;
    outcome(frac >= 0.90, format!("robust interval within 20% of CI width at both ends in {frac:.3} of replications"))
}

fn het_recovery() -> Outcome {
    let cfg = ExperimentConfig {
        dgps: vec![DgpSpec::new(BetaKind::Het, FKind::ZLin, 2000, 0)],
        methods: vec![Method::HetMlIv],
        targets: vec![0.0, 1.5],
        replications: REPLICATIONS,
        learners: Some(spline()),
        bandwidth: BandwidthRule::undersmoothed(),
        seed: 11,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    let at0 = report.row(Method::HetMlIv, 0.0).unwrap();
    let at15 = report.row(Method::HetMlIv, 1.5).unwrap();
    let (m0, m15) = (at0.mean_estimate.unwrap(), at15.mean_estimate.unwrap());
    outcome(
        (m0 - 2.0).abs() <= 0.1 && (m15 - at15.truth).abs() <= 0.15,
        format!("mean beta(0) {m0:.4} (truth 2), mean beta(1.5) {m15:.4} (truth {:.5})", at15.truth),
    )
}

fn invariants() -> Outcome {
    let mut failures = Vec::new();

    let k = check_kernel(&Kernel::Epanechnikov);
    if (k.integral - 1.0).abs() > 1e-8 || (k.second_moment - 1.0).abs() > 1e-8 || !k.passes {
        failures.push(format!("kernel integral {} second moment {}", k.integral, k.second_moment));
    }

    let (sample, _) = generate(&DgpSpec::new(BetaKind::Het, FKind::ZNonlin, 600, 21)).unwrap();
    let part = make_folds(600, 5, 3).unwrap();
    let res = compute_residuals(&sample, &part, &spline(), InstrumentMode::MlIv).unwrap();
    let est = estimate_hom(&res).unwrap();
    let q = q_stat(&res, est.beta_hat).unwrap().q;
    if q.abs() > 1e-12 * (1.0 + est.qcoef.a.abs()) {
        failures.push(format!("Q(beta_hat) = {q:e}"));
    }

    let h = bandwidth(&BandwidthRule::undersmoothed(), res.v()).unwrap();
    let base_set = robust_set_hom(&res, 0.05).unwrap();
    let base_het = estimate_het(&res, 0.3, h, Kernel::Epanechnikov).unwrap();
    let base_het_set = robust_set_het(&base_het.qcoef, 0.05).unwrap();
    for c in [-2.5, 0.1, 40.0] {
        let scaled = res.with_scaled_instrument(c);
        let e = estimate_hom(&scaled).unwrap();
        let s = robust_set_hom(&scaled, 0.05).unwrap();
        let eh = estimate_het(&scaled, 0.3, h, Kernel::Epanechnikov).unwrap();
        let sh = robust_set_het(&eh.qcoef, 0.05).unwrap();
        let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| rel_err(*x, *y) < 1e-9);
        if rel_err(e.beta_hat, est.beta_hat) > 1e-12
            || rel_err(e.sigma2_hat, est.sigma2_hat) > 1e-10
            || s.shape() != base_set.shape()
            || !same(&s.bounds(), &base_set.bounds())
            || rel_err(eh.beta_hat_v, base_het.beta_hat_v) > 1e-12
            || rel_err(eh.sigma2_hat_v, base_het.sigma2_hat_v) > 1e-10
            || sh.shape() != base_het_set.shape()
            || !same(&sh.bounds(), &base_het_set.bounds())
        {
            failures.push(format!("instrument rescaling by {c} changed the fit"));
        }
    }

    // Leakage: perturbing one observation moves no other residual in its fold.
    let target = part.fold(2)[0];
    let mut y = sample.y().to_vec();
    y[target] += 50.0;
    let mut d = sample.d().to_vec();
    d[target] -= 20.0;
    let perturbed =
        ivdml_core::Sample::new(y, d, sample.z().clone(), sample.x().clone(), sample.v_col()).unwrap();
    let res2 = compute_residuals(&perturbed, &part, &spline(), InstrumentMode::MlIv).unwrap();
    for &i in part.fold(2) {
        if i != target && (res2.r_y()[i] != res.r_y()[i] || res2.r_d()[i] != res.r_d()[i] || res2.r_f()[i] != res.r_f()[i]) {
            failures.push(format!("observation {i} saw a held-out change"));
            break;
        }
    }

    let cfg = ExperimentConfig {
        dgps: vec![DgpSpec::new(BetaKind::Het, FKind::ZNonlin, 300, 0)],
        replications: 8,
        repetitions: 3,
        learners: Some(spline()),
        seed: 17,
        ..ExperimentConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        serde_json::to_string(&pool.install(|| run_experiment(&cfg)).unwrap()).unwrap()
    };
    let one = run(1);
    if one != run(3) || one != run(8) {
        failures.push("report depends on the thread count".into());
    }

    let detail = if failures.is_empty() {
        format!(
            "kernel integral {:.12}, second moment {:.12}; Q(beta_hat) {q:.1e}; rescaling, leakage, thread determinism ok",
            k.integral, k.second_moment
        )
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for this target.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut all_pass = true;
    let mut line = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        all_pass &= o.pass;
        println!(
            "criterion {id} [{}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    };

    line(1, "hand examples", &mut hand_examples);
    line(2, "robust set vs grid oracle", &mut oracle_equivalence);

    let start = Instant::now();
    let lin = run_experiment(&strong_config(FKind::ZLin, 1)).unwrap();
    let nonlin = run_experiment(&strong_config(FKind::ZNonlin, 2)).unwrap();
    println!("strong-instrument experiments: {:.1}s", start.elapsed().as_secs_f64());
    line(3, "strong-instrument coverage", &mut || coverage(&lin, &nonlin));
    line(4, "efficiency of the learned instrument", &mut || efficiency(&lin, &nonlin));
    line(5, "weak-instrument robustness", &mut weak_iv);
    line(6, "adaptivity of the robust set", &mut adaptivity);
    line(7, "heterogeneous effect recovery", &mut het_recovery);
    line(8, "invariants", &mut invariants);

    if !all_pass {
        eprintln!("acceptance: at least one criterion failed");
        std::process::exit(1);
    }
}
