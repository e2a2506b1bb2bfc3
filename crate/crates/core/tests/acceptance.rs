//! Acceptance runner: one PASS or FAIL line per criterion.
//!
//! Failures are reported, not hidden. The process exits non-zero on a
//! failure only when `PMLS_ACCEPTANCE_STRICT` is set, so the rest of the
//! workspace tests stay usable while a criterion is known to fail.
//! `PMLS_BANK_CSV` points criterion 9 at the bank salary file.


use std::time::{Duration, Instant};

use clap::Parser;
use pmls::cli::{run, Cli, RunConfig};
use pmls::evaluation::MetricReport;
use pmls::pipeline::Pipeline;
use pmls::simulation::{
    default_m, order_statistic_diagnostic, run_replications, ExperimentConfig, ExperimentId,
    ReplicationOptions,
};
use serde_json::Value;

const N: usize = 500;
const SEED: u64 = 20240101;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn simulate(id: ExperimentId, reps: usize, pipeline: Pipeline) -> Result<MetricReport, String> {
    let config = ExperimentConfig::builtin(id, N, reps, SEED).map_err(|e| e.to_string())?;
    let options = ReplicationOptions {
        pipeline,
        ..Default::default()
    };
    let run = run_replications(&config, &options).map_err(|e| e.to_string())?;
    Ok(run.report)
}

fn bias(report: &MetricReport, name: &str) -> f64 {
    report.per_parameter.get(name).map_or(f64::NAN, |s| s.bias)
}

fn criterion_1() -> Result<Outcome, String> {
    let r = simulate(ExperimentId::E1b, 200, Pipeline::BetaZero)?;
    let (pmls, ols) = (bias(&r, "mu_upper"), bias(&r, "ols.mean_residual"));
    Ok(verdict(
        pmls.abs() <= 0.15 && (ols + 4.5).abs() <= 0.15 && r.failures == 0,
        format!(
            "bias mu PMLS {pmls:.4}, OLS {ols:.4}, failures {}",
            r.failures
        ),
    ))
}

fn criterion_2() -> Result<Outcome, String> {
    let r = simulate(ExperimentId::E2, 200, Pipeline::PmlsFull)?;
    let (pmls, ols) = (bias(&r, "beta1"), bias(&r, "ols.beta1"));
    Ok(verdict(
        pmls.abs() < 0.06 && within(ols, 2.5, 3.0) && r.failures == 0,
        format!(
            "bias beta PMLS {pmls:.4}, OLS {ols:.4}, failures {}",
            r.failures
        ),
    ))
}

fn criterion_3() -> Result<Outcome, String> {
    let r = simulate(ExperimentId::E2, 200, Pipeline::OlsOnly)?;
    let (y_only, both) = (bias(&r, "ols_yonly.beta1"), bias(&r, "ols_both.beta1"));
    Ok(verdict(
        within(y_only, -1.2, -0.85) && both.abs() < 0.08,
        format!("bias beta yOnly {y_only:.4}, both {both:.4}"),
    ))
}

fn criterion_4() -> Result<Outcome, String> {
    let r = simulate(ExperimentId::E3, 100, Pipeline::PmlsFull)?;
    let (pmls, ols) = (bias(&r, "beta1"), bias(&r, "ols.beta1"));
    Ok(verdict(
        within(pmls, -0.1, 0.1) && within(ols, 0.75, 1.1) && r.failures == 0,
        format!(
            "bias beta1 PMLS {pmls:.4}, OLS {ols:.4}, failures {}",
            r.failures
        ),
    ))
}

fn criterion_5() -> Result<Outcome, String> {
    let r = simulate(ExperimentId::E4, 100, Pipeline::PmlsFull)?;
    let ape = |mode: &str| r.prediction.get(mode).map_or(f64::NAN, |p| p.ape_all);
    let (mid, ls) = (ape("mid"), ape("ls"));
    let frac = r.max_below_ls_fraction.unwrap_or(f64::NAN);
    Ok(verdict(
        within(mid, 7.5, 9.5) && within(ls, 11.0, 14.0) && frac >= 0.8,
        format!("apeAll mid {mid:.3}, ls {ls:.3}; max below ls in {frac:.2} of reps (need 0.80)"),
    ))
}

fn criterion_6() -> Result<Outcome, String> {
    let rep = oracle::run_oracles(oracle::INSTANCES);
    Ok(verdict(
        oracle::passes(&rep),
        format!(
            "{} instances, gaps first {:.1e}, second {:.1e}, improved {:.1e}, betaZero {:.1e}",
            oracle::INSTANCES,
            rep.first_step,
            rep.second_step,
            rep.improved,
            rep.beta_zero
        ),
    ))
}

fn criterion_7() -> Result<Outcome, String> {
    let mut notes = Vec::new();
    let mut covers = true;
    for n in [20, 50, 100] {
        let d = order_statistic_diagnostic(n, default_m(n), 100_000, SEED)
            .map_err(|e| e.to_string())?;
        let ok = d.bound >= d.monte_carlo - 3.0 * d.monte_carlo_se;
        covers &= ok;
        notes.push(format!(
            "n={n} bound {:.4} mc {:.4}",
            d.bound, d.monte_carlo
        ));
    }
    let mut bounds = Vec::new();
    for n in [50, 100, 200, 400] {
        let d = order_statistic_diagnostic(n, default_m(n), 1, SEED).map_err(|e| e.to_string())?;
        bounds.push(d.bound);
    }
    let decreasing = bounds.windows(2).all(|w| w[1] < w[0]);
    notes.push(format!(
        "bounds at ceil(n^0.8) {} ({})",
        bounds
            .iter()
            .map(|b| format!("{b:.3e}"))
            .collect::<Vec<_>>()
            .join(", "),
        if decreasing {
            "decreasing"
        } else {
            "not decreasing"
        }
    ));
    Ok(verdict(covers && decreasing, notes.join("; ")))
}

fn criterion_8() -> Result<Outcome, String> {
    let mut failed = Vec::new();
    for (name, check) in properties::ALL {
        if let Err(e) = check() {
            failed.push(format!("{name}: {e}"));
        }
    }
    Ok(if failed.is_empty() {
        Outcome::Pass(format!(
            "{} properties x {} cases",
            properties::ALL.len(),
            properties::CASES
        ))
    } else {
        Outcome::Fail(failed.join("; "))
    })
}

fn criterion_9() -> Result<Outcome, String> {
    let Some(path) = std::env::var_os("PMLS_BANK_CSV") else {
        return Ok(Outcome::Skip("PMLS_BANK_CSV not set".into()));
    };
    let args = ["pmls", "fit", "--schema", "bankSalary", "--input"];
    let cli = Cli::try_parse_from(args.iter().map(Into::into).chain([path]))
        .map_err(|e| e.to_string())?;
    let (config, table) = RunConfig::from_cli(&cli).map_err(|e| e.to_string())?;
    let records = run(&config, table).map_err(|e| e.to_string())?;
    let find = |kind: &str| records.iter().find(|r| r["record"] == kind).cloned();
    let mu = find("fit").map_or(f64::NAN, |r| num(&r["fit"]["muUpper"]));
    let ape_pmls = find("testEvaluation").map_or(f64::NAN, |r| num(&r["modes"]["max"]["apeAll"]));
    let ape_ols = find("olsIntercept").map_or(f64::NAN, |r| num(&r["test"]["apeAll"]));
    Ok(verdict(
        within(mu, 65.0, 73.0) && (ape_pmls - ape_ols).abs() < 2.0,
        format!("mu {mu:.3}, APE PMLS {ape_pmls:.3}, OLS {ape_ols:.3}"),
    ))
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

type Criterion = fn() -> Result<Outcome, String>;

fn main() {
    let criteria: [(Criterion, Duration); 9] = [
        (criterion_1, Duration::from_secs(5 * 60)),
        (criterion_2, Duration::from_secs(15 * 60)),
        (criterion_3, Duration::from_secs(2 * 60)),
        (criterion_4, Duration::from_secs(20 * 60)),
        (criterion_5, Duration::from_secs(20 * 60)),
        (criterion_6, Duration::from_secs(60)),
        (criterion_7, Duration::from_secs(60)),
        (criterion_8, Duration::from_secs(10 * 60)),
        (criterion_9, Duration::from_secs(10 * 60)),
    ];
    let mut failures = 0;
    for (k, (check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::Fail(format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        let slow = start.elapsed() > *budget;
        let line = match outcome {
            Outcome::Pass(d) if !slow => format!("PASS {d}"),
            Outcome::Pass(d) => format!("FAIL {d}; over the {}s budget", budget.as_secs()),
            Outcome::Fail(d) => format!("FAIL {d}"),
            Outcome::Skip(d) => format!("SKIP {d}"),
        };
        if line.starts_with("FAIL") {
            failures += 1;
        }
        println!("criterion {}: {line} [{secs:.1}s]", k + 1);
    }
    println!("{failures} criteria failed");
    if failures > 0 && std::env::var_os("PMLS_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
