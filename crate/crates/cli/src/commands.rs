use std::collections::BTreeMap;

use grassmann_stream::harness::{
    monte_carlo_ratio, run_trial_indexed, sweep as run_sweep, verify_step_invariants, HistogramOptions,
    ImprovementHistogram, TrialSummary, VerificationReport,
};
use grassmann_stream::{theory, ComplexityBound, Error as CoreError, RateBound, TrialConfig};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{self, join};
use crate::spec::{self, BoundsSpec, SweepSpec, VerifySpec};
use crate::{CommonArgs, Format};

fn apply_seed(config: &mut TrialConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        config.seed = s;
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: &'a TrialConfig,
    summary: &'a TrialSummary,
}

pub fn run(args: &CommonArgs) -> CliResult<()> {
    let mut config: TrialConfig = spec::load(&args.config)?;
    apply_seed(&mut config, args.seed);
    config.validate()?;
    let out = args.out_dir()?;
    output::ensure_dir(out)?;

    let series = run_trial_indexed(&config, 0, true)?;
    match args.format {
        Format::Csv => output::series_csv(&join(out, "series.csv"), &series.records)?,
        Format::Json => output::json_file(&join(out, "series.json"), &series.records)?,
    }
    output::json_file(
        &join(out, "summary.json"),
        &RunSummary {
            config: &config,
            summary: &series.summary,
        },
    )?;
    let s = &series.summary;
    output::emit(&format!(
        "{:?} after {} iterations; final zeta {:.6e}; {} updates\n",
        s.stop_reason, s.iterations_run, s.final_zeta, s.updates
    ))
}

pub fn sweep(args: &CommonArgs) -> CliResult<()> {
    let mut spec: SweepSpec = spec::load(&args.config)?;
    apply_seed(&mut spec.base, args.seed);
    let out = args.out_dir()?;
    let result = run_sweep(&spec.base, &spec.grid, spec.trials, spec.bound)?;
    output::ensure_dir(out)?;
    match args.format {
        Format::Csv => output::grid_csv(&join(out, "grid.csv"), &result)?,
        Format::Json => output::json_file(&join(out, "grid.json"), &result.cells)?,
    }
    output::json_file(&join(out, "summary.json"), &result)?;
    let mut text = String::new();
    for c in &result.cells {
        text.push_str(&format!(
            "n={} d={} m={}: mean ratio {:.4}, failed {:.0}%\n",
            c.n,
            c.d,
            c.m,
            c.mean_ratio,
            100.0 * c.fail_frac
        ));
    }
    output::emit(&text)
}

#[derive(Serialize)]
struct VerifyOutput {
    passed: bool,
    identities: VerificationReport,
    histogram: Option<ImprovementHistogram>,
}

pub fn verify(args: &CommonArgs) -> CliResult<()> {
    let mut spec: VerifySpec = spec::load(&args.config)?;
    apply_seed(&mut spec.trial, args.seed);
    if spec.steps == 0 {
        return Err(CliError::Usage("steps must be at least 1".into()));
    }
    let identities = verify_step_invariants(&spec.trial, spec.steps)?;
    let histogram = match spec.histogram {
        Some(h) => {
            let opts = HistogramOptions {
                bins: h.bins,
                ..HistogramOptions::for_config(&spec.trial, h.cs_delta)
            };
            Some(monte_carlo_ratio(&spec.trial, h.steps, h.trials, &opts)?)
        }
        None => None,
    };
    let report = VerifyOutput {
        passed: identities.passed,
        identities,
        histogram,
    };
    if let Some(out) = &args.out {
        output::ensure_dir(out)?;
        output::json_file(&join(out, "verify.json"), &report)?;
    }
    let mut text = String::new();
    for c in &report.identities.checks {
        text.push_str(&format!(
            "{:<36} {:<4} max violation {:.3e} (tolerance {:.0e}, {} samples)\n",
            c.name,
            if c.passed { "ok" } else { "FAIL" },
            c.max_violation,
            c.tolerance,
            c.samples
        ));
    }
    if let Some(h) = &report.histogram {
        text.push_str(&format!(
            "improvement histogram: {} of {} judged bins at or above theory\n",
            h.bins.iter().filter(|b| b.passes == Some(true)).count(),
            h.judged_bins()
        ));
    }
    output::emit(&text)?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .identities
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        Err(CliError::Verification(failed.join(", ")))
    }
}

#[derive(Serialize)]
struct Rates {
    full: f64,
    missing: RateBound,
    compressive: RateBound,
}

#[derive(Serialize)]
struct BoundsOutput<'a> {
    params: &'a BoundsSpec,
    iteration_bound_full: ComplexityBound,
    heuristic_iterations: f64,
    expected_zeta0: f64,
    exact_expected_zeta0: f64,
    key_quantity_bound: f64,
    sample_complexity_cs: ComplexityBound,
    sample_complexity_missing: ComplexityBound,
    discrepancy_decay_factor: f64,
    rates: Rates,
}

fn evaluate_bounds(p: &BoundsSpec) -> Result<BoundsOutput<'_>, CoreError> {
    let m = p.measurements();
    Ok(BoundsOutput {
        params: p,
        iteration_bound_full: theory::iteration_bound_full(p.n, p.d, p.rho, p.zeta_star, p.c)?,
        heuristic_iterations: theory::heuristic_iterations(p.n, m, p.d, p.zeta_star)?,
        expected_zeta0: theory::expected_zeta0(p.n, p.d, p.c),
        exact_expected_zeta0: theory::exact_expected_zeta0(p.n, p.d),
        key_quantity_bound: theory::key_quantity_bound(p.zeta, p.d),
        sample_complexity_cs: theory::sample_complexity_cs(p.d, p.delta, p.phi_d, p.n)?,
        sample_complexity_missing: theory::sample_complexity_missing(p.d, p.mu0, p.mu_vperp, p.n)?,
        discrepancy_decay_factor: theory::discrepancy_decay_factor(p.d, m, p.n, p.mu0),
        rates: Rates {
            full: theory::expected_rate_full(p.zeta, p.d),
            missing: theory::expected_rate_missing(p.zeta, p.d, m, p.n)?,
            compressive: theory::expected_rate_cs(p.zeta, p.d, m, p.n, p.delta, p.phi_d)?,
        },
    })
}

fn flatten(prefix: &str, b: &ComplexityBound, rows: &mut BTreeMap<String, f64>) {
    rows.insert(prefix.to_string(), b.value);
    for (k, v) in b.components.iter().chain(&b.alternates) {
        rows.insert(format!("{prefix}.{k}"), *v);
    }
}

fn table(b: &BoundsOutput<'_>) -> BTreeMap<String, f64> {
    let mut rows = BTreeMap::new();
    flatten("iteration_bound_full", &b.iteration_bound_full, &mut rows);
    flatten("sample_complexity_cs", &b.sample_complexity_cs, &mut rows);
    flatten("sample_complexity_missing", &b.sample_complexity_missing, &mut rows);
    rows.insert("heuristic_iterations".into(), b.heuristic_iterations);
    rows.insert("expected_zeta0".into(), b.expected_zeta0);
    rows.insert("exact_expected_zeta0".into(), b.exact_expected_zeta0);
    rows.insert("key_quantity_bound".into(), b.key_quantity_bound);
    rows.insert("discrepancy_decay_factor".into(), b.discrepancy_decay_factor);
    rows.insert("rate_full".into(), b.rates.full);
    rows.insert("rate_missing".into(), b.rates.missing.rate);
    rows.insert("rate_missing.probability".into(), b.rates.missing.probability);
    rows.insert("rate_compressive".into(), b.rates.compressive.rate);
    rows.insert("rate_compressive.probability".into(), b.rates.compressive.probability);
    rows
}

pub fn bounds(args: &CommonArgs) -> CliResult<()> {
    let spec: BoundsSpec = spec::load(&args.config)?;
    let result = evaluate_bounds(&spec)?;
    if let Some(out) = &args.out {
        output::ensure_dir(out)?;
        output::json_file(&join(out, "bounds.json"), &result)?;
    }
    let text = match args.format {
        Format::Json => output::to_json(&result)?,
        Format::Csv => {
            let mut text = String::from("quantity,value\n");
            for (k, v) in table(&result) {
                text.push_str(&format!("{k},{}\n", output::float(v)));
            }
            text
        }
    };
    output::emit(&text)
}
