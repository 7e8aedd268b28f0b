use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use isac_bf::experiment::{aggregate, run_sweep, trial_channel, write_csv};
use isac_bf::export::SolutionRecord;
use isac_bf::reduction::check_degenerate;
use isac_bf::scenario::linear_to_dbm;
use isac_bf::verification::{kkt_residuals, run_suite, KktResiduals, Level};
use isac_bf::{compute_p_low, run_pipeline, Error, ResultRow, RunConfig, SolutionDiagnostics, SolutionPath};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "isac-bf", version, about = "CRB-optimal transmit beamforming for MU-MIMO sensing and communication")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and write the design as JSON.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Channel seed; defaults to the seed of trial 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Solution JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the result row as a one-line CSV.
        #[arg(long)]
        row: Option<PathBuf>,
        /// Evaluate KKT residuals and fail when any check misses its threshold.
        #[arg(long)]
        full_check: bool,
        /// Run the solver even when the budget is below the minimum power.
        #[arg(long)]
        allow_infeasible: bool,
    },
    /// Run every sweep point and trial, writing one CSV row per trial.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Per-trial CSV; per-point averages go to the same path with a `.summary.csv` extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the minimum power and the closed-form condition.
    Feasibility {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the built-in oracle checks.
    Verify {
        #[arg(long)]
        full: bool,
        /// Use the wrong sign in the Z update (the trajectory checks must then fail).
        #[arg(long, hide = true)]
        flip_z_sign: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Solve { config, seed, out, row, full_check, allow_infeasible } => {
            cmd_solve(&config, seed, out.as_deref(), row.as_deref(), full_check, allow_infeasible)
        }
        Command::Sweep { config, out } => cmd_sweep(&config, &out),
        Command::Feasibility { config, seed } => cmd_feasibility(&config, seed),
        Command::Verify { full, flip_z_sign } => Ok(cmd_verify(full, flip_z_sign)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            if let Some(Error::Infeasible { power_budget, p_low }) = e.downcast_ref::<Error>() {
                eprintln!(
                    "error: infeasible: power budget {power_budget:.6e} mW ({:.3} dBm) is below p_low = {p_low:.6e} mW ({:.3} dBm)",
                    linear_to_dbm(*power_budget),
                    linear_to_dbm(*p_low)
                );
                return ExitCode::from(EXIT_INFEASIBLE);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

/// Thresholds applied by `solve --full-check`. The closed-form design keeps
/// sensing power in `range(H)`, so the null-space checks only apply to R-BAL output.
fn failed_checks(d: &SolutionDiagnostics, kkt: Option<&KktResiduals>, path: SolutionPath) -> Vec<String> {
    let mut checks = vec![
        ("min SINR margin", -d.min_sinr_margin, 1e-6),
        ("power residual", d.power_residual, 1e-8),
        ("objective gap", d.objective_gap.unwrap_or(0.0), 1e-6),
    ];
    if path == SolutionPath::Rbal {
        checks.push(("null-space leakage", d.null_leakage, 1e-8));
        checks.push(("null-space structure", d.null_structure, 1e-6));
    }
    if let Some(k) = kkt {
        checks.push(("KKT stationarity", k.stationarity, 1e-5));
        checks.push(("KKT dual feasibility", k.dual_feasibility, 1e-5));
        checks.push(("KKT complementary slackness", k.complementary_slackness, 1e-5));
    }
    checks
        .into_iter()
        .filter(|(_, v, limit)| !(*v <= *limit))
        .map(|(name, v, limit)| format!("{name}: {v:.3e} exceeds {limit:.0e}"))
        .collect()
}

fn cmd_solve(
    config: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
    row: Option<&Path>,
    full_check: bool,
    allow_infeasible: bool,
) -> anyhow::Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    let scenario = cfg.scenario()?;
    let (seed, channel) = match seed {
        Some(s) => (s, isac_bf::scenario::generate_channel(&scenario, s)),
        None => trial_channel(&scenario, cfg.base_seed, 0),
    };
    let outcome = run_pipeline(&scenario, &channel, &cfg.pipeline_options(allow_infeasible))?;
    let diagnostics =
        isac_bf::recovery::verify_solution(&outcome.solution, &scenario, &channel, Some(outcome.reduced_objective))?;
    let kkt = if full_check { Some(kkt_residuals(&outcome.solution, &scenario, &channel)?) } else { None };
    let failures = failed_checks(&diagnostics, kkt.as_ref(), outcome.path);

    let record = SolutionRecord::new(seed, &scenario, &outcome, Some(diagnostics), kkt);
    match out {
        Some(path) => {
            let mut w = create(path)?;
            serde_json::to_writer_pretty(&mut w, &record)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => println!("{}", serde_json::to_string_pretty(&record)?),
    }
    let result_row = ResultRow::from_outcome(0, seed, &scenario, &outcome);
    if let Some(path) = row {
        write_csv(&[result_row.clone()], create(path)?)?;
    }
    eprintln!(
        "{}: objective {:.10e}, {} iterations, violation {:.2e}, min SINR margin {:.2e}",
        result_row.status, record.crb_objective, result_row.iterations, result_row.final_violation, result_row.min_sinr_margin
    );
    if !outcome.converged() {
        log::warn!("the solver stopped at the iteration cap; the design may be inaccurate");
    }
    if full_check && !failures.is_empty() {
        for f in &failures {
            eprintln!("check failed: {f}");
        }
        return Ok(ExitCode::from(EXIT_CHECK_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(config: &Path, out: &Path) -> anyhow::Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    let rows = run_sweep(&cfg)?;
    write_csv(&rows, create(out)?)?;
    let summary_path = out.with_extension("summary.csv");
    let summary = aggregate(&rows);
    write_csv(&summary, create(&summary_path)?)?;
    let failed = rows.iter().filter(|r| r.crb_objective.is_none()).count();
    eprintln!(
        "{} rows written to {}, summary in {} ({} without a solution)",
        rows.len(),
        out.display(),
        summary_path.display(),
        failed
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_feasibility(config: &Path, seed: Option<u64>) -> anyhow::Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    let scenario = cfg.scenario()?;
    let (seed, channel) = match seed {
        Some(s) => (s, isac_bf::scenario::generate_channel(&scenario, s)),
        None => trial_channel(&scenario, cfg.base_seed, 0),
    };
    let report = compute_p_low(&scenario, &channel)?;
    let verdict = check_degenerate(&scenario, &channel)?;
    let summary = serde_json::json!({
        "seed": seed,
        "power_budget_mw": scenario.power_budget,
        "p_low_mw": report.p_low,
        "p_low_dbm": linear_to_dbm(report.p_low),
        "feasible": report.feasible,
        "borderline": report.borderline,
        "closed_form_condition": verdict.degenerate_condition_holds,
        "uplink_powers": report.lambdas,
        "fixed_point_iterations": report.iterations,
        "fixed_point_residual": report.residual,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(if report.feasible { ExitCode::SUCCESS } else { ExitCode::from(EXIT_INFEASIBLE) })
}

fn cmd_verify(full: bool, flip_z_sign: bool) -> ExitCode {
    let level = if full { Level::Full } else { Level::Quick };
    let results = run_suite(level, flip_z_sign);
    for r in &results {
        println!(
            "{} {}: {:.3e} (threshold {:.0e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.measured,
            r.threshold
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
