//! Command-line front end: parse a config, dispatch the experiment, write
//! the report, and expose the one-shot verification suite.
//!
//! Exit codes: 0 when every verdict passes, 1 on any check failure (or a
//! failure while running a validated experiment), 2 on usage or config
//! errors — nothing is simulated unless the config validates.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use loctime::calibration::fit_calibration;
use loctime::harness::config::load_config;
use loctime::harness::report::{code_version, ExperimentReport};
use loctime::harness::run::run_experiment;
use loctime::harness::verify::run_all;

#[derive(Parser)]
#[command(
    name = "loctime",
    version = code_version(),
    about = "Simulation laboratory for Brownian local time increment statistics",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for simulation (0 = one per core). Results are
    /// bit-identical at any setting.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config and write its report.
    Run {
        /// Experiment config file.
        #[arg(long)]
        config: PathBuf,

        /// Dotted-path config override, repeatable: --override n_paths=2000,
        /// --override grid.dx=0.005, --override h_list=[0.05,0.02].
        /// Applied in order after LOCTIME_SEED; recorded in the report.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,

        /// Directory for the report JSON and CSV.
        #[arg(long, default_value = "reports")]
        output_dir: PathBuf,
    },

    /// Run the full verification suite: every numbered criterion at its
    /// standard scale, one pass/fail line each.
    VerifyAll {
        /// Tenth-size ensembles and doubled gate multipliers; same code
        /// paths, for smoke-testing only.
        #[arg(long)]
        quick: bool,

        /// Base seed for every ensemble (default: LOCTIME_SEED, then 0).
        #[arg(long)]
        seed: Option<u64>,

        /// Directory for the per-experiment reports and the suite summary.
        #[arg(long, default_value = "reports")]
        output_dir: PathBuf,
    },

    /// Fit the kernel envelope constants and write the calibration file.
    /// A no-op when the file already exists, unless --force.
    Calibrate {
        /// Output file.
        #[arg(long, default_value = "calibration.txt")]
        path: PathBuf,

        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },

    /// Render a saved report JSON as a summary or as CSV.
    Report {
        /// Report JSON produced by `run` or `verify-all`.
        path: PathBuf,

        /// Emit the per-row CSV instead of the summary lines.
        #[arg(long)]
        csv: bool,
    },
}

const EXIT_PASS: u8 = 0;
const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();

    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: could not configure {} threads: {e}", cli.threads);
            return ExitCode::from(EXIT_USAGE);
        }
    }

    let code = match cli.command {
        Command::Run {
            config,
            overrides,
            output_dir,
        } => cmd_run(&config, &overrides, &output_dir),
        Command::VerifyAll {
            quick,
            seed,
            output_dir,
        } => cmd_verify_all(quick, seed, &output_dir),
        Command::Calibrate { path, force } => cmd_calibrate(&path, force),
        Command::Report { path, csv } => cmd_report(&path, csv),
    };
    ExitCode::from(code)
}

/// LOCTIME_SEED, parsed strictly when present.
fn env_seed() -> Result<Option<u64>, String> {
    match std::env::var("LOCTIME_SEED") {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| format!("LOCTIME_SEED must be an unsigned integer, got {raw:?}")),
        Err(_) => Ok(None),
    }
}

fn cmd_run(config_path: &Path, overrides: &[String], output_dir: &Path) -> u8 {
    // Seed precedence: config file < LOCTIME_SEED < explicit --override.
    let mut all_overrides = Vec::new();
    match env_seed() {
        Ok(Some(seed)) => all_overrides.push(format!("base_seed={seed}")),
        Ok(None) => {}
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    }
    all_overrides.extend_from_slice(overrides);

    let config = match load_config(config_path, &all_overrides) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };

    let mut report = match run_experiment(&config) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("error: experiment failed: {e}");
            return EXIT_CHECK_FAILED;
        }
    };
    report.overrides = all_overrides;

    for line in report.summary_lines() {
        println!("{line}");
    }
    let stem = config.kind.as_str();
    if let Err(msg) = write_report(&report, output_dir, stem) {
        eprintln!("error: {msg}");
        return EXIT_CHECK_FAILED;
    }
    println!(
        "wrote {0}/{1}.report.json and {0}/{1}.rows.csv",
        output_dir.display(),
        stem
    );
    if report.all_pass {
        EXIT_PASS
    } else {
        EXIT_CHECK_FAILED
    }
}

fn cmd_verify_all(quick: bool, seed: Option<u64>, output_dir: &Path) -> u8 {
    let seed = match (seed, env_seed()) {
        (Some(s), _) => s,
        (None, Ok(Some(s))) => s,
        (None, Ok(None)) => 0,
        (None, Err(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };

    let summary = match run_all(seed, quick) {
        Ok(summary) => summary,
        Err(e) => {
            eprintln!("error: verification suite failed to run: {e}");
            return EXIT_CHECK_FAILED;
        }
    };

    for line in summary.summary_lines() {
        println!("{line}");
    }
    for report in &summary.reports {
        let stem = format!("verify-{}", report.config.kind.as_str());
        if let Err(msg) = write_report(report, output_dir, &stem) {
            eprintln!("error: {msg}");
            return EXIT_CHECK_FAILED;
        }
    }
    let summary_json = match serde_json::to_string_pretty(&summary) {
        Ok(json) => json,
        Err(e) => {
            eprintln!("error: could not serialize summary: {e}");
            return EXIT_CHECK_FAILED;
        }
    };
    let summary_path = output_dir.join("verify-summary.json");
    if let Err(e) = fs::write(&summary_path, summary_json) {
        eprintln!("error: could not write {}: {e}", summary_path.display());
        return EXIT_CHECK_FAILED;
    }
    println!(
        "wrote {} reports and the suite summary to {}",
        summary.reports.len(),
        output_dir.display()
    );
    if summary.all_pass {
        EXIT_PASS
    } else {
        EXIT_CHECK_FAILED
    }
}

fn cmd_calibrate(path: &Path, force: bool) -> u8 {
    if path.exists() && !force {
        println!(
            "{} already exists; leaving it untouched (use --force to refit)",
            path.display()
        );
        return EXIT_PASS;
    }
    let fresh = match fit_calibration() {
        Ok(fresh) => fresh,
        Err(e) => {
            eprintln!("error: calibration fit failed: {e}");
            return EXIT_CHECK_FAILED;
        }
    };
    // Provenance: report how far the fresh fit sits from the constants the
    // binary was built with.
    let frozen = loctime::calibration::builtin();
    let keys: Vec<String> = fresh.keys().map(str::to_string).collect();
    let mut worst_rel: f64 = 0.0;
    for key in &keys {
        if let (Ok(a), Ok(b)) = (fresh.get(key), frozen.get(key)) {
            worst_rel = worst_rel.max((a - b).abs() / b.abs());
        }
    }
    if let Err(e) = fresh.save(path) {
        eprintln!("error: could not write {}: {e}", path.display());
        return EXIT_CHECK_FAILED;
    }
    println!(
        "wrote {} constants to {} (worst relative gap to built-in: {worst_rel:.2e})",
        keys.len(),
        path.display()
    );
    EXIT_PASS
}

fn cmd_report(path: &Path, csv: bool) -> u8 {
    let raw = match fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) => {
            eprintln!("error: could not read {}: {e}", path.display());
            return EXIT_USAGE;
        }
    };
    let report = match ExperimentReport::from_json(&raw) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("error: {} is not a valid report: {e}", path.display());
            return EXIT_USAGE;
        }
    };
    if csv {
        match report.to_csv() {
            Ok(text) => print!("{text}"),
            Err(e) => {
                eprintln!("error: could not render CSV: {e}");
                return EXIT_CHECK_FAILED;
            }
        }
    } else {
        for line in report.summary_lines() {
            println!("{line}");
        }
    }
    EXIT_PASS
}

fn write_report(report: &ExperimentReport, dir: &Path, stem: &str) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("could not create {}: {e}", dir.display()))?;
    let json = report
        .to_json()
        .map_err(|e| format!("could not serialize report: {e}"))?;
    let json_path = dir.join(format!("{stem}.report.json"));
    fs::write(&json_path, json).map_err(|e| format!("could not write {}: {e}", json_path.display()))?;
    let csv = report
        .to_csv()
        .map_err(|e| format!("could not render CSV: {e}"))?;
    let csv_path = dir.join(format!("{stem}.rows.csv"));
    fs::write(&csv_path, csv).map_err(|e| format!("could not write {}: {e}", csv_path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::Cli;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
