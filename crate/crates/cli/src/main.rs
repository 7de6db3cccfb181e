//! Command-line front end: calibrate from CSV panels, run the two-stage
//! solver, benchmark single-copula AV@R, and re-export traces from a report.

use clap::{Parser, Subcommand};
use dmrisk::config::RunConfig;
use dmrisk::pipeline::{self, RiskReport};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_INPUT: u8 = 2;
const EXIT_CALIBRATION: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(name = "dmrisk", version, about = "Worst-case AV@R under tail-dependence uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for sampling and grid evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fit marginals and dependence parameters from CSV panels.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full two-stage worst-case AV@R procedure.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides every stage sample size (SA iterations, banks).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Plain Monte Carlo AV@R under a single copula.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Re-export the CSV traces embedded in a report.
    TraceExport {
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    let out = cli.out.clone();
    match run(cli.command, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

fn input_err(message: String) -> CliError {
    CliError { code: EXIT_INPUT, message }
}

fn run(command: Command, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| input_err(format!("cannot create {}: {e}", out.display())))?;
    match command {
        Command::Calibrate { config, seed } => {
            let (cfg, _, base) = load_config(&config, seed, None)?;
            let manifest = pipeline::run_calibrate(&cfg, &base).map_err(|e| CliError {
                code: EXIT_CALIBRATION,
                message: format!("calibration: {e}"),
            })?;
            let path = out.join("calibration.json");
            let text = serde_json::to_string_pretty(&manifest)
                .map_err(|e| input_err(format!("manifest serialization: {e}")))?;
            std::fs::write(&path, text)
                .map_err(|e| input_err(format!("cannot write {}: {e}", path.display())))?;
            println!("calibration written to {}", path.display());
            for note in &manifest.notes {
                println!("note: {note}");
            }
            Ok(())
        }
        Command::Solve { config, seed, samples } => {
            let (cfg, hash, base) = load_config(&config, seed, samples)?;
            let report = pipeline::run_solve(&cfg, &base, &hash).map_err(|e| CliError {
                code: EXIT_SOLVER,
                message: format!("solver ({}): {e}", config.display()),
            })?;
            write_report(&report, out)?;
            println!(
                "SA: t* = {}, AV@R = {:.6} (sd {:.6})",
                report.sa.t_star, report.sa.avar, report.sa.avar_sd_last10
            );
            println!(
                "selected candidates: {:?}",
                report.selected_candidates.iter().map(|j| format!("C{j}")).collect::<Vec<_>>()
            );
            println!(
                "SAA: worst-case AV@R = {:.6} (se {:.6}), winners per slot: {:?}",
                report.saa.c_star, report.saa.standard_error, report.saa.winners
            );
            if let Some(bench) = &report.benchmark {
                println!(
                    "benchmark: AV@R = {:.6} (se {:.6})",
                    bench.avar, bench.standard_error
                );
            }
            if let Some(is) = &report.importance {
                println!(
                    "importance sampling: variance ratio = {:.2} ({} replications)",
                    is.variance_ratio, is.replications
                );
            }
            println!("report written to {}", out.join("report.json").display());
            Ok(())
        }
        Command::Benchmark { config, seed, samples } => {
            let (cfg, _, base) = load_config(&config, seed, samples)?;
            let bench = pipeline::run_benchmark(&cfg, &base).map_err(|e| CliError {
                code: EXIT_SOLVER,
                message: format!("benchmark ({}): {e}", config.display()),
            })?;
            let path = out.join("benchmark.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&bench)
                    .map_err(|e| input_err(format!("serialization: {e}")))?,
            )
            .map_err(|e| input_err(format!("cannot write {}: {e}", path.display())))?;
            println!(
                "benchmark AV@R = {:.6} (se {:.6}, VaR {:.6}, N = {})",
                bench.avar, bench.standard_error, bench.var, bench.samples
            );
            println!("written to {}", path.display());
            Ok(())
        }
        Command::TraceExport { report } => {
            let text = std::fs::read_to_string(&report)
                .map_err(|e| input_err(format!("cannot read {}: {e}", report.display())))?;
            let report: RiskReport = serde_json::from_str(&text)
                .map_err(|e| input_err(format!("report unreadable: {e}")))?;
            write_traces(&report, out)?;
            println!("traces written to {}", out.display());
            Ok(())
        }
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    samples: Option<usize>,
) -> Result<(RunConfig, String, PathBuf), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_path(path).map_err(|e| input_err(format!("{e}")))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(n) = samples {
        cfg.sa.sample_size = n;
        cfg.solve.bank_size = n;
        cfg.saa.bank_size = n;
        if let Some(bench) = cfg.benchmark.as_mut() {
            bench.samples = n;
        }
    }
    let hash = pipeline::config_hash(&text);
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, hash, base))
}

fn write_report(report: &RiskReport, out: &Path) -> Result<(), CliError> {
    let path = out.join("report.json");
    std::fs::write(&path, report.to_json())
        .map_err(|e| input_err(format!("cannot write {}: {e}", path.display())))?;
    write_traces(report, out)
}

fn write_traces(report: &RiskReport, out: &Path) -> Result<(), CliError> {
    std::fs::write(out.join("sa_trace.csv"), report.sa_trace_csv())
        .map_err(|e| input_err(format!("cannot write sa_trace.csv: {e}")))?;
    std::fs::write(out.join("saa_grid.csv"), report.saa_grid_csv())
        .map_err(|e| input_err(format!("cannot write saa_grid.csv: {e}")))?;
    Ok(())
}
