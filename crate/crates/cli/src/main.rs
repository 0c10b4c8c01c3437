//! `spadgate` command-line runner.
//!
//! Exit codes: 0 success, 1 config error, 2 some rows failed, 3 fatal.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use spadgate::harness::{
    emit_csv, emit_summary_csv, likelihood_normalization_check, optimal_gate_check, parse_config, run_scene_scan,
    run_sweep, with_threads, ExperimentConfig, MetricsReport, OracleCheck, SweepSection,
};
use spadgate::scene::write_grid_file;

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_FATAL: u8 = 3;

#[derive(Parser)]
#[command(name = "spadgate", version, about = "SPAD LiDAR gating simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-pixel study at the config's base parameters (sweep axes ignored).
    Pixel(RunArgs),
    /// Cartesian sweep over the config's sweep axes.
    Sweep(RunArgs),
    /// Raster scan of a depth-map scene.
    Scan(RunArgs),
    /// Validate a config and print the resolved settings.
    Check(CheckArgs),
    /// Likelihood normalization and exhaustive optimal-gate self-checks.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `acquisition.global_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct OracleArgs {
    /// Seed for the random normalization scenes.
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Writes `oracle.csv` here when given.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_error(error: anyhow::Error) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error,
    }
}

fn fatal(error: anyhow::Error) -> Failure {
    // config and input-file problems found while running still count as config errors
    let code = match error.downcast_ref::<spadgate::Error>() {
        Some(spadgate::Error::Config(_) | spadgate::Error::Parse { .. }) => EXIT_CONFIG,
        _ => EXIT_FATAL,
    };
    Failure { code, error }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Pixel(args) => run(args, Mode::Pixel),
        Command::Sweep(args) => run(args, Mode::Sweep),
        Command::Scan(args) => run(args, Mode::Scan),
        Command::Check(args) => check(args),
        Command::Oracle(args) => oracle(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = parse_config(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(config_error)?;
    if let Some(seed) = seed {
        cfg.acquisition.global_seed = seed;
    }
    Ok(cfg)
}

fn check_threads(threads: Option<usize>) -> Result<(), Failure> {
    match threads {
        Some(0) => Err(config_error(anyhow::anyhow!("--threads must be at least 1"))),
        _ => Ok(()),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Pixel,
    Sweep,
    Scan,
}

fn run(args: RunArgs, mode: Mode) -> Result<u8, Failure> {
    check_threads(args.threads)?;
    let mut cfg = load(&args.config, args.seed)?;
    if mode == Mode::Pixel {
        cfg.sweep = SweepSection::default();
    }
    if mode == Mode::Scan && cfg.scene.depth_file.is_none() {
        return Err(config_error(anyhow::anyhow!("scan needs scene.depth_file")));
    }
    let out = args.out.unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(fatal)?;

    let threads = args.threads;
    let (rows, report, failed) = match mode {
        Mode::Pixel | Mode::Sweep => {
            let res = with_threads(threads, || run_sweep(&cfg))
                .and_then(|r| r)
                .map_err(|e| fatal(e.into()))?;
            let failed = res.failed_rows();
            (res.rows, res.report, failed)
        }
        Mode::Scan => {
            let res = with_threads(threads, || run_scene_scan(&cfg))
                .and_then(|r| r)
                .map_err(|e| fatal(e.into()))?;
            for maps in &res.maps {
                let tag = format!("{}_seed{}", maps.policy, maps.seed_index);
                for (name, grid) in [
                    ("depth_m", &maps.depth_m),
                    ("error_m", &maps.error_m),
                    ("entropy", &maps.entropy),
                    ("exposure_us", &maps.exposure_us),
                ] {
                    write_grid_file(&out.join(format!("{name}_{tag}.txt")), grid).map_err(|e| fatal(e.into()))?;
                }
            }
            let failed = res.failed_rows();
            (res.rows, res.report, failed)
        }
    };
    let stem = match mode {
        Mode::Pixel => "pixel",
        Mode::Sweep => "sweep",
        Mode::Scan => "scan",
    };
    emit_csv(&rows, &out.join(format!("{stem}.csv"))).map_err(|e| fatal(e.into()))?;
    emit_summary_csv(&report, &out.join(format!("{stem}_summary.csv"))).map_err(|e| fatal(e.into()))?;
    print_report(&report);
    println!("wrote {} rows to {}", rows.len(), out.display());
    if failed > 0 {
        eprintln!("{failed} of {} rows failed; see the status and failure columns", rows.len());
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn print_report(report: &MetricsReport) {
    println!(
        "{:>5} {:<13} {:>9} {:>6} {:>8} {:>10} {:>9} {:>9}",
        "point", "policy", "ambient", "sbr", "loss", "rmse_m", "exp_us", "failed"
    );
    for g in &report.groups {
        let s = &g.stats;
        println!(
            "{:>5} {:<13} {:>9.4} {:>6.2} {:>8.4} {:>10.4} {:>9.2} {:>9}",
            g.point, g.policy, g.ambient_flux, g.sbr, s.mean_loss, s.rmse_m, s.mean_exposure_us, s.failed
        );
    }
}

fn check(args: CheckArgs) -> Result<u8, Failure> {
    let cfg = load(&args.config, args.seed)?;
    let spad = cfg.spad_config().map_err(|e| config_error(e.into()))?;
    println!("config ok: {}", args.config.display());
    println!(
        "bins {} | dead time {} bins | max active periods {} | bin depth {:.6} m",
        spad.num_bins,
        spad.dead_time_bins,
        spad.max_active_periods,
        spad.bin_depth_m()
    );
    let policies: Vec<String> = cfg.policies.list.iter().map(|p| p.to_string()).collect();
    println!(
        "policies [{}] | seeds {} | global seed {} | sweep points {}",
        policies.join(", "),
        cfg.acquisition.seeds,
        cfg.acquisition.global_seed,
        cfg.sweep_points().len()
    );
    Ok(0)
}

fn oracle(args: OracleArgs) -> Result<u8, Failure> {
    check_threads(args.threads)?;
    let checks = with_threads(args.threads, || -> spadgate::Result<Vec<OracleCheck>> {
        Ok(vec![likelihood_normalization_check(args.seed, 50)?, optimal_gate_check()?])
    })
    .and_then(|r| r)
    .map_err(|e| fatal(e.into()))?;
    for c in &checks {
        println!(
            "{} [{}] {} cases, {} failures, worst {:.3e}, {:.3} s",
            c.name,
            if c.passed() { "PASS" } else { "FAIL" },
            c.cases,
            c.failures,
            c.worst,
            c.seconds
        );
    }
    if let Some(out) = &args.out {
        write_oracle_csv(out, &checks).map_err(fatal)?;
    }
    if checks.iter().all(OracleCheck::passed) {
        Ok(0)
    } else {
        Err(fatal(anyhow::anyhow!("oracle checks failed")))
    }
}

fn write_oracle_csv(out: &Path, checks: &[OracleCheck]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut text = String::from("check,cases,failures,worst,passed\n");
    for c in checks {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            c.name,
            c.cases,
            c.failures,
            spadgate::harness::format_sig(c.worst),
            c.passed()
        ));
    }
    let path = out.join("oracle.csv");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
