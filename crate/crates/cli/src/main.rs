//! Command-line front end: run scenario trials, sweep regulator gain ratios,
//! and check numerical invariants. Every behavior is a thin wrapper over the
//! library; outputs are byte-for-byte reproducible for identical inputs.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use compensctrl_core::check::run_scenario_checks;
use compensctrl_core::config::Scenario;
use compensctrl_core::error::Error;
use compensctrl_core::scenario::{log_spaced_ratios, run, stability_sweep};
use compensctrl_core::trace::{write_sweep_file, write_trace_files};

const EXIT_CONFIG: u8 = 2;
const EXIT_SIMULATION: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(
    name = "compensctrl",
    about = "Simulate observer-based compensatory control of human-robot chains",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerFlag {
    On,
    Off,
}

#[derive(clap::Args, Clone)]
struct Overrides {
    /// Integration step override (seconds).
    #[arg(long)]
    dt: Option<f64>,
    /// Trial horizon override (seconds).
    #[arg(long)]
    horizon: Option<f64>,
    /// Force the robot controller on or off.
    #[arg(long, value_enum)]
    controller: Option<ControllerFlag>,
    /// Human reaching/compensation weight override (in [0, 1]).
    #[arg(long)]
    w: Option<f64>,
    /// Regulator gain-estimate ratio for the reaching gain.
    #[arg(long)]
    lambda_ratio_e: Option<f64>,
    /// Regulator gain-estimate ratio for the compensation gain.
    #[arg(long)]
    lambda_ratio_c: Option<f64>,
    /// Seed recorded in trace metadata.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenario files, emitting a trace CSV plus a JSON
    /// metadata sidecar per scenario.
    Run {
        /// Scenario JSON files.
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Output directory for traces.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Number of parallel trial workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep regulator gain-estimate ratios over a log grid and classify the
    /// closed-loop stability of each cell.
    Sweep {
        /// Base scenario JSON file (true human gains).
        scenario: PathBuf,
        /// Output directory for the grid CSV.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Grid size as ROWSxCOLS (reaching ratios x compensation ratios).
        #[arg(long, default_value = "9x9")]
        grid: String,
        /// Number of parallel cell workers.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Validate scenario configs and run the fast numerical invariant suite.
    Check {
        /// Scenario JSON files.
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("COMPENSCTRL_LOG", "warn"),
    )
    .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenarios,
            out,
            jobs,
            overrides,
        } => cmd_run(&scenarios, &out, jobs, &overrides),
        Command::Sweep {
            scenario,
            out,
            grid,
            jobs,
            overrides,
        } => cmd_sweep(&scenario, &out, &grid, jobs, &overrides),
        Command::Check { scenarios } => cmd_check(&scenarios),
    }
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::Io(_) => EXIT_IO,
        Error::Json(_) | Error::InvalidConfig(_) | Error::DimensionMismatch { .. } => EXIT_CONFIG,
        Error::AtStep { source, .. } => exit_code_for(source),
        _ => EXIT_SIMULATION,
    }
}

fn apply_overrides(scenario: &mut Scenario, overrides: &Overrides) -> Result<(), String> {
    if let Some(dt) = overrides.dt {
        if dt <= 0.0 {
            return Err(format!("--dt must be positive, got {dt}"));
        }
        scenario.dt = dt;
    }
    if let Some(horizon) = overrides.horizon {
        if horizon <= 0.0 {
            return Err(format!("--horizon must be positive, got {horizon}"));
        }
        scenario.horizon = horizon;
    }
    if scenario.dt > scenario.horizon {
        return Err("dt must not exceed the horizon".into());
    }
    if let Some(flag) = overrides.controller {
        scenario.controller_enabled = flag == ControllerFlag::On;
    }
    if let Some(w) = overrides.w {
        if !(0.0..=1.0).contains(&w) {
            return Err(format!("--w must be in [0, 1], got {w}"));
        }
        scenario.human.w = w;
        scenario.w_defaulted = false;
    }
    if let Some(r) = overrides.lambda_ratio_e {
        if r <= 0.0 {
            return Err(format!("--lambda-ratio-e must be positive, got {r}"));
        }
        scenario.lambda_hat_ratio_e = r;
    }
    if let Some(r) = overrides.lambda_ratio_c {
        if r <= 0.0 {
            return Err(format!("--lambda-ratio-c must be positive, got {r}"));
        }
        scenario.lambda_hat_ratio_c = r;
    }
    if let Some(seed) = overrides.seed {
        scenario.seed = seed;
    }
    Ok(())
}

fn load_all(paths: &[PathBuf], overrides: &Overrides) -> Result<Vec<Scenario>, ExitCode> {
    let mut scenarios = Vec::with_capacity(paths.len());
    for path in paths {
        let mut scenario = match compensctrl_core::load_scenario(path) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return Err(ExitCode::from(exit_code_for(&e)));
            }
        };
        if let Err(msg) = apply_overrides(&mut scenario, overrides) {
            eprintln!("error: {}: {msg}", path.display());
            return Err(ExitCode::from(EXIT_CONFIG));
        }
        scenarios.push(scenario);
    }
    Ok(scenarios)
}

fn cmd_run(paths: &[PathBuf], out: &PathBuf, jobs: usize, overrides: &Overrides) -> ExitCode {
    // Validate every config before any trial starts.
    let scenarios = match load_all(paths, overrides) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    let results: Vec<(String, Result<(f64, f64, usize, f64), Error>)> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| {
                let start = Instant::now();
                let outcome = run(s).and_then(|trace| {
                    write_trace_files(&trace, out, &s.name)?;
                    Ok((
                        trace.final_reaching_norm(),
                        trace.final_compensation_norm(),
                        trace.records.len(),
                        start.elapsed().as_secs_f64(),
                    ))
                });
                (s.name.clone(), outcome)
            })
            .collect()
    });
    let mut code = ExitCode::SUCCESS;
    for (name, result) in results {
        match result {
            Ok((e_e, e_c, steps, wall)) => println!(
                "{name}: final |e_e| = {e_e:.3e}, final |e_c| = {e_c:.3e}, steps = {steps}, wall = {wall:.2} s"
            ),
            Err(e) => {
                eprintln!("error: {name}: {e}");
                code = ExitCode::from(exit_code_for(&e));
            }
        }
    }
    code
}

fn parse_grid(grid: &str) -> Result<(usize, usize), String> {
    let (rows, cols) = grid
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("--grid must look like 9x9, got {grid:?}"))?;
    let rows: usize = rows.parse().map_err(|_| format!("bad grid rows {rows:?}"))?;
    let cols: usize = cols.parse().map_err(|_| format!("bad grid cols {cols:?}"))?;
    if rows == 0 || cols == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((rows, cols))
}

fn cmd_sweep(
    path: &PathBuf,
    out: &PathBuf,
    grid: &str,
    jobs: usize,
    overrides: &Overrides,
) -> ExitCode {
    let (rows, cols) = match parse_grid(grid) {
        Ok(g) => g,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let scenarios = match load_all(std::slice::from_ref(path), overrides) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let base = &scenarios[0];
    let ratios_e = log_spaced_ratios(-2.0, 2.0, rows);
    let ratios_c = log_spaced_ratios(-2.0, 2.0, cols);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    let start = Instant::now();
    let grid_result = pool.install(|| stability_sweep(base, &ratios_e, &ratios_c));
    match grid_result {
        Ok(grid) => {
            let stable = grid.cells.iter().filter(|c| c.stable).count();
            match write_sweep_file(&grid, out, &format!("{}_sweep", base.name)) {
                Ok(path) => {
                    println!(
                        "{}: {stable}/{} cells stable, wall = {:.2} s, grid -> {}",
                        base.name,
                        grid.cells.len(),
                        start.elapsed().as_secs_f64(),
                        path.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: writing sweep: {e}");
                    ExitCode::from(exit_code_for(&e))
                }
            }
        }
        Err(e) => {
            eprintln!("error: sweep: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn cmd_check(paths: &[PathBuf]) -> ExitCode {
    let mut all_passed = true;
    for path in paths {
        println!("{}:", path.display());
        match compensctrl_core::load_scenario(path) {
            Ok(scenario) => {
                for outcome in run_scenario_checks(&scenario) {
                    println!(
                        "  [{}] {}: {}",
                        if outcome.passed { "PASS" } else { "FAIL" },
                        outcome.name,
                        outcome.detail
                    );
                    all_passed &= outcome.passed;
                }
            }
            Err(e) => {
                println!("  [FAIL] config-validation: {e}");
                all_passed = false;
            }
        }
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
