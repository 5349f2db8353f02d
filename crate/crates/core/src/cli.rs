//! Command-line interface.
//!
//! Exit codes: 0 success, 1 invalid or infeasible configuration, 2 state
//! divergence, 3 validation failure or envelope breach, 4 I/O or internal
//! error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::engine::{run, AbortKind};
use crate::error::Error;
use crate::output::{write_atomic, write_run, write_sweep_csv};
use crate::scenario::{builtin, list_builtin_scenarios, resolve, Scenario};
use crate::sweep::{parse_grid, sweep, sweep_seeds, SweepOutcome};
use crate::validate::validate;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ETCSIM_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "etcsim", version, about = "Event-triggered control over a bounded-delay channel")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write trace.csv, events.csv and summary.json.
    Run {
        /// Scenario file or built-in name (`paper/<name>[/<column>]`).
        #[arg(long)]
        scenario: String,
        /// Output directory (default: $ETCSIM_OUT_DIR/<name>, or ./out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario over a grid of delay bounds and write sweep.csv.
    Sweep {
        #[arg(long)]
        scenario: String,
        /// Delay-bound grid `start:stop:count` in seconds.
        #[arg(long)]
        gammas: String,
        /// Seeded runs per grid point.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Master seed for the per-run seeds.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios, or print one as TOML.
    PaperScenario { name: Option<String> },
    /// Run the invariant suite.
    Validate {
        /// Seeded runs per built-in scenario.
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) | Error::Config(_) | Error::Parse(_) => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::EnvelopeBreach(_) | Error::Protocol(_) | Error::Decode(_) => EXIT_VALIDATION,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Internal(_) => EXIT_IO,
    }
}

fn default_out(name: &str) -> PathBuf {
    let base = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"));
    base.join(name.replace('/', "-"))
}

/// Parse `args` (including the program name) and execute. Output goes to
/// `stdout`; diagnostics go to `stderr`.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> crate::Result<i32> {
    match cmd {
        Command::Run { scenario, out, seed } => cmd_run(&scenario, out.as_deref(), seed, stdout),
        Command::Sweep { scenario, gammas, seeds, seed, out } => {
            cmd_sweep(&scenario, &gammas, seeds, seed, out.as_deref(), stdout)
        }
        Command::PaperScenario { name } => cmd_builtin_scenario(name.as_deref(), stdout),
        Command::Validate { runs, seed } => {
            let report = validate(runs, seed);
            for c in &report.checks {
                writeln!(stdout, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
            }
            Ok(if report.passed() { EXIT_OK } else { EXIT_VALIDATION })
        }
    }
}

fn cmd_run(arg: &str, out: Option<&Path>, seed: Option<u64>, stdout: &mut dyn Write) -> crate::Result<i32> {
    let columns = resolve(arg)?;
    let multi = columns.len() > 1;
    let mut code = EXIT_OK;
    for (column, mut sc) in columns {
        if let Some(s) = seed {
            sc.seed = s;
        }
        let base = out.map(Path::to_path_buf).unwrap_or_else(|| default_out(base_name(arg, &sc)));
        let dir = if multi { base.join(&column) } else { base };
        let trace = run(&sc)?;
        let summary = write_run(&dir, &trace, &sc)?;
        writeln!(
            stdout,
            "{}: g = {} bits, R_s = {}, sends = {}, violations = {}, written to {}",
            sc.name,
            summary.scheme.g_bits(),
            summary.rate.rate.map_or("n/a".to_string(), |r| format!("{r:.4} bits/s")),
            summary.rate.trigger_count,
            summary.envelopes.total_violations,
            dir.display()
        )?;
        if let Some(a) = &summary.abort {
            writeln!(stdout, "  aborted at t = {:.6} s: {}", a.t, a.detail)?;
            code = code.max(match a.kind {
                AbortKind::Divergence => EXIT_DIVERGENCE,
                AbortKind::EnvelopeBreach => EXIT_VALIDATION,
            });
        }
    }
    Ok(code)
}

fn base_name<'a>(arg: &'a str, sc: &'a Scenario) -> &'a str {
    if Path::new(arg).exists() {
        &sc.name
    } else {
        arg.strip_prefix(crate::scenario::BUILTIN_PREFIX).unwrap_or(arg)
    }
}

fn cmd_sweep(
    arg: &str,
    gammas: &str,
    seeds: usize,
    seed: u64,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> crate::Result<i32> {
    let mut columns = resolve(arg)?;
    if columns.len() != 1 {
        return Err(Error::config(format!("`{arg}` has several columns; pick one as {arg}/<column>")));
    }
    let (_, sc) = columns.remove(0);
    let grid = parse_grid(gammas)?;
    let outcomes = sweep(&sc, &grid, &sweep_seeds(seed, seeds.max(1)));
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| default_out(base_name(arg, &sc)));
    let mut csv = Vec::new();
    write_sweep_csv(&outcomes, &mut csv)?;
    write_atomic(&dir.join("sweep.csv"), &csv)?;
    write_atomic(&dir.join("sweep.json"), &serde_json::to_vec_pretty(&outcomes)?)?;
    let mut violations = 0;
    for o in &outcomes {
        match o {
            SweepOutcome::Point(p) => {
                violations += p.violations;
                writeln!(
                    stdout,
                    "gamma = {:.4} s: g = {} bits, R_s = {}",
                    p.gamma_effective,
                    p.g_bits,
                    p.rate.map_or("n/a".to_string(), |r| format!("{r:.4} bits/s"))
                )?;
            }
            SweepOutcome::Skipped { gamma, reason } => writeln!(stdout, "gamma = {gamma:.4} s: skipped ({reason})")?,
        }
    }
    writeln!(stdout, "written to {}", dir.join("sweep.csv").display())?;
    Ok(if violations > 0 { EXIT_VALIDATION } else { EXIT_OK })
}

fn cmd_builtin_scenario(name: Option<&str>, stdout: &mut dyn Write) -> crate::Result<i32> {
    match name {
        Some(n) => {
            for (column, sc) in builtin(n)? {
                writeln!(stdout, "# column: {column}")?;
                write!(stdout, "{}", sc.to_toml()?)?;
            }
        }
        None => {
            writeln!(
                stdout,
                "{:<26} {:<11} {:<10} {:>8} {:>7} {:>8} {:>6} {:>6} {:>6} {:>10}",
                "name", "column", "scheme", "delta_s", "T_s", "gamma_s", "d_min", "M", "g", "published"
            )?;
            for s in list_builtin_scenarios()? {
                writeln!(
                    stdout,
                    "{:<26} {:<11} {:<10} {:>8} {:>7} {:>8} {:>6} {:>6} {:>6} {:>10}",
                    s.name,
                    s.column,
                    format!("{:?}", s.scheme).to_lowercase(),
                    s.delta_s,
                    s.horizon_s,
                    s.gamma_s,
                    s.min_delay_steps,
                    s.disturbance_bound,
                    s.g_bits,
                    s.published_g_bits.map_or("-".to_string(), |g| g.to_string())
                )?;
            }
        }
    }
    Ok(EXIT_OK)
}
