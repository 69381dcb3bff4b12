//! Command-line entry points.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, RunConfig};
use crate::error::{Error, Result};
use crate::extrapolation::{build_reference_scale, symmetric_grid, verify_extrapolation, ReportStatus};
use crate::output::{write_snapshot_csv, FileSink};
use crate::stepper::{run_transient, steady_state, Termination, TransientSummary};

#[derive(Debug, Parser)]
#[command(name = "vanroos", version, about = "Drift-diffusion simulator and operator extrapolation harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Directory for all written files (overrides [output] directory).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,

    /// Final time override for `run`.
    #[arg(long, global = true)]
    pub t_end: Option<f64>,

    /// Suppress progress and report text.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transient simulation with snapshots.
    Run(ConfigArg),
    /// Thermal equilibrium solve.
    Equilibrium(ConfigArg),
    /// Stationary solve by damped Gummel iteration.
    Steady(ConfigArg),
    /// Invertibility scan along the fractional scale.
    Sneiberg(ConfigArg),
    /// Built-in acceptance suite.
    Verify,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(long)]
    pub config: PathBuf,
}

/// 2 for anything the user can fix in the input, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse(_)
        | Error::Configuration { .. }
        | Error::InvalidGeometry(_)
        | Error::InvalidMaterial(_)
        | Error::InvalidInput(_) => 2,
        _ => 1,
    }
}

fn say(quiet: bool, text: impl AsRef<str>) {
    if !quiet {
        println!("{}", text.as_ref());
    }
}

/// Transient run writing snapshots into `out_dir`.
pub fn run_command(
    config: &RunConfig,
    base: &Path,
    out_dir: &Path,
    t_end: Option<f64>,
    quiet: bool,
) -> Result<TransientSummary> {
    let problem = config.build_problem()?;
    let initial = config.initial_state(&problem, base)?;
    let t_end = t_end.unwrap_or(config.time.t_end);
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::config("cli", format!("t_end must be finite and >= 0, got {t_end}")));
    }
    let o = &config.output;
    let mut sink = FileSink::new(out_dir, &o.prefix, o.every, o.vtk)?;
    let summary = run_transient(&problem, initial, &config.time.control, t_end, &mut sink)?;
    sink.finish(&problem, &summary.final_state, summary.accepted_steps)?;
    say(
        quiet,
        format!(
            "{} at t = {} after {} accepted / {} rejected steps; {} files in {}",
            summary.reason.as_str(),
            summary.reached,
            summary.accepted_steps,
            summary.rejected_steps,
            sink.written.len(),
            out_dir.display()
        ),
    );
    Ok(summary)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn equilibrium_command(config: &RunConfig, out_dir: &Path, quiet: bool) -> Result<()> {
    let problem = config.build_problem()?;
    let state = problem.equilibrium_state()?;
    ensure_dir(out_dir)?;
    let path = out_dir.join("equilibrium.csv");
    write_snapshot_csv(&problem, &state, &path)?;
    say(quiet, format!("equilibrium written to {}", path.display()));
    Ok(())
}

fn steady_command(config: &RunConfig, base: &Path, out_dir: &Path, quiet: bool) -> Result<()> {
    let problem = config.build_problem()?;
    let guess = config.initial_state(&problem, base)?;
    let state = steady_state(&problem, &guess, &config.time.steady)?;
    ensure_dir(out_dir)?;
    let path = out_dir.join("steady.csv");
    write_snapshot_csv(&problem, &state, &path)?;
    say(quiet, format!("stationary state written to {}", path.display()));
    Ok(())
}

/// Returns true when every refinement level passes.
fn sneiberg_command(config: &RunConfig, out_dir: &Path, quiet: bool) -> Result<bool> {
    ensure_dir(out_dir)?;
    let grid = symmetric_grid(config.sneiberg.tau, config.sneiberg.grid_points);
    let mut all_pass = true;
    for (mesh, a) in config.sneiberg_operators()? {
        let scale = build_reference_scale(&mesh)?;
        let report = verify_extrapolation(&a, &scale, config.sneiberg.tau, &grid)?;
        let n = mesh.num_cells();
        let text = report.to_text();
        let txt = out_dir.join(format!("sneiberg_n{n}.txt"));
        fs::write(&txt, &text).map_err(|e| Error::io(&txt, e))?;
        let csv = out_dir.join(format!("sneiberg_n{n}.csv"));
        let file = fs::File::create(&csv).map_err(|e| Error::io(&csv, e))?;
        report.write_csv(BufWriter::new(file))?;
        say(quiet, format!("n = {n}\n{text}"));
        all_pass &= report.status == ReportStatus::Pass;
    }
    Ok(all_pass)
}

fn verify_command(out_dir: &Path, quiet: bool) -> Result<bool> {
    ensure_dir(out_dir)?;
    let results = crate::verify::run_all(out_dir);
    for r in &results {
        say(quiet, r.to_string());
    }
    let passed = results.iter().filter(|r| r.passed).count();
    say(quiet, format!("{passed}/{} criteria passed", results.len()));
    Ok(passed == results.len())
}

fn load(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let config = load_config(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

/// Executes a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> Result<u8> {
    let out_dir = |config: &RunConfig| cli.output_dir.clone().unwrap_or_else(|| config.output.directory.clone());
    let ok = match &cli.command {
        Command::Run(arg) => {
            let (config, base) = load(&arg.config)?;
            let summary = run_command(&config, &base, &out_dir(&config), cli.t_end, cli.quiet)?;
            !matches!(summary.reason, Termination::BlowUp | Termination::DtUnderflow)
        }
        Command::Equilibrium(arg) => {
            let (config, _) = load(&arg.config)?;
            equilibrium_command(&config, &out_dir(&config), cli.quiet)?;
            true
        }
        Command::Steady(arg) => {
            let (config, base) = load(&arg.config)?;
            steady_command(&config, &base, &out_dir(&config), cli.quiet)?;
            true
        }
        Command::Sneiberg(arg) => {
            let (config, _) = load(&arg.config)?;
            sneiberg_command(&config, &out_dir(&config), cli.quiet)?
        }
        Command::Verify => {
            let dir = cli.output_dir.clone().unwrap_or_else(|| PathBuf::from("verify-output"));
            verify_command(&dir, cli.quiet)?
        }
    };
    Ok(if ok { 0 } else { 1 })
}

/// Full entry point: argument parsing, execution, error reporting.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(Error::Io { path, source }) if matches!(&cli.command, Command::Run(a) | Command::Equilibrium(a) | Command::Steady(a) | Command::Sneiberg(a) if a.config == path) => {
            eprintln!("error: config: cannot read {}: {source}", path.display());
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
