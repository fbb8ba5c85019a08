//! Command-line front end: `validate | simulate | limit | front | sweep`.
//!
//! Every command writes its artifacts and a `manifest.json` into the output
//! directory. Exit codes: 0 success, 1 config error, 2 validation failure,
//! 3 solver error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::diagnostics::space_time_norms;
use crate::error::{Error, Result};
use crate::grid::write_snapshot_csv;
use crate::hele_shaw::{run_limit, track_front, write_front_csv, FrontState};
use crate::model::validate_assumptions;
use crate::pme::{run, SolverConfig};
use crate::sweep::{run_sweep, write_sweep_csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mesa-limit", version, about = "Porous-medium tumour growth and its Hele-Shaw limit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the modelling assumptions for a configuration.
    Validate(RunArgs),
    /// Evolve the density equation and write snapshots, run log and diagnostics.
    Simulate(RunArgs),
    /// Evolve the incompressible limit with the projected solver.
    Limit(RunArgs),
    /// Track the two fronts of a one-dimensional patch.
    Front(RunArgs),
    /// Run a γ ladder for a scenario preset.
    Sweep(RunArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of snapshots over the horizon; overrides `snapshots`.
    #[arg(long)]
    pub snapshots: Option<usize>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Simulate(_) => "simulate",
            Command::Limit(_) => "limit",
            Command::Front(_) => "front",
            Command::Sweep(_) => "sweep",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Validate(a) | Command::Simulate(a) | Command::Limit(a) | Command::Front(a) | Command::Sweep(a) => a,
        }
    }
}

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    timestamp_unix: u64,
    config_path: String,
    config: BTreeMap<String, String>,
    hash_algorithm: &'static str,
    files: Vec<FileEntry>,
    exit_code: i32,
    error: Option<String>,
}

/// Files written by a command, relative to the output directory.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn inventory(&self) -> Vec<FileEntry> {
        self.files
            .iter()
            .filter_map(|name| {
                let bytes = std::fs::read(self.dir.join(name)).ok()?;
                Some(FileEntry {
                    path: name.clone(),
                    bytes: bytes.len() as u64,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect()
    }
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    execute(&cli.command)
}

pub fn execute(command: &Command) -> i32 {
    let args = command.args();
    let config = match Config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(config.output_dir()));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return EXIT_SOLVER;
    }
    let mut out = Outputs { dir, files: Vec::new() };
    let result = config.snapshots().and_then(|default| {
        let snapshots = args.snapshots.unwrap_or(default);
        match command {
            Command::Validate(_) => cmd_validate(&config, &mut out),
            Command::Simulate(_) => cmd_simulate(&config, snapshots, &mut out),
            Command::Limit(_) => cmd_limit(&config, snapshots, &mut out),
            Command::Front(_) => cmd_front(&config, snapshots, &mut out),
            Command::Sweep(_) => cmd_sweep(&config, snapshots, &mut out),
        }
    });
    let (code, error) = match result {
        Ok(code) => (code, None),
        Err(e) => {
            eprintln!("error: {e}");
            let code = if matches!(e, Error::Config { .. }) { EXIT_CONFIG } else { EXIT_SOLVER };
            (code, Some(e.to_string()))
        }
    };
    if let Err(e) = write_manifest(&out, command.name(), &args.config, &config, code, error) {
        eprintln!("error: cannot write manifest: {e}");
        return if code == EXIT_OK { EXIT_SOLVER } else { code };
    }
    code
}

fn write_manifest(out: &Outputs, command: &str, path: &Path, config: &Config, code: i32, error: Option<String>) -> Result<()> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        config_path: path.display().to_string(),
        config: config.echo(),
        hash_algorithm: "sha256",
        files: out.inventory(),
        exit_code: code,
        error,
    };
    let mut w = BufWriter::new(File::create(out.dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_validate(config: &Config, out: &mut Outputs) -> Result<i32> {
    let gamma = config.gamma()?;
    let (params, init) = config.params(gamma)?;
    let n0 = init.field(&params.grid)?;
    let report = validate_assumptions(&params, &n0);
    out.json("validation.json", &report)?;
    for e in &report.entries {
        println!("{:<24} {:?}  {}", e.name, e.verdict, e.detail);
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_VALIDATION })
}

fn snapshot_name(prefix: &str, k: usize) -> String {
    format!("{prefix}_{k:04}.csv")
}

fn write_index(out: &mut Outputs, name: &str, prefix: &str, times: &[f64]) -> Result<()> {
    let mut w = out.create(name)?;
    writeln!(w, "index,t,file")?;
    for (k, t) in times.iter().enumerate() {
        writeln!(w, "{k},{t:.15e},{}", snapshot_name(prefix, k))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(config: &Config, snapshots: usize, out: &mut Outputs) -> Result<i32> {
    let gamma = config.gamma()?;
    let horizon = config.horizon()?;
    let (params, init) = config.params(gamma)?;
    let solver: SolverConfig = config.solver(snapshots)?;
    let traj = run(&params, &init, &solver, horizon)?;
    for (k, s) in traj.snapshots.iter().enumerate() {
        let mut w = out.create(&snapshot_name("snapshot", k))?;
        write_snapshot_csv(&mut w, &s.n, &s.p)?;
        w.flush()?;
    }
    let times: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
    write_index(out, "snapshot_index.csv", "snapshot", &times)?;
    out.json("run_log.json", &traj.log)?;
    if traj.snapshots.len() >= 2 {
        out.json("diagnostics.json", &space_time_norms(&traj.snapshots, &params)?)?;
    }
    println!(
        "simulate: gamma {gamma}, {} steps, {} snapshots, final mass {:.6e}",
        traj.log.steps,
        traj.snapshots.len(),
        traj.last().mass()
    );
    Ok(EXIT_OK)
}

fn cmd_limit(config: &Config, snapshots: usize, out: &mut Outputs) -> Result<i32> {
    let horizon = config.horizon()?;
    let grid = config.grid()?;
    let law = config.growth()?;
    let potential = config.potential(&grid)?;
    let n0 = config.limit_initial(&grid)?;
    let times = SolverConfig::default().with_uniform_snapshots(horizon, snapshots).snapshot_times;
    let traj = run_limit(&potential, &law, &n0, horizon, &times, &config.limit()?)?;
    for (k, s) in traj.snapshots.iter().enumerate() {
        let mut w = out.create(&snapshot_name("limit", k))?;
        write_snapshot_csv(&mut w, &s.n_inf, &s.p_inf)?;
        w.flush()?;
    }
    let times: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
    write_index(out, "limit_index.csv", "limit", &times)?;
    out.json("limit_log.json", &traj.log)?;
    println!(
        "limit: {} steps, {} sweeps, max violation {:.3e}",
        traj.log.steps, traj.log.total_sweeps, traj.log.max_violation
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FrontSummary {
    rows: usize,
    extinct_at: Option<f64>,
    final_a: f64,
    final_b: f64,
}

fn cmd_front(config: &Config, snapshots: usize, out: &mut Outputs) -> Result<i32> {
    let horizon = config.horizon()?;
    let grid = config.grid()?;
    if grid.dim() != 1 {
        return Err(Error::Config {
            line: 0,
            key: "dim".into(),
            message: "front tracking is one-dimensional".into(),
        });
    }
    let law = config.growth()?;
    let potential = config.potential(&grid)?;
    let (left, right, dt, opts) = config.front()?;
    let times = SolverConfig::default().with_uniform_snapshots(horizon, snapshots).snapshot_times;
    let initial = FrontState::new(0.0, left, right, &potential, &law, &opts)?;
    let traj = track_front(initial, &potential, &law, dt, horizon, &times, &opts)?;
    let mut w = out.create("front_trajectory.csv")?;
    write_front_csv(&mut w, &traj.rows)?;
    w.flush()?;
    let last = traj.rows.last().ok_or_else(|| Error::Internal("empty front trajectory".into()))?;
    out.json(
        "front_summary.json",
        &FrontSummary { rows: traj.rows.len(), extinct_at: traj.extinct_at, final_a: last.a, final_b: last.b },
    )?;
    println!("front: [{:.6}, {:.6}] at t = {}", last.a, last.b, last.t);
    Ok(EXIT_OK)
}

fn cmd_sweep(config: &Config, snapshots: usize, out: &mut Outputs) -> Result<i32> {
    let sweep = config.sweep(snapshots)?;
    let report = run_sweep(&sweep)?;
    let mut w = out.create("sweep_report.csv")?;
    write_sweep_csv(&mut w, &report)?;
    w.flush()?;
    out.json("sweep_report.json", &report)?;
    for row in &report.rows {
        match &row.error {
            Some(e) => println!("gamma {:>6}: failed: {e}", row.gamma),
            None => println!("gamma {:>6}: {} steps", row.gamma, row.steps),
        }
    }
    if let Some(e) = &report.reference_error {
        return Err(Error::Modeling(format!("reference run failed: {e}")));
    }
    if let Some(row) = report.rows.iter().find(|r| r.error.is_some()) {
        return Err(Error::Modeling(format!(
            "run at gamma {} failed: {}",
            row.gamma,
            row.error.as_deref().unwrap_or_default()
        )));
    }
    Ok(EXIT_OK)
}
