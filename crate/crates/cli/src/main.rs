use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use tfqkd_core::config::{parse_config, resolve, ConfigDocument, ConfigError, ResolvedConfig};
use tfqkd_core::output::{disturbance_table, run_table, sweep_table, Manifest, ResultTable};
use tfqkd_core::protocol::write_records;
use tfqkd_core::selftest;
use tfqkd_core::sim::{disturbance_experiment, run, sweep, SimError, SweepSpec, SweepVariable};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "tfqkd",
    version,
    about = "Three-time-bin plug-and-play TF-QKD simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write the sifted records (corrected) to this file.
        #[arg(long, value_name = "PATH")]
        records: Option<PathBuf>,
    },
    /// Secure key rate versus guard band (ps per bin edge).
    SweepGuard(SweepArgs),
    /// Visibility and key rate versus Alice's fiber length (km).
    SweepDistance(SweepArgs),
    /// Key rate versus backscattering coefficient.
    SweepBeta(SweepArgs),
    /// π disturbance over a frame segment, QBER with and without flip correction.
    Disturbance {
        #[command(flatten)]
        common: Common,
        /// First disturbed frame; defaults to 40% of the run.
        #[arg(long)]
        segment_start: Option<u64>,
        /// End of the disturbed segment (exclusive); defaults to 60% of the run.
        #[arg(long)]
        segment_end: Option<u64>,
    },
    /// Built-in consistency checks.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; the paper-table4 preset when absent.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<u64>,
    /// Worker threads (0 = all cores). Does not change results.
    #[arg(long)]
    workers: Option<usize>,
    /// Result file; a JSON mirror and a .manifest.json are written next to
    /// it. Standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated grid; overrides the config file and the default grid.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    values: Option<Vec<f64>>,
    #[arg(long)]
    frames_per_point: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

enum Failure {
    Io(String),
    Config(String),
    Invariant(String),
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (code, kind, msg) = match self {
            Failure::Io(m) => (EXIT_IO, "i/o error", m),
            Failure::Config(m) => (EXIT_CONFIG, "configuration error", m),
            Failure::Invariant(m) => (EXIT_INVARIANT, "invariant failure", m),
        };
        eprintln!("tfqkd: {kind}:");
        for line in msg.lines() {
            eprintln!("  {line}");
        }
        ExitCode::from(code)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => f.report(),
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Run { common, records } => cmd_run(&common, records.as_deref()),
        Command::SweepGuard(args) => cmd_sweep(&args, SweepVariable::GuardBand, "sweep-guard"),
        Command::SweepDistance(args) => cmd_sweep(&args, SweepVariable::Distance, "sweep-distance"),
        Command::SweepBeta(args) => cmd_sweep(&args, SweepVariable::Beta, "sweep-beta"),
        Command::Disturbance {
            common,
            segment_start,
            segment_end,
        } => cmd_disturbance(&common, segment_start, segment_end),
        Command::Selftest => Ok(cmd_selftest()),
    }
}

/// Loads the config file (or the default preset) and applies flag overrides.
fn load(common: &Common) -> Result<ResolvedConfig, Failure> {
    let mut resolved = match &common.config {
        Some(path) => parse_config(path)?,
        None => resolve(&ConfigDocument::default())?,
    };
    if let Some(seed) = common.seed {
        resolved.sim.seed = seed;
    }
    if let Some(frames) = common.frames {
        resolved.sim.frames = frames;
    }
    if let Some(workers) = common.workers {
        resolved.sim.workers = workers;
    }
    Ok(resolved)
}

/// Prints the effective configuration when asked; true means stop here.
fn print_config(common: &Common, resolved: &ResolvedConfig) -> bool {
    if common.print_config {
        print!("{}", resolved.effective_document().to_toml());
    }
    common.print_config
}

fn emit(common: &Common, table: &ResultTable) -> Result<(), Failure> {
    let write =
        |path: &Path, f: &dyn Fn(&mut dyn Write) -> io::Result<()>| -> Result<(), Failure> {
            let file =
                File::create(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w)
                .and_then(|()| w.flush())
                .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
        };
    match &common.out {
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            match common.format {
                Format::Csv => table.write_csv(&mut lock)?,
                Format::Json => table.write_json(&mut lock)?,
            }
        }
        Some(path) => {
            match common.format {
                Format::Csv => {
                    write(path, &|w| table.write_csv(w))?;
                    write(&path.with_extension("json"), &|w| table.write_json(w))?;
                }
                Format::Json => write(path, &|w| table.write_json(w))?,
            }
            let manifest = manifest_path(path);
            write(&manifest, &|w| {
                writeln!(w, "{}", table.manifest.to_json_pretty())
            })?;
            tracing::info!(path = %path.display(), "results written");
        }
    }
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "results".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn cmd_run(common: &Common, records: Option<&Path>) -> Result<ExitCode, Failure> {
    let resolved = load(common)?;
    resolved.validate()?;
    if print_config(common, &resolved) {
        return Ok(ExitCode::SUCCESS);
    }
    let out = run(&resolved.sim)?;
    if !(out.stats.is_consistent() && out.uncorrected.is_consistent()) {
        return Err(Failure::Invariant(format!(
            "inconsistent run statistics: {:?}",
            out.stats
        )));
    }
    let s = &out.summary;
    eprintln!(
        "frames {} seed {}: V {} e_b {} R {:.4e} (uncorrected e_b {} R {:.4e}), {} flipped windows",
        s.frames,
        s.seed,
        fmt_opt(s.visibility),
        fmt_opt(s.e_b),
        s.r,
        fmt_opt(s.e_b_uncorrected),
        s.r_uncorrected,
        s.flipped_windows
    );
    if let Some(path) = records {
        let file =
            File::create(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        write_records(&mut w, &out.records)
            .and_then(|()| w.flush())
            .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    }
    let manifest = Manifest::new("run", resolved.effective_document());
    emit(common, &run_table(manifest, s))?;
    Ok(ExitCode::SUCCESS)
}

fn default_grid(variable: SweepVariable) -> Vec<f64> {
    match variable {
        SweepVariable::GuardBand => (0..=9).map(|i| 50.0 * f64::from(i)).collect(),
        SweepVariable::Distance => vec![0.0, 10.0, 20.0, 50.0],
        SweepVariable::Beta => vec![0.0, 1e-4],
        SweepVariable::Disturbance => vec![0.0, std::f64::consts::PI],
    }
}

fn cmd_sweep(
    args: &SweepArgs,
    variable: SweepVariable,
    command: &str,
) -> Result<ExitCode, Failure> {
    let mut resolved = load(&args.common)?;
    let from_file = resolved.sweep.take().filter(|s| s.variable == variable);
    let spec = SweepSpec {
        variable,
        values: args
            .values
            .clone()
            .or_else(|| from_file.as_ref().map(|s| s.values.clone()))
            .unwrap_or_else(|| default_grid(variable)),
        frames_per_point: args
            .frames_per_point
            .or_else(|| from_file.as_ref().and_then(|s| s.frames_per_point)),
    };
    resolved.sweep = Some(spec.clone());
    resolved.validate()?;
    if print_config(&args.common, &resolved) {
        return Ok(ExitCode::SUCCESS);
    }
    let rows = sweep(&spec, &resolved.sim)?;
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    if failed > 0 {
        eprintln!(
            "{failed} of {} sweep points failed; see the error column",
            rows.len()
        );
    }
    let manifest = Manifest::new(command, resolved.effective_document());
    emit(
        &args.common,
        &sweep_table(manifest, variable.column_name(), &rows),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_disturbance(
    common: &Common,
    start: Option<u64>,
    end: Option<u64>,
) -> Result<ExitCode, Failure> {
    let mut resolved = load(common)?;
    let frames = resolved.sim.frames;
    let (file_start, file_end) = resolved.segment.unwrap_or((frames * 2 / 5, frames * 3 / 5));
    let segment = (start.unwrap_or(file_start), end.unwrap_or(file_end));
    resolved.segment = Some(segment);
    resolved.validate()?;
    if print_config(common, &resolved) {
        return Ok(ExitCode::SUCCESS);
    }
    let report = disturbance_experiment(&resolved.sim, segment)?;
    eprintln!(
        "segment {}..{}: baseline QBER {}, uncorrected {}, corrected {} ({} flipped windows)",
        segment.0,
        segment.1,
        fmt_opt(report.baseline.qber()),
        fmt_opt(report.segment_uncorrected.qber()),
        fmt_opt(report.segment_corrected.qber()),
        report.flipped_windows
    );
    let manifest = Manifest::new("disturbance", resolved.effective_document());
    emit(common, &disturbance_table(manifest, &report))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_selftest() -> ExitCode {
    let checks = selftest::run_all();
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVARIANT)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}
