use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lanesim_core::corridor::Corridor;
use lanesim_core::engine::{run, EngineError, ReservedLaneMode, ScenarioConfig};
use lanesim_core::harness::{
    compare, crossover, emit_report, read_rows, sweep, HarnessError, ReportFormat, ResultRow, SweepConfig,
    MATRIX_FILE,
};
use lanesim_core::reservation::LosClass;

#[derive(Parser)]
#[command(name = "lanesim", version, about = "Arterial corridor simulation with automated vehicles and reserved lanes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and print its metrics.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write metrics here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MetricsFormat::Csv)]
        format: MetricsFormat,
    },
    /// Run a sweep file, then write the matrix and comparison reports.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        /// Output directory; overrides `output` in the sweep file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report formats, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
        format: Vec<ReportFormat>,
    },
    /// Build a with/without comparison from a matrix CSV.
    Compare {
        matrix: PathBuf,
        #[arg(long)]
        testbed: String,
        #[arg(long)]
        los: LosClass,
        /// Treatment lane mode compared against off.
        #[arg(long, default_value = "auto")]
        mode: ReservedLaneMode,
        /// Report directory; without it the comparison CSV goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
        format: Vec<ReportFormat>,
    },
    /// Check corridor, scenario or sweep files.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricsFormat {
    Csv,
    Json,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Exit status 1: the input was rejected. Exit status 2: it was accepted but
/// running it failed.
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::ConfigInvalid(_) | HarnessError::Parse { .. } | HarnessError::IncompleteMatrix(_) => {
                Failure::Invalid(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, out, format } => cmd_run(&scenario, seed, out.as_deref(), format),
        Command::Sweep { config, workers, out, format } => cmd_sweep(&config, workers, out, &format),
        Command::Compare { matrix, testbed, los, mode, out, format } => {
            cmd_compare(&matrix, &testbed, los, mode, out.as_deref(), &format)
        }
        Command::Validate { files } => cmd_validate(&files),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<&Path>, format: MetricsFormat) -> Result<(), Failure> {
    let mut cfg = ScenarioConfig::load(path).map_err(|e| Failure::from(e).in_file(path))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let metrics = run(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    if !metrics.audits.clean() {
        eprintln!("warning: safety audits not clean: {:?}", metrics.audits);
    }
    let mut bytes = Vec::new();
    match format {
        MetricsFormat::Csv => metrics.write_csv(&mut bytes).map_err(|e| Failure::Runtime(e.to_string()))?,
        MetricsFormat::Json => {
            bytes = serde_json::to_vec_pretty(&metrics).map_err(|e| Failure::Runtime(e.to_string()))?;
            bytes.push(b'\n');
        }
    }
    write_output(out, &bytes)
}

fn cmd_sweep(path: &Path, workers: usize, out: Option<PathBuf>, formats: &[ReportFormat]) -> Result<(), Failure> {
    let mut cfg = SweepConfig::load(path).map_err(|e| Failure::from(e).in_file(path))?;
    if out.is_some() {
        cfg.output = out;
    }
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("lanesim-out"));
    cfg.output = Some(dir.clone());
    let rows = sweep(&cfg, workers.max(1))?;
    eprintln!("{} runs, matrix in {}", rows.len(), dir.join(MATRIX_FILE).display());
    if !cfg.lane_modes.contains(&ReservedLaneMode::Off) || !cfg.mp_levels.contains(&0.0) {
        eprintln!("no off-mode baseline at mp = 0; skipping comparison reports");
        return Ok(());
    }
    for testbed in &cfg.testbeds {
        for &los in &cfg.los_levels {
            for &mode in cfg.lane_modes.iter().filter(|m| **m != ReservedLaneMode::Off) {
                let table = compare(&rows, testbed, los, mode)?;
                let stem = format!("compare_{}_{}_{}", testbed_stem(testbed), los, mode_stem(mode));
                emit_report(&table, formats, &dir, &stem)?;
                match crossover(&table) {
                    Some(mp) => println!("{testbed} {los} {mode}: crossover at mp = {mp}"),
                    None => println!("{testbed} {los} {mode}: no crossover"),
                }
            }
        }
    }
    Ok(())
}

fn cmd_compare(
    matrix: &Path,
    testbed: &str,
    los: LosClass,
    mode: ReservedLaneMode,
    out: Option<&Path>,
    formats: &[ReportFormat],
) -> Result<(), Failure> {
    let rows: Vec<ResultRow> = read_rows(matrix).map_err(|e| Failure::from(e).in_file(matrix))?;
    let table = compare(&rows, testbed, los, mode)?;
    match out {
        Some(dir) => {
            let stem = format!("compare_{}_{}_{}", testbed_stem(testbed), los, mode_stem(mode));
            for p in emit_report(&table, formats, dir, &stem)? {
                eprintln!("wrote {}", p.display());
            }
        }
        None => {
            let mut w = csv::Writer::from_writer(io::stdout());
            for r in &table {
                w.serialize(r).map_err(|e| Failure::Runtime(e.to_string()))?;
            }
            w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
        }
    }
    match crossover(&table) {
        Some(mp) => eprintln!("crossover at mp = {mp}"),
        None => eprintln!("no crossover"),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileKind {
    Corridor,
    Scenario,
    Sweep,
}

fn kind_of(path: &Path, text: &str) -> FileKind {
    if path.extension().is_some_and(|e| e == "corridor") {
        return FileKind::Corridor;
    }
    let keys: Vec<String> = text
        .parse::<toml::Table>()
        .map(|t| t.keys().cloned().collect())
        .unwrap_or_default();
    let has = |k: &str| keys.iter().any(|x| x == k);
    if has("intersection") || has("link") || has("name") {
        FileKind::Corridor
    } else if has("los") || has("mp") || has("corridor") {
        FileKind::Scenario
    } else {
        FileKind::Sweep
    }
}

fn cmd_validate(files: &[PathBuf]) -> Result<(), Failure> {
    let mut failed = 0;
    for path in files {
        let outcome = fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|text| {
                let kind = kind_of(path, &text);
                let checked = match kind {
                    FileKind::Corridor => Corridor::parse(&text).map(|_| ()).map_err(|e| e.to_string()),
                    FileKind::Scenario => ScenarioConfig::parse(&text)
                        .map_err(|e| e.to_string())
                        .and_then(|c| Corridor::resolve(&c.corridor).map(|_| ()).map_err(|e| e.to_string())),
                    FileKind::Sweep => SweepConfig::parse(&text).map(|_| ()).map_err(|e| e.to_string()),
                };
                checked.map(|()| kind)
            });
        match outcome {
            Ok(kind) => println!("{}: ok ({})", path.display(), format!("{kind:?}").to_lowercase()),
            Err(m) => {
                println!("{}: {m}", path.display());
                failed += 1;
            }
        }
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Invalid(format!("{failed} of {} files failed validation", files.len())))
    }
}

impl Failure {
    fn in_file(self, path: &Path) -> Self {
        match self {
            Failure::Invalid(m) => Failure::Invalid(format!("{}: {m}", path.display())),
            Failure::Runtime(m) => Failure::Runtime(format!("{}: {m}", path.display())),
        }
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display()))),
        None => io::stdout().write_all(bytes).map_err(|e| Failure::Runtime(e.to_string())),
    }
}

fn testbed_stem(testbed: &str) -> String {
    Path::new(testbed)
        .file_stem()
        .map_or_else(|| testbed.to_string(), |s| s.to_string_lossy().into_owned())
}

fn mode_stem(mode: ReservedLaneMode) -> String {
    match mode {
        ReservedLaneMode::Fixed(n) => format!("fixed{n}"),
        m => m.to_string(),
    }
}
