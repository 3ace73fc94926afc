//! `ulam-lab` command-line runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use ulam_lab::config::ExperimentConfig;
use ulam_lab::experiments;
use ulam_lab::report::{curves_csv, ExperimentReport, CONFIG_ERROR_EXIT};
use ulam_lab::{ExperimentKind, LabError};

#[derive(Parser)]
#[command(name = "ulam-lab", version, about = "Stability experiments for the unified m-th order functional equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monomial and classical residual checks across degrees and scales.
    CheckFunceq(RunArgs),
    /// Algebra and module axiom reports.
    Axioms(RunArgs),
    /// A single fixed-point extraction with diagnostics.
    Extract(RunArgs),
    /// Derivation or sigma-homomorphism stability pipeline.
    Stability(RunArgs),
    /// Superstability audit.
    Superstability(RunArgs),
    /// Every `*.json` config in a directory.
    Batch(BatchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Seed override; also read from ULAM_LAB_SEED.
    #[arg(long, env = "ULAM_LAB_SEED")]
    seed: Option<u64>,
    /// Number of grid shells.
    #[arg(long)]
    grid_shells: Option<usize>,
    /// Iteration depth of the corrector.
    #[arg(long)]
    depth: Option<u32>,
}

#[derive(Args, Clone)]
struct Output {
    /// Directory receiving report.json, curves.csv and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// What to print on stdout: the report or the curve table.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Print nothing on stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON). A built-in reference is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct BatchArgs {
    /// Directory of experiment configs.
    dir: PathBuf,
    /// Maximum number of experiments run at once.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    output: Output,
}

/// Record of one run's artifacts. Written after everything it lists.
#[derive(Serialize)]
struct RunManifest {
    config_path: Option<PathBuf>,
    output_dir: PathBuf,
    artifacts: Vec<PathBuf>,
    exit_status: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct BatchManifest {
    output_dir: PathBuf,
    runs: Vec<RunManifest>,
    exit_status: i32,
}

#[derive(Debug)]
enum CliError {
    Lab(LabError),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lab(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        CliError::Lab(e)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::CheckFunceq(args) => single(args, &[ExperimentKind::FunceqCheck]),
        Command::Axioms(args) => single(args, &[ExperimentKind::Axioms]),
        Command::Extract(args) => single(args, &[ExperimentKind::Extract]),
        Command::Stability(args) => single(
            args,
            &[ExperimentKind::DerivationStability, ExperimentKind::SigmaHomStability],
        ),
        Command::Superstability(args) => single(args, &[ExperimentKind::Superstability]),
        Command::Batch(args) => batch(args),
    };
    ExitCode::from(code as u8)
}

fn default_config(kind: ExperimentKind) -> Result<ExperimentConfig, CliError> {
    Ok(match kind {
        ExperimentKind::FunceqCheck => ExperimentConfig::reference_funceq(),
        ExperimentKind::Axioms => ExperimentConfig::reference_axioms(2),
        ExperimentKind::DerivationStability => ExperimentConfig::reference_derivation(),
        ExperimentKind::Superstability => ExperimentConfig::reference_superstability(0.0),
        _ => return Err(LabError::Config(format!("{} needs --config", kind.name())).into()),
    })
}

fn load(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    apply(cfg, overrides)
}

fn apply(mut cfg: ExperimentConfig, o: &Overrides) -> Result<ExperimentConfig, CliError> {
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(shells) = o.grid_shells {
        cfg.grid.shells = shells;
    }
    if let Some(depth) = o.depth {
        cfg.depth = depth;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn single(args: RunArgs, kinds: &[ExperimentKind]) -> i32 {
    let out = args.output.out.clone();
    let result = (|| {
        let cfg = match &args.config {
            Some(path) => load(path, &args.overrides)?,
            None => apply(default_config(kinds[0])?, &args.overrides)?,
        };
        if !kinds.contains(&cfg.kind) {
            return Err(LabError::Config(format!("config kind {} does not match this subcommand", cfg.kind.name())).into());
        }
        Ok(experiments::run(&cfg)?)
    })();
    match result {
        Ok(report) => {
            print_report(&report, &args.output);
            let code = report.exit_code();
            if let Some(dir) = out {
                match write_run(&dir, args.config.clone(), Ok(&report)) {
                    Ok(manifest) => {
                        if let Err(e) = write_json(&dir.join("manifest.json"), &manifest) {
                            eprintln!("error: {e}");
                            return CONFIG_ERROR_EXIT;
                        }
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        return CONFIG_ERROR_EXIT;
                    }
                }
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(dir) = out {
                if let Ok(manifest) = write_run(&dir, args.config.clone(), Err(&e)) {
                    let _ = write_json(&dir.join("manifest.json"), &manifest);
                }
            }
            CONFIG_ERROR_EXIT
        }
    }
}

fn print_report(report: &ExperimentReport, output: &Output) {
    if output.quiet {
        return;
    }
    match output.format {
        Format::Json => println!("{}", report.to_json()),
        Format::Csv => print!("{}", curves_csv(report.curve())),
    }
}

/// Writes the report and curve files of one run into `dir` and returns the
/// manifest describing them; the caller writes the manifest.
fn write_run(
    dir: &Path,
    config_path: Option<PathBuf>,
    result: Result<&ExperimentReport, &CliError>,
) -> Result<RunManifest, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut artifacts = Vec::new();
    let (exit_status, error) = match result {
        Ok(report) => {
            let path = dir.join("report.json");
            fs::write(&path, report.to_json()).map_err(|e| io_err(&path, e))?;
            artifacts.push(path);
            if report.curve().next().is_some() {
                let path = dir.join("curves.csv");
                fs::write(&path, curves_csv(report.curve())).map_err(|e| io_err(&path, e))?;
                artifacts.push(path);
            }
            (report.exit_code(), None)
        }
        Err(e) => (CONFIG_ERROR_EXIT, Some(e.to_string())),
    };
    Ok(RunManifest {
        config_path,
        output_dir: dir.to_path_buf(),
        artifacts,
        exit_status,
        error,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Combined exit status of a batch: config errors first, then divergence,
/// failed claims and violated hypotheses.
fn batch_status(codes: impl IntoIterator<Item = i32>) -> i32 {
    let rank = |c: i32| match c {
        2 => 4,
        4 => 3,
        1 => 2,
        3 => 1,
        _ => 0,
    };
    codes.into_iter().max_by_key(|&c| rank(c)).filter(|&c| rank(c) > 0).unwrap_or(0)
}

fn batch(args: BatchArgs) -> i32 {
    let out = args.output.out.clone().unwrap_or_else(|| PathBuf::from("ulam-lab-out"));
    let mut configs: Vec<PathBuf> = match fs::read_dir(&args.dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) => {
            eprintln!("error: {}: {e}", args.dir.display());
            return CONFIG_ERROR_EXIT;
        }
    };
    configs.sort();
    if configs.is_empty() {
        eprintln!("error: no *.json configs in {}", args.dir.display());
        return CONFIG_ERROR_EXIT;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return CONFIG_ERROR_EXIT;
        }
    };
    let runs: Vec<RunManifest> = pool.install(|| {
        configs
            .par_iter()
            .map(|path| {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let dir = out.join(stem);
                let result = load(path, &args.overrides).and_then(|cfg| Ok(experiments::run(&cfg)?));
                if let Err(e) = &result {
                    eprintln!("error: {}: {e}", path.display());
                }
                write_run(&dir, Some(path.clone()), result.as_ref()).unwrap_or_else(|e| RunManifest {
                    config_path: Some(path.clone()),
                    output_dir: dir,
                    artifacts: Vec::new(),
                    exit_status: CONFIG_ERROR_EXIT,
                    error: Some(e.to_string()),
                })
            })
            .collect()
    });
    let exit_status = batch_status(runs.iter().map(|r| r.exit_status));
    if !args.output.quiet {
        for r in &runs {
            let name = r.config_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            println!("{name}: exit {}", r.exit_status);
        }
    }
    let manifest = BatchManifest {
        output_dir: out.clone(),
        runs,
        exit_status,
    };
    if let Err(e) = write_json(&out.join("manifest.json"), &manifest) {
        eprintln!("error: {e}");
        return CONFIG_ERROR_EXIT;
    }
    exit_status
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_priority() {
        assert_eq!(batch_status([0, 3, 1]), 1);
        assert_eq!(batch_status([3, 4, 1]), 4);
        assert_eq!(batch_status([4, 2, 0]), 2);
        assert_eq!(batch_status([3, 0]), 3);
        assert_eq!(batch_status([0, 0]), 0);
    }
}
