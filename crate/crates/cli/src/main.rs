//! `emflow`: generate data, fit flows, compare runs and run the invariant
//! suite.
//!
//! Exit codes: 0 success, 1 I/O trouble or failed verification, 2 config
//! error or missing artifact, 3 training failure (partial artifacts kept).

mod compare;
mod config;
mod output;
mod presets;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emflow_core::checks;
use emflow_core::Execution;

use config::Kind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0} check(s) failed")]
    Verify(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::MissingArtifact(_) => 2,
            CliError::Training(_) => 3,
            CliError::Io(_) | CliError::Verify(_) => 1,
        }
    }
}

impl From<emflow_core::Error> for CliError {
    fn from(e: emflow_core::Error) -> Self {
        use emflow_core::Error as E;
        match e {
            E::MissingArtifact(p) => CliError::MissingArtifact(p),
            E::Io(m) => CliError::Io(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "emflow", version, about = "Embedded-model flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in experiment preset (the files in presets/).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Seed to run; repeat for several. Replaces the config's seed list.
    #[arg(long = "seed", value_name = "N")]
    seeds: Vec<u64>,
    /// Output directory (default: runs/<name>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Set a config value by dotted path, e.g. train.lr=1e-3.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run every computation on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test datasets for each seed.
    GenData {
        #[command(flatten)]
        args: RunArgs,
        /// Also write each dataset as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Fit a density model by maximum likelihood.
    Train(RunArgs),
    /// Fit a surrogate posterior by variational inference.
    Vi(RunArgs),
    /// Build a datasets x architectures table from finished runs.
    Compare {
        /// Table spec file.
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Directory for the table CSV (default: the spec's `output`, or
        /// next to the spec).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite and report pass/fail counts.
    Verify {
        /// Include the reduced-scale training trend checks (minutes).
        #[arg(long)]
        slow: bool,
        /// Run only these check numbers.
        #[arg(long = "only", value_name = "ID")]
        only: Vec<u32>,
        #[arg(long)]
        sequential: bool,
    },
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn run_experiment(args: RunArgs, expected: Kind, csv: bool) -> Result<(), CliError> {
    let text = config::source_text(args.config.as_deref(), args.preset.as_deref())?;
    let loaded = config::load(&text, &args.overrides, &args.seeds)?;
    if loaded.cfg.kind != expected {
        return Err(CliError::Config(format!(
            "config kind is '{}' but the subcommand runs '{}'",
            loaded.cfg.kind.as_str(),
            expected.as_str()
        )));
    }
    let base = args
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut ctx = run::Context::new(&loaded.cfg, args.out, base, execution(args.sequential));
    ctx.csv = csv;
    let report = run::run(&loaded, &ctx)?;
    if let Some(s) = &report.summary {
        let mean = s.mean.map_or("n/a".into(), output::sig6);
        let sem = s.sem.map_or("n/a".into(), output::sig6);
        println!("{}: {} = {mean} ± {sem} over {} seed(s)", s.name, s.metric, s.n);
    }
    println!("artifacts in {}", report.out.display());
    Ok(())
}

fn run_compare(spec_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec = compare::parse(&text)?;
    let base = spec_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let table = compare::build(&spec, &base)?;
    let csv = table.to_csv()?;
    let stem = spec_path.file_stem().map_or("table".into(), |s| s.to_string_lossy().into_owned());
    let file = format!("{stem}.csv");
    let target = match (out, &spec.output) {
        (Some(dir), _) => dir.join(file),
        (None, Some(p)) => base.join(p),
        (None, None) => base.join(file),
    };
    if let Some(dir) = target.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(e.to_string()))?;
    }
    std::fs::write(&target, &csv).map_err(|e| CliError::Io(format!("{}: {e}", target.display())))?;
    print!("{csv}");
    println!("table written to {}", target.display());
    Ok(())
}

fn run_verify(slow: bool, only: &[u32], exec: Execution) -> Result<(), CliError> {
    let suite: Vec<_> = checks::suite()
        .into_iter()
        .filter(|c| if only.is_empty() { slow || !c.slow } else { only.contains(&c.id) })
        .collect();
    if suite.is_empty() {
        return Err(CliError::Config("no checks selected".into()));
    }
    let mut failed = 0;
    for c in &suite {
        let o = c.run(exec);
        let tag = if o.passed { "PASS" } else { "FAIL" };
        failed += (!o.passed) as usize;
        println!("{tag} C{} {}: {} ({:.1} s)", c.id, c.title, o.detail, o.seconds);
    }
    println!("{} passed, {failed} failed", suite.len() - failed);
    if failed > 0 {
        return Err(CliError::Verify(failed));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { args, csv } => run_experiment(args, Kind::GenData, csv),
        Command::Train(args) => run_experiment(args, Kind::Mle, false),
        Command::Vi(args) => run_experiment(args, Kind::Vi, false),
        Command::Compare { config, out } => run_compare(&config, out),
        Command::Verify { slow, only, sequential } => run_verify(slow, &only, execution(sequential)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("emflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
