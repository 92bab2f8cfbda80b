//! Per-seed experiment execution and artifact layout:
//!
//! ```text
//! <out>/config.toml          resolved config (rerunnable as is)
//! <out>/results.csv          one row per successful seed
//! <out>/summary.json         mean, SEM and full-precision per-seed values
//! <out>/trace-seed<N>.csv    training curve, also written for failed seeds
//! <out>/model-seed<N>.json   fitted parameters
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use emflow_core::data::{self, cache, Dataset, Standardizer};
use emflow_core::flows::{ArchitectureSpec, FlowModel, StructureSpec};
use emflow_core::probprog::load_program;
use emflow_core::training::{self, write_trace_csv, RunResult, TrainFailure};
use emflow_core::{Error, Execution};

use crate::config::{ExperimentConfig, Kind, Loaded};
use crate::output::{write_results_csv, FailureRecord, SeedRecord, Summary};
use crate::CliError;

pub const CACHE_ENV: &str = "EMFLOW_CACHE_DIR";

pub struct Context {
    pub exec: Execution,
    pub out: PathBuf,
    /// Directory of the config file, for relative paths inside it.
    pub base: PathBuf,
    pub cache: Option<PathBuf>,
    /// Also write generated datasets as CSV.
    pub csv: bool,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig, out: Option<PathBuf>, base: PathBuf, exec: Execution) -> Self {
        let out = out
            .or_else(|| cfg.out.as_ref().map(|o| base.join(o)))
            .unwrap_or_else(|| PathBuf::from("runs").join(cfg.name()));
        let cache = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        Self { exec, out, base, cache, csv: false }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// The architecture with its structure file resolved and the seed applied.
fn architecture(cfg: &ExperimentConfig, ctx: &Context, seed: u64) -> emflow_core::Result<ArchitectureSpec> {
    let mut spec = cfg.architecture.clone().ok_or_else(|| Error::Config("missing [architecture]".into()))?;
    if let Some(p) = &cfg.program {
        let graph = load_program(&ctx.base.join(p))?;
        spec.structure = StructureSpec::Program { graph };
    }
    Ok(spec.with_seed(seed))
}

fn dataset(cfg: &ExperimentConfig, ctx: &Context, n: usize, seed: u64) -> emflow_core::Result<Dataset> {
    let spec = cfg.dataset.as_ref().ok_or_else(|| Error::Config("missing [dataset]".into()))?;
    match &ctx.cache {
        Some(dir) => cache::load_or_generate(dir, spec, n, seed),
        None => spec.generate(n, seed),
    }
}

/// Builds every model and problem once so bad configs fail before any
/// training starts.
fn preflight(cfg: &ExperimentConfig, ctx: &Context) -> Result<(), CliError> {
    let seed = cfg.seeds[0];
    match cfg.kind {
        Kind::Mle => {
            let dim = cfg.dataset.as_ref().map(|d| d.dim()).unwrap_or(0);
            FlowModel::assemble(&architecture(cfg, ctx, seed)?, dim)?;
        }
        Kind::Vi => {
            let problem = cfg.problem.as_ref().ok_or_else(|| CliError::Config("missing [problem]".into()))?.build(seed)?;
            training::vi_model(&architecture(cfg, ctx, seed)?, &problem)?;
        }
        _ => {}
    }
    Ok(())
}

fn mle_seed(cfg: &ExperimentConfig, ctx: &Context, seed: u64) -> Result<(FlowModel, RunResult), TrainFailure> {
    let train = dataset(cfg, ctx, cfg.data.train, seed)?;
    let test = dataset(cfg, ctx, cfg.data.test, data::test_seed(seed))?;
    let mut model = FlowModel::assemble(&architecture(cfg, ctx, seed)?, train.dim())?;
    let tc = training::TrainConfig { seed, ..cfg.train.clone() };
    if !cfg.data.standardize {
        let r = training::mle_train(&mut model, &train.samples, &test.samples, &tc, ctx.exec)?;
        return Ok((model, r));
    }
    // train on z-scored data and report densities in the original units
    let st = Standardizer::fit(&train)?;
    let shift = st.log_det();
    let fix = |mut r: RunResult| {
        r.final_metric -= shift;
        r.trace.iter_mut().for_each(|t| t.metric -= shift);
        r.extra.values_mut().for_each(|v| *v -= shift);
        r
    };
    match training::mle_train(&mut model, &st.apply(&train.samples), &st.apply(&test.samples), &tc, ctx.exec) {
        Ok(r) => Ok((model, fix(r))),
        Err(mut f) => {
            f.trace.iter_mut().for_each(|t| t.metric -= shift);
            Err(f)
        }
    }
}

fn vi_seed(cfg: &ExperimentConfig, ctx: &Context, seed: u64) -> Result<(FlowModel, RunResult), TrainFailure> {
    let problem = cfg.problem.as_ref().expect("validated").build(seed)?;
    let spec = architecture(cfg, ctx, seed)?;
    let tc = training::TrainConfig { seed, ..cfg.train.clone() };
    training::vi_fit(&spec, &problem, &tc, ctx.exec)
}

/// What a finished run reports back to the caller.
#[derive(Debug)]
pub struct Report {
    pub out: PathBuf,
    pub summary: Option<Summary>,
}

pub fn run(loaded: &Loaded, ctx: &Context) -> Result<Report, CliError> {
    let cfg = &loaded.cfg;
    preflight(cfg, ctx)?;
    std::fs::create_dir_all(&ctx.out).map_err(io_err(&ctx.out))?;
    let cfg_path = ctx.out.join("config.toml");
    std::fs::write(&cfg_path, loaded.resolved_text()).map_err(io_err(&cfg_path))?;
    match cfg.kind {
        Kind::GenData => gen_data(cfg, ctx).map(|_| Report { out: ctx.out.clone(), summary: None }),
        Kind::Mle | Kind::Vi => train_all(cfg, ctx),
        Kind::Verify => Err(CliError::Config("use the 'verify' subcommand for verification configs".into())),
    }
}

fn gen_data(cfg: &ExperimentConfig, ctx: &Context) -> Result<(), CliError> {
    for &seed in &cfg.seeds {
        for (split, n, s) in [("train", cfg.data.train, seed), ("test", cfg.data.test, data::test_seed(seed))] {
            let d = dataset(cfg, ctx, n, s)?;
            let bin = cache::save(&ctx.out, &d, s)?;
            if ctx.csv {
                cache::export_csv(&bin.with_extension("csv"), &d.samples)?;
            }
            eprintln!("seed {seed} {split}: {} x {} -> {}", d.len(), d.dim(), bin.display());
        }
    }
    Ok(())
}

fn train_all(cfg: &ExperimentConfig, ctx: &Context) -> Result<Report, CliError> {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut metric = if cfg.kind == Kind::Mle { "nll" } else { "neg_elbo" }.to_string();
    for &seed in &cfg.seeds {
        let t = Instant::now();
        let outcome = match cfg.kind {
            Kind::Mle => mle_seed(cfg, ctx, seed),
            _ => vi_seed(cfg, ctx, seed),
        };
        let trace_path = ctx.out.join(format!("trace-seed{seed}.csv"));
        match outcome {
            Ok((model, r)) => {
                write_trace_csv(&r.trace, &trace_path)?;
                model.save(&ctx.out.join(format!("model-seed{seed}.json")))?;
                eprintln!("seed {seed}: {} {:.6} ({:.1} s)", r.metric_name, r.final_metric, t.elapsed().as_secs_f64());
                metric = r.metric_name.clone();
                runs.push(SeedRecord::from_result(seed, &r));
            }
            Err(f) => {
                write_trace_csv(&f.trace, &trace_path)?;
                eprintln!("seed {seed}: {f}");
                failures.push(FailureRecord { seed, iteration: f.iteration, error: f.error.to_string() });
            }
        }
    }
    write_results_csv(&ctx.out.join("results.csv"), &metric, &runs)?;
    let summary = Summary::new(cfg.name(), cfg.kind.as_str(), &metric, runs, failures);
    summary.write(&ctx.out.join("summary.json"))?;
    if !summary.failures.is_empty() {
        let seeds: Vec<String> = summary.failures.iter().map(|f| f.seed.to_string()).collect();
        return Err(CliError::Training(format!(
            "{} of {} seed(s) failed ({}); partial results in {}",
            seeds.len(),
            cfg.seeds.len(),
            seeds.join(", "),
            ctx.out.display()
        )));
    }
    Ok(Report { out: ctx.out.clone(), summary: Some(summary) })
}
