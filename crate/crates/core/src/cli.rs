//! Command-line driver: `fit`, `decide`, `eval` and `sweep` over manifests.
//!
//! Exit status is 0 on success, 1 for invalid flags or inputs and 2 for
//! failures while running. Diagnostics go to stderr (verbosity from
//! `TOT_LOG`); stdout carries only summary lines.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::backends::{self, load_manifest, read_feature_tensor, BackendSpec, ManifestRecord, OpenOptions, Split};
use crate::decision::{decide_batch, read_decisions, write_decisions, Confidence, DecisionRecord};
use crate::domain::{load_taxonomy, ClassId, ClassTaxonomy, ReducerKind, ToTConfig};
use crate::error::{Error, Result};
use crate::harness::{
    self, check_mode, final_answer_counts, labelled, write_report, Breakdown, EvalMode, ReportFormat, SweepAxis,
    SweepInputs, SweepPoint, SweepReport,
};
use crate::symbolizer::{self, load_model, save_model, SymbolModel};

#[derive(Debug, Parser)]
#[command(name = "tot", version, about = "Two-out-of-Three selective prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the symbol model on training feature maps.
    Fit(FitArgs),
    /// Run the decision rule on every test record of a manifest.
    Decide(DecideArgs),
    /// Score a decisions file against manifest labels.
    Eval(EvalArgs),
    /// Repeat decide + eval over blur sigmas or top-n values.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Manifest whose train records supply feature tensors.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Number of clusters.
    #[arg(long, default_value_t = 1000)]
    pub k: usize,
    /// Reduced dimension.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long)]
    pub seed: u64,
    /// Training examples sampled per class.
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, value_enum, default_value_t = ReducerArg::Pca)]
    pub reducer: ReducerArg,
    /// Standardize each column separately instead of one global scale.
    #[arg(long)]
    pub per_column: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReducerArg {
    Pca,
    Identity,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Fitted model file; optional when the backend scripts third predictions.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Taxonomy file; defaults to the one stored in the model.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// `file`, `mock:<scenario.json>` or `exec:<command line>`.
    #[arg(long, default_value = "file")]
    pub backend: String,
    /// ROI expansion in pixels.
    #[arg(long)]
    pub delta: Option<u32>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Seconds to wait for each external backend reply.
    #[arg(long, default_value_t = 120)]
    pub timeout: u64,
}

#[derive(Debug, Args)]
pub struct DecideArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Gaussian blur sigma for second predictions.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Number of third predictions to consider.
    #[arg(long)]
    pub topn: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub decisions: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: EvalMode,
    /// Report path; `.csv` writes CSV, anything else JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Count only low-confidence answers in the final accuracy.
    #[arg(long)]
    pub low_only: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_parser = parse_axis)]
    pub axis: SweepAxis,
    /// Comma-separated, strictly increasing axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Defaults to the records' adversarial flag.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<EvalMode>,
    /// Blur sigma held fixed while sweeping top-n.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Top-n held fixed while sweeping sigma.
    #[arg(long)]
    pub topn: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub low_only: bool,
}

fn parse_mode(s: &str) -> std::result::Result<EvalMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_axis(s: &str) -> std::result::Result<SweepAxis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Installs the stderr logger; safe to call more than once.
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("TOT_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Decide(a) => cmd_decide(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn flag_error(flag: &str, message: &str) -> Error {
    Error::InvalidConfig(format!("--{flag} {message}"))
}

fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(flag_error("jobs", "must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {jobs} workers: {e}")))
}

/// Seeded per-class sample of record indices. Classes are visited in id
/// order; the chosen indices keep manifest order within each class.
pub fn sample_per_class(records: &[&ManifestRecord], per_class: usize, seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.label_fine).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for (class, mut idx) in by_class {
        if idx.len() < per_class {
            warn!(
                "class {}: only {} training examples available, fewer than --per-class {per_class}; using all",
                class.0,
                idx.len()
            );
        }
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        idx.sort_unstable();
        chosen.extend(idx);
    }
    chosen
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    if a.k == 0 {
        return Err(flag_error("k", "must be at least 1"));
    }
    if a.dim == 0 {
        return Err(flag_error("dim", "must be at least 1"));
    }
    if a.per_class == 0 {
        return Err(flag_error("per-class", "must be at least 1"));
    }
    let pool = worker_pool(a.jobs)?;
    let taxonomy = load_taxonomy(&a.taxonomy)?;
    let manifest = load_manifest(&a.train)?;
    manifest.validate_labels(&taxonomy)?;
    let train: Vec<&ManifestRecord> = manifest.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Validation(format!("{}: no train records", a.train.display())));
    }
    if let Some(r) = train.iter().find(|r| r.feature_path.is_none()) {
        return Err(Error::Schema {
            record: r.id.clone(),
            message: "train records need a feature_path".into(),
        });
    }
    let config = ToTConfig {
        k: a.k,
        reducer: match a.reducer {
            ReducerArg::Pca => ReducerKind::Pca,
            ReducerArg::Identity => ReducerKind::Identity,
        },
        reducer_dim: a.dim,
        per_column_standardize: a.per_column,
        seed: a.seed,
        train_per_class: a.per_class,
        ..ToTConfig::default()
    };
    config.validate()?;

    let chosen = sample_per_class(&train, a.per_class, a.seed);
    info!("fitting on {} of {} train records", chosen.len(), train.len());
    let maps = pool.install(|| {
        chosen
            .par_iter()
            .map(|&i| {
                let r = train[i];
                let path = r.features().expect("checked above");
                Ok((read_feature_tensor(&path)?, r.label_fine))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let model = pool.install(|| -> Result<SymbolModel> {
        let arrays = symbolizer::pool_all(&maps)?;
        symbolizer::fit(&arrays, &taxonomy, &config)
    })?;
    save_model(&model, &a.out)?;
    let s = &model.summary;
    println!(
        "fit: examples={} rows_kept={} rows_removed={} k={} objective={:.6} iterations={} -> {}",
        s.examples,
        s.rows_kept,
        s.rows_removed,
        model.k(),
        s.objective,
        s.iterations,
        a.out.display()
    );
    Ok(())
}

/// Everything `decide` and `sweep` share once flags are resolved.
struct Session {
    taxonomy: ClassTaxonomy,
    model: Option<SymbolModel>,
    manifest: backends::Manifest,
    backends: backends::Backends,
    config: ToTConfig,
}

impl Session {
    fn open(a: &RunArgs) -> Result<Self> {
        if a.jobs == 0 {
            return Err(flag_error("jobs", "must be at least 1"));
        }
        if a.timeout == 0 {
            return Err(flag_error("timeout", "must be at least 1 second"));
        }
        let spec: BackendSpec = a.backend.parse()?;
        let model = a.model.as_deref().map(load_model).transpose()?;
        let taxonomy = match (&a.taxonomy, &model) {
            (Some(path), model) => {
                let t = load_taxonomy(path)?;
                if let Some(m) = model {
                    if m.taxonomy.to_text() != t.to_text() {
                        return Err(Error::Validation(format!(
                            "{} differs from the taxonomy stored in the model",
                            path.display()
                        )));
                    }
                }
                t
            }
            (None, Some(m)) => m.taxonomy.clone(),
            (None, None) => {
                return Err(Error::InvalidConfig(
                    "--taxonomy is required when no --model is given".into(),
                ));
            }
        };
        let mut config = model.as_ref().map(|m| m.config.clone()).unwrap_or_default();
        if let Some(d) = a.delta {
            config.delta = d;
        }
        let manifest = load_manifest(&a.manifest)?;
        manifest.validate_labels(&taxonomy)?;
        let backends = backends::open(
            &spec,
            &taxonomy,
            OpenOptions {
                connections: a.jobs,
                timeout: Duration::from_secs(a.timeout),
            },
        )?;
        Ok(Self {
            taxonomy,
            model,
            manifest,
            backends,
            config,
        })
    }

    fn test_records(&self) -> Result<Vec<&ManifestRecord>> {
        let records: Vec<&ManifestRecord> = self.manifest.split(Split::Test).collect();
        if records.is_empty() {
            return Err(Error::Validation("manifest has no test records".into()));
        }
        Ok(records)
    }
}

fn apply_overrides(config: &mut ToTConfig, sigma: Option<f64>, topn: Option<usize>) -> Result<()> {
    if let Some(s) = sigma {
        if !(s.is_finite() && s >= 0.0) {
            return Err(flag_error("sigma", "must be a finite non-negative number"));
        }
        config.blur_sigma = s;
    }
    if let Some(n) = topn {
        if n == 0 {
            return Err(flag_error("topn", "must be at least 1"));
        }
        config.top_n = n;
    }
    config.validate()
}

pub fn cmd_decide(a: &DecideArgs) -> Result<()> {
    let mut session = Session::open(&a.run)?;
    apply_overrides(&mut session.config, a.sigma, a.topn)?;
    let records = session.test_records()?;
    let outcomes = decide_batch(
        &records,
        &session.taxonomy,
        session.model.as_ref(),
        &session.backends,
        &session.config,
        a.run.jobs,
    )?;
    let lines: Vec<DecisionRecord> = records
        .iter()
        .zip(&outcomes)
        .map(|(r, o)| DecisionRecord::new(&r.id, o, &session.config))
        .collect();
    write_decisions(&lines, &a.out)?;
    let high = outcomes.iter().filter(|o| o.confidence == Confidence::High).count();
    let nulls = outcomes.iter().filter(|o| o.final_answer.is_none()).count();
    println!(
        "decide: records={} high={} low={} null={} sigma={} top_n={} -> {}",
        outcomes.len(),
        high,
        outcomes.len() - high,
        nulls,
        session.config.blur_sigma,
        session.config.top_n,
        a.out.display()
    );
    Ok(())
}

fn summary_line(report: &SweepReport) -> String {
    report
        .points
        .iter()
        .map(|p| {
            let ratios: Vec<String> = p
                .breakdown
                .fields()
                .iter()
                .zip(p.breakdown.counts())
                .map(|(f, c)| format!("{f}={:.6}", c as f64 / p.breakdown.total().max(1) as f64))
                .collect();
            let acc = p.accuracy.ratio().map_or("none".to_string(), |r| format!("{r:.6}"));
            format!("value={} {} accuracy={acc}", p.value, ratios.join(" "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let decisions = read_decisions(&a.decisions)?;
    if decisions.is_empty() {
        return Err(Error::Validation(format!("{}: no decisions", a.decisions.display())));
    }
    let by_id: HashMap<&str, &ManifestRecord> = manifest.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut records = Vec::with_capacity(decisions.len());
    for d in &decisions {
        let r = by_id.get(d.id.as_str()).ok_or_else(|| {
            Error::Validation(format!(
                "decision for unknown id `{}` (not in {})",
                d.id,
                a.manifest.display()
            ))
        })?;
        records.push(*r);
    }
    let decided: std::collections::HashSet<&str> = decisions.iter().map(|d| d.id.as_str()).collect();
    if let Some(missing) = manifest.split(Split::Test).find(|r| !decided.contains(r.id.as_str())) {
        return Err(Error::Validation(format!(
            "test record `{}` has no decision",
            missing.id
        )));
    }
    check_mode(&records, a.mode)?;
    let sigma = decisions[0].sigma;
    if decisions
        .iter()
        .any(|d| d.sigma != sigma || d.top_n != decisions[0].top_n)
    {
        return Err(Error::Validation(
            "decisions mix several sigma or top-n settings".into(),
        ));
    }
    let pairs = labelled(&records, decisions.iter().map(DecisionRecord::outcome).collect());
    let report = SweepReport {
        axis: SweepAxis::Sigma,
        points: vec![SweepPoint {
            value: sigma,
            breakdown: Breakdown::evaluate(a.mode, &pairs),
            accuracy: final_answer_counts(&pairs, a.low_only),
        }],
    };
    write_report(&report, &a.out, ReportFormat::from_path(&a.out))?;
    println!("eval: records={} {}", pairs.len(), summary_line(&report));
    Ok(())
}

fn infer_mode(records: &[&ManifestRecord]) -> Result<EvalMode> {
    let adversarial = records.iter().filter(|r| r.adversarial).count();
    match adversarial {
        0 => Ok(EvalMode::Clean),
        n if n == records.len() => Ok(EvalMode::Adversarial),
        _ => Err(Error::Validation(
            "test records mix clean and adversarial inputs; pass --mode or split the manifest".into(),
        )),
    }
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let mut session = Session::open(&a.run)?;
    apply_overrides(&mut session.config, a.sigma, a.topn)?;
    harness::validate_sweep_values(a.axis, &a.values)?;
    let records = session.test_records()?;
    let mode = match a.mode {
        Some(m) => {
            check_mode(&records, m)?;
            m
        }
        None => infer_mode(&records)?,
    };
    let inputs = SweepInputs {
        records: &records,
        taxonomy: &session.taxonomy,
        model: session.model.as_ref(),
        backends: &session.backends,
        mode,
        jobs: a.run.jobs,
        low_only: a.low_only,
    };
    let report = harness::sweep(&inputs, &session.config, a.axis, &a.values)?;
    write_report(&report, &a.out, ReportFormat::from_path(&a.out))?;
    println!("sweep: points={} -> {}", report.points.len(), a.out.display());
    println!("{}", summary_line(&report));
    Ok(())
}
