//! `ppd`: simulate cohorts, fit interpretable behavior models, evaluate
//! target policies offline and summarise repeated experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ppd_core::behavior::{BehaviorModel, ModelType};
use ppd_core::data::{load_dataset, save_dataset, Dataset, Format, StateEncoder};
use ppd_core::harness::{
    evaluate_policy, fit_repeat, held_out_metrics, read_failures, read_rows, run_experiment, summarize, write_rows, write_summary,
    ExperimentConfig, FittedRepeat,
};
use ppd_core::policy::PolicyDescriptor;
use ppd_core::rng::derive_seed;
use ppd_core::sim::{ChronicConfig, EpisodicConfig, SimConfig, TruthManifest};

const BUNDLE_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "ppd", version, about = "Interpretable behavior cloning and off-policy evaluation of treatment policies")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed overriding the one in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file (simulator config for `simulate`, experiment config otherwise).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort and write it as JSONL (or CSV) plus a truth manifest.
    Simulate {
        #[arg(long, value_enum, default_value_t = SimKind::Chronic)]
        kind: SimKind,
        #[arg(long)]
        n_patients: Option<usize>,
    },
    /// Split a dataset, select and calibrate a behavior model, write a model bundle.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<ModelType>,
    },
    /// Evaluate target policies against a model bundle with importance sampling.
    Evaluate {
        /// Model bundle written by `fit`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Policy descriptor such as `mc:k=2`; repeatable. Defaults to the config's list.
        #[arg(long = "policy")]
        policies: Vec<PolicyDescriptor>,
        /// Use every trajectory in `--data`, not only the bundle's test split.
        #[arg(long)]
        all: bool,
    },
    /// Write the bundle's trees as DOT or JSON files.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Dot)]
        format: ExportFormat,
    },
    /// Summarise report rows into median / IQR per policy.
    Report {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        failures: Option<PathBuf>,
    },
    /// Run a full repeated experiment from a config.
    Run,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Chronic,
    Episodic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Dot,
    Json,
}

/// Everything `evaluate` needs to reproduce a fitted model.
#[derive(Serialize, Deserialize)]
struct ModelBundle {
    version: u32,
    model_type: ModelType,
    seed: u64,
    encoder: StateEncoder,
    model: BehaviorModel,
    /// Held-out trajectories of the fit split.
    test_ids: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::Simulate { kind, n_patients } => simulate(c, kind, n_patients),
        Command::Fit { data, model } => fit(c, &data, model),
        Command::Evaluate { model, data, policies, all } => evaluate(c, &model, &data, policies, all),
        Command::Export { model, format } => export(c, &model, format),
        Command::Report { rows, failures } => report(c, &rows, failures.as_deref()),
        Command::Run => run_config(c),
    }
}

fn experiment_config(c: &Common) -> Result<ExperimentConfig> {
    match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load(path: &Path) -> Result<Dataset> {
    let format = Format::from_path(path)?;
    load_dataset(path, format).with_context(|| format!("reading {}", path.display()))
}

fn simulate(c: &Common, kind: SimKind, n_patients: Option<usize>) -> Result<()> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SimConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => match kind {
            SimKind::Chronic => SimConfig::Chronic(ChronicConfig::default()),
            SimKind::Episodic => SimConfig::Episodic(EpisodicConfig::default()),
        },
    };
    if let Some(s) = c.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(n) = n_patients {
        match &mut cfg {
            SimConfig::Chronic(x) => x.n_patients = n,
            SimConfig::Episodic(x) => x.n_patients = n,
        }
    }
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("data.jsonl"));
    let ds = cfg.generate()?;
    save_dataset(&ds, &out, Format::from_path(&out)?)?;
    let manifest = out.with_extension("truth.json");
    fs::write(&manifest, serde_json::to_string_pretty(&TruthManifest::new(&cfg)?)?)?;
    println!("wrote {} trajectories to {} and {}", ds.len(), out.display(), manifest.display());
    Ok(())
}

fn fit(c: &Common, data: &Path, model: Option<ModelType>) -> Result<()> {
    let mut cfg = experiment_config(c)?;
    if let Some(m) = model {
        cfg.model = m;
    }
    let ds = load(data)?;
    let seed = c.seed.unwrap_or_else(|| derive_seed(cfg.master_seed, 0));
    let fitted = fit_repeat(&cfg, &ds, None, seed)?;
    let mut test_ids: Vec<String> = fitted.test.iter().map(|r| r.trajectory_id.clone()).collect();
    test_ids.dedup();
    let bundle = ModelBundle { version: BUNDLE_VERSION, model_type: cfg.model, seed, encoder: fitted.encoder, model: fitted.model, test_ids };
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    fs::write(&out, serde_json::to_string(&bundle)?)?;
    println!(
        "{} model written to {} (test AUROC {:.4}, SCE {:.2}%)",
        cfg.model,
        out.display(),
        fitted.test_auroc,
        fitted.test_sce
    );
    Ok(())
}

fn read_bundle(path: &Path) -> Result<ModelBundle> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let bundle: ModelBundle = serde_json::from_str(&text).with_context(|| format!("parsing model bundle {}", path.display()))?;
    if bundle.version != BUNDLE_VERSION {
        bail!("model bundle version {} is not supported (expected {BUNDLE_VERSION})", bundle.version);
    }
    Ok(bundle)
}

fn evaluate(c: &Common, model: &Path, data: &Path, policies: Vec<PolicyDescriptor>, all: bool) -> Result<()> {
    let cfg = experiment_config(c)?;
    let policies = if policies.is_empty() { cfg.policies.clone() } else { policies };
    let bundle = read_bundle(model)?;
    for d in &policies {
        d.validate(bundle.model.n_actions()).with_context(|| format!("policy `{d}`"))?;
    }
    let mut ds = load(data)?;
    if !all {
        let keep: std::collections::HashSet<&str> = bundle.test_ids.iter().map(String::as_str).collect();
        ds = ds.with_trajectories(ds.trajectories.iter().filter(|t| keep.contains(t.id.as_str())).cloned().collect());
        if ds.is_empty() {
            bail!("none of the bundle's test trajectories are in {}; pass --all to evaluate every trajectory", data.display());
        }
    }
    let test = bundle.encoder.records(&ds)?;
    let (test_auroc, test_sce) = held_out_metrics(&bundle.model, &test)?;
    let fitted = FittedRepeat {
        seed: c.seed.unwrap_or(bundle.seed),
        encoder: bundle.encoder,
        model: bundle.model,
        train: vec![],
        validation: vec![],
        test,
        test_auroc,
        test_sce,
    };
    let rows = policies
        .iter()
        .map(|d| evaluate_policy(&cfg, &fitted, d, 0).with_context(|| format!("policy `{d}`")))
        .collect::<Result<Vec<_>>>()?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("report.csv"));
    write_rows(&out, &rows)?;
    for r in &rows {
        println!("{:<28} value {:>10.4}  ess {:>8.1}  n {}", r.policy, r.value, r.ess, r.n);
    }
    Ok(())
}

fn export(c: &Common, model: &Path, format: ExportFormat) -> Result<()> {
    let bundle = read_bundle(model)?;
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("trees"));
    fs::create_dir_all(&dir)?;
    for (name, tree) in bundle.model.trees() {
        let (ext, text) = match format {
            ExportFormat::Dot => ("dot", tree.to_dot()),
            ExportFormat::Json => ("json", tree.to_json()?),
        };
        let path = dir.join(format!("{name}.{ext}"));
        fs::write(&path, text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn report(c: &Common, rows: &Path, failures: Option<&Path>) -> Result<()> {
    let rows = read_rows(rows).with_context(|| format!("reading {}", rows.display()))?;
    let failures = match failures {
        Some(p) => read_failures(p)?,
        None => vec![],
    };
    let summary = summarize(&rows, &failures)?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("summary.csv"));
    write_summary(&out, &summary)?;
    for s in &summary {
        println!("{:<28} median {:>10.4}  IQR {:>8.4}  ESS {:>8.1}", s.policy, s.value_median, s.value_iqr(), s.ess_median);
    }
    Ok(())
}

fn run_config(c: &Common) -> Result<()> {
    let mut cfg = experiment_config(c)?;
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = Some(o.clone());
    }
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    cfg.output_dir = Some(out.clone());
    let base = c.config.as_deref().and_then(Path::parent);
    let report = run_experiment(&cfg, base)?;
    println!(
        "{} rows, {} failures written to {}",
        report.rows.len(),
        report.failures.len(),
        out.display()
    );
    Ok(())
}
