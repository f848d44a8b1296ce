//! Command-line interface: `synth`, `build-prototypes`, `evaluate`, `serve`.

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use protofix_core::{
    build_initial_prototypes, generate_synthetic, run_protocol_with_store, Budget, KMeansConfig,
    ProtocolConfig, StoreConfig, SyntheticConfig, DEFAULT_SHOTS,
};

use crate::config::{parse_budget, parse_list, FileConfig};
use crate::pemb::{read_embeddings, write_embeddings};
use crate::report::{emit_report, render, ReportFormat};
use crate::service::{serve, AppState, ServiceSettings, SessionRequest};
use crate::store_doc::{export_store, import_store};

#[derive(Debug, Parser)]
#[command(name = "protofix", version, about = "Few-shot error correction over embedding prototypes")]
pub struct Cli {
    /// TOML file whose keys mirror the long flag names; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded Gaussian-cluster dataset (.pemb + .meta.jsonl).
    Synth(SynthArgs),
    /// Run per-class k-means on the train split and write a store file.
    BuildPrototypes(BuildArgs),
    /// Run the few-shot correction protocol and report Acc_E / For.
    Evaluate(EvaluateArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub per_class_train: Option<usize>,
    #[arg(long)]
    pub per_class_val: Option<usize>,
    #[arg(long)]
    pub per_class_test: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Minimum pairwise cosine distance between class means.
    #[arg(long)]
    pub min_separation: Option<f64>,
    /// Output base path; writes `<out>.pemb` and `<out>.meta.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Positive integer or `unlimited`.
    #[arg(long)]
    pub budget: Option<String>,
    #[arg(long)]
    pub protect_server: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Initial store file. Either this or --train is required.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Build the initial store from this dataset instead of loading one.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Comma-separated, strictly increasing.
    #[arg(long)]
    pub shots: Option<String>,
    /// Comma-separated sampling seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// k-means seed when building from --train.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget: Option<String>,
    #[arg(long)]
    pub include_support: bool,
    #[arg(long)]
    pub protect_server: bool,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    /// Open a session from these files at startup.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget: Option<String>,
    #[arg(long)]
    pub protect_server: bool,
    #[arg(long)]
    pub open_class: bool,
    #[arg(long)]
    pub reveal_labels: bool,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Built UI bundle served under `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_UI_DIR: &str = "ui/dist";

fn required(value: Option<PathBuf>, flag: &str) -> anyhow::Result<PathBuf> {
    value.ok_or_else(|| anyhow!("--{flag} is required (flag or config file)"))
}

fn budget_of(flag: Option<String>, file: &FileConfig) -> anyhow::Result<Budget> {
    match (flag, &file.budget) {
        (Some(s), _) => parse_budget(&s).map_err(|e| anyhow!(e)),
        (None, Some(v)) => v.to_budget().map_err(|e| anyhow!(e)),
        (None, None) => Ok(Budget::Unlimited),
    }
}

fn list_of(
    flag: Option<String>,
    file: &Option<crate::config::ListValue>,
    name: &str,
) -> anyhow::Result<Option<Vec<u64>>> {
    let parsed = match (flag, file) {
        (Some(s), _) => Some(parse_list(&s)),
        (None, Some(v)) => Some(v.to_vec()),
        (None, None) => None,
    };
    parsed
        .transpose()
        .map_err(|e| anyhow!("--{name}: {e}"))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Synth(args) => synth(args, &file),
        Command::BuildPrototypes(args) => build(args, &file),
        Command::Evaluate(args) => evaluate(args, &file),
        Command::Serve(args) => serve_cmd(args, &file),
    }
}

fn synth(a: SynthArgs, f: &FileConfig) -> anyhow::Result<()> {
    let d = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        classes: a.classes.or(f.classes).unwrap_or(d.classes),
        dim: a.dim.or(f.dim).unwrap_or(d.dim),
        per_class_train: a.per_class_train.or(f.per_class_train).unwrap_or(d.per_class_train),
        per_class_val: a.per_class_val.or(f.per_class_val).unwrap_or(d.per_class_val),
        per_class_test: a.per_class_test.or(f.per_class_test).unwrap_or(d.per_class_test),
        sigma: a.sigma.or(f.sigma).unwrap_or(d.sigma),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        min_mean_separation: a.min_separation.or(f.min_separation).unwrap_or(d.min_mean_separation),
    };
    let out = required(a.out.or_else(|| f.out.clone()), "out")?;
    let dataset = generate_synthetic(&cfg)?;
    write_embeddings(&dataset, &out)?;
    eprintln!("wrote {} records ({} classes, dim {}) to {}", dataset.len(), cfg.classes, cfg.dim, out.display());
    Ok(())
}

fn build(a: BuildArgs, f: &FileConfig) -> anyhow::Result<()> {
    let train = required(a.train.or_else(|| f.train.clone()), "train")?;
    let out = required(a.out.or_else(|| f.out.clone()), "out")?;
    let kmeans = KMeansConfig {
        k: a.k.or(f.k).unwrap_or(3),
        seed: a.seed.or(f.seed).unwrap_or(0),
        ..Default::default()
    };
    let dataset = read_embeddings(&train)?;
    let store_cfg = StoreConfig {
        dim: dataset.dim(),
        budget: budget_of(a.budget, f)?,
        protect_server: a.protect_server || f.protect_server.unwrap_or(false),
    };
    let store = build_initial_prototypes(&dataset, &kmeans, store_cfg)?;
    export_store(&store, &out)?;
    eprintln!("wrote {} prototypes to {}", store.len(), out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs, f: &FileConfig) -> anyhow::Result<()> {
    let test_path = required(a.test.or_else(|| f.test.clone()), "test")?;
    let format = a.format.or(f.format).unwrap_or_default();
    let shots = list_of(a.shots, &f.shots, "shots")?
        .map(|v| v.into_iter().map(|s| s as usize).collect())
        .unwrap_or_else(|| DEFAULT_SHOTS.to_vec());
    let cfg = ProtocolConfig {
        shots,
        seeds: list_of(a.seeds, &f.seeds, "seeds")?.unwrap_or_else(|| vec![0]),
        k: a.k.or(f.k).unwrap_or(3),
        kmeans_seed: a.seed.or(f.seed).unwrap_or(0),
        budget: budget_of(a.budget, f)?,
        include_support_in_acc_e: a.include_support || f.include_support.unwrap_or(false),
        protect_server: a.protect_server || f.protect_server.unwrap_or(false),
    };
    cfg.validate()?;

    let test = read_embeddings(&test_path)?;
    let store = match (a.store.or_else(|| f.store.clone()), a.train.or_else(|| f.train.clone())) {
        (Some(path), _) => import_store(&path)?,
        (None, Some(path)) => {
            let train = read_embeddings(&path)?;
            build_initial_prototypes(&train, &cfg.kmeans(), StoreConfig::new(train.dim()))?
        }
        (None, None) => bail!("either --store or --train is required"),
    };
    let report = run_protocol_with_store(&store, &test, &cfg)?;
    match a.out.or_else(|| f.out.clone()) {
        Some(path) => emit_report(&report, &path, format)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(render(&report, format).as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs, f: &FileConfig) -> anyhow::Result<()> {
    let ui_dir = a
        .ui_dir
        .or_else(|| f.ui_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_UI_DIR));
    let settings = ServiceSettings {
        open_class: a.open_class || f.open_class.unwrap_or(false),
        reveal_labels: a.reveal_labels || f.reveal_labels.unwrap_or(false),
        top_k: a.top_k.or(f.top_k).unwrap_or(protofix_core::DEFAULT_TOP_K),
        kmeans_seed: a.seed.or(f.seed).unwrap_or(0),
        ui_dir: Path::new(&ui_dir).is_dir().then_some(ui_dir),
    };
    let state = AppState::new(settings);

    let train = a.train.or_else(|| f.train.clone());
    let test = a.test.or_else(|| f.test.clone());
    if let (Some(train_path), Some(test_path)) = (train, test) {
        let budget = budget_of(a.budget, f)?;
        let req = SessionRequest {
            train_path,
            test_path,
            k: a.k.or(f.k),
            budget: budget.limit().map(crate::service::BudgetField::Limit),
            protect_server: a.protect_server || f.protect_server.unwrap_or(false),
        };
        let info = state.open_session(&req).map_err(|e| anyhow!("{e}"))?;
        eprintln!("session {} ready, acc_base {:.3}%", info.session_id, info.acc_base);
    }

    let port = a.port.or(f.port).unwrap_or(DEFAULT_PORT);
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(serve(addr, state))?;
    Ok(())
}
