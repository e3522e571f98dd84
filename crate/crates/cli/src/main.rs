//! `attrex`: attribute/value extraction experiments from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use attrex_core::backends::http::DEFAULT_BASE_URL;
use attrex_core::backends::{credential_from_env, ChatClient, PriceTable, RetryPolicy};
use attrex_core::demos::{CachedEmbedder, RemoteEmbedder, SelectorConfig, SelectorStrategy};
use attrex_core::metrics::MatchMode;
use attrex_core::pipeline::{
    build_backend, cmd_describe, cmd_dictionary_baseline, cmd_evaluate, cmd_export_finetune, cmd_extract,
    cmd_prepare, cmd_report_cost, BackendKind, BackendOptions, DataDir, ExperimentGrid,
    ExtractOptions, FinetuneDesign, PipelineError, TrainSize,
};
use attrex_core::prompts::TemplateSet;
use attrex_core::{PromptDesign, Representation};
use clap::{Args, Parser, Subcommand};

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Parser)]
#[command(name = "attrex", version, about = "Attribute/value extraction from product titles with chat LLMs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Experiment grid (TOML) for batch extract/evaluate.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splitting, example-value sampling, random selection and oracle corruption.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// oracle | http | replay
    #[arg(long, global = true, default_value = "oracle")]
    backend: String,
    #[arg(long, global = true, default_value = "gpt-4-0613")]
    model: String,
    #[arg(long, global = true, default_value = "json", value_parser = ["list", "textual", "compact", "json"])]
    design: String,
    /// Example values per attribute [default: 5, or 0 for list].
    #[arg(long, global = true)]
    example_values: Option<usize>,
    /// Number of demonstrations; 0 for zero-shot.
    #[arg(long, global = true, default_value_t = 10)]
    demos: usize,
    #[arg(long, global = true, default_value = "semsim", value_parser = ["fixed", "random", "semsim", "mmr", "semsim-avd"])]
    selector: String,
    #[arg(long, global = true, default_value_t = SelectorConfig::DEFAULT_MMR_LAMBDA)]
    mmr_lambda: f64,
    #[arg(long, global = true, default_value = "large", value_parser = ["small", "large"])]
    train: String,
    /// Record/replay store. With --backend replay, requests are answered only from it.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Import a raw dataset, split it and write the prepared directory.
    Prepare {
        /// oa-mine | ae-110k | canonical | toy
        #[arg(long)]
        kind: String,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run extraction over the test set of a prepared directory.
    Extract {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Score a finished run and report its cost.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Compare values case-insensitively.
        #[arg(long)]
        case_insensitive: bool,
        #[arg(long)]
        prices: Option<PathBuf>,
    },
    /// Write a fine-tuning upload file (list or json with 10 example values).
    ExportFinetune {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dollar cost of a run from its ledger.
    ReportCost {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        prices: Option<PathBuf>,
    },
    /// Generate missing attribute descriptions in the prepared schemas.
    Describe {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Run the dictionary baseline into a run directory.
    DictBaseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Prepared data directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BackendArgs {
    #[arg(long, default_value = DEFAULT_BASE_URL)]
    base_url: String,
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    /// Fraction of pairs the oracle backend answers wrongly.
    #[arg(long, default_value_t = 0.0)]
    corruption: f64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long)]
    max_attempts: Option<u32>,
    /// Requests per second across workers.
    #[arg(long)]
    rate_limit: Option<f64>,
    /// Embed titles through `<base-url>/embeddings` with this model instead of the local hashing embedder.
    #[arg(long)]
    embedding_model: Option<String>,
    /// Directory of prompt templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Price table (TOML); the version is recorded in the manifest.
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Process only the first N test offers.
    #[arg(long)]
    limit: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Prepare { kind, input, out } => {
            let table = cmd_prepare(kind.parse()?, input.as_deref(), out, g.seed)?;
            print!("{}", table.render());
        }
        Command::Extract { run, backend } => match &g.config {
            Some(config) => run_grid(g, config, backend)?,
            None => {
                let (data, run_dir) = run.require()?;
                extract_one(g, backend, &data, &run_dir, design_from_flags(g)?, parse_selector(&g.selector)?)?;
            }
        },
        Command::Evaluate { run, case_insensitive, prices } => {
            let mode = if *case_insensitive { MatchMode::CaseInsensitive } else { MatchMode::Exact };
            let prices = load_prices(prices.as_deref())?;
            let targets = match &g.config {
                Some(config) => {
                    let grid = ExperimentGrid::read(config)?;
                    grid.cells()?.into_iter().map(|c| (DataDir(c.data_dir), c.run_dir)).collect()
                }
                None => vec![run.require()?],
            };
            for (data, run_dir) in targets {
                let output = cmd_evaluate(&run_dir, &data, mode, &prices)?;
                print!("{}", output.render());
            }
        }
        Command::ExportFinetune { data, out } => {
            let data = DataDir(data.clone().ok_or_else(|| usage("--data is required"))?);
            let design = match (g.design.as_str(), g.example_values) {
                ("list", None | Some(0)) => FinetuneDesign::List,
                ("json", None | Some(10)) => FinetuneDesign::JsonVal,
                (d, n) => {
                    return Err(usage(&format!(
                        "fine-tuning export supports --design list or --design json with 10 example values, not {d} with {n:?}"
                    )))
                }
            };
            let summary = cmd_export_finetune(&data, parse_train(&g.train)?, design, g.seed, &TemplateSet::builtin(), out)?;
            println!(
                "wrote {} examples to {} (suggested epochs: {})",
                summary.lines,
                summary.path.display(),
                summary.suggested_epochs
            );
        }
        Command::ReportCost { run_dir, prices } => {
            let summary = cmd_report_cost(run_dir, &load_prices(prices.as_deref())?)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("cost summary serializes"));
        }
        Command::Describe { data, backend } => {
            let data = DataDir(data.clone());
            let templates = load_templates(backend.templates.as_deref())?;
            let client = ChatClient::new(build_backend(&backend_options(g, backend)?, &data, &templates)?)
                .with_policy(retry_policy(backend)?);
            let failures = cmd_describe(&data, &client, &g.model, &templates)?;
            for (category, attribute, message) in &failures {
                eprintln!("no description for {category}/{attribute}: {message}");
            }
        }
        Command::DictBaseline { data, run_dir } => {
            let n = cmd_dictionary_baseline(&DataDir(data.clone()), parse_train(&g.train)?, run_dir)?;
            println!("wrote {n} results to {}", run_dir.display());
        }
    }
    Ok(())
}

impl RunArgs {
    fn require(&self) -> Result<(DataDir, PathBuf)> {
        let data = self.data.clone().ok_or_else(|| usage("--data is required (or --config)"))?;
        let run_dir = self.run_dir.clone().ok_or_else(|| usage("--run-dir is required (or --config)"))?;
        Ok((DataDir(data), run_dir))
    }
}

fn usage(message: &str) -> PipelineError {
    PipelineError::Usage(message.to_string())
}

fn parse_train(s: &str) -> Result<TrainSize> {
    s.parse()
}

fn parse_selector(s: &str) -> Result<SelectorStrategy> {
    s.parse().map_err(|e| usage(&format!("{e}")))
}

fn design_from_flags(g: &GlobalArgs) -> Result<PromptDesign> {
    let representation = match g.design.as_str() {
        "list" => Representation::List,
        "textual" => Representation::Textual,
        "compact" => Representation::Compact,
        _ => Representation::Json,
    };
    let default_values = if representation == Representation::List { 0 } else { 5 };
    PromptDesign::new(representation, g.example_values.unwrap_or(default_values), g.demos)
        .map_err(|e| usage(&e.to_string()))
}

fn load_prices(path: Option<&Path>) -> Result<PriceTable> {
    match path {
        Some(p) => PriceTable::read(p).map_err(|e| usage(&format!("{}: {e}", p.display()))),
        None => Ok(PriceTable::builtin()),
    }
}

fn load_templates(dir: Option<&Path>) -> Result<TemplateSet> {
    match dir {
        Some(d) => TemplateSet::load_dir(d).map_err(|e| usage(&format!("{}: {e}", d.display()))),
        None => Ok(TemplateSet::builtin()),
    }
}

fn retry_policy(b: &BackendArgs) -> Result<RetryPolicy> {
    let default = RetryPolicy::default();
    match b.max_attempts {
        Some(n) => RetryPolicy::new(n, default.initial_delay, default.multiplier).map_err(|e| usage(&e.to_string())),
        None => Ok(default),
    }
}

fn backend_options(g: &GlobalArgs, b: &BackendArgs) -> Result<BackendOptions> {
    let kind: BackendKind = g.backend.parse()?;
    if kind == BackendKind::Replay && g.replay.is_none() {
        return Err(usage("--backend replay needs --replay <dir>"));
    }
    Ok(BackendOptions {
        kind,
        base_url: b.base_url.clone(),
        timeout: Duration::from_secs(b.timeout_secs),
        oracle_corruption: b.corruption,
        oracle_seed: g.seed,
        replay_dir: g.replay.clone(),
    })
}

fn extract_one(
    g: &GlobalArgs,
    b: &BackendArgs,
    data: &DataDir,
    run_dir: &Path,
    design: PromptDesign,
    strategy: SelectorStrategy,
) -> Result<()> {
    if !(0.0..=1.0).contains(&g.mmr_lambda) {
        return Err(usage("--mmr-lambda must lie in [0, 1]"));
    }
    let templates = load_templates(b.templates.as_deref())?;
    let prices = load_prices(b.prices.as_deref())?;
    let backend = build_backend(&backend_options(g, b)?, data, &templates)?;

    let mut opts = ExtractOptions::new(data.0.clone(), run_dir);
    opts.train = parse_train(&g.train)?;
    opts.design = design;
    opts.selector = SelectorConfig::new(strategy, design.demonstration_count, g.seed).with_lambda(g.mmr_lambda);
    opts.example_seed = g.seed;
    opts.model = g.model.clone();
    opts.templates = templates;
    opts.workers = b.workers.max(1);
    opts.retry = retry_policy(b)?;
    opts.rate_limit = b.rate_limit;
    opts.price_table_version = Some(prices.version.clone());
    opts.limit = b.limit;
    if let Some(model) = &b.embedding_model {
        let remote = RemoteEmbedder::new(&b.base_url, model, credential_from_env())?;
        opts.embedder = Some(Arc::new(CachedEmbedder::new(Box::new(remote))));
        opts.embedding_cache = Some(data.0.join(format!("embeddings-{model}.json")));
    }

    let summary = cmd_extract(&opts, backend)?;
    println!(
        "run {} {:?}: {} offers ({} resumed, {} new) in {}",
        summary.manifest.run_id,
        summary.manifest.status,
        summary.manifest.offers_done,
        summary.resumed,
        summary.processed,
        run_dir.display()
    );
    Ok(())
}

fn run_grid(g: &GlobalArgs, config: &Path, b: &BackendArgs) -> Result<()> {
    let grid = ExperimentGrid::read(config)?;
    let g = GlobalArgs {
        config: None,
        seed: grid.seed.unwrap_or(g.seed),
        backend: grid.backend.clone().unwrap_or_else(|| g.backend.clone()),
        model: grid.model.clone().unwrap_or_else(|| g.model.clone()),
        design: g.design.clone(),
        example_values: g.example_values,
        demos: g.demos,
        selector: g.selector.clone(),
        mmr_lambda: grid.mmr_lambda.unwrap_or(g.mmr_lambda),
        train: match grid.train {
            Some(TrainSize::Small) => "small".into(),
            Some(TrainSize::Large) => "large".into(),
            None => g.train.clone(),
        },
        replay: g.replay.clone(),
    };
    for cell in grid.cells()? {
        log::info!("grid cell {}", cell.run_dir.display());
        extract_one(&g, b, &DataDir(cell.data_dir), &cell.run_dir, cell.design, cell.selector)?;
    }
    Ok(())
}
