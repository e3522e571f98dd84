//! The extraction loop with resumable, order-stable output.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{read_manifest, DataDir, PipelineError, Result, TrainSize, LEDGER_FILE, MANIFEST_FILE, RAW_FILE, RESULTS_FILE};
use crate::backends::{ChatBackend, ChatClient, ChatRequest, CostLedger, RateLimiter, RetryPolicy};
use crate::corpus::{Dataset, ProductOffer};
use crate::demos::{
    embed_title, select_demonstrations, CachedEmbedder, DemoPool, EmbeddingVector, HashEmbedder, SelectorConfig,
    SelectorStrategy,
};
use crate::parse::{parse_response, ExtractionResult};
use crate::prompts::{build_prompt, PromptDesign, Representation, TemplateSet};
use crate::schema::SchemaRegistry;
use crate::util::{sha256_hex, write_atomic};

/// Everything that determines the prompts sent for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub design: PromptDesign,
    pub selector: SelectorConfig,
    pub example_seed: u64,
    pub train: TrainSize,
    pub model: String,
    pub temperature: f64,
    pub template_version: String,
    pub embedder: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub test_sha256: String,
    pub train_sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: RunConfig,
    pub dataset: DatasetRef,
    pub backend: String,
    pub price_table_version: Option<String>,
    pub normalization: Vec<String>,
    pub status: RunStatus,
    pub offers_total: usize,
    pub offers_done: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl RunManifest {
    fn write(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_atomic(&path, text.as_bytes()).map_err(|e| PipelineError::io(&path, e))
    }
}

#[derive(Clone)]
pub struct ExtractOptions {
    pub data: DataDir,
    pub run_dir: PathBuf,
    pub train: TrainSize,
    /// The demonstration count of the design overrides `selector.k`.
    pub design: PromptDesign,
    pub selector: SelectorConfig,
    pub example_seed: u64,
    pub model: String,
    pub temperature: f64,
    pub templates: TemplateSet,
    /// Maximum concurrent backend requests.
    pub workers: usize,
    pub retry: RetryPolicy,
    /// Requests per second across all workers.
    pub rate_limit: Option<f64>,
    /// Embedder for similarity-based selectors; a hashing embedder is used
    /// when absent.
    pub embedder: Option<Arc<CachedEmbedder>>,
    pub embedding_cache: Option<PathBuf>,
    pub price_table_version: Option<String>,
    /// Process only the first `limit` test offers.
    pub limit: Option<usize>,
}

impl ExtractOptions {
    /// Defaults: json-5-val with 10 semantically similar demonstrations,
    /// large training set, temperature 0, 4 workers.
    pub fn new(data_dir: impl Into<PathBuf>, run_dir: impl Into<PathBuf>) -> Self {
        ExtractOptions {
            data: DataDir(data_dir.into()),
            run_dir: run_dir.into(),
            train: TrainSize::Large,
            design: PromptDesign::new(Representation::Json, 5, 10).expect("default design is valid"),
            selector: SelectorConfig::new(SelectorStrategy::SemanticSimilarity, 10, 0),
            example_seed: 0,
            model: "gpt-4-0613".into(),
            temperature: 0.0,
            templates: TemplateSet::builtin(),
            workers: 4,
            retry: RetryPolicy::default(),
            rate_limit: None,
            embedder: None,
            embedding_cache: None,
            price_table_version: None,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractSummary {
    pub manifest: RunManifest,
    /// Offers already present from an earlier attempt.
    pub resumed: usize,
    /// Offers processed in this invocation.
    pub processed: usize,
}

struct Prepared<'a> {
    registry: SchemaRegistry,
    pools: HashMap<String, DemoPool>,
    query_vectors: HashMap<String, EmbeddingVector>,
    pending: Vec<&'a ProductOffer>,
}

/// Runs extraction for every test offer not yet in the run directory.
///
/// Results are appended to `results.jsonl` in test-set order, so a killed
/// run can be resumed and ends with the same file as an uninterrupted one.
/// A backend error stops the run and marks the manifest incomplete.
pub fn cmd_extract(opts: &ExtractOptions, backend: Arc<dyn ChatBackend>) -> Result<ExtractSummary> {
    if opts.workers == 0 {
        return Err(PipelineError::Usage("at least one worker is required".into()));
    }
    opts.design.validate()?;
    let selector = SelectorConfig {
        k: opts.design.demonstration_count,
        ..opts.selector
    };
    let train = opts.data.train(opts.train)?;
    let test = opts.data.test()?;
    let offers: Vec<&ProductOffer> = test.offers().iter().take(opts.limit.unwrap_or(usize::MAX)).collect();

    let needs_embeddings = selector.k > 0 && selector.strategy.needs_embeddings();
    let embedder = match (&opts.embedder, needs_embeddings) {
        (_, false) => None,
        (Some(e), true) => Some(e.clone()),
        (None, true) => Some(Arc::new(CachedEmbedder::new(Box::new(HashEmbedder::default())))),
    };
    let config = RunConfig {
        design: opts.design,
        selector,
        example_seed: opts.example_seed,
        train: opts.train,
        model: opts.model.clone(),
        temperature: opts.temperature,
        template_version: opts.templates.version.clone(),
        embedder: embedder.as_ref().map(|e| e.embedder_id()),
    };
    let dataset = DatasetRef {
        name: test.name.trim_end_matches(".test").to_string(),
        test_sha256: sha256_hex(test.to_jsonl().as_bytes()),
        train_sha256: sha256_hex(train.to_jsonl().as_bytes()),
    };
    let run_id = sha256_hex(
        format!(
            "{}\n{}",
            serde_json::to_string(&config).expect("config serializes"),
            serde_json::to_string(&dataset).expect("dataset ref serializes")
        )
        .as_bytes(),
    )[..16]
        .to_string();

    fs::create_dir_all(&opts.run_dir).map_err(|e| PipelineError::io(&opts.run_dir, e))?;
    let now = Utc::now();
    let started_at = match read_manifest(&opts.run_dir)? {
        Some(previous) if previous.run_id != run_id => {
            return Err(PipelineError::Usage(format!(
                "{} holds run {} with a different configuration; use a fresh run directory",
                opts.run_dir.display(),
                previous.run_id
            )));
        }
        Some(previous) => previous.started_at,
        None => now,
    };

    let done = recover_results(&opts.run_dir)?;
    let done_ids: HashSet<&str> = done.iter().map(|r| r.offer_id.as_str()).collect();
    if let Some(stray) = done_ids.iter().find(|id| test.get(id).is_none()) {
        return Err(PipelineError::Data(format!("results contain offer `{stray}` which is not in the test set")));
    }
    recover_raw(&opts.run_dir, &done_ids)?;
    let resumed = offers.iter().filter(|o| done_ids.contains(o.offer_id.as_str())).count();

    let mut manifest = RunManifest {
        run_id,
        config,
        dataset,
        backend: backend.id(),
        price_table_version: opts.price_table_version.clone(),
        normalization: vec!["collapse-whitespace".into(), "n/a-as-absent".into()],
        status: RunStatus::Running,
        offers_total: offers.len(),
        offers_done: resumed,
        error: None,
        started_at,
        updated_at: now,
    };
    manifest.write(&opts.run_dir)?;

    let pending: Vec<&ProductOffer> = offers
        .iter()
        .copied()
        .filter(|o| !done_ids.contains(o.offer_id.as_str()))
        .collect();
    if resumed > 0 {
        log::info!("resuming: {resumed} offers done, {} pending", pending.len());
    }

    let outcome = prepare(opts, &train, embedder.as_deref(), pending, &selector)
        .and_then(|prepared| run_workers(opts, backend, &selector, &prepared));
    let processed = match &outcome {
        Ok(n) => *n,
        Err((n, _)) => *n,
    };
    manifest.offers_done = resumed + processed;
    manifest.updated_at = Utc::now();
    manifest.status = if manifest.offers_done == manifest.offers_total && outcome.is_ok() {
        RunStatus::Complete
    } else {
        RunStatus::Incomplete
    };
    if let Err((_, e)) = &outcome {
        manifest.error = Some(e.to_string());
    }
    manifest.write(&opts.run_dir)?;
    if let (Some(embedder), Some(path)) = (&embedder, &opts.embedding_cache) {
        embedder.save(path)?;
    }
    match outcome {
        Ok(processed) => Ok(ExtractSummary {
            manifest,
            resumed,
            processed,
        }),
        Err((_, e)) => Err(e),
    }
}

fn prepare<'a>(
    opts: &ExtractOptions,
    train: &Dataset,
    embedder: Option<&CachedEmbedder>,
    pending: Vec<&'a ProductOffer>,
    selector: &SelectorConfig,
) -> Result<Prepared<'a>, (usize, PipelineError)> {
    let inner = || -> Result<Prepared<'a>> {
        let evc = opts.design.example_value_count;
        let registry = opts
            .data
            .schemas()?
            .map(|s| s.with_sampled_examples(train, evc, opts.example_seed));
        if let (Some(embedder), Some(path)) = (embedder, &opts.embedding_cache) {
            let n = embedder.load(path)?;
            log::debug!("loaded {n} cached embeddings");
        }
        let categories: std::collections::BTreeSet<&str> = pending.iter().map(|o| o.category.as_str()).collect();
        let mut pools = HashMap::new();
        for category in categories {
            registry.get(category)?;
            let pool = match embedder {
                Some(e) => DemoPool::build(train, category, e)?,
                None => DemoPool::unembedded(train, category)?,
            };
            if pool.is_empty() && selector.k > 0 {
                log::warn!("no training offers for `{category}`; its prompts fall back to zero-shot");
            }
            pools.insert(category.to_string(), pool);
        }
        let mut query_vectors = HashMap::new();
        if let Some(e) = embedder {
            for offer in &pending {
                query_vectors.insert(offer.offer_id.clone(), embed_title(&offer.title, e)?);
            }
        }
        Ok(Prepared {
            registry,
            pools,
            query_vectors,
            pending,
        })
    };
    inner().map_err(|e| (0, e))
}

type WorkOutcome = Result<(ExtractionResult, String)>;

fn process_offer(
    opts: &ExtractOptions,
    client: &ChatClient,
    selector: &SelectorConfig,
    prepared: &Prepared<'_>,
    offer: &ProductOffer,
) -> WorkOutcome {
    let schema = prepared.registry.get(&offer.category)?;
    let pool = &prepared.pools[&offer.category];
    let demos = select_demonstrations(offer, prepared.query_vectors.get(&offer.offer_id), pool, selector)?;
    debug_assert!(demos.iter().all(|d| d.offer_id != offer.offer_id));
    let prompt = build_prompt(&opts.design, schema, offer, &demos, &opts.templates)?;
    let request = ChatRequest {
        model: opts.model.clone(),
        messages: prompt,
        temperature: opts.temperature,
        max_output_tokens: None,
    };
    let response = client.complete(&request)?;
    let parsed = parse_response(&response.text, schema);
    if !parsed.dropped_keys.is_empty() {
        log::info!("{}: ignored keys outside the schema: {:?}", offer.offer_id, parsed.dropped_keys);
    }
    let mut result = parsed.into_result(&offer.offer_id);
    result.raw_ref = Some(sha256_hex(response.text.as_bytes()));
    Ok((result, response.text))
}

#[derive(Serialize, Deserialize)]
struct RawLine {
    offer_id: String,
    raw_ref: String,
    text: String,
}

/// Dispatches pending offers to workers and appends finished results in
/// offer order. Returns the number written, with the first error if the
/// run stopped early.
fn run_workers(
    opts: &ExtractOptions,
    backend: Arc<dyn ChatBackend>,
    selector: &SelectorConfig,
    prepared: &Prepared<'_>,
) -> Result<usize, (usize, PipelineError)> {
    let ledger = CostLedger::with_file(&opts.run_dir.join(LEDGER_FILE))
        .map_err(|e| (0, PipelineError::io(&opts.run_dir.join(LEDGER_FILE), e)))?;
    let mut client = ChatClient::new(backend)
        .with_policy(opts.retry)
        .with_ledger(Arc::new(ledger));
    if let Some(rate) = opts.rate_limit {
        client = client.with_rate_limiter(RateLimiter::new(rate, opts.workers as u32).map_err(|e| (0, e.into()))?);
    }
    let open = |name: &str| {
        let path = opts.run_dir.join(name);
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| (0, PipelineError::io(&path, e)))
    };
    let mut results_file = open(RESULTS_FILE)?;
    let mut raw_file = open(RAW_FILE)?;

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let total = prepared.pending.len();
    let (tx, rx) = mpsc::channel::<(usize, WorkOutcome)>();

    std::thread::scope(|scope| {
        for _ in 0..opts.workers.min(total.max(1)) {
            let tx = tx.clone();
            let (next, stop, client) = (&next, &stop, &client);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= total {
                    break;
                }
                let outcome = process_offer(opts, client, selector, prepared, prepared.pending[i]);
                if outcome.is_err() {
                    stop.store(true, Ordering::SeqCst);
                }
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut buffer: BTreeMap<usize, (ExtractionResult, String)> = BTreeMap::new();
        let mut written = 0usize;
        let mut first_error: Option<PipelineError> = None;
        for (i, outcome) in rx {
            match outcome {
                Ok(item) => {
                    buffer.insert(i, item);
                }
                Err(e) => {
                    log::error!("{}: {e}", prepared.pending[i].offer_id);
                    first_error.get_or_insert(e);
                }
            }
            while let Some((result, text)) = buffer.remove(&written) {
                let io = |e: std::io::Error| PipelineError::io(&opts.run_dir, e);
                let line = serde_json::to_string(&result).expect("result serializes");
                let raw = RawLine {
                    offer_id: result.offer_id.clone(),
                    raw_ref: result.raw_ref.clone().unwrap_or_default(),
                    text,
                };
                let raw = serde_json::to_string(&raw).expect("raw line serializes");
                if let Err(e) = writeln!(raw_file, "{raw}").and_then(|_| writeln!(results_file, "{line}")) {
                    stop.store(true, Ordering::SeqCst);
                    first_error.get_or_insert(io(e));
                    break;
                }
                written += 1;
            }
        }
        if !buffer.is_empty() {
            log::info!("{} finished offers after the first failure are discarded", buffer.len());
        }
        match first_error {
            None => Ok(written),
            Some(e) => Err((written, e)),
        }
    })
}

/// Loads finished results, dropping a trailing line cut short by an
/// interruption. The file is rewritten when anything was dropped.
fn recover_results(run_dir: &Path) -> Result<Vec<ExtractionResult>> {
    let path = run_dir.join(RESULTS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(PipelineError::io(&path, e)),
    };
    let (complete, tail) = match text.rfind('\n') {
        Some(i) => (&text[..=i], &text[i + 1..]),
        None => ("", text.as_str()),
    };
    let lines: Vec<&str> = complete.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut results = Vec::with_capacity(lines.len());
    let mut dropped = !tail.is_empty();
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<ExtractionResult>(line) {
            Ok(r) => results.push(r),
            Err(_) if i + 1 == lines.len() => dropped = true,
            Err(e) => return Err(PipelineError::io(&path, format!("line {}: {e}", i + 1))),
        }
    }
    if dropped {
        log::warn!("{}: dropping an incomplete trailing line", path.display());
        super::write_results(run_dir, &results)?;
    }
    Ok(results)
}

/// Keeps the raw-response lines of finished offers only, in file order.
fn recover_raw(run_dir: &Path, done: &HashSet<&str>) -> Result<()> {
    let path = run_dir.join(RAW_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(PipelineError::io(&path, e)),
    };
    let mut seen = HashSet::new();
    let mut out = String::new();
    for line in text.split_inclusive('\n').filter(|l| l.ends_with('\n')) {
        if let Ok(raw) = serde_json::from_str::<RawLine>(line) {
            if done.contains(raw.offer_id.as_str()) && seen.insert(raw.offer_id) {
                out.push_str(line);
            }
        }
    }
    if out != text {
        write_atomic(&path, out.as_bytes()).map_err(|e| PipelineError::io(&path, e))?;
    }
    Ok(())
}
