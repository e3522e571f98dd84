//! End-to-end commands: prepare data, run extraction, evaluate, export
//! fine-tuning files and report costs.
//!
//! A prepared data directory holds:
//!
//! ```text
//! train_large.jsonl  train_small.jsonl  test.jsonl
//! schemas/<category>.json
//! stats.json  stats.txt
//! ```
//!
//! A run directory holds `results.jsonl`, `raw_responses.jsonl`,
//! `ledger.jsonl`, `manifest.json` and, after evaluation, `report.json` and
//! `report.txt`.

mod extract;
mod grid;

pub use extract::{cmd_extract, ExtractOptions, ExtractSummary, RunConfig, RunManifest, RunStatus};
pub use grid::{ExperimentGrid, GridCell};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backends::http::HttpChatBackend;
use crate::backends::mock::OracleBackend;
use crate::backends::replay::ReplayBackend;
use crate::backends::{
    self, credential_from_env, estimate_cost, BackendError, ChatBackend, ChatClient, CostError, CostReport,
    PriceTable,
};
use crate::corpus::{self, dataset_stats, split_dataset, CorpusError, Dataset, DatasetStats, FlaggedAttribute};
use crate::demos::DemoError;
use crate::metrics::{dict_build, dict_extract, evaluate_run, EvalError, EvalReport, MatchMode};
use crate::parse::{parse_response, ExtractionResult};
use crate::prompts::{build_zero_shot, render_truth_json, ChatMessage, PromptDesign, PromptError, Representation, TemplateSet};
use crate::schema::{generate_descriptions, SchemaError, SchemaRegistry};
use crate::util::write_atomic;

pub const TRAIN_LARGE_FILE: &str = "train_large.jsonl";
pub const TRAIN_SMALL_FILE: &str = "train_small.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const SCHEMA_DIR: &str = "schemas";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const RAW_FILE: &str = "raw_responses.jsonl";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Epoch count recommended alongside fine-tuning exports.
pub const FINETUNE_EPOCHS: u32 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
}

impl PipelineError {
    /// Process exit code: 1 usage, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Backend(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<SchemaError> for PipelineError {
    fn from(e: SchemaError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<CostError> for PipelineError {
    fn from(e: CostError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<PromptError> for PipelineError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::InvalidDesign(_) | PromptError::Template { .. } => PipelineError::Usage(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<DemoError> for PipelineError {
    fn from(e: DemoError) -> Self {
        match e {
            DemoError::Embedding(b) => PipelineError::Backend(b),
            DemoError::InvalidArgument(m) => PipelineError::Usage(m),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Parses design labels such as `list`, `textual`, `json-5-val` or
/// `json-val` (10 example values).
pub fn parse_design(label: &str, demonstrations: usize) -> Result<PromptDesign> {
    let bad = || PipelineError::Usage(format!("unknown prompt design `{label}`"));
    let (repr, values) = match label.strip_suffix("-val") {
        None => (label, 0),
        Some(head) => match head.rsplit_once('-') {
            Some((repr, n)) if n.chars().all(|c| c.is_ascii_digit()) => (repr, n.parse().map_err(|_| bad())?),
            _ => (head, 10),
        },
    };
    let representation = Representation::from_str(repr).map_err(|_| bad())?;
    Ok(PromptDesign::new(representation, values, demonstrations)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainSize {
    Small,
    Large,
}

impl TrainSize {
    pub fn file_name(self) -> &'static str {
        match self {
            TrainSize::Small => TRAIN_SMALL_FILE,
            TrainSize::Large => TRAIN_LARGE_FILE,
        }
    }
}

impl FromStr for TrainSize {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(TrainSize::Small),
            "large" => Ok(TrainSize::Large),
            _ => Err(PipelineError::Usage(format!("unknown training set `{s}` (small|large)"))),
        }
    }
}

/// A prepared data directory.
#[derive(Debug, Clone)]
pub struct DataDir(pub PathBuf);

impl DataDir {
    pub fn train(&self, size: TrainSize) -> Result<Dataset> {
        Ok(Dataset::read(&self.0.join(size.file_name()))?)
    }

    pub fn test(&self) -> Result<Dataset> {
        Ok(Dataset::read(&self.0.join(TEST_FILE))?)
    }

    pub fn schemas(&self) -> Result<SchemaRegistry> {
        Ok(SchemaRegistry::read_dir(&self.0.join(SCHEMA_DIR))?)
    }
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Directory of per-category OA-Mine annotation files.
    OaMine,
    /// AE-110K tab-separated triples.
    Ae110k,
    /// A file already in the canonical JSONL format.
    Canonical,
    /// The bundled synthetic dataset; needs no input path.
    Toy,
}

impl FromStr for DatasetKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oa-mine" | "oamine" => Ok(DatasetKind::OaMine),
            "ae-110k" | "ae110k" => Ok(DatasetKind::Ae110k),
            "canonical" | "jsonl" => Ok(DatasetKind::Canonical),
            "toy" => Ok(DatasetKind::Toy),
            _ => Err(PipelineError::Usage(format!(
                "unknown dataset kind `{s}` (oa-mine|ae-110k|canonical|toy)"
            ))),
        }
    }
}

pub fn load_raw(kind: DatasetKind, input: Option<&Path>) -> Result<Dataset> {
    let need = || PipelineError::Usage("an input path is required for this dataset kind".into());
    Ok(match kind {
        DatasetKind::OaMine => corpus::import_oamine(input.ok_or_else(need)?)?,
        DatasetKind::Ae110k => corpus::import_ae110k(input.ok_or_else(need)?)?,
        DatasetKind::Canonical => Dataset::read(input.ok_or_else(need)?)?,
        DatasetKind::Toy => crate::toy::toy_dataset(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub split: String,
    #[serde(flatten)]
    pub stats: DatasetStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub dataset: String,
    pub seed: u64,
    pub rows: Vec<StatsRow>,
    pub flagged: Vec<FlaggedAttribute>,
}

impl StatsTable {
    pub fn row(&self, split: &str) -> Option<&DatasetStats> {
        self.rows.iter().find(|r| r.split == split).map(|r| &r.stats)
    }

    pub fn render(&self) -> String {
        let mut out = format!("dataset {} (seed {})\n", self.dataset, self.seed);
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>10} {:>8} {:>8} {:>12}",
            "split", "categories", "attributes", "offers", "pairs", "unique pairs"
        );
        for row in &self.rows {
            let s = &row.stats;
            let _ = writeln!(
                out,
                "{:<12} {:>10} {:>10} {:>8} {:>8} {:>12}",
                row.split, s.unique_categories, s.unique_attributes, s.offers, s.av_pairs, s.unique_av_pairs
            );
        }
        for f in &self.flagged {
            let _ = writeln!(out, "flagged: {}/{} ({:?})", f.category, f.attribute, f.reason);
        }
        out
    }
}

/// Imports raw data, splits it and writes a prepared data directory.
pub fn cmd_prepare(kind: DatasetKind, input: Option<&Path>, out_dir: &Path, seed: u64) -> Result<StatsTable> {
    let dataset = load_raw(kind, input)?;
    let bundle = split_dataset(&dataset, seed)?;
    bundle.train_large.write(&out_dir.join(TRAIN_LARGE_FILE))?;
    bundle.train_small.write(&out_dir.join(TRAIN_SMALL_FILE))?;
    bundle.test.write(&out_dir.join(TEST_FILE))?;
    let registry = SchemaRegistry::from_datasets(&[&bundle.train_large, &bundle.test]);
    registry.write_dir(&out_dir.join(SCHEMA_DIR))?;

    let table = StatsTable {
        dataset: dataset.name.clone(),
        seed,
        rows: [
            ("train_small", &bundle.train_small),
            ("train_large", &bundle.train_large),
            ("test", &bundle.test),
            ("all", &dataset),
        ]
        .into_iter()
        .map(|(split, d)| StatsRow {
            split: split.into(),
            stats: dataset_stats(d),
        })
        .collect(),
        flagged: bundle.flagged.clone(),
    };
    for f in &table.flagged {
        log::warn!("attribute {}/{} is not on both sides of the split ({:?})", f.category, f.attribute, f.reason);
    }
    let stats_json = serde_json::to_string_pretty(&table).expect("stats serialize") + "\n";
    write_atomic(&out_dir.join("stats.json"), stats_json.as_bytes()).map_err(|e| PipelineError::io(out_dir, e))?;
    write_atomic(&out_dir.join("stats.txt"), table.render().as_bytes()).map_err(|e| PipelineError::io(out_dir, e))?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// backends
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Answers with test-set truth; offline.
    Oracle,
    /// Chat-completions HTTP endpoint.
    Http,
    /// Replay store only; misses are errors.
    Replay,
}

impl FromStr for BackendKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(BackendKind::Oracle),
            "http" | "openai" => Ok(BackendKind::Http),
            "replay" => Ok(BackendKind::Replay),
            _ => Err(PipelineError::Usage(format!("unknown backend `{s}` (oracle|http|replay)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackendOptions {
    pub kind: BackendKind,
    pub base_url: String,
    pub timeout: Duration,
    pub oracle_corruption: f64,
    pub oracle_seed: u64,
    /// Wraps the backend in a record/replay store.
    pub replay_dir: Option<PathBuf>,
}

impl Default for BackendOptions {
    fn default() -> Self {
        BackendOptions {
            kind: BackendKind::Oracle,
            base_url: backends::http::DEFAULT_BASE_URL.into(),
            timeout: Duration::from_secs(120),
            oracle_corruption: 0.0,
            oracle_seed: 0,
            replay_dir: None,
        }
    }
}

pub fn build_backend(opts: &BackendOptions, data: &DataDir, templates: &TemplateSet) -> Result<Arc<dyn ChatBackend>> {
    let inner: Arc<dyn ChatBackend> = match opts.kind {
        BackendKind::Oracle => Arc::new(OracleBackend::new(
            &data.test()?,
            opts.oracle_corruption,
            opts.oracle_seed,
            templates.clone(),
        )?),
        BackendKind::Http => {
            let key = credential_from_env();
            if key.is_none() {
                log::warn!("no API key in EXTRACT_API_KEY or OPENAI_API_KEY; sending unauthenticated requests");
            }
            Arc::new(HttpChatBackend::new(&opts.base_url, key, opts.timeout)?)
        }
        BackendKind::Replay => {
            let dir = opts
                .replay_dir
                .clone()
                .ok_or_else(|| PipelineError::Usage("the replay backend needs --replay <dir>".into()))?;
            return Ok(Arc::new(ReplayBackend::replay(dir)));
        }
    };
    Ok(match &opts.replay_dir {
        Some(dir) => Arc::new(ReplayBackend::recording(dir.clone(), inner)),
        None => inner,
    })
}

// ---------------------------------------------------------------------------
// run files
// ---------------------------------------------------------------------------

/// Reads `results.jsonl`. A missing file is an empty run.
pub fn read_results(run_dir: &Path) -> Result<Vec<ExtractionResult>> {
    let path = run_dir.join(RESULTS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(PipelineError::io(&path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::io(&path, format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn read_manifest(run_dir: &Path) -> Result<Option<RunManifest>> {
    let path = run_dir.join(MANIFEST_FILE);
    match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| PipelineError::io(&path, e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(PipelineError::io(&path, e)),
    }
}

fn write_results(run_dir: &Path, results: &[ExtractionResult]) -> Result<()> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r).expect("result serializes"));
        out.push('\n');
    }
    let path = run_dir.join(RESULTS_FILE);
    write_atomic(&path, out.as_bytes()).map_err(|e| PipelineError::io(&path, e))
}

// ---------------------------------------------------------------------------
// evaluate and cost
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    #[serde(flatten)]
    pub report: CostReport,
    /// Characters / 4 estimate of all prompts, for budgeting only.
    pub approx_prompt_tokens: u64,
}

/// Dollar totals for a run from its ledger and results.
pub fn cmd_report_cost(run_dir: &Path, prices: &PriceTable) -> Result<CostSummary> {
    let ledger_path = run_dir.join(LEDGER_FILE);
    let records = if ledger_path.exists() {
        backends::load_records(&ledger_path).map_err(|e| PipelineError::io(&ledger_path, e))?
    } else {
        Vec::new()
    };
    let pairs: u64 = read_results(run_dir)?.iter().map(|r| r.extracted_pairs() as u64).sum();
    let report = estimate_cost(&records, pairs, prices)?;
    Ok(CostSummary {
        report,
        approx_prompt_tokens: records.iter().map(|r| r.approx_prompt_tokens).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub run_dir: PathBuf,
    pub report: EvalReport,
    pub cost: Option<CostSummary>,
}

impl EvaluationOutput {
    pub fn render(&self) -> String {
        let mut out = format!("run {}\n{}", self.run_dir.display(), self.report);
        match &self.cost {
            Some(c) => {
                let _ = writeln!(out, "cost: ${} total", c.report.total_dollars.normalize());
                match c.report.dollars_per_1k_pairs {
                    Some(per) => {
                        let _ = writeln!(out, "cost: ${} per 1k extracted pairs", per.round_dp(6).normalize());
                    }
                    None => out.push_str("cost: no pairs extracted\n"),
                }
                if !c.report.usage_complete {
                    let _ = writeln!(out, "cost: some requests reported no usage (≈{} prompt tokens by estimate)", c.approx_prompt_tokens);
                }
            }
            None => out.push_str("cost: unavailable\n"),
        }
        out
    }
}

/// Scores a run against the prepared test set and writes `report.json` and
/// `report.txt` into the run directory.
pub fn cmd_evaluate(run_dir: &Path, data: &DataDir, mode: MatchMode, prices: &PriceTable) -> Result<EvaluationOutput> {
    if let Some(manifest) = read_manifest(run_dir)? {
        if manifest.status != RunStatus::Complete {
            return Err(PipelineError::Data(format!(
                "run {} is incomplete: {} of {} offers done; rerun extract to resume",
                run_dir.display(),
                manifest.offers_done,
                manifest.offers_total
            )));
        }
    }
    let results = read_results(run_dir)?;
    if results.is_empty() {
        return Err(PipelineError::Data(format!("run {} is incomplete: it has no results", run_dir.display())));
    }
    let test = data.test()?;
    let registry = data.schemas()?;
    let report = evaluate_run(&results, &test, &registry, mode)?;
    let cost = match cmd_report_cost(run_dir, prices) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("no cost figure: {e}");
            None
        }
    };
    let output = EvaluationOutput {
        run_dir: run_dir.to_path_buf(),
        report,
        cost,
    };
    let json = serde_json::to_string_pretty(&output).expect("report serializes") + "\n";
    let path = run_dir.join("report.json");
    write_atomic(&path, json.as_bytes()).map_err(|e| PipelineError::io(&path, e))?;
    let path = run_dir.join("report.txt");
    write_atomic(&path, output.render().as_bytes()).map_err(|e| PipelineError::io(&path, e))?;
    Ok(output)
}

/// Runs the dictionary baseline over the test set and writes its results
/// into `run_dir`.
pub fn cmd_dictionary_baseline(data: &DataDir, train: TrainSize, run_dir: &Path) -> Result<usize> {
    let dict = dict_build(&data.train(train)?);
    let results: Vec<ExtractionResult> = data
        .test()?
        .offers()
        .iter()
        .map(|o| dict_extract(&o.offer_id, &o.title, &o.category, &dict))
        .collect();
    fs::create_dir_all(run_dir).map_err(|e| PipelineError::io(run_dir, e))?;
    write_results(run_dir, &results)?;
    Ok(results.len())
}

// ---------------------------------------------------------------------------
// fine-tuning export
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinetuneDesign {
    /// Attribute-name list.
    List,
    /// JSON schema with 10 sampled example values per attribute.
    JsonVal,
}

impl FinetuneDesign {
    pub fn prompt_design(self) -> PromptDesign {
        match self {
            FinetuneDesign::List => PromptDesign::zero_shot(Representation::List, 0),
            FinetuneDesign::JsonVal => PromptDesign::zero_shot(Representation::Json, 10),
        }
        .expect("fixed designs are valid")
    }
}

impl FromStr for FinetuneDesign {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "list" => Ok(FinetuneDesign::List),
            "json-val" | "json-10-val" => Ok(FinetuneDesign::JsonVal),
            _ => Err(PipelineError::Usage(format!(
                "fine-tuning export supports the list and json-val designs, not `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub path: PathBuf,
    pub lines: usize,
    pub design: FinetuneDesign,
    pub example_seed: u64,
    pub suggested_epochs: u32,
}

/// Writes one `{"messages": [...]}` line per training offer: the zero-shot
/// prompt followed by an assistant message holding the offer's truth.
/// A `<file>.notes.json` sidecar records the settings.
pub fn cmd_export_finetune(
    data: &DataDir,
    train: TrainSize,
    design: FinetuneDesign,
    example_seed: u64,
    templates: &TemplateSet,
    out: &Path,
) -> Result<ExportSummary> {
    let train_set = data.train(train)?;
    let prompt_design = design.prompt_design();
    let registry = data
        .schemas()?
        .map(|s| s.with_sampled_examples(&train_set, prompt_design.example_value_count, example_seed));
    let mut text = String::new();
    for offer in train_set.offers() {
        let schema = registry.get(&offer.category)?;
        let prompt = build_zero_shot(&prompt_design, schema, offer, templates)?
            .push(ChatMessage::assistant(render_truth_json(schema, offer)?))?;
        text.push_str(&json!({ "messages": prompt }).to_string());
        text.push('\n');
    }
    write_atomic(out, text.as_bytes()).map_err(|e| PipelineError::io(out, e))?;
    let summary = ExportSummary {
        path: out.to_path_buf(),
        lines: train_set.len(),
        design,
        example_seed,
        suggested_epochs: FINETUNE_EPOCHS,
    };
    let notes = out.with_extension("notes.json");
    let notes_text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_atomic(&notes, notes_text.as_bytes()).map_err(|e| PipelineError::io(&notes, e))?;
    Ok(summary)
}

/// Parses every exported line back and checks its assistant payload against
/// the source truth. Returns the number of matching lines.
pub fn verify_finetune_export(path: &Path, data: &DataDir, train: TrainSize) -> Result<usize> {
    let train_set = data.train(train)?;
    let registry = data.schemas()?;
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let mut matching = 0;
    for (line, offer) in text.lines().zip(train_set.offers()) {
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| PipelineError::io(path, e))?;
        let Some(answer) = value.pointer("/messages").and_then(|m| m.as_array()).and_then(|m| m.last()) else {
            continue;
        };
        if answer["role"] != "assistant" {
            continue;
        }
        let parsed = parse_response(answer["content"].as_str().unwrap_or_default(), registry.get(&offer.category)?);
        let predicted: std::collections::BTreeMap<&String, &String> =
            parsed.values.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect();
        let truth: std::collections::BTreeMap<&String, &String> = offer.truth.iter().collect();
        if predicted == truth {
            matching += 1;
        }
    }
    Ok(matching)
}

// ---------------------------------------------------------------------------
// descriptions
// ---------------------------------------------------------------------------

/// Fills empty attribute descriptions in the prepared schemas. Returns the
/// failed (category, attribute, message) triples.
pub fn cmd_describe(data: &DataDir, client: &ChatClient, model: &str, templates: &TemplateSet) -> Result<Vec<(String, String, String)>> {
    let registry = data.schemas()?;
    let mut updated = SchemaRegistry::new();
    let mut failures = Vec::new();
    for schema in registry.iter() {
        let outcome = generate_descriptions(schema, client, model, templates);
        for (attribute, message) in outcome.failures {
            log::error!("description for {}/{attribute} failed: {message}", schema.category);
            failures.push((schema.category.clone(), attribute, message));
        }
        updated.insert(outcome.schema);
    }
    updated.write_dir(&data.0.join(SCHEMA_DIR))?;
    Ok(failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_labels() {
        let d = parse_design("json-5-val", 10).unwrap();
        assert_eq!((d.representation, d.example_value_count, d.demonstration_count), (Representation::Json, 5, 10));
        assert_eq!(parse_design("json-val", 0).unwrap().example_value_count, 10);
        assert_eq!(parse_design("list", 0).unwrap().example_value_count, 0);
        assert_eq!(parse_design("compact-3-val", 0).unwrap().label(), "compact-3-val");
        assert!(matches!(parse_design("list-3-val", 0), Err(PipelineError::Usage(_))));
        assert!(matches!(parse_design("yaml", 0), Err(PipelineError::Usage(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Usage("x".into()).exit_code(), 1);
        assert_eq!(PipelineError::Data("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Backend(BackendError::Auth("x".into())).exit_code(), 3);
    }

    #[test]
    fn unsupported_finetune_design() {
        assert!(matches!("compact".parse::<FinetuneDesign>(), Err(PipelineError::Usage(_))));
        assert_eq!("json-val".parse::<FinetuneDesign>().unwrap(), FinetuneDesign::JsonVal);
    }
}
