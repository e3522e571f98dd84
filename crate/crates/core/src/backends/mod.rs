//! Chat-completion backends, retries, rate limiting and cost accounting.
//!
//! [`ChatBackend`] is the uniform interface. Implementations:
//!
//! - [`http::HttpChatBackend`]: any chat-completions-style HTTP endpoint
//! - [`mock::OracleBackend`]: answers with ground truth, optionally corrupted
//! - [`mock::ScriptedBackend`] / [`mock::FnBackend`]: test doubles
//! - [`replay::ReplayBackend`]: record/replay store for hermetic reruns
//!
//! [`ChatClient`] wraps a backend with the retry policy, the optional rate
//! limiter and the [`CostLedger`].

pub mod http;
pub mod mock;
pub mod replay;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::ChatPrompt;
use crate::util::sha256_hex;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("protocol error: {message}")]
    Protocol { message: String, raw: String },
    #[error("no recorded response for request {key}")]
    ReplayMiss { key: String },
    #[error("configuration error: {0}")]
    Config(String),
}

impl BackendError {
    /// Transient failures worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::RateLimited(_) | BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 408 || *status >= 500,
            _ => false,
        }
    }

    pub fn is_fatal(&self) -> bool {
        matches!(self, BackendError::Auth(_) | BackendError::Config(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: ChatPrompt,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
}

impl ChatRequest {
    /// Request at temperature 0.
    pub fn new(model: impl Into<String>, messages: ChatPrompt) -> Self {
        ChatRequest {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_output_tokens: None,
        }
    }

    /// Content hash identifying the request in the replay store.
    pub fn content_key(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("request serializes").as_bytes())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<Usage>,
    pub model: String,
    pub latency: Duration,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Rough token estimate (characters / 4, rounded up). Only for offline
/// budgeting; real counts come from the endpoint's usage report.
pub fn approx_tokens(prompt: &ChatPrompt) -> u64 {
    (prompt.char_count() as u64).div_ceil(4)
}

/// Resolve the API credential from `EXTRACT_API_KEY`, falling back to `OPENAI_API_KEY`.
pub fn credential_from_env() -> Option<String> {
    ["EXTRACT_API_KEY", "OPENAI_API_KEY"]
        .iter()
        .filter_map(|k| std::env::var(k).ok())
        .find(|v| !v.trim().is_empty())
}

// ---------------------------------------------------------------------------
// Retry and rate limiting
// ---------------------------------------------------------------------------

/// Exponential backoff: the delay before retry `n` (0-based) is
/// `initial_delay · multiplier^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_delay: Duration::from_millis(500),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn new(max_attempts: u32, initial_delay: Duration, multiplier: f64) -> Result<Self, BackendError> {
        if max_attempts == 0 {
            return Err(BackendError::Config("retry policy needs at least one attempt".into()));
        }
        if initial_delay.is_zero() || multiplier.is_nan() || multiplier <= 1.0 {
            return Err(BackendError::Config(
                "retry delays must start above zero and grow (multiplier > 1)".into(),
            ));
        }
        Ok(RetryPolicy {
            max_attempts,
            initial_delay,
            multiplier,
        })
    }

    pub fn delay(&self, retry: u32) -> Duration {
        self.initial_delay.mul_f64(self.multiplier.powi(retry as i32))
    }

    /// Every delay the policy can produce, in order.
    pub fn delays(&self) -> Vec<Duration> {
        (0..self.max_attempts.saturating_sub(1)).map(|r| self.delay(r)).collect()
    }
}

/// Token bucket shared by all workers of a client.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_second: f64, burst: u32) -> Result<Self, BackendError> {
        if per_second.is_nan() || per_second <= 0.0 || burst == 0 {
            return Err(BackendError::Config("rate limit needs a positive rate and burst".into()));
        }
        Ok(RateLimiter {
            capacity: f64::from(burst),
            per_second,
            state: Mutex::new((f64::from(burst), Instant::now())),
        })
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter lock");
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.per_second;
                state.0 = (state.0 + refill).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.0) / self.per_second)
            };
            std::thread::sleep(wait);
        }
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// A backend plus retry policy, optional rate limiter and usage ledger.
#[derive(Clone)]
pub struct ChatClient {
    backend: Arc<dyn ChatBackend>,
    policy: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    ledger: Arc<CostLedger>,
    sleeper: Sleeper,
}

impl ChatClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        ChatClient {
            backend,
            policy: RetryPolicy::default(),
            limiter: None,
            ledger: Arc::new(CostLedger::new()),
            sleeper: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_rate_limiter(mut self, limiter: RateLimiter) -> Self {
        self.limiter = Some(Arc::new(limiter));
        self
    }

    pub fn with_ledger(mut self, ledger: Arc<CostLedger>) -> Self {
        self.ledger = ledger;
        self
    }

    /// Replaces the function used to wait between retries.
    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn ledger(&self) -> &Arc<CostLedger> {
        &self.ledger
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    /// Sends the request, retrying transient failures, and records the
    /// outcome in the ledger. After the last attempt the final error is
    /// returned as is.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut retries = 0u32;
        loop {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.backend.complete(request) {
                Ok(response) => {
                    self.ledger.record(UsageRecord::for_response(request, &response, retries));
                    return Ok(response);
                }
                Err(err) if err.is_retryable() && retries + 1 < self.policy.max_attempts => {
                    log::warn!("{}: {err}; retry {} of {}", self.backend.id(), retries + 1, self.policy.max_attempts - 1);
                    (self.sleeper)(self.policy.delay(retries));
                    retries += 1;
                }
                Err(err) => {
                    self.ledger.record(UsageRecord::for_failure(request, retries));
                    return Err(err);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub model: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// False when the backend reported no usage; token counts are then 0.
    pub usage_reported: bool,
    /// Characters / 4 estimate of the prompt, for budgeting only.
    pub approx_prompt_tokens: u64,
    pub retries: u32,
    pub succeeded: bool,
}

impl UsageRecord {
    fn for_response(request: &ChatRequest, response: &ChatResponse, retries: u32) -> Self {
        let usage = response.usage.unwrap_or_default();
        UsageRecord {
            model: request.model.clone(),
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            usage_reported: response.usage.is_some(),
            approx_prompt_tokens: approx_tokens(&request.messages),
            retries,
            succeeded: true,
        }
    }

    fn for_failure(request: &ChatRequest, retries: u32) -> Self {
        UsageRecord {
            model: request.model.clone(),
            prompt_tokens: 0,
            completion_tokens: 0,
            usage_reported: false,
            approx_prompt_tokens: approx_tokens(&request.messages),
            retries,
            succeeded: false,
        }
    }
}

/// Append-only usage log shared by concurrent requests. Aggregates are
/// order-independent sums.
#[derive(Debug, Default)]
pub struct CostLedger {
    records: Mutex<Vec<UsageRecord>>,
    sink: Mutex<Option<File>>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ledger that also appends every record to a JSONL file. Existing
    /// records in the file are loaded first.
    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let records = if path.exists() { load_records(path)? } else { Vec::new() };
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(CostLedger {
            records: Mutex::new(records),
            sink: Mutex::new(Some(file)),
        })
    }

    pub fn from_records(records: Vec<UsageRecord>) -> Self {
        CostLedger {
            records: Mutex::new(records),
            sink: Mutex::new(None),
        }
    }

    pub fn record(&self, record: UsageRecord) {
        if let Some(file) = self.sink.lock().expect("ledger sink lock").as_mut() {
            let line = serde_json::to_string(&record).expect("usage record serializes");
            if let Err(e) = writeln!(file, "{line}") {
                log::error!("failed to persist usage record: {e}");
            }
        }
        self.records.lock().expect("ledger lock").push(record);
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        self.records.lock().expect("ledger lock").clone()
    }

    pub fn total_retries(&self) -> u64 {
        self.records.lock().expect("ledger lock").iter().map(|r| u64::from(r.retries)).sum()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("ledger lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_records(path: &Path) -> std::io::Result<Vec<UsageRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPrice {
    /// Dollars per 1,000 prompt tokens.
    pub input_per_1k: Decimal,
    /// Dollars per 1,000 completion tokens.
    pub output_per_1k: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceTable {
    pub version: String,
    pub models: BTreeMap<String, ModelPrice>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostError {
    #[error("no price for model `{0}`")]
    MissingPrice(String),
    #[error("negative rate for model `{0}`")]
    NegativeRate(String),
    #[error("price table: {0}")]
    Format(String),
}

impl PriceTable {
    /// Historical list prices shipped with the crate.
    pub fn builtin() -> Self {
        PriceTable::from_toml(include_str!("../../resources/prices.toml")).expect("bundled price table is valid")
    }

    /// Parses a TOML price table; rates are decimal strings.
    ///
    /// ```toml
    /// version = "2023-11"
    /// [models."gpt-4-0613"]
    /// input_per_1k = "0.03"
    /// output_per_1k = "0.06"
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, CostError> {
        let table: PriceTable = toml::from_str(text).map_err(|e| CostError::Format(e.to_string()))?;
        for (model, price) in &table.models {
            if price.input_per_1k.is_sign_negative() || price.output_per_1k.is_sign_negative() {
                return Err(CostError::NegativeRate(model.clone()));
            }
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self, CostError> {
        let text = fs::read_to_string(path).map_err(|e| CostError::Format(format!("{}: {e}", path.display())))?;
        PriceTable::from_toml(&text)
    }

    pub fn get(&self, model: &str) -> Result<&ModelPrice, CostError> {
        self.models.get(model).ok_or_else(|| CostError::MissingPrice(model.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub price_table_version: String,
    pub requests: u64,
    pub retries: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// False when any request lacked a usage report.
    pub usage_complete: bool,
    pub total_dollars: Decimal,
    pub dollars_by_model: BTreeMap<String, Decimal>,
    pub extracted_pairs: u64,
    /// `1000 · total / extracted_pairs`; absent when nothing was extracted.
    pub dollars_per_1k_pairs: Option<Decimal>,
}

/// Dollar totals for a set of usage records:
/// `Σ (prompt_tokens · input_rate + completion_tokens · output_rate) / 1000`.
pub fn estimate_cost(records: &[UsageRecord], extracted_pairs: u64, prices: &PriceTable) -> Result<CostReport, CostError> {
    let thousand = Decimal::from(1000);
    let mut by_model: BTreeMap<String, Decimal> = BTreeMap::new();
    let mut report = CostReport {
        price_table_version: prices.version.clone(),
        requests: records.len() as u64,
        retries: 0,
        prompt_tokens: 0,
        completion_tokens: 0,
        usage_complete: true,
        total_dollars: Decimal::ZERO,
        dollars_by_model: BTreeMap::new(),
        extracted_pairs,
        dollars_per_1k_pairs: None,
    };
    for record in records {
        let price = prices.get(&record.model)?;
        let cost = (Decimal::from(record.prompt_tokens) * price.input_per_1k
            + Decimal::from(record.completion_tokens) * price.output_per_1k)
            / thousand;
        *by_model.entry(record.model.clone()).or_default() += cost;
        report.total_dollars += cost;
        report.prompt_tokens += record.prompt_tokens;
        report.completion_tokens += record.completion_tokens;
        report.retries += u64::from(record.retries);
        report.usage_complete &= record.usage_reported || !record.succeeded;
    }
    report.dollars_by_model = by_model;
    if extracted_pairs > 0 {
        report.dollars_per_1k_pairs = Some(thousand * report.total_dollars / Decimal::from(extracted_pairs));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::ChatMessage;
    use std::str::FromStr;

    fn prompt() -> ChatPrompt {
        ChatPrompt::new(vec![ChatMessage::system("s"), ChatMessage::user("Product title: x")]).unwrap()
    }

    fn record(model: &str, prompt_tokens: u64, completion_tokens: u64) -> UsageRecord {
        UsageRecord {
            model: model.into(),
            prompt_tokens,
            completion_tokens,
            usage_reported: true,
            approx_prompt_tokens: 0,
            retries: 0,
            succeeded: true,
        }
    }

    fn d(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    fn prices() -> PriceTable {
        PriceTable::from_toml(
            r#"
version = "test"
[models.m]
input_per_1k = "0.001"
output_per_1k = "0.002"
"#,
        )
        .unwrap()
    }

    #[test]
    fn empty_ledger_costs_nothing() {
        let report = estimate_cost(&[], 0, &prices()).unwrap();
        assert_eq!(report.total_dollars, Decimal::ZERO);
        assert_eq!(report.dollars_per_1k_pairs, None);
    }

    #[test]
    fn thousand_prompt_tokens_hundred_pairs() {
        let report = estimate_cost(&[record("m", 1000, 0)], 100, &prices()).unwrap();
        assert_eq!(report.total_dollars, d("0.001"));
        assert_eq!(report.dollars_per_1k_pairs, Some(d("0.01")));
    }

    #[test]
    fn missing_price_is_an_error() {
        assert_eq!(
            estimate_cost(&[record("other", 1, 1)], 1, &prices()),
            Err(CostError::MissingPrice("other".into()))
        );
    }

    #[test]
    fn negative_rates_rejected() {
        let err = PriceTable::from_toml("version='x'\n[models.m]\ninput_per_1k='-1'\noutput_per_1k='0'\n");
        assert_eq!(err, Err(CostError::NegativeRate("m".into())));
    }

    #[test]
    fn builtin_prices_parse() {
        let table = PriceTable::builtin();
        assert!(table.get("gpt-3.5-turbo-0613").is_ok());
        assert!(table.get("gpt-4-0613").is_ok());
    }

    #[test]
    fn retry_delays_strictly_increase() {
        let policy = RetryPolicy::new(6, Duration::from_millis(100), 2.0).unwrap();
        let delays = policy.delays();
        assert_eq!(delays.len(), 5);
        assert!(delays.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(delays[0], Duration::from_millis(100));
        assert_eq!(delays[3], Duration::from_millis(800));
        assert!(RetryPolicy::new(0, Duration::from_millis(1), 2.0).is_err());
        assert!(RetryPolicy::new(3, Duration::from_millis(1), 1.0).is_err());
    }

    #[test]
    fn request_key_ignores_nothing_but_is_stable() {
        let a = ChatRequest::new("m", prompt());
        let b = ChatRequest::new("m", prompt());
        assert_eq!(a.content_key(), b.content_key());
        let mut c = b.clone();
        c.temperature = 0.5;
        assert_ne!(a.content_key(), c.content_key());
        assert_eq!(ChatRequest::new("m", prompt()).temperature, 0.0);
    }

    #[test]
    fn approx_tokens_rounds_up() {
        // "s" + "Product title: x" = 17 chars
        assert_eq!(approx_tokens(&prompt()), 5);
    }

    #[test]
    fn error_classification() {
        assert!(BackendError::RateLimited("x".into()).is_retryable());
        assert!(BackendError::Http { status: 503, body: String::new() }.is_retryable());
        assert!(!BackendError::Http { status: 400, body: String::new() }.is_retryable());
        assert!(BackendError::Auth("x".into()).is_fatal());
        assert!(!BackendError::Protocol { message: "m".into(), raw: "r".into() }.is_retryable());
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::new(200.0, 1).unwrap();
        let start = Instant::now();
        for _ in 0..5 {
            limiter.acquire();
        }
        // first token is immediate, the remaining four need ~5 ms each
        assert!(start.elapsed() >= Duration::from_millis(18), "{:?}", start.elapsed());
    }

    #[test]
    fn ledger_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        {
            let ledger = CostLedger::with_file(&path).unwrap();
            ledger.record(record("m", 10, 2));
        }
        let reopened = CostLedger::with_file(&path).unwrap();
        reopened.record(record("m", 5, 1));
        assert_eq!(load_records(&path).unwrap(), vec![record("m", 10, 2), record("m", 5, 1)]);
        assert_eq!(reopened.len(), 2);
    }
}
