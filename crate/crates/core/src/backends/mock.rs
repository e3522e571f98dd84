//! Offline backends for tests and dry runs.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::seq::SliceRandom;
use serde_json::{Map, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};
use crate::corpus::Dataset;
use crate::prompts::TemplateSet;
use crate::util::scoped_rng;

/// Value the oracle substitutes for a corrupted pair. Never a real value.
pub const CORRUPTED_VALUE: &str = "\u{2063}corrupted\u{2063}";

/// Answers each prompt with the ground truth of the offer whose title appears
/// in the task input. A seeded fraction of all truth pairs is answered with
/// [`CORRUPTED_VALUE`] instead. Unknown titles get `{}`.
#[derive(Debug)]
pub struct OracleBackend {
    by_title: HashMap<String, String>,
    templates: TemplateSet,
    corrupted: usize,
}

impl OracleBackend {
    /// `corruption` is the fraction `p` of truth pairs to corrupt; exactly
    /// `⌊p · total_pairs⌋` pairs are chosen.
    pub fn new(truth: &Dataset, corruption: f64, seed: u64, templates: TemplateSet) -> Result<Self, BackendError> {
        if !(0.0..=1.0).contains(&corruption) {
            return Err(BackendError::Config(format!("corruption rate {corruption} outside [0, 1]")));
        }
        let mut pairs: Vec<(&str, &str)> = truth
            .offers()
            .iter()
            .flat_map(|o| o.truth.keys().map(move |a| (o.offer_id.as_str(), a.as_str())))
            .collect();
        pairs.sort_unstable();
        let count = ((corruption * pairs.len() as f64) + 1e-9).floor() as usize;
        pairs.shuffle(&mut scoped_rng(seed, &["oracle-corruption", truth.name.as_str()]));
        let chosen: HashSet<(&str, &str)> = pairs.into_iter().take(count).collect();

        let mut by_title = HashMap::new();
        for offer in truth.offers() {
            if by_title.contains_key(&offer.title) {
                log::warn!("oracle: duplicate title for {}; first offer wins", offer.offer_id);
                continue;
            }
            let object: Map<String, Value> = offer
                .truth
                .iter()
                .map(|(a, v)| {
                    let v = if chosen.contains(&(offer.offer_id.as_str(), a.as_str())) {
                        CORRUPTED_VALUE
                    } else {
                        v.as_str()
                    };
                    (a.clone(), Value::String(v.to_string()))
                })
                .collect();
            by_title.insert(offer.title.clone(), Value::Object(object).to_string());
        }
        Ok(OracleBackend {
            by_title,
            templates,
            corrupted: count,
        })
    }

    pub fn corrupted_pairs(&self) -> usize {
        self.corrupted
    }
}

impl ChatBackend for OracleBackend {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let text = self
            .templates
            .extract_title(&request.messages)
            .and_then(|t| self.by_title.get(t))
            .cloned()
            .unwrap_or_else(|| "{}".to_string());
        Ok(ChatResponse {
            text,
            usage: None,
            model: "oracle".into(),
            latency: Duration::ZERO,
        })
    }
}

/// Plays back a fixed sequence of outcomes, one per call.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    script: Mutex<VecDeque<Result<String, BackendError>>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(script: impl IntoIterator<Item = Result<String, BackendError>>) -> Self {
        ScriptedBackend {
            script: Mutex::new(script.into_iter().collect()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let next = self
            .script
            .lock()
            .expect("script lock")
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::Config("script exhausted".into())));
        next.map(|text| ChatResponse {
            text,
            usage: None,
            model: request.model.clone(),
            latency: Duration::ZERO,
        })
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<ChatResponse, BackendError> + Send + Sync;

/// Backend defined by a closure.
pub struct FnBackend {
    id: String,
    f: Box<Responder>,
}

impl FnBackend {
    pub fn new(
        id: impl Into<String>,
        f: impl Fn(&ChatRequest) -> Result<ChatResponse, BackendError> + Send + Sync + 'static,
    ) -> Self {
        FnBackend {
            id: id.into(),
            f: Box::new(f),
        }
    }
}

impl ChatBackend for FnBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (self.f)(request)
    }
}
