//! Five-case outcome categorization, precision/recall/F1, the dictionary
//! baseline and the seen-value analysis.
//!
//! Every (offer, schema attribute) slot falls into exactly one case:
//!
//! | truth  | prediction     | case |
//! |--------|----------------|------|
//! | absent | absent         | NN   |
//! | absent | value          | NV   |
//! | value  | absent         | VN   |
//! | value  | same value     | VC   |
//! | value  | other value    | VW   |

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::parse::{normalize_value, ExtractionResult, ParseStatus};
use crate::schema::{SchemaError, SchemaRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    NN,
    NV,
    VN,
    VC,
    VW,
}

/// How predicted and true values are compared. Both sides are always
/// whitespace-normalized first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    #[default]
    Exact,
    CaseInsensitive,
}

impl MatchMode {
    fn same(self, a: &str, b: &str) -> bool {
        match self {
            MatchMode::Exact => a == b,
            MatchMode::CaseInsensitive => a.to_lowercase() == b.to_lowercase(),
        }
    }
}

/// Exact-match categorization of pre-normalized values.
pub fn categorize(truth: Option<&str>, predicted: Option<&str>) -> Outcome {
    categorize_with(MatchMode::Exact, truth, predicted)
}

pub fn categorize_with(mode: MatchMode, truth: Option<&str>, predicted: Option<&str>) -> Outcome {
    match (truth, predicted) {
        (None, None) => Outcome::NN,
        (None, Some(_)) => Outcome::NV,
        (Some(_), None) => Outcome::VN,
        (Some(t), Some(p)) if mode.same(t, p) => Outcome::VC,
        (Some(_), Some(_)) => Outcome::VW,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub nn: u64,
    pub nv: u64,
    pub vn: u64,
    pub vc: u64,
    pub vw: u64,
}

impl EvalCounts {
    pub fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::NN => self.nn += 1,
            Outcome::NV => self.nv += 1,
            Outcome::VN => self.vn += 1,
            Outcome::VC => self.vc += 1,
            Outcome::VW => self.vw += 1,
        }
    }

    pub fn merge(&mut self, other: &EvalCounts) {
        self.nn += other.nn;
        self.nv += other.nv;
        self.vn += other.vn;
        self.vc += other.vc;
        self.vw += other.vw;
    }

    pub fn total(&self) -> u64 {
        self.nn + self.nv + self.vn + self.vc + self.vw
    }
}

impl FromIterator<Outcome> for EvalCounts {
    fn from_iter<I: IntoIterator<Item = Outcome>>(iter: I) -> Self {
        let mut counts = EvalCounts::default();
        iter.into_iter().for_each(|o| counts.add(o));
        counts
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// P = VC/(NV+VC+VW), R = VC/(VN+VC+VW), F1 = 2PR/(P+R); a zero denominator
/// gives 0.
///
/// F1 is evaluated as `2·VC / ((NV+VC+VW) + (VN+VC+VW))`, which is the same
/// rational number as `2PR/(P+R)` but costs one rounding instead of several.
pub fn compute_metrics(c: &EvalCounts) -> Metrics {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let predicted = c.nv + c.vc + c.vw;
    let expected = c.vn + c.vc + c.vw;
    Metrics {
        precision: ratio(c.vc, predicted),
        recall: ratio(c.vc, expected),
        f1: if c.vc == 0 { 0.0 } else { ratio(2 * c.vc, predicted + expected) },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub counts: EvalCounts,
    pub metrics: Metrics,
}

impl From<EvalCounts> for Scored {
    fn from(counts: EvalCounts) -> Self {
        Scored {
            counts,
            metrics: compute_metrics(&counts),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("result for offer `{0}` which is not in the test set")]
    UnknownOffer(String),
    #[error("more than one result for offer `{0}`")]
    DuplicateResult(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub match_mode: MatchMode,
    pub offers: usize,
    /// Test offers without a result; scored as if nothing was predicted.
    pub missing_results: usize,
    pub parse_status: BTreeMap<String, usize>,
    /// Micro-averaged over all slots.
    pub overall: Scored,
    pub per_category: BTreeMap<String, Scored>,
    pub per_attribute: BTreeMap<String, BTreeMap<String, Scored>>,
    /// Unweighted mean of the per-attribute F1 scores.
    pub macro_attribute_f1: f64,
}

/// Scores `results` against `test`: one slot per (test offer, schema
/// attribute of its category).
pub fn evaluate_run(
    results: &[ExtractionResult],
    test: &Dataset,
    registry: &SchemaRegistry,
    mode: MatchMode,
) -> Result<EvalReport, EvalError> {
    let mut by_offer: BTreeMap<&str, &ExtractionResult> = BTreeMap::new();
    for result in results {
        if test.get(&result.offer_id).is_none() {
            return Err(EvalError::UnknownOffer(result.offer_id.clone()));
        }
        if by_offer.insert(&result.offer_id, result).is_some() {
            return Err(EvalError::DuplicateResult(result.offer_id.clone()));
        }
    }

    let mut overall = EvalCounts::default();
    let mut per_category: BTreeMap<String, EvalCounts> = BTreeMap::new();
    let mut per_attribute: BTreeMap<String, BTreeMap<String, EvalCounts>> = BTreeMap::new();
    let mut parse_status: BTreeMap<String, usize> = BTreeMap::new();
    let mut missing_results = 0;

    for offer in test.offers() {
        let schema = registry.get(&offer.category)?;
        let result = by_offer.get(offer.offer_id.as_str());
        match result {
            Some(r) => *parse_status.entry(status_name(r.parse_status).into()).or_default() += 1,
            None => missing_results += 1,
        }
        if let Some(extra) = offer.truth.keys().find(|a| !schema.contains(a)) {
            log::warn!("offer {}: truth attribute `{extra}` is not in the schema and is not scored", offer.offer_id);
        }
        let category = per_category.entry(offer.category.clone()).or_default();
        let attributes = per_attribute.entry(offer.category.clone()).or_default();
        for attribute in schema.attribute_names() {
            let truth = offer.truth.get(attribute).and_then(|v| normalize_value(v));
            let predicted = result.and_then(|r| r.value(attribute)).and_then(normalize_value);
            let outcome = categorize_with(mode, truth.as_deref(), predicted.as_deref());
            overall.add(outcome);
            category.add(outcome);
            attributes.entry(attribute.to_string()).or_default().add(outcome);
        }
    }

    let per_attribute: BTreeMap<String, BTreeMap<String, Scored>> = per_attribute
        .into_iter()
        .map(|(cat, attrs)| (cat, attrs.into_iter().map(|(a, c)| (a, c.into())).collect()))
        .collect();
    let attribute_f1: Vec<f64> = per_attribute.values().flat_map(|m| m.values().map(|s| s.metrics.f1)).collect();
    let macro_attribute_f1 = if attribute_f1.is_empty() {
        0.0
    } else {
        attribute_f1.iter().sum::<f64>() / attribute_f1.len() as f64
    };
    Ok(EvalReport {
        match_mode: mode,
        offers: test.len(),
        missing_results,
        parse_status,
        overall: overall.into(),
        per_category: per_category.into_iter().map(|(k, c)| (k, c.into())).collect(),
        per_attribute,
        macro_attribute_f1,
    })
}

fn status_name(status: ParseStatus) -> &'static str {
    match status {
        ParseStatus::Ok => "ok",
        ParseStatus::Repaired => "repaired",
        ParseStatus::Failed => "failed",
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        let row = |out: &mut String, name: &str, s: &Scored| {
            let c = &s.counts;
            let _ = writeln!(
                out,
                "{name:<32} {:>7} {:>7} {:>7}  {:>6} {:>6} {:>6} {:>6} {:>6}",
                pct(s.metrics.precision),
                pct(s.metrics.recall),
                pct(s.metrics.f1),
                c.nn,
                c.nv,
                c.vn,
                c.vc,
                c.vw
            );
        };
        let _ = writeln!(
            out,
            "{:<32} {:>7} {:>7} {:>7}  {:>6} {:>6} {:>6} {:>6} {:>6}",
            "scope", "P", "R", "F1", "NN", "NV", "VN", "VC", "VW"
        );
        row(&mut out, "overall (micro)", &self.overall);
        for (category, scored) in &self.per_category {
            row(&mut out, category, scored);
        }
        let _ = writeln!(out, "macro attribute F1: {}", pct(self.macro_attribute_f1));
        let _ = writeln!(out, "offers: {}, without result: {}", self.offers, self.missing_results);
        f.write_str(&out)
    }
}

// ---------------------------------------------------------------------------
// Dictionary baseline
// ---------------------------------------------------------------------------

/// Known values per (category, attribute), collected from training truth.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueDictionary {
    pub entries: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
}

impl ValueDictionary {
    pub fn values(&self, category: &str, attribute: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(category)?.get(attribute)
    }
}

pub fn dict_build(train: &Dataset) -> ValueDictionary {
    let mut dict = ValueDictionary::default();
    for offer in train.offers() {
        let category = dict.entries.entry(offer.category.clone()).or_default();
        for (attribute, value) in &offer.truth {
            if let Some(v) = normalize_value(value) {
                category.entry(attribute.clone()).or_default().insert(v);
            }
        }
    }
    dict
}

/// Lowercased alphanumeric runs.
fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// For each attribute of the category, the longest dictionary value whose
/// tokens occur as a contiguous run in the title (case-insensitive). Ties go
/// to the value that sorts first.
pub fn dict_extract(offer_id: &str, title: &str, category: &str, dict: &ValueDictionary) -> ExtractionResult {
    let title_tokens = tokens(title);
    let mut values = BTreeMap::new();
    for (attribute, known) in dict.entries.get(category).into_iter().flatten() {
        let mut best: Option<&String> = None;
        for value in known {
            if contains_run(&title_tokens, &tokens(value))
                && best.is_none_or(|b| value.chars().count() > b.chars().count())
            {
                best = Some(value);
            }
        }
        values.insert(attribute.clone(), best.cloned());
    }
    ExtractionResult {
        offer_id: offer_id.to_string(),
        values,
        parse_status: ParseStatus::Ok,
        raw_ref: None,
    }
}

// ---------------------------------------------------------------------------
// Seen-value analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeenRatio {
    /// Distinct value strings across all sampled example lists.
    pub unique_sampled: usize,
    pub distinct_test_pairs: usize,
    /// Share of distinct test (attribute, value) pairs whose value is among
    /// that attribute's sampled examples.
    pub seen_fraction: f64,
}

/// Compares the example values embedded in `sampled` against the test truth.
pub fn seen_ratio(sampled: &SchemaRegistry, test: &Dataset) -> SeenRatio {
    let unique_sampled: HashSet<&str> = sampled
        .iter()
        .flat_map(|s| s.attributes().iter().flat_map(|a| a.examples.iter().map(String::as_str)))
        .collect();
    let test_pairs: BTreeSet<(&str, &str, &str)> = test
        .offers()
        .iter()
        .flat_map(|o| o.truth.iter().map(move |(a, v)| (o.category.as_str(), a.as_str(), v.as_str())))
        .collect();
    let seen = test_pairs
        .iter()
        .filter(|(c, a, v)| {
            sampled
                .get(c)
                .ok()
                .and_then(|s| s.get(a))
                .is_some_and(|spec| spec.examples.iter().any(|e| e == v))
        })
        .count();
    SeenRatio {
        unique_sampled: unique_sampled.len(),
        distinct_test_pairs: test_pairs.len(),
        seen_fraction: if test_pairs.is_empty() {
            0.0
        } else {
            seen as f64 / test_pairs.len() as f64
        },
    }
}
