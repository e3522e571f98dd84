//! Product offers, datasets, raw importers and the stratified train/test split.
//!
//! The canonical on-disk format is one JSON object per line:
//!
//! ```text
//! {"id":"toothbrush-0001","category":"toothbrush","title":"Oral-B Pro 1000 ...","target_scores":{"Brand":{"Oral-B":1}}}
//! ```
//!
//! `target_scores` maps every attribute to a single-entry `{value: 1}` object.
//! When reading, `n/a` entries are skipped and, for attributes listing several
//! accepted values, the first one is kept.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::parse::normalize_value;
use crate::util::scoped_rng;

/// Category assigned to AE-110K triples when the raw file has no category column.
pub const AE110K_DEFAULT_CATEGORY: &str = "sports_entertainment";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid offer: {0}")]
    InvalidOffer(String),
    #[error("duplicate offer id `{0}`")]
    DuplicateId(String),
    #[error("cannot split category `{category}`: {offers} offers, at least 4 required")]
    CategoryTooSmall { category: String, offers: usize },
    #[error("dataset `{0}` is empty")]
    Empty(String),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        CorpusError::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

/// One product title with its ground-truth attribute/value pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductOffer {
    pub offer_id: String,
    pub category: String,
    pub title: String,
    /// Attribute name to value. Attributes missing from the title are absent.
    pub truth: BTreeMap<String, String>,
}

impl ProductOffer {
    pub fn new(
        offer_id: impl Into<String>,
        category: impl Into<String>,
        title: impl Into<String>,
        truth: BTreeMap<String, String>,
    ) -> Result<Self, CorpusError> {
        let offer_id = offer_id.into();
        let category = category.into();
        let title = title.into().trim().to_string();
        if offer_id.is_empty() {
            return Err(CorpusError::InvalidOffer("empty offer id".into()));
        }
        if category.trim().is_empty() {
            return Err(CorpusError::InvalidOffer(format!("{offer_id}: empty category")));
        }
        if title.is_empty() {
            return Err(CorpusError::InvalidOffer(format!("{offer_id}: empty title")));
        }
        if title.contains(['\n', '\r']) {
            return Err(CorpusError::InvalidOffer(format!("{offer_id}: multi-line title")));
        }
        for (attribute, value) in &truth {
            if attribute.trim().is_empty() {
                return Err(CorpusError::InvalidOffer(format!("{offer_id}: empty attribute name")));
            }
            if normalize_value(value).is_none() {
                return Err(CorpusError::InvalidOffer(format!(
                    "{offer_id}: attribute `{attribute}` has no value"
                )));
            }
        }
        Ok(ProductOffer {
            offer_id,
            category,
            title,
            truth,
        })
    }

    pub fn pair_count(&self) -> usize {
        self.truth.len()
    }
}

#[derive(Serialize, Deserialize)]
struct CanonicalRecord {
    id: String,
    category: String,
    title: String,
    target_scores: Map<String, Value>,
}

impl From<&ProductOffer> for CanonicalRecord {
    fn from(offer: &ProductOffer) -> Self {
        let target_scores = offer
            .truth
            .iter()
            .map(|(attribute, value)| {
                let mut scores = Map::new();
                scores.insert(value.clone(), Value::from(1));
                (attribute.clone(), Value::Object(scores))
            })
            .collect();
        CanonicalRecord {
            id: offer.offer_id.clone(),
            category: offer.category.clone(),
            title: offer.title.clone(),
            target_scores,
        }
    }
}

impl CanonicalRecord {
    fn into_offer(self) -> Result<ProductOffer, String> {
        let mut truth = BTreeMap::new();
        for (attribute, scores) in self.target_scores {
            let value = match scores {
                Value::Object(scores) => scores.into_iter().map(|(v, _)| v).find_map(|v| normalize_value(&v)),
                Value::String(v) => normalize_value(&v),
                Value::Null => None,
                other => return Err(format!("attribute `{attribute}`: unexpected score entry {other}")),
            };
            if let Some(value) = value {
                truth.insert(attribute, value);
            }
        }
        ProductOffer::new(self.id, self.category, self.title, truth).map_err(|e| e.to_string())
    }
}

/// An ordered collection of offers. Order is the canonical order used for all
/// tie-breaking downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    offers: Vec<ProductOffer>,
    categories: BTreeSet<String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, offers: Vec<ProductOffer>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(offers.len());
        for offer in &offers {
            if !seen.insert(offer.offer_id.as_str()) {
                return Err(CorpusError::DuplicateId(offer.offer_id.clone()));
            }
        }
        let categories = offers.iter().map(|o| o.category.clone()).collect();
        Ok(Dataset {
            name: name.into(),
            offers,
            categories,
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Dataset {
            name: name.into(),
            offers: Vec::new(),
            categories: BTreeSet::new(),
        }
    }

    pub fn offers(&self) -> &[ProductOffer] {
        &self.offers
    }

    pub fn categories(&self) -> &BTreeSet<String> {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.offers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offers.is_empty()
    }

    pub fn get(&self, offer_id: &str) -> Option<&ProductOffer> {
        self.offers.iter().find(|o| o.offer_id == offer_id)
    }

    pub fn offers_in<'a>(&'a self, category: &'a str) -> impl Iterator<Item = &'a ProductOffer> + 'a {
        self.offers.iter().filter(move |o| o.category == category)
    }

    /// Offers of `self` followed by offers of `other`; ids must stay unique.
    pub fn concat(&self, name: impl Into<String>, other: &Dataset) -> Result<Dataset, CorpusError> {
        let offers = self.offers.iter().chain(other.offers.iter()).cloned().collect();
        Dataset::new(name, offers)
    }

    /// Canonical JSONL rendering, one offer per line, trailing newline.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for offer in &self.offers {
            let record = CanonicalRecord::from(offer);
            out.push_str(&serde_json::to_string(&record).expect("canonical record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(name: impl Into<String>, text: &str, path: &Path) -> Result<Self, CorpusError> {
        let mut offers = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: CanonicalRecord =
                serde_json::from_str(line).map_err(|e| CorpusError::parse(path, idx + 1, e.to_string()))?;
            offers.push(record.into_offer().map_err(|e| CorpusError::parse(path, idx + 1, e))?);
        }
        Dataset::new(name, offers)
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Dataset::from_jsonl(name, &text, path)
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        crate::util::write_atomic(path, self.to_jsonl().as_bytes()).map_err(|e| CorpusError::io(path, e))
    }

    fn subset(&self, name: String, keep: &HashSet<&str>) -> Dataset {
        let offers: Vec<ProductOffer> = self
            .offers
            .iter()
            .filter(|o| keep.contains(o.offer_id.as_str()))
            .cloned()
            .collect();
        Dataset::new(name, offers).expect("subset of a valid dataset is valid")
    }
}

// ---------------------------------------------------------------------------
// Raw importers
// ---------------------------------------------------------------------------

/// Import the human-annotated OA-Mine subset.
///
/// Expected layout: one file per category named `<category>.jsonl`. Each line
/// is either `[title, [[value, attribute], ...]]` or
/// `{"title": ..., "attributes": {attribute: value}}`. Files with other
/// extensions are ignored; categories are processed in file-name order.
pub fn import_oamine(dir: &Path) -> Result<Dataset, CorpusError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CorpusError::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| CorpusError::io(dir, e)))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|ext| ext == "jsonl"));
    files.sort();

    let mut offers = Vec::new();
    for file in &files {
        let category = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = fs::read_to_string(file).map_err(|e| CorpusError::io(file, e))?;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = idx + 1;
            let value: Value =
                serde_json::from_str(line).map_err(|e| CorpusError::parse(file, line_no, e.to_string()))?;
            let (title, pairs) = oamine_record(&value).map_err(|msg| CorpusError::parse(file, line_no, msg))?;
            let mut truth = BTreeMap::new();
            for (attribute, raw_value) in pairs {
                let attribute = attribute.trim().to_string();
                if let Some(v) = normalize_value(&raw_value) {
                    truth.entry(attribute).or_insert(v);
                }
            }
            let offer = ProductOffer::new(
                format!("{category}-{line_no:04}"),
                category.clone(),
                collapse_whitespace(&title),
                truth,
            )
            .map_err(|e| CorpusError::parse(file, line_no, e.to_string()))?;
            offers.push(offer);
        }
    }
    Dataset::new("oa-mine", offers)
}

fn oamine_record(value: &Value) -> Result<(String, Vec<(String, String)>), String> {
    match value {
        Value::Array(items) if items.len() == 2 => {
            let title = items[0].as_str().ok_or("first element must be the title string")?;
            let spans = items[1].as_array().ok_or("second element must be a list of [value, attribute]")?;
            let mut pairs = Vec::with_capacity(spans.len());
            for span in spans {
                match span.as_array().map(Vec::as_slice) {
                    Some([Value::String(v), Value::String(a)]) => pairs.push((a.clone(), v.clone())),
                    _ => return Err(format!("malformed span {span}")),
                }
            }
            Ok((title.to_string(), pairs))
        }
        Value::Object(obj) => {
            let title = obj
                .get("title")
                .and_then(Value::as_str)
                .ok_or("missing string field `title`")?;
            let attrs = obj
                .get("attributes")
                .and_then(Value::as_object)
                .ok_or("missing object field `attributes`")?;
            let mut pairs = Vec::with_capacity(attrs.len());
            for (a, v) in attrs {
                match v {
                    Value::String(s) => pairs.push((a.clone(), s.clone())),
                    Value::Null => {}
                    other => return Err(format!("attribute `{a}`: expected string, got {other}")),
                }
            }
            Ok((title.to_string(), pairs))
        }
        _ => Err("expected [title, spans] array or {title, attributes} object".into()),
    }
}

/// Import AE-110K triples: `title<TAB>attribute<TAB>value[<TAB>category]`.
/// The published file separates fields with U+0001 instead of tabs; lines
/// without a tab are split on that.
///
/// Offers are formed by grouping triples with an identical title. Values that
/// are empty, `null` or `n/a` are dropped, as are exact duplicate pairs. When
/// one title carries several values for an attribute the first is kept.
pub fn import_ae110k(path: &Path) -> Result<Dataset, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;

    struct Group {
        category: String,
        truth: BTreeMap<String, String>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Group> = HashMap::new();

    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sep = if line.contains('\t') { '\t' } else { '\u{1}' };
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(CorpusError::parse(
                path,
                idx + 1,
                format!("expected 3 or 4 separated fields, found {}", fields.len()),
            ));
        }
        let title = collapse_whitespace(fields[0]);
        if title.is_empty() {
            return Err(CorpusError::parse(path, idx + 1, "empty title"));
        }
        let attribute = fields[1].trim();
        if attribute.is_empty() {
            return Err(CorpusError::parse(path, idx + 1, "empty attribute"));
        }
        let category = fields
            .get(3)
            .map(|c| c.trim())
            .filter(|c| !c.is_empty())
            .unwrap_or(AE110K_DEFAULT_CATEGORY);

        let group = groups.entry(title.clone()).or_insert_with(|| {
            order.push(title.clone());
            Group {
                category: category.to_string(),
                truth: BTreeMap::new(),
            }
        });
        if is_null_value(fields[2]) {
            continue;
        }
        if let Some(value) = normalize_value(fields[2]) {
            match group.truth.get(attribute) {
                Some(existing) if *existing != value => {
                    log::debug!("{}:{}: `{title}` keeps first value for `{attribute}`", path.display(), idx + 1);
                }
                Some(_) => {}
                None => {
                    group.truth.insert(attribute.to_string(), value);
                }
            }
        }
    }

    let mut offers = Vec::with_capacity(order.len());
    for (idx, title) in order.into_iter().enumerate() {
        let group = groups.remove(&title).expect("every ordered title has a group");
        offers.push(ProductOffer::new(format!("ae110k-{idx:06}"), group.category, title, group.truth)?);
    }
    Dataset::new("ae-110k", offers)
}

fn is_null_value(raw: &str) -> bool {
    let v = raw.trim();
    v.is_empty() || v.eq_ignore_ascii_case("null") || v.eq_ignore_ascii_case(crate::NOT_AVAILABLE)
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Why an attribute could not be placed on both sides of a split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    /// Only one offer carries the attribute.
    SingleOffer,
    /// No coverage-preserving swap was found.
    NoSafeSwap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedAttribute {
    pub category: String,
    pub attribute: String,
    pub reason: FlagReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitBundle {
    pub train_large: Dataset,
    pub train_small: Dataset,
    pub test: Dataset,
    pub seed: u64,
    /// Attributes for which the both-sides coverage could not be established.
    pub flagged: Vec<FlaggedAttribute>,
}

/// Number of training offers for a stratum of `n`: round(0.75 n), ties to train.
pub fn train_count(n: usize) -> usize {
    (3 * n + 2) / 4
}

/// Size of the small training stratum: round-half-up(0.2 n), at least 1.
pub fn small_count(n: usize) -> usize {
    ((2 * n + 5) / 10).max(1)
}

/// Stratified 75:25 split with attribute-coverage repair, plus the 20% small
/// training subsample.
pub fn split_dataset(d: &Dataset, seed: u64) -> Result<SplitBundle, CorpusError> {
    if d.is_empty() {
        return Err(CorpusError::Empty(d.name.clone()));
    }
    for category in d.categories() {
        let n = d.offers_in(category).count();
        if n < 4 {
            return Err(CorpusError::CategoryTooSmall {
                category: category.clone(),
                offers: n,
            });
        }
    }

    let mut test_ids: HashSet<&str> = HashSet::new();
    let mut train_ids: HashSet<&str> = HashSet::new();
    let mut flagged = Vec::new();

    for category in d.categories() {
        let offers: Vec<&ProductOffer> = d.offers_in(category).collect();
        let mut rng = scoped_rng(seed, &["split", category]);
        let mut order: Vec<usize> = (0..offers.len()).collect();
        order.shuffle(&mut rng);

        let mut in_test = vec![false; offers.len()];
        for &pos in &order[train_count(offers.len())..] {
            in_test[pos] = true;
        }
        repair_coverage(category, &offers, &mut in_test, &mut flagged);

        for (offer, is_test) in offers.iter().zip(&in_test) {
            if *is_test {
                test_ids.insert(offer.offer_id.as_str());
            } else {
                train_ids.insert(offer.offer_id.as_str());
            }
        }
    }

    let train_large = d.subset(format!("{}.train_large", d.name), &train_ids);
    let test = d.subset(format!("{}.test", d.name), &test_ids);
    let mut train_small = subsample_small(&train_large, seed)?;
    train_small.name = format!("{}.train_small", d.name);

    Ok(SplitBundle {
        train_large,
        train_small,
        test,
        seed,
        flagged,
    })
}

/// Greedy swap repair: for each attribute that lives on only one side, move
/// the lowest-index holder across and bring back the lowest-index offer whose
/// move keeps every already-covered attribute covered.
fn repair_coverage(
    category: &str,
    offers: &[&ProductOffer],
    in_test: &mut [bool],
    flagged: &mut Vec<FlaggedAttribute>,
) {
    let mut holders: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, offer) in offers.iter().enumerate() {
        for attribute in offer.truth.keys() {
            holders.entry(attribute.as_str()).or_default().push(idx);
        }
    }

    let mut unfixable: BTreeSet<&str> = BTreeSet::new();
    for (attribute, idxs) in &holders {
        if idxs.len() < 2 {
            unfixable.insert(attribute);
            flagged.push(FlaggedAttribute {
                category: category.to_string(),
                attribute: attribute.to_string(),
                reason: FlagReason::SingleOffer,
            });
        }
    }

    let counts = |in_test: &[bool]| -> HashMap<&str, (usize, usize)> {
        let mut c: HashMap<&str, (usize, usize)> = HashMap::new();
        for (idx, offer) in offers.iter().enumerate() {
            for attribute in offer.truth.keys() {
                let e = c.entry(attribute.as_str()).or_default();
                if in_test[idx] {
                    e.1 += 1;
                } else {
                    e.0 += 1;
                }
            }
        }
        c
    };

    let max_rounds = holders.len() * 4 + 8;
    for _ in 0..max_rounds {
        let mut changed = false;
        for (attribute, idxs) in &holders {
            if unfixable.contains(attribute) {
                continue;
            }
            let on_test = idxs.iter().filter(|&&i| in_test[i]).count();
            let missing_from_test = match on_test {
                0 => true,
                n if n == idxs.len() => false,
                _ => continue,
            };
            let current = counts(in_test);
            if let Some((from, back)) = find_swap(offers, in_test, idxs, missing_from_test, &current) {
                in_test[from] = !in_test[from];
                in_test[back] = !in_test[back];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    for (attribute, idxs) in &holders {
        if unfixable.contains(attribute) {
            continue;
        }
        let on_test = idxs.iter().filter(|&&i| in_test[i]).count();
        if on_test == 0 || on_test == idxs.len() {
            flagged.push(FlaggedAttribute {
                category: category.to_string(),
                attribute: attribute.to_string(),
                reason: FlagReason::NoSafeSwap,
            });
        }
    }
}

fn find_swap(
    offers: &[&ProductOffer],
    in_test: &[bool],
    holders: &[usize],
    missing_from_test: bool,
    counts: &HashMap<&str, (usize, usize)>,
) -> Option<(usize, usize)> {
    // `from` sits on the full side and moves to the missing side; `back` goes the other way.
    let full_side_is_test = !missing_from_test;
    let candidates_from = holders.iter().copied().filter(|&i| in_test[i] == full_side_is_test);
    for from in candidates_from {
        for back in (0..offers.len()).filter(|&i| in_test[i] != full_side_is_test) {
            if swap_keeps_coverage(offers[from], offers[back], full_side_is_test, counts) {
                return Some((from, back));
            }
        }
    }
    None
}

fn swap_keeps_coverage(
    from: &ProductOffer,
    back: &ProductOffer,
    from_is_test: bool,
    counts: &HashMap<&str, (usize, usize)>,
) -> bool {
    let mut delta: HashMap<&str, (isize, isize)> = HashMap::new();
    // (train, test) deltas
    let sign = |is_test: bool| if is_test { (1isize, -1isize) } else { (-1, 1) };
    let (from_train, from_test) = sign(from_is_test);
    for a in from.truth.keys() {
        let e = delta.entry(a.as_str()).or_default();
        e.0 += from_train;
        e.1 += from_test;
    }
    let (back_train, back_test) = sign(!from_is_test);
    for a in back.truth.keys() {
        let e = delta.entry(a.as_str()).or_default();
        e.0 += back_train;
        e.1 += back_test;
    }
    delta.iter().all(|(a, (dt, ds))| {
        let (train, test) = counts.get(a).copied().unwrap_or_default();
        let was_covered = train > 0 && test > 0;
        let train_after = train as isize + dt;
        let test_after = test as isize + ds;
        !was_covered || (train_after > 0 && test_after > 0)
    })
}

/// Per-category stratified 20% subsample (round half up, at least one offer).
pub fn subsample_small(train: &Dataset, seed: u64) -> Result<Dataset, CorpusError> {
    if train.is_empty() {
        return Err(CorpusError::Empty(train.name.clone()));
    }
    let mut keep: HashSet<&str> = HashSet::new();
    for category in train.categories() {
        let offers: Vec<&ProductOffer> = train.offers_in(category).collect();
        let mut rng = scoped_rng(seed, &["small", category]);
        let mut order: Vec<usize> = (0..offers.len()).collect();
        order.shuffle(&mut rng);
        for &pos in order.iter().take(small_count(offers.len())) {
            keep.insert(offers[pos].offer_id.as_str());
        }
    }
    Ok(train.subset(format!("{}.small", train.name), &keep))
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub unique_categories: usize,
    /// Distinct (category, attribute) pairs.
    pub unique_attributes: usize,
    pub av_pairs: usize,
    /// Distinct (category, attribute, value) triples.
    pub unique_av_pairs: usize,
    pub offers: usize,
}

pub fn dataset_stats(d: &Dataset) -> DatasetStats {
    let mut attributes: HashSet<(&str, &str)> = HashSet::new();
    let mut pairs: HashSet<(&str, &str, &str)> = HashSet::new();
    let mut av_pairs = 0;
    for offer in d.offers() {
        for (a, v) in &offer.truth {
            attributes.insert((&offer.category, a));
            pairs.insert((&offer.category, a, v));
            av_pairs += 1;
        }
    }
    DatasetStats {
        unique_categories: d.categories().len(),
        unique_attributes: attributes.len(),
        av_pairs,
        unique_av_pairs: pairs.len(),
        offers: d.len(),
    }
}
