//! Per-category target schemas: attribute names, descriptions and example values.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{ChatClient, ChatRequest};
use crate::corpus::Dataset;
use crate::prompts::{ChatMessage, ChatPrompt, TemplateSet};
use crate::util::scoped_rng;
use crate::NOT_AVAILABLE;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("attribute `{attribute}` not found in category `{category}`")]
    UnknownAttribute { category: String, attribute: String },
    #[error("invalid schema for `{category}`: {message}")]
    Invalid { category: String, message: String },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub examples: Vec<String>,
}

impl AttributeSpec {
    pub fn named(name: impl Into<String>) -> Self {
        AttributeSpec {
            name: name.into(),
            description: None,
            examples: Vec::new(),
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }

    pub fn with_examples<I, S>(mut self, examples: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.examples = examples.into_iter().map(Into::into).collect();
        self
    }

    fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("empty attribute name".into());
        }
        let mut seen = BTreeSet::new();
        for example in &self.examples {
            if example.trim().eq_ignore_ascii_case(NOT_AVAILABLE) {
                return Err(format!("`{}` lists the n/a sentinel as an example", self.name));
            }
            if !seen.insert(example) {
                return Err(format!("`{}` repeats example `{example}`", self.name));
            }
        }
        Ok(())
    }
}

/// Ordered target schema of one product category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySchema {
    pub category: String,
    attributes: Vec<AttributeSpec>,
}

impl CategorySchema {
    pub fn new(category: impl Into<String>, attributes: Vec<AttributeSpec>) -> Result<Self, SchemaError> {
        let schema = CategorySchema {
            category: category.into(),
            attributes,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<(), SchemaError> {
        let invalid = |message: String| SchemaError::Invalid {
            category: self.category.clone(),
            message,
        };
        let mut names = BTreeSet::new();
        for attribute in &self.attributes {
            attribute.validate().map_err(invalid)?;
            if !names.insert(attribute.name.as_str()) {
                return Err(invalid(format!("duplicate attribute `{}`", attribute.name)));
            }
        }
        Ok(())
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.attributes.iter().any(|a| a.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    /// Appends attributes of `other` that this schema lacks and fills in
    /// missing descriptions. Existing entries keep their position.
    pub fn merge(&mut self, other: &CategorySchema) {
        for spec in &other.attributes {
            match self.attributes.iter_mut().find(|a| a.name == spec.name) {
                Some(existing) => {
                    if existing.description.is_none() {
                        existing.description = spec.description.clone();
                    }
                }
                None => self.attributes.push(spec.clone()),
            }
        }
    }

    /// Copy of the schema whose example lists are sampled from `train`.
    pub fn with_sampled_examples(&self, train: &Dataset, k: usize, seed: u64) -> CategorySchema {
        let mut out = self.clone();
        for attribute in &mut out.attributes {
            attribute.examples = sample_values(train, &self.category, &attribute.name, k, seed);
        }
        out
    }

    pub fn without_examples(&self) -> CategorySchema {
        let mut out = self.clone();
        for attribute in &mut out.attributes {
            attribute.examples.clear();
        }
        out
    }
}

/// Schema per category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchemaRegistry {
    schemas: BTreeMap<String, CategorySchema>,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Schemas for every category, built from the union of the datasets in order.
    pub fn from_datasets(datasets: &[&Dataset]) -> Self {
        let mut registry = SchemaRegistry::new();
        for dataset in datasets {
            for category in dataset.categories() {
                let schema = build_schema(dataset, category).expect("category comes from the dataset");
                registry.merge(schema);
            }
        }
        registry
    }

    pub fn insert(&mut self, schema: CategorySchema) {
        self.schemas.insert(schema.category.clone(), schema);
    }

    pub fn merge(&mut self, schema: CategorySchema) {
        match self.schemas.get_mut(&schema.category) {
            Some(existing) => existing.merge(&schema),
            None => self.insert(schema),
        }
    }

    pub fn get(&self, category: &str) -> Result<&CategorySchema, SchemaError> {
        self.schemas
            .get(category)
            .ok_or_else(|| SchemaError::UnknownCategory(category.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &CategorySchema> {
        self.schemas.values()
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }

    pub fn map(&self, f: impl Fn(&CategorySchema) -> CategorySchema) -> SchemaRegistry {
        SchemaRegistry {
            schemas: self.schemas.iter().map(|(k, s)| (k.clone(), f(s))).collect(),
        }
    }

    /// Writes one `<category>.json` document per category.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SchemaError> {
        let file_err = |path: &Path, e: &dyn std::fmt::Display| SchemaError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| file_err(dir, &e))?;
        for schema in self.schemas.values() {
            let path = dir.join(format!("{}.json", file_stem_for(&schema.category)));
            let mut text = serde_json::to_string_pretty(schema).map_err(|e| file_err(&path, &e))?;
            text.push('\n');
            crate::util::write_atomic(&path, text.as_bytes()).map_err(|e| file_err(&path, &e))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<SchemaRegistry, SchemaError> {
        let file_err = |path: &Path, e: &dyn std::fmt::Display| SchemaError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| file_err(dir, &e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        paths.sort();
        let mut registry = SchemaRegistry::new();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|e| file_err(&path, &e))?;
            let schema: CategorySchema = serde_json::from_str(&text).map_err(|e| file_err(&path, &e))?;
            schema.validate()?;
            registry.insert(schema);
        }
        Ok(registry)
    }
}

fn file_stem_for(category: &str) -> String {
    category
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// One attribute per ground-truth attribute observed for `category`, in
/// first-seen order over the offers.
pub fn build_schema(train: &Dataset, category: &str) -> Result<CategorySchema, SchemaError> {
    if !train.categories().contains(category) {
        return Err(SchemaError::UnknownCategory(category.to_string()));
    }
    let mut seen = BTreeSet::new();
    let mut attributes = Vec::new();
    for offer in train.offers_in(category) {
        for name in offer.truth.keys() {
            if seen.insert(name.as_str()) {
                attributes.push(AttributeSpec::named(name.clone()));
            }
        }
    }
    CategorySchema::new(category, attributes)
}

/// Sorted distinct training values of one attribute.
pub fn distinct_values(train: &Dataset, category: &str, attribute: &str) -> Vec<String> {
    let values: BTreeSet<&str> = train
        .offers_in(category)
        .filter_map(|o| o.truth.get(attribute).map(String::as_str))
        .collect();
    values.into_iter().map(str::to_string).collect()
}

fn sample_values(train: &Dataset, category: &str, attribute: &str, k: usize, seed: u64) -> Vec<String> {
    let mut values = distinct_values(train, category, attribute);
    let mut rng = scoped_rng(seed, &["examples", category, attribute]);
    values.shuffle(&mut rng);
    values.truncate(k);
    values
}

/// Up to `k` distinct training values of an attribute, drawn uniformly
/// without replacement. Samples for smaller `k` are prefixes of samples for
/// larger `k` under the same seed.
pub fn sample_example_values(
    train: &Dataset,
    category: &str,
    attribute: &str,
    k: usize,
    seed: u64,
) -> Result<Vec<String>, SchemaError> {
    let known = train.offers_in(category).any(|o| o.truth.contains_key(attribute));
    if !known {
        return Err(SchemaError::UnknownAttribute {
            category: category.to_string(),
            attribute: attribute.to_string(),
        });
    }
    Ok(sample_values(train, category, attribute, k, seed))
}

#[derive(Debug, Clone)]
pub struct DescriptionOutcome {
    pub schema: CategorySchema,
    /// Attribute name and error message for every failed request.
    pub failures: Vec<(String, String)>,
}

/// Fill empty attribute descriptions by asking a chat backend. Requests run
/// concurrently; results merge in attribute order. Failed attributes keep an
/// empty description.
pub fn generate_descriptions(
    schema: &CategorySchema,
    client: &ChatClient,
    model: &str,
    templates: &TemplateSet,
) -> DescriptionOutcome {
    let pending: Vec<usize> = schema
        .attributes
        .iter()
        .enumerate()
        .filter(|(_, a)| a.description.as_deref().is_none_or(|d| d.trim().is_empty()))
        .map(|(i, _)| i)
        .collect();

    let answers: Vec<(usize, Result<String, String>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = pending
            .iter()
            .map(|&idx| {
                let attribute = &schema.attributes[idx].name;
                scope.spawn(move || {
                    let prompt = ChatPrompt::new(vec![
                        ChatMessage::system(templates.description_role.clone()),
                        ChatMessage::user(templates.description_request(&schema.category, attribute)),
                    ])
                    .map_err(|e| e.to_string())?;
                    let response = client
                        .complete(&ChatRequest::new(model, prompt))
                        .map_err(|e| e.to_string())?;
                    first_sentence(&response.text).ok_or_else(|| "empty description".to_string())
                })
            })
            .collect();
        pending
            .iter()
            .zip(handles)
            .map(|(&idx, h)| (idx, h.join().unwrap_or_else(|_| Err("worker panicked".into()))))
            .collect()
    });

    let mut out = schema.clone();
    let mut failures = Vec::new();
    for (idx, answer) in answers {
        match answer {
            Ok(description) => out.attributes[idx].description = Some(description),
            Err(message) => failures.push((out.attributes[idx].name.clone(), message)),
        }
    }
    DescriptionOutcome { schema: out, failures }
}

fn first_sentence(text: &str) -> Option<String> {
    let line = text.trim().lines().next()?.trim().trim_matches('"').trim();
    (!line.is_empty()).then(|| line.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ProductOffer;
    use std::collections::BTreeMap;

    fn offer(id: &str, pairs: &[(&str, &str)]) -> ProductOffer {
        let truth: BTreeMap<String, String> = pairs.iter().map(|(a, v)| (a.to_string(), v.to_string())).collect();
        ProductOffer::new(id, "c", format!("title {id}"), truth).unwrap()
    }

    #[test]
    fn schema_is_union_in_first_seen_order() {
        let d = Dataset::new("d", vec![offer("1", &[("A", "a"), ("B", "b")]), offer("2", &[("B", "b"), ("C", "c")])])
            .unwrap();
        let s = build_schema(&d, "c").unwrap();
        assert_eq!(s.attribute_names().collect::<Vec<_>>(), ["A", "B", "C"]);
        assert!(s.attributes().iter().all(|a| a.description.is_none() && a.examples.is_empty()));
        assert_eq!(build_schema(&d, "c").unwrap(), s);
    }

    #[test]
    fn single_offer_schema() {
        let d = Dataset::new("d", vec![offer("1", &[("Brand", "X")])]).unwrap();
        assert_eq!(build_schema(&d, "c").unwrap().attribute_names().collect::<Vec<_>>(), ["Brand"]);
        assert!(matches!(build_schema(&d, "zzz"), Err(SchemaError::UnknownCategory(_))));
    }

    #[test]
    fn sampling_returns_all_when_fewer_than_k() {
        let offers = (0..4).map(|i| offer(&i.to_string(), &[("Color", &format!("c{i}"))])).collect();
        let d = Dataset::new("d", offers).unwrap();
        let mut got = sample_example_values(&d, "c", "Color", 10, 1).unwrap();
        got.sort();
        assert_eq!(got, ["c0", "c1", "c2", "c3"]);
        assert!(sample_example_values(&d, "c", "Color", 0, 1).unwrap().is_empty());
        assert!(sample_example_values(&d, "c", "Size", 3, 1).is_err());
    }

    #[test]
    fn invalid_schemas_rejected() {
        assert!(CategorySchema::new("c", vec![AttributeSpec::named("A"), AttributeSpec::named("A")]).is_err());
        assert!(CategorySchema::new("c", vec![AttributeSpec::named("A").with_examples(["n/a"])]).is_err());
        assert!(CategorySchema::new("c", vec![AttributeSpec::named("A").with_examples(["x", "x"])]).is_err());
        assert!(CategorySchema::new("c", vec![AttributeSpec::named(" ")]).is_err());
    }

    #[test]
    fn registry_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = SchemaRegistry::new();
        reg.insert(
            CategorySchema::new(
                "Tooth brush/Manual",
                vec![AttributeSpec::named("Brand").with_description("Maker").with_examples(["Oral-B"])],
            )
            .unwrap(),
        );
        reg.write_dir(dir.path()).unwrap();
        assert_eq!(SchemaRegistry::read_dir(dir.path()).unwrap(), reg);
    }
}
