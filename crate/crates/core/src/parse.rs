//! Turning raw model text into validated extraction results.
//!
//! Parsing is total: every input yields a result with a [`ParseStatus`], so
//! unparseable answers flow into evaluation as missing predictions instead of
//! aborting a run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::schema::CategorySchema;
use crate::NOT_AVAILABLE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    /// The whole text was a JSON object.
    Ok,
    /// A JSON object was recovered from surrounding prose, code fences or
    /// light syntax damage.
    Repaired,
    /// No JSON object could be recovered.
    Failed,
}

/// Trim, collapse internal whitespace runs, and map empty / `n/a` to absent.
/// Case is preserved.
pub fn normalize_value(raw: &str) -> Option<String> {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() || collapsed.eq_ignore_ascii_case(NOT_AVAILABLE) {
        None
    } else {
        Some(collapsed)
    }
}

/// Parsed model output for one offer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub offer_id: String,
    /// Schema attributes mentioned by the model; `None` marks an explicit
    /// no-value answer. Attributes not listed are also treated as no-value.
    pub values: BTreeMap<String, Option<String>>,
    pub parse_status: ParseStatus,
    /// Content hash of the raw model text, when one was recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_ref: Option<String>,
}

impl ExtractionResult {
    pub fn failed(offer_id: impl Into<String>) -> Self {
        ExtractionResult {
            offer_id: offer_id.into(),
            values: BTreeMap::new(),
            parse_status: ParseStatus::Failed,
            raw_ref: None,
        }
    }

    pub fn value(&self, attribute: &str) -> Option<&str> {
        self.values.get(attribute).and_then(|v| v.as_deref())
    }

    /// Number of attributes with a predicted value.
    pub fn extracted_pairs(&self) -> usize {
        self.values.values().filter(|v| v.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub values: BTreeMap<String, Option<String>>,
    pub status: ParseStatus,
    /// Keys the model produced that are not part of the schema.
    pub dropped_keys: Vec<String>,
}

impl ParsedResponse {
    pub fn into_result(self, offer_id: impl Into<String>) -> ExtractionResult {
        ExtractionResult {
            offer_id: offer_id.into(),
            values: self.values,
            parse_status: self.status,
            raw_ref: None,
        }
    }
}

pub fn parse_response(text: &str, schema: &CategorySchema) -> ParsedResponse {
    let Some((object, status)) = extract_object(text) else {
        return ParsedResponse {
            values: BTreeMap::new(),
            status: ParseStatus::Failed,
            dropped_keys: Vec::new(),
        };
    };

    let mut values = BTreeMap::new();
    let mut dropped_keys = Vec::new();
    for (key, value) in object {
        let name = key.trim();
        if !schema.contains(name) {
            dropped_keys.push(key);
            continue;
        }
        let value = match value {
            Value::String(s) => normalize_value(&s),
            Value::Null => None,
            Value::Bool(b) => Some(b.to_string()),
            Value::Number(n) => Some(n.to_string()),
            Value::Array(_) | Value::Object(_) => {
                log::debug!("attribute `{name}`: non-scalar value treated as no-value");
                None
            }
        };
        values.entry(name.to_string()).or_insert(value);
    }
    if !dropped_keys.is_empty() {
        log::debug!("dropped keys outside the `{}` schema: {dropped_keys:?}", schema.category);
    }
    ParsedResponse {
        values,
        status,
        dropped_keys,
    }
}

fn extract_object(text: &str) -> Option<(Map<String, Value>, ParseStatus)> {
    let trimmed = text.trim();
    if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(trimmed) {
        return Some((obj, ParseStatus::Ok));
    }
    for block in fenced_blocks(trimmed) {
        if let Some(obj) = parse_lenient(block) {
            return Some((obj, ParseStatus::Repaired));
        }
    }
    balanced_objects(trimmed)
        .into_iter()
        .find_map(parse_lenient)
        .map(|obj| (obj, ParseStatus::Repaired))
}

fn parse_lenient(candidate: &str) -> Option<Map<String, Value>> {
    let candidate = candidate.trim();
    if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(candidate) {
        return Some(obj);
    }
    let repaired = strip_trailing_commas(candidate);
    match serde_json::from_str::<Value>(&repaired) {
        Ok(Value::Object(obj)) => Some(obj),
        _ => None,
    }
}

/// Contents of ``` fenced blocks, in order. An unterminated final fence runs
/// to the end of the text.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        // skip the info string (e.g. `json`) up to the end of the line
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(end) => {
                blocks.push(&body[..end]);
                rest = &body[end + 3..];
            }
            None => {
                blocks.push(body);
                break;
            }
        }
    }
    blocks
}

/// Every brace-balanced `{...}` span, scanning left to right and respecting
/// string literals.
fn balanced_objects(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    for (start, _) in text.match_indices('{') {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (offset, &b) in bytes[start..].iter().enumerate() {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        spans.push(&text[start..start + offset + 1]);
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    spans
}

fn strip_trailing_commas(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_string = false;
    let mut escaped = false;
    let chars: Vec<char> = s.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{AttributeSpec, CategorySchema};
    use proptest::prelude::*;

    fn schema(names: &[&str]) -> CategorySchema {
        CategorySchema::new("toothbrush", names.iter().map(|n| AttributeSpec::named(*n)).collect()).unwrap()
    }

    #[test]
    fn plain_json_with_na() {
        let parsed = parse_response(r#"{"Brand": "Oral-B", "Color": "n/a"}"#, &schema(&["Brand", "Color"]));
        assert_eq!(parsed.status, ParseStatus::Ok);
        let r = parsed.into_result("o1");
        assert_eq!(r.value("Brand"), Some("Oral-B"));
        assert_eq!(r.value("Color"), None);
        assert_eq!(r.values.get("Color"), Some(&None));
    }

    #[test]
    fn fenced_json_is_repaired() {
        let text = "Here you go:\n```json\n{\"Brand\": \"Oral-B\", \"Color\": \"n/a\"}\n```\nAnything else?";
        let parsed = parse_response(text, &schema(&["Brand", "Color"]));
        assert_eq!(parsed.status, ParseStatus::Repaired);
        assert_eq!(parsed.values["Brand"].as_deref(), Some("Oral-B"));
        assert_eq!(parsed.values["Color"], None);
    }

    #[test]
    fn prose_wrapped_and_trailing_comma() {
        let text = "The answer is {\"Brand\": \"Oral-B\",} as requested {\"Brand\": \"other\"}";
        let parsed = parse_response(text, &schema(&["Brand"]));
        assert_eq!(parsed.status, ParseStatus::Repaired);
        assert_eq!(parsed.values["Brand"].as_deref(), Some("Oral-B"));
    }

    #[test]
    fn garbage_fails() {
        let parsed = parse_response("not json at all", &schema(&["Brand"]));
        assert_eq!(parsed.status, ParseStatus::Failed);
        assert!(parsed.values.is_empty());
        let parsed = parse_response("[1, 2, 3]", &schema(&["Brand"]));
        assert_eq!(parsed.status, ParseStatus::Failed);
    }

    #[test]
    fn extra_keys_dropped_and_scalars_stringified() {
        let parsed = parse_response(
            r#"{"Brand": "X", "Weight": 12.5, "Count": 3, "Refill": true, "Hallucinated": "y", "Color": null}"#,
            &schema(&["Brand", "Weight", "Count", "Refill", "Color"]),
        );
        assert_eq!(parsed.dropped_keys, vec!["Hallucinated".to_string()]);
        assert_eq!(parsed.values["Weight"].as_deref(), Some("12.5"));
        assert_eq!(parsed.values["Count"].as_deref(), Some("3"));
        assert_eq!(parsed.values["Refill"].as_deref(), Some("true"));
        assert_eq!(parsed.values["Color"], None);
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_scanner() {
        let text = "prefix {\"Brand\": \"a}b{c\"} suffix";
        let parsed = parse_response(text, &schema(&["Brand"]));
        assert_eq!(parsed.values["Brand"].as_deref(), Some("a}b{c"));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_value("  Red  ").as_deref(), Some("Red"));
        assert_eq!(normalize_value("N/A"), None);
        assert_eq!(normalize_value(" n/a "), None);
        assert_eq!(normalize_value("Oral   B").as_deref(), Some("Oral B"));
        assert_eq!(normalize_value("   "), None);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC*") {
            let once = normalize_value(&s);
            let twice = once.as_deref().and_then(normalize_value);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn parse_is_total(s in "\\PC*") {
            let parsed = parse_response(&s, &schema(&["Brand", "Color"]));
            if parsed.status == ParseStatus::Failed {
                prop_assert!(parsed.values.is_empty());
            }
            for v in parsed.values.values().flatten() {
                prop_assert!(!v.eq_ignore_ascii_case("n/a"));
            }
        }
    }
}
