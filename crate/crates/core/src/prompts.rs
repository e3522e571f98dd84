//! Target-schema representations and chat prompt assembly.
//!
//! Zero-shot prompts have two messages: a system message holding the role
//! description (with the schema representation injected for `textual`,
//! `compact` and `json`), and a user message holding the task description
//! followed by the task input.
//!
//! Few-shot prompts put the demonstrations between the task description and
//! the repeated task description:
//!
//! ```text
//! system     role description
//! user       task description
//! user       demo title            ┐ once per demonstration
//! assistant  demo truth as JSON    ┘
//! user       task description + task input
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::corpus::ProductOffer;
use crate::schema::CategorySchema;
use crate::NOT_AVAILABLE;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("invalid prompt design: {0}")]
    InvalidDesign(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("demonstration `{offer_id}` is from category `{found}`, expected `{expected}`")]
    CategoryMismatch {
        offer_id: String,
        expected: String,
        found: String,
    },
    #[error("offer `{offer_id}` has attribute `{attribute}` outside the `{category}` schema")]
    AttributeOutsideSchema {
        offer_id: String,
        category: String,
        attribute: String,
    },
    #[error("template `{name}`: {message}")]
    Template { name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::Assistant,
            content: content.into(),
        }
    }
}

/// Ordered, validated list of chat messages.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ChatMessage>", into = "Vec<ChatMessage>")]
pub struct ChatPrompt {
    messages: Vec<ChatMessage>,
}

impl ChatPrompt {
    /// Checks that the prompt starts with a system message, that no message is
    /// empty, and that every assistant message directly follows a user message.
    pub fn new(messages: Vec<ChatMessage>) -> Result<Self, PromptError> {
        let invalid = |m: &str| Err(PromptError::InvalidPrompt(m.to_string()));
        match messages.first() {
            None => return invalid("no messages"),
            Some(m) if m.role != MessageRole::System => return invalid("first message must be a system message"),
            _ => {}
        }
        for (i, m) in messages.iter().enumerate() {
            if m.content.trim().is_empty() {
                return Err(PromptError::InvalidPrompt(format!("message {i} is empty")));
            }
            if i > 0 && m.role == MessageRole::System {
                return Err(PromptError::InvalidPrompt(format!("message {i}: system message after the first")));
            }
            if m.role == MessageRole::Assistant && messages[i - 1].role != MessageRole::User {
                return Err(PromptError::InvalidPrompt(format!(
                    "message {i}: assistant message not preceded by a user message"
                )));
            }
        }
        Ok(ChatPrompt { messages })
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn last_user(&self) -> Option<&ChatMessage> {
        self.messages.iter().rev().find(|m| m.role == MessageRole::User)
    }

    /// Appends a message, re-checking the role invariants.
    pub fn push(self, message: ChatMessage) -> Result<Self, PromptError> {
        let mut messages = self.messages;
        messages.push(message);
        ChatPrompt::new(messages)
    }

    /// Total characters over all message contents.
    pub fn char_count(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }
}

impl TryFrom<Vec<ChatMessage>> for ChatPrompt {
    type Error = PromptError;

    fn try_from(messages: Vec<ChatMessage>) -> Result<Self, Self::Error> {
        ChatPrompt::new(messages)
    }
}

impl From<ChatPrompt> for Vec<ChatMessage> {
    fn from(prompt: ChatPrompt) -> Self {
        prompt.messages
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Attribute names only, listed in the task description.
    List,
    /// Names, descriptions and example values as plain sentences.
    Textual,
    /// One dense line per attribute.
    Compact,
    /// JSON Schema document.
    Json,
}

impl Representation {
    pub const ALL: [Representation; 4] = [
        Representation::List,
        Representation::Textual,
        Representation::Compact,
        Representation::Json,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Representation::List => "list",
            Representation::Textual => "textual",
            Representation::Compact => "compact",
            Representation::Json => "json",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Representation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| PromptError::InvalidDesign(format!("unknown representation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptDesign {
    pub representation: Representation,
    /// Example values rendered per attribute; 0 renders none.
    pub example_value_count: usize,
    pub demonstration_count: usize,
}

impl PromptDesign {
    pub fn new(
        representation: Representation,
        example_value_count: usize,
        demonstration_count: usize,
    ) -> Result<Self, PromptError> {
        let design = PromptDesign {
            representation,
            example_value_count,
            demonstration_count,
        };
        design.validate()?;
        Ok(design)
    }

    pub fn zero_shot(representation: Representation, example_value_count: usize) -> Result<Self, PromptError> {
        PromptDesign::new(representation, example_value_count, 0)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.representation == Representation::List && self.example_value_count > 0 {
            return Err(PromptError::InvalidDesign(
                "the list representation carries attribute names only; example values need textual, compact or json"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Short label such as `list`, `compact` or `json-5-val`.
    pub fn label(&self) -> String {
        if self.example_value_count > 0 {
            format!("{}-{}-val", self.representation, self.example_value_count)
        } else {
            self.representation.to_string()
        }
    }
}

/// The fixed instruction texts prompts are assembled from.
///
/// Placeholders: `{representation}` in `role_schema`, `{attributes}` in
/// `task_list`, `{title}` in `task_input`, `{category}` and `{attribute}` in
/// `description_request`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub version: String,
    pub role_list: String,
    pub role_schema: String,
    pub task_list: String,
    pub task_schema: String,
    pub task_input: String,
    pub description_role: String,
    pub description_request: String,
}

const TEMPLATE_FILES: [&str; 7] = [
    "role_list",
    "role_schema",
    "task_list",
    "task_schema",
    "task_input",
    "description_role",
    "description_request",
];

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::builtin()
    }
}

impl TemplateSet {
    /// The templates shipped in `resources/templates/v1`.
    pub fn builtin() -> Self {
        TemplateSet {
            version: "v1".into(),
            role_list: include_str!("../resources/templates/v1/role_list.txt").into(),
            role_schema: include_str!("../resources/templates/v1/role_schema.txt").into(),
            task_list: include_str!("../resources/templates/v1/task_list.txt").into(),
            task_schema: include_str!("../resources/templates/v1/task_schema.txt").into(),
            task_input: include_str!("../resources/templates/v1/task_input.txt").into(),
            description_role: include_str!("../resources/templates/v1/description_role.txt").into(),
            description_request: include_str!("../resources/templates/v1/description_request.txt").into(),
        }
    }

    /// Loads `<name>.txt` for every template from `dir`; the directory name
    /// becomes the version label.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| -> Result<String, PromptError> {
            let path = dir.join(format!("{name}.txt"));
            fs::read_to_string(&path).map_err(|e| PromptError::Template {
                name: name.to_string(),
                message: format!("{}: {e}", path.display()),
            })
        };
        let mut texts = TEMPLATE_FILES.iter().map(|n| read(n)).collect::<Result<Vec<_>, _>>()?.into_iter();
        let mut next = || texts.next().expect("one text per template file");
        let set = TemplateSet {
            version: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".into()),
            role_list: next(),
            role_schema: next(),
            task_list: next(),
            task_schema: next(),
            task_input: next(),
            description_role: next(),
            description_request: next(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let require = |name: &str, text: &str, placeholder: &str| {
            if text.contains(placeholder) {
                Ok(())
            } else {
                Err(PromptError::Template {
                    name: name.to_string(),
                    message: format!("missing placeholder {placeholder}"),
                })
            }
        };
        require("role_schema", &self.role_schema, "{representation}")?;
        require("task_list", &self.task_list, "{attributes}")?;
        require("task_input", &self.task_input, "{title}")?;
        require("description_request", &self.description_request, "{attribute}")?;
        let (prefix, _) = self.task_input_parts();
        if prefix.trim().is_empty() || self.task_input.contains('\n') {
            return Err(PromptError::Template {
                name: "task_input".into(),
                message: "must be a single line with text before {title}".into(),
            });
        }
        Ok(())
    }

    fn task_input_parts(&self) -> (&str, &str) {
        self.task_input.split_once("{title}").unwrap_or((self.task_input.as_str(), ""))
    }

    pub fn render_task_input(&self, title: &str) -> String {
        self.task_input.replace("{title}", title)
    }

    pub fn description_request(&self, category: &str, attribute: &str) -> String {
        self.description_request
            .replace("{category}", category)
            .replace("{attribute}", attribute)
    }

    fn role(&self, design: &PromptDesign, schema: &CategorySchema) -> Result<String, PromptError> {
        match design.representation {
            Representation::List => Ok(self.role_list.clone()),
            repr => {
                let rendered = render_representation(schema, repr, design.example_value_count)?;
                Ok(self.role_schema.replace("{representation}", &rendered))
            }
        }
    }

    fn task_description(&self, design: &PromptDesign, schema: &CategorySchema) -> Result<String, PromptError> {
        match design.representation {
            Representation::List => Ok(self
                .task_list
                .replace("{attributes}", &render_representation(schema, Representation::List, 0)?)),
            _ => Ok(self.task_schema.clone()),
        }
    }

    /// The product title in the task-input segment of the prompt's final user
    /// message, if the prompt was built from these templates.
    pub fn extract_title<'a>(&self, prompt: &'a ChatPrompt) -> Option<&'a str> {
        let (prefix, suffix) = self.task_input_parts();
        let message = prompt.last_user()?;
        let line = message.content.lines().rev().find(|l| l.starts_with(prefix))?;
        let title = line[prefix.len()..].strip_suffix(suffix).unwrap_or(&line[prefix.len()..]);
        Some(title.trim()).filter(|t| !t.is_empty())
    }
}

fn strip_period(s: &str) -> &str {
    s.trim().trim_end_matches('.')
}

fn quoted_list(values: &[String]) -> String {
    values.iter().map(|v| format!("\"{v}\"")).collect::<Vec<_>>().join(", ")
}

/// Renders the target schema in one of the four representations, with at most
/// `example_value_count` example values per attribute.
pub fn render_representation(
    schema: &CategorySchema,
    representation: Representation,
    example_value_count: usize,
) -> Result<String, PromptError> {
    if schema.is_empty() {
        return Err(PromptError::InvalidDesign(format!(
            "schema for `{}` has no attributes",
            schema.category
        )));
    }
    if representation == Representation::List && example_value_count > 0 {
        return Err(PromptError::InvalidDesign(
            "the list representation cannot carry example values".into(),
        ));
    }
    let examples_of = |a: &crate::schema::AttributeSpec| -> Vec<String> {
        a.examples.iter().take(example_value_count).cloned().collect()
    };
    fn description_of(a: &crate::schema::AttributeSpec) -> Option<&str> {
        a.description.as_deref().map(strip_period).filter(|d| !d.is_empty())
    }

    let text = match representation {
        Representation::List => schema.attribute_names().collect::<Vec<_>>().join(", "),
        Representation::Textual => schema
            .attributes()
            .iter()
            .map(|a| {
                let mut sentence = format!("The attribute \"{}\"", a.name);
                match description_of(a) {
                    Some(d) => sentence.push_str(&format!(" is defined as: {d}.")),
                    None => sentence.push_str(" should be extracted."),
                }
                let examples = examples_of(a);
                if !examples.is_empty() {
                    sentence.push_str(&format!(" Example values are {}.", quoted_list(&examples)));
                }
                sentence
            })
            .collect::<Vec<_>>()
            .join("\n"),
        Representation::Compact => schema
            .attributes()
            .iter()
            .map(|a| {
                let mut line = a.name.clone();
                if let Some(d) = description_of(a) {
                    line.push_str(&format!(": {d}"));
                }
                let examples = examples_of(a);
                if !examples.is_empty() {
                    line.push_str(&format!(" | examples: {}", examples.join("; ")));
                }
                line
            })
            .collect::<Vec<_>>()
            .join("\n"),
        Representation::Json => {
            let mut properties = Map::new();
            for a in schema.attributes() {
                let mut property = Map::new();
                if let Some(d) = description_of(a) {
                    property.insert("description".into(), Value::String(format!("{d}.")));
                }
                property.insert("type".into(), Value::String("string".into()));
                let examples = examples_of(a);
                if !examples.is_empty() {
                    property.insert("examples".into(), json!(examples));
                }
                properties.insert(a.name.clone(), Value::Object(property));
            }
            let document = json!({
                "title": schema.category,
                "type": "object",
                "properties": properties,
            });
            serde_json::to_string_pretty(&document).expect("schema document serializes")
        }
    };
    Ok(text)
}

/// The expected task output for an offer: every schema attribute in schema
/// order, with `n/a` for attributes absent from the offer's truth.
pub fn render_truth_json(schema: &CategorySchema, offer: &ProductOffer) -> Result<String, PromptError> {
    if let Some(attribute) = offer.truth.keys().find(|a| !schema.contains(a)) {
        return Err(PromptError::AttributeOutsideSchema {
            offer_id: offer.offer_id.clone(),
            category: schema.category.clone(),
            attribute: attribute.clone(),
        });
    }
    let object: Map<String, Value> = schema
        .attribute_names()
        .map(|name| {
            let value = offer.truth.get(name).map(String::as_str).unwrap_or(NOT_AVAILABLE);
            (name.to_string(), Value::String(value.to_string()))
        })
        .collect();
    Ok(serde_json::to_string(&Value::Object(object)).expect("string map serializes"))
}

pub fn build_zero_shot(
    design: &PromptDesign,
    schema: &CategorySchema,
    offer: &ProductOffer,
    templates: &TemplateSet,
) -> Result<ChatPrompt, PromptError> {
    design.validate()?;
    let role = templates.role(design, schema)?;
    let task = templates.task_description(design, schema)?;
    ChatPrompt::new(vec![
        ChatMessage::system(role),
        ChatMessage::user(format!("{task}\n\n{}", templates.render_task_input(&offer.title))),
    ])
}

/// Few-shot prompt with `3 + 2·demos.len()` messages.
pub fn build_few_shot(
    design: &PromptDesign,
    schema: &CategorySchema,
    offer: &ProductOffer,
    demos: &[ProductOffer],
    templates: &TemplateSet,
) -> Result<ChatPrompt, PromptError> {
    design.validate()?;
    if demos.is_empty() {
        return Err(PromptError::InvalidDesign("few-shot prompt without demonstrations".into()));
    }
    if let Some(demo) = demos.iter().find(|d| d.category != offer.category) {
        return Err(PromptError::CategoryMismatch {
            offer_id: demo.offer_id.clone(),
            expected: offer.category.clone(),
            found: demo.category.clone(),
        });
    }
    let role = templates.role(design, schema)?;
    let task = templates.task_description(design, schema)?;
    let mut messages = Vec::with_capacity(3 + 2 * demos.len());
    messages.push(ChatMessage::system(role));
    messages.push(ChatMessage::user(task.clone()));
    for demo in demos {
        messages.push(ChatMessage::user(templates.render_task_input(&demo.title)));
        messages.push(ChatMessage::assistant(render_truth_json(schema, demo)?));
    }
    messages.push(ChatMessage::user(format!(
        "{task}\n\n{}",
        templates.render_task_input(&offer.title)
    )));
    ChatPrompt::new(messages)
}

/// Zero-shot when `demos` is empty, few-shot otherwise.
pub fn build_prompt(
    design: &PromptDesign,
    schema: &CategorySchema,
    offer: &ProductOffer,
    demos: &[ProductOffer],
    templates: &TemplateSet,
) -> Result<ChatPrompt, PromptError> {
    if demos.is_empty() {
        build_zero_shot(design, schema, offer, templates)
    } else {
        build_few_shot(design, schema, offer, demos, templates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_response;
    use crate::schema::AttributeSpec;
    use std::collections::BTreeMap;

    fn schema() -> CategorySchema {
        CategorySchema::new(
            "toothbrush",
            vec![
                AttributeSpec::named("Brand")
                    .with_description("The manufacturer of the toothbrush.")
                    .with_examples(["Oral-B", "Colgate", "Philips"]),
                AttributeSpec::named("Color")
                    .with_description("Main color of the handle")
                    .with_examples(["Blue", "White"]),
                AttributeSpec::named("Head Type").with_examples(["Round", "Compact", "Angled"]),
            ],
        )
        .unwrap()
    }

    fn offer(id: &str, title: &str, pairs: &[(&str, &str)]) -> ProductOffer {
        let truth: BTreeMap<String, String> = pairs.iter().map(|(a, v)| (a.to_string(), v.to_string())).collect();
        ProductOffer::new(id, "toothbrush", title, truth).unwrap()
    }

    #[test]
    fn list_has_names_only() {
        let s = CategorySchema::new(
            "c",
            vec![
                AttributeSpec::named("Brand").with_description("maker"),
                AttributeSpec::named("Color"),
            ],
        )
        .unwrap();
        let text = render_representation(&s, Representation::List, 0).unwrap();
        assert_eq!(text, "Brand, Color");
        assert!(matches!(
            render_representation(&s, Representation::List, 3),
            Err(PromptError::InvalidDesign(_))
        ));
        assert!(PromptDesign::new(Representation::List, 1, 0).is_err());
    }

    #[test]
    fn json_representation_properties_match_schema() {
        let text = render_representation(&schema(), Representation::Json, 2).unwrap();
        let doc: Value = serde_json::from_str(&text).unwrap();
        let props = doc["properties"].as_object().unwrap();
        assert_eq!(props.keys().collect::<Vec<_>>(), ["Brand", "Color", "Head Type"]);
        assert_eq!(props["Brand"]["examples"], json!(["Oral-B", "Colgate"]));
        assert_eq!(props["Brand"]["description"], "The manufacturer of the toothbrush.");
        assert!(props["Head Type"].get("description").is_none());
    }

    #[test]
    fn compact_has_one_line_per_attribute() {
        let text = render_representation(&schema(), Representation::Compact, 2).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        for line in &lines {
            let examples = line.split_once(" | examples: ").map(|(_, e)| e.split("; ").count()).unwrap_or(0);
            assert!(examples <= 2, "{line}");
        }
        assert_eq!(lines[2], "Head Type | examples: Round; Compact");
    }

    #[test]
    fn every_name_appears_once_in_each_representation() {
        for repr in Representation::ALL {
            let evc = if repr == Representation::List { 0 } else { 3 };
            let text = render_representation(&schema(), repr, evc).unwrap();
            for name in ["Brand", "Color", "Head Type"] {
                assert_eq!(text.matches(name).count(), 1, "{repr} / {name}:\n{text}");
            }
        }
    }

    #[test]
    fn zero_shot_structure() {
        let o = offer("1", "Oral-B Pro 1000 Blue", &[("Brand", "Oral-B"), ("Color", "Blue")]);
        let list = build_zero_shot(&PromptDesign::zero_shot(Representation::List, 0).unwrap(), &schema(), &o, &TemplateSet::builtin()).unwrap();
        assert_eq!(list.len(), 2);
        assert!(list.messages()[1].content.contains("Oral-B Pro 1000 Blue"));
        assert!(list.messages()[1].content.contains("Brand, Color, Head Type"));

        let design = PromptDesign::zero_shot(Representation::Json, 2).unwrap();
        let json_prompt = build_zero_shot(&design, &schema(), &o, &TemplateSet::builtin()).unwrap();
        let rendered = render_representation(&schema(), Representation::Json, 2).unwrap();
        assert!(json_prompt.messages()[0].content.contains(&rendered));
    }

    #[test]
    fn zero_shot_prompts_differ_only_in_task_input() {
        let t = TemplateSet::builtin();
        let design = PromptDesign::zero_shot(Representation::Compact, 1).unwrap();
        let a = build_zero_shot(&design, &schema(), &offer("1", "Alpha brush", &[]), &t).unwrap();
        let b = build_zero_shot(&design, &schema(), &offer("2", "Beta brush", &[]), &t).unwrap();
        assert_eq!(a.messages()[0], b.messages()[0]);
        let strip = |p: &ChatPrompt, title: &str| {
            p.messages()[1].content.strip_suffix(&t.render_task_input(title)).unwrap().to_string()
        };
        assert_eq!(strip(&a, "Alpha brush"), strip(&b, "Beta brush"));
    }

    #[test]
    fn few_shot_structure_and_na_fill() {
        let t = TemplateSet::builtin();
        let s = CategorySchema::new("toothbrush", vec![AttributeSpec::named("Brand"), AttributeSpec::named("Color")]).unwrap();
        let design = PromptDesign::new(Representation::List, 0, 1).unwrap();
        let q = offer("q", "Query brush", &[("Brand", "Q")]);
        let demo = offer("d", "X brush", &[("Brand", "X")]);
        let p = build_few_shot(&design, &s, &q, std::slice::from_ref(&demo), &t).unwrap();
        assert_eq!(p.len(), 5);
        let assistant = &p.messages()[3];
        assert_eq!(assistant.role, MessageRole::Assistant);
        assert_eq!(assistant.content, r#"{"Brand":"X","Color":"n/a"}"#);
        let parsed = parse_response(&assistant.content, &s);
        assert_eq!(parsed.values["Brand"].as_deref(), Some("X"));
        assert_eq!(parsed.values["Color"], None);

        let again = build_few_shot(&design, &s, &q, &[demo], &t).unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn few_shot_rejects_foreign_demo() {
        let t = TemplateSet::builtin();
        let design = PromptDesign::new(Representation::List, 0, 1).unwrap();
        let q = offer("q", "Query brush", &[]);
        let foreign = ProductOffer::new("f", "shoes", "Red shoe", BTreeMap::new()).unwrap();
        assert!(matches!(
            build_few_shot(&design, &schema(), &q, &[foreign], &t),
            Err(PromptError::CategoryMismatch { .. })
        ));
    }

    #[test]
    fn title_extraction_from_prompt() {
        let t = TemplateSet::builtin();
        let design = PromptDesign::new(Representation::List, 0, 1).unwrap();
        let q = offer("q", "Product title: tricky {title} brush", &[]);
        let demo = offer("d", "Demo brush", &[("Brand", "X")]);
        let p = build_few_shot(&design, &schema(), &q, &[demo], &t).unwrap();
        assert_eq!(t.extract_title(&p), Some("Product title: tricky {title} brush"));
    }

    #[test]
    fn prompt_invariants() {
        assert!(ChatPrompt::new(vec![]).is_err());
        assert!(ChatPrompt::new(vec![ChatMessage::user("x")]).is_err());
        assert!(ChatPrompt::new(vec![ChatMessage::system("s"), ChatMessage::assistant("a")]).is_err());
        assert!(ChatPrompt::new(vec![ChatMessage::system("s"), ChatMessage::user(" ")]).is_err());
        let ok = ChatPrompt::new(vec![ChatMessage::system("s"), ChatMessage::user("u"), ChatMessage::assistant("a")]).unwrap();
        let json = serde_json::to_string(&ok).unwrap();
        assert_eq!(json, r#"[{"role":"system","content":"s"},{"role":"user","content":"u"},{"role":"assistant","content":"a"}]"#);
        assert!(serde_json::from_str::<ChatPrompt>(r#"[{"role":"user","content":"u"}]"#).is_err());
    }

    #[test]
    fn builtin_templates_are_valid_and_load_from_disk() {
        TemplateSet::builtin().validate().unwrap();
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("resources/templates/v1");
        assert_eq!(TemplateSet::load_dir(&dir).unwrap(), TemplateSet::builtin());
    }
}
