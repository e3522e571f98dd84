//! Attribute/value extraction from e-commerce product titles with chat-style
//! language models.
//!
//! The crate covers the whole offline-reproducible pipeline:
//!
//! - [`corpus`]: canonical offer files, raw importers, stratified splitting
//! - [`schema`]: per-category target schemas and example-value sampling
//! - [`prompts`]: the four schema representations and chat prompt assembly
//! - [`demos`]: title embeddings and in-context demonstration selectors
//! - [`backends`]: chat-completion backends, retries, replay, cost ledger
//! - [`parse`]: turning model text into validated extraction results
//! - [`metrics`]: five-case categorization, P/R/F1, dictionary baseline
//! - [`pipeline`]: end-to-end `prepare`/`extract`/`evaluate`/`export` runs
//!
//! Everything runs hermetically against the deterministic mock backends in
//! [`backends`]; any chat-completions-compatible HTTP endpoint can be plugged
//! in for online runs.

pub mod backends;
pub mod corpus;
pub mod demos;
pub mod metrics;
pub mod parse;
pub mod pipeline;
pub mod prompts;
pub mod schema;
pub mod toy;
mod util;

pub use corpus::{Dataset, DatasetStats, ProductOffer, SplitBundle};
pub use metrics::{EvalCounts, Metrics, Outcome};
pub use parse::{ExtractionResult, ParseStatus};
pub use prompts::{ChatMessage, ChatPrompt, MessageRole, PromptDesign, Representation};
pub use schema::{AttributeSpec, CategorySchema, SchemaRegistry};

/// Sentinel the models are instructed to emit for attributes missing from a title.
pub const NOT_AVAILABLE: &str = "n/a";
