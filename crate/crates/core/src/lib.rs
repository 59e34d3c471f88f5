//! Log template extraction toolkit and benchmark harness.
//!
//! Parses LogPai-format labelled datasets, prompts a chat model (or a
//! deterministic mock) to abstract log messages into templates, runs a Drain
//! baseline for comparison, and scores predictions with Group Accuracy,
//! Message-Level Accuracy and Edit Distance.

pub mod bench;
pub mod dataset;
pub mod drain;
pub mod extract;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod prompt;

pub use dataset::{load_dataset, truth_grouping, Dataset, DatasetError};
pub use extract::{canonicalize, extract_delimited, ExtractionOutcome, ExtractionStatus};
pub use metrics::{evaluate, MetricsReport, Prediction};
pub use model::{is_wildcard, tokenize, LogRecord, Template, Token};
pub use prompt::{render_prompt, select_demonstrations, Demonstration, PromptSpec, PromptVariant};
