//! Prompt templates and few-shot demonstration selection.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::model::Template;

const OPENING: &str = "You will be provided with a log message delimited by backticks.";
const ABSTRACT_PLACEHOLDERS: &str =
    "You must abstract variables with `{placeholders}' to extract the corresponding template.";
const PRINT_DELIMITED: &str = "Print the input log's template delimited by backticks.";
const SIMPLE_ASK: &str = "Please extract the log template from this log message:";
const ENHANCED_ASK: &str = "You must identify and abstract all the dynamic variables in logs \
                            with `{placeholders}` and output a static log template.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    /// Zero-shot with `{placeholders}`.
    Pt1,
    /// Few-shot: PT1 plus worked demonstrations.
    Pt2,
    /// Zero-shot, simple wording.
    Pt3,
    /// Zero-shot, enhanced wording.
    Pt4,
}

impl PromptVariant {
    pub fn is_few_shot(self) -> bool {
        self == PromptVariant::Pt2
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Pt1 => "pt1",
            PromptVariant::Pt2 => "pt2",
            PromptVariant::Pt3 => "pt3",
            PromptVariant::Pt4 => "pt4",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pt1" => Ok(PromptVariant::Pt1),
            "pt2" => Ok(PromptVariant::Pt2),
            "pt3" => Ok(PromptVariant::Pt3),
            "pt4" => Ok(PromptVariant::Pt4),
            other => Err(format!("unknown prompt variant `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Demonstration {
    pub log: String,
    pub template: Template,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptSpec {
    pub variant: PromptVariant,
    pub demos: Vec<Demonstration>,
    pub target_log: String,
    pub rendered: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{variant} takes {expected} demonstrations, got {got}")]
    ArityMismatch {
        variant: PromptVariant,
        expected: &'static str,
        got: usize,
    },
    #[error("target log message is empty")]
    EmptyLog,
    #[error("requested {requested} demonstrations but the dataset has only {available} distinct templates")]
    InsufficientTemplates { requested: usize, available: usize },
}

/// Renders one of the four prompt templates for `target_log`.
///
/// Log text and demonstration templates are inserted verbatim; no escaping
/// of backticks or quotes is applied.
pub fn render_prompt(
    variant: PromptVariant,
    demos: &[Demonstration],
    target_log: &str,
) -> Result<PromptSpec, PromptError> {
    match (variant.is_few_shot(), demos.is_empty()) {
        (true, true) => {
            return Err(PromptError::ArityMismatch {
                variant,
                expected: "at least one",
                got: 0,
            })
        }
        (false, false) => {
            return Err(PromptError::ArityMismatch {
                variant,
                expected: "no",
                got: demos.len(),
            })
        }
        _ => {}
    }
    if target_log.trim().is_empty() {
        return Err(PromptError::EmptyLog);
    }

    let rendered = match variant {
        PromptVariant::Pt1 => format!(
            "{OPENING} {ABSTRACT_PLACEHOLDERS} {PRINT_DELIMITED}\n\nLog message: `{target_log}'"
        ),
        PromptVariant::Pt2 => {
            let examples: String = demos
                .iter()
                .map(|d| format!("The template of `{}' is `{}'.\n", d.log, d.template.raw()))
                .collect();
            format!(
                "{OPENING} {ABSTRACT_PLACEHOLDERS}\n\nFor example:\n{examples}\n{PRINT_DELIMITED}\n\nLog message: `{target_log}'"
            )
        }
        PromptVariant::Pt3 => format!("{OPENING} {SIMPLE_ASK}\n`{target_log}'"),
        PromptVariant::Pt4 => {
            format!("{OPENING} {ENHANCED_ASK} {PRINT_DELIMITED}\n\nLog message: `{target_log}'")
        }
    };

    Ok(PromptSpec {
        variant,
        demos: demos.to_vec(),
        target_log: target_log.to_owned(),
        rendered,
    })
}

/// Picks `k` demonstrations from `ds`.
///
/// `k = 1` takes the most frequent content string (ties go to the smallest
/// line id). `k >= 2` shuffles the distinct truth-template groups with a
/// ChaCha8 generator seeded from `seed`, keeps the first `k`, and emits each
/// group's earliest record.
pub fn select_demonstrations(
    ds: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Vec<Demonstration>, PromptError> {
    let available = ds.distinct_templates();
    if k > available {
        return Err(PromptError::InsufficientTemplates {
            requested: k,
            available,
        });
    }
    let records = ds.records();
    match k {
        0 => Ok(Vec::new()),
        1 => {
            let mut counts: HashMap<&str, (usize, u64, usize)> = HashMap::new();
            for (idx, r) in records.iter().enumerate() {
                let entry = counts
                    .entry(r.content.as_str())
                    .or_insert((0, r.line_id, idx));
                entry.0 += 1;
                if r.line_id < entry.1 {
                    entry.1 = r.line_id;
                    entry.2 = idx;
                }
            }
            let (_, _, idx) = counts
                .values()
                .copied()
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
                .expect("dataset is non-empty");
            let r = &records[idx];
            Ok(vec![Demonstration {
                log: r.content.clone(),
                template: r.truth_template.clone(),
            }])
        }
        _ => {
            // Groups in order of their earliest line id so the shuffle input is stable.
            let mut groups: Vec<(u64, &str)> = ds
                .template_index()
                .iter()
                .map(|(template, ids)| (*ids.first().expect("non-empty group"), template.as_str()))
                .collect();
            groups.sort_unstable();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            groups.shuffle(&mut rng);
            groups
                .into_iter()
                .take(k)
                .map(|(line_id, _)| {
                    let r = ds.record(line_id).expect("indexed line id exists");
                    Ok(Demonstration {
                        log: r.content.clone(),
                        template: r.truth_template.clone(),
                    })
                })
                .collect()
        }
    }
}
