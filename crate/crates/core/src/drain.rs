//! Fixed-depth prefix-tree log parser (Drain).
//!
//! Messages are routed by token count, then by their first `depth - 2`
//! tokens, and finally matched against the clusters stored at the leaf by
//! positional similarity. Tokens holding a digit always take the `<*>`
//! branch, since they are most likely variables.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use regex::Regex;
use thiserror::Error;

use crate::model::{LogRecord, Template, Token, WILDCARD};

#[derive(Debug, Error)]
pub enum DrainError {
    #[error("invalid drain parameter: {0}")]
    InvalidParams(String),
    #[error("bad preprocessing pattern `{pattern}`: {source}")]
    BadPattern {
        pattern: String,
        source: regex::Error,
    },
    #[error("{path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cannot read drain config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct DrainParams {
    pub depth: usize,
    pub similarity_threshold: f64,
    pub max_children: usize,
    /// Applied in order; each match is replaced with `<*>` before tokenizing.
    pub preprocess: Vec<Regex>,
}

impl Default for DrainParams {
    fn default() -> Self {
        DrainParams {
            depth: 4,
            similarity_threshold: 0.5,
            max_children: 100,
            preprocess: Vec::new(),
        }
    }
}

impl DrainParams {
    pub fn validate(&self) -> Result<(), DrainError> {
        if self.depth < 3 {
            return Err(DrainError::InvalidParams(format!(
                "depth must be at least 3, got {}",
                self.depth
            )));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(DrainError::InvalidParams(format!(
                "similarity_threshold must be in (0, 1], got {}",
                self.similarity_threshold
            )));
        }
        if self.max_children == 0 {
            return Err(DrainError::InvalidParams(
                "max_children must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_patterns<S: AsRef<str>>(mut self, patterns: &[S]) -> Result<Self, DrainError> {
        for p in patterns {
            let p = p.as_ref();
            let re = Regex::new(p).map_err(|source| DrainError::BadPattern {
                pattern: p.to_owned(),
                source,
            })?;
            self.preprocess.push(re);
        }
        Ok(self)
    }
}

/// Per-dataset parameter overrides read from a sectioned key-value file:
///
/// ```text
/// [Apache]
/// depth = 4
/// similarity_threshold = 0.5
/// preprocess = (\d+\.){3}\d+
/// ```
///
/// `preprocess` may repeat. Lines starting with `#` are comments.
#[derive(Clone, Debug, Default)]
pub struct DrainConfig {
    sections: BTreeMap<String, DrainParams>,
}

impl DrainConfig {
    pub fn load(path: &Path) -> Result<Self, DrainError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, DrainError> {
        let mut sections = BTreeMap::new();
        let mut current: Option<(String, DrainParams)> = None;
        let err = |line: usize, message: String| DrainError::Config {
            path: origin.to_owned(),
            line,
            message,
        };
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if let Some((n, p)) = current.take() {
                    sections.insert(n, p);
                }
                current = Some((name.trim().to_owned(), DrainParams::default()));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(lineno, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let (_, params) = current
                .as_mut()
                .ok_or_else(|| err(lineno, "setting outside of a [dataset] section".into()))?;
            let bad = |e: &dyn std::fmt::Display| err(lineno, format!("{key}: {e}"));
            match key {
                "depth" => params.depth = value.parse().map_err(|e| bad(&e))?,
                "similarity_threshold" => {
                    params.similarity_threshold = value.parse().map_err(|e| bad(&e))?
                }
                "max_children" => params.max_children = value.parse().map_err(|e| bad(&e))?,
                "preprocess" => params
                    .preprocess
                    .push(Regex::new(value).map_err(|e| bad(&e))?),
                other => return Err(err(lineno, format!("unknown key `{other}`"))),
            }
            params.validate().map_err(|e| err(lineno, e.to_string()))?;
        }
        if let Some((n, p)) = current {
            sections.insert(n, p);
        }
        Ok(DrainConfig { sections })
    }

    /// Parameters for `dataset`, falling back to the defaults.
    pub fn params_for(&self, dataset: &str) -> DrainParams {
        self.sections.get(dataset).cloned().unwrap_or_default()
    }

    pub fn datasets(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }
}

/// Which cluster every message landed in, plus each cluster's final template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub assignments: BTreeMap<u64, usize>,
    pub templates: Vec<Template>,
}

impl ClusterAssignment {
    pub fn template_of(&self, line_id: u64) -> Option<&Template> {
        self.assignments.get(&line_id).map(|&c| &self.templates[c])
    }
}

#[derive(Default)]
struct Node {
    children: HashMap<String, Node>,
    clusters: Vec<usize>,
}

struct Cluster {
    tokens: Vec<String>,
}

fn has_digit(token: &str) -> bool {
    token.bytes().any(|b| b.is_ascii_digit())
}

/// Positional similarity against a cluster template. Wildcard positions do
/// not count as matches but are tallied separately for tie-breaking.
fn similarity(template: &[String], tokens: &[String]) -> (f64, usize) {
    let mut same = 0;
    let mut params = 0;
    for (t, m) in template.iter().zip(tokens) {
        if t == WILDCARD {
            params += 1;
        } else if t == m {
            same += 1;
        }
    }
    (same as f64 / template.len() as f64, params)
}

struct Parser<'p> {
    params: &'p DrainParams,
    roots: HashMap<usize, Node>,
    clusters: Vec<Cluster>,
}

impl<'p> Parser<'p> {
    fn prefix_len(&self, len: usize) -> usize {
        (self.params.depth - 2).min(len)
    }

    fn search(&self, tokens: &[String]) -> Option<usize> {
        let mut node = self.roots.get(&tokens.len())?;
        for tok in &tokens[..self.prefix_len(tokens.len())] {
            node = node
                .children
                .get(tok)
                .or_else(|| node.children.get(WILDCARD))?;
        }
        let mut best: Option<(usize, f64, usize)> = None;
        for &id in &node.clusters {
            let (sim, params) = similarity(&self.clusters[id].tokens, tokens);
            let better = match best {
                None => true,
                Some((_, bs, bp)) => sim > bs || (sim == bs && params > bp),
            };
            if better {
                best = Some((id, sim, params));
            }
        }
        best.filter(|&(_, sim, _)| sim >= self.params.similarity_threshold)
            .map(|(id, _, _)| id)
    }

    fn insert(&mut self, tokens: Vec<String>) -> usize {
        let id = self.clusters.len();
        let prefix = self.prefix_len(tokens.len());
        let max_children = self.params.max_children;
        let mut node = self.roots.entry(tokens.len()).or_default();
        for tok in &tokens[..prefix] {
            let key = if node.children.contains_key(tok) {
                tok.as_str()
            } else if has_digit(tok) {
                WILDCARD
            } else if node.children.contains_key(WILDCARD) {
                if node.children.len() < max_children {
                    tok.as_str()
                } else {
                    WILDCARD
                }
            } else if node.children.len() + 1 < max_children {
                tok.as_str()
            } else {
                // last free slot is reserved for the wildcard branch
                WILDCARD
            };
            node = node.children.entry(key.to_owned()).or_default();
        }
        node.clusters.push(id);
        self.clusters.push(Cluster { tokens });
        id
    }

    fn merge(&mut self, id: usize, tokens: &[String]) {
        for (t, m) in self.clusters[id].tokens.iter_mut().zip(tokens) {
            if t != m {
                *t = WILDCARD.to_owned();
            }
        }
    }

    fn preprocess(&self, content: &str) -> Vec<String> {
        let mut text = content.to_owned();
        for re in &self.params.preprocess {
            text = re.replace_all(&text, WILDCARD).into_owned();
        }
        text.split_whitespace().map(str::to_owned).collect()
    }
}

pub fn drain_parse(
    records: &[LogRecord],
    params: &DrainParams,
) -> Result<ClusterAssignment, DrainError> {
    params.validate()?;
    let mut parser = Parser {
        params,
        roots: HashMap::new(),
        clusters: Vec::new(),
    };
    let mut assignments = BTreeMap::new();
    for rec in records {
        let tokens = parser.preprocess(&rec.content);
        let id = match parser.search(&tokens) {
            Some(id) => {
                parser.merge(id, &tokens);
                id
            }
            None => parser.insert(tokens),
        };
        assignments.insert(rec.line_id, id);
    }
    let templates = parser
        .clusters
        .iter()
        .map(|c| {
            Template::from_tokens(
                c.tokens
                    .iter()
                    .map(|t| {
                        if t == WILDCARD {
                            Token::Wildcard
                        } else {
                            Token::Literal(t.clone())
                        }
                    })
                    .collect(),
            )
        })
        .collect();
    Ok(ClusterAssignment {
        assignments,
        templates,
    })
}
