//! Log messages, templates and the token representation shared by the parsers
//! and the metrics.
//!
//! A template is a whitespace-separated token sequence in which every dynamic
//! position is the wildcard token `<*>`. Punctuation stays attached to its
//! token, so `<*>:<*>` is a single literal token.

use std::fmt;

use serde::{Deserialize, Serialize};

/// The canonical wildcard token.
pub const WILDCARD: &str = "<*>";

/// Template text assigned to messages the model declined to parse.
pub const REFUSED_SENTINEL: &str = "<REFUSED>";

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Literal(String),
    Wildcard,
}

impl Token {
    pub fn text(&self) -> &str {
        match self {
            Token::Literal(s) => s,
            Token::Wildcard => WILDCARD,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

pub fn is_wildcard(tok: &Token) -> bool {
    matches!(tok, Token::Wildcard)
}

/// Splits on runs of whitespace. Pieces equal to `<*>` become wildcards.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .map(|piece| {
            if piece == WILDCARD {
                Token::Wildcard
            } else {
                Token::Literal(piece.to_owned())
            }
        })
        .collect()
}

/// A canonical log template.
///
/// Built through [`Template::from_tokens`] or [`Template::parse_canonical`];
/// both guarantee that `raw` is the single-space join of `tokens`. Converting
/// placeholder syntax such as `{name}` is the job of
/// [`crate::extract::canonicalize`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Template {
    raw: String,
    tokens: Vec<Token>,
}

impl Template {
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        let raw = tokens.iter().map(Token::text).collect::<Vec<_>>().join(" ");
        Template { raw, tokens }
    }

    /// Tokenizes `text` as-is (whitespace normalized, no placeholder rewriting).
    pub fn parse_canonical(text: &str) -> Self {
        Template::from_tokens(tokenize(text))
    }

    pub fn refused() -> Self {
        Template::from_tokens(vec![Token::Literal(REFUSED_SENTINEL.to_owned())])
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_refused(&self) -> bool {
        self.raw == REFUSED_SENTINEL
    }

    pub fn wildcard_count(&self) -> usize {
        self.tokens.iter().filter(|t| is_wildcard(t)).count()
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for Template {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for Template {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Template::parse_canonical(&s))
    }
}

/// One labelled log message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogRecord {
    pub line_id: u64,
    pub content: String,
    pub truth_template: Template,
}
