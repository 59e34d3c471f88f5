//! Turning free-form model responses into canonical templates.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Template, WILDCARD};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CanonicalizeError {
    #[error("template is empty after canonicalization")]
    EmptyTemplate,
}

static BRACE_SPAN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{[^{}]*\}").unwrap());

// "The template of `x' is `y'", "The log template is:", "the corresponding template would be"
static TEMPLATE_IS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\btemplate\b[^\n]*?\b(?:is|would be)\b").unwrap());

const REFUSAL_PHRASES: &[&str] = &[
    "need more information",
    "need more context",
    "more context",
    "cannot determine",
    "can't determine",
    "could you provide",
    "could you please provide",
    "please provide",
    "unable to",
    "i'm sorry",
    "i am sorry",
    "as an ai",
    "not possible to",
];

/// Rewrites `{...}` placeholders to `<*>`, trims, collapses whitespace runs,
/// and tokenizes. Adjacent wildcards are kept as separate tokens.
pub fn canonicalize(raw: &str) -> Result<Template, CanonicalizeError> {
    let mut text = raw.to_owned();
    // Replacing an inner span can expose an enclosing one: "{a{b}c}".
    while BRACE_SPAN.is_match(&text) {
        text = BRACE_SPAN.replace_all(&text, WILDCARD).into_owned();
    }
    let template = Template::parse_canonical(&text);
    if template.is_empty() {
        return Err(CanonicalizeError::EmptyTemplate);
    }
    Ok(template)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    Extracted,
    NoDelimiter,
    Refusal,
}

impl ExtractionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractionStatus::Extracted => "extracted",
            ExtractionStatus::NoDelimiter => "no_delimiter",
            ExtractionStatus::Refusal => "refusal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractionOutcome {
    pub status: ExtractionStatus,
    pub template: Option<Template>,
    pub note: String,
}

impl ExtractionOutcome {
    /// The template to score: refusals become the `<REFUSED>` sentinel.
    pub fn prediction(&self) -> Template {
        match &self.template {
            Some(t) => t.clone(),
            None => Template::refused(),
        }
    }
}

fn is_opening(c: char) -> bool {
    c == '`' || c == '\u{2018}'
}

/// A quote closes a span when it is not an apostrophe inside a word.
fn is_quote_closer(line: &str, idx: usize, c: char) -> bool {
    if c != '\'' && c != '\u{2019}' {
        return false;
    }
    match line[idx + c.len_utf8()..].chars().next() {
        None => true,
        Some(next) => next.is_whitespace() || ".,;:!?)]\"".contains(next),
    }
}

fn is_closer(c: char) -> bool {
    c == '`' || c == '\'' || c == '\u{2019}'
}

fn is_quote(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Returns the text of the span opened at byte `open` of `line`.
fn close_span(line: &str, open: usize) -> Option<&str> {
    let start = open + line[open..].chars().next()?.len_utf8();
    let rest = &line[start..];
    let backtick = rest.find('`');
    let limit = backtick.unwrap_or(rest.len());
    let quote = rest[..limit]
        .char_indices()
        .filter(|&(i, c)| is_quote_closer(rest, i, c))
        .map(|(i, _)| i)
        .next_back();
    let end = match (backtick, quote) {
        (Some(b), Some(q)) => {
            // an odd quote count means a quote closed the span: "`x' is `y'"
            let quotes = rest[..b].chars().filter(|&c| is_quote(c)).count();
            if quotes % 2 == 1 {
                q
            } else {
                b
            }
        }
        (Some(b), None) => b,
        (None, Some(q)) => q,
        (None, None) => return None,
    };
    Some(&rest[..end])
}

/// The inside of a response that is nothing but one delimited span.
fn whole_span(text: &str) -> Option<&str> {
    let t = text.trim();
    let first = t.chars().next()?;
    let last = t.chars().next_back()?;
    if !is_opening(first) || !is_closer(last) || t.len() <= first.len_utf8() + last.len_utf8() {
        return None;
    }
    if t.starts_with("```") {
        return None;
    }
    Some(&t[first.len_utf8()..t.len() - last.len_utf8()])
}

/// Finds the first delimited span at or after byte `from` of `text`.
fn find_span(text: &str, from: usize) -> Option<&str> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let line_end = offset + line.len();
        if line_end > from {
            let line = line.trim_end_matches(['\n', '\r']);
            let skip = from.saturating_sub(offset);
            for (i, c) in line.char_indices().filter(|&(i, _)| i >= skip) {
                if c == '`' && line[i..].starts_with("```") {
                    // code fences are handled by the caller
                    continue;
                }
                if is_opening(c) {
                    if let Some(span) = close_span(line, i) {
                        if !span.trim().is_empty() {
                            return Some(span);
                        }
                    }
                }
            }
        }
        offset = line_end;
    }
    None
}

/// First non-empty line inside a ``` fenced block, if any.
fn fenced_line(text: &str) -> Option<&str> {
    let mut inside = false;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            if inside {
                return None;
            }
            inside = true;
            continue;
        }
        if inside && !line.trim().is_empty() {
            return Some(line.trim());
        }
    }
    None
}

fn looks_like_refusal(text: &str) -> bool {
    let lower = text.to_lowercase();
    REFUSAL_PHRASES.iter().any(|p| lower.contains(p))
}

/// Pulls the template out of a model response.
///
/// Span selection order: the span following a "The template ... is" phrase,
/// then the whole response when it is a single delimited span, then the first
/// delimited span anywhere, then the first line of a fenced code block.
/// Without any of those the response is either a refusal or, failing the
/// refusal heuristics, its last non-empty line is used as-is.
pub fn extract_delimited(response: &str) -> ExtractionOutcome {
    let anchored = TEMPLATE_IS
        .find(response)
        .and_then(|m| find_span(response, m.end()));
    let span = anchored
        .map(|s| (s, "span after template phrase"))
        .or_else(|| whole_span(response).map(|s| (s, "whole response delimited")))
        .or_else(|| find_span(response, 0).map(|s| (s, "first delimited span")))
        .or_else(|| fenced_line(response).map(|s| (s, "fenced code block")));

    if let Some((candidate, how)) = span {
        if let Ok(template) = canonicalize(candidate) {
            return ExtractionOutcome {
                status: ExtractionStatus::Extracted,
                template: Some(template),
                note: how.to_owned(),
            };
        }
    }

    if looks_like_refusal(response) {
        return ExtractionOutcome {
            status: ExtractionStatus::Refusal,
            template: None,
            note: "refusal phrase without delimited template".to_owned(),
        };
    }

    let last_line = response
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty());
    match last_line.map(canonicalize) {
        Some(Ok(template)) => ExtractionOutcome {
            status: ExtractionStatus::NoDelimiter,
            template: Some(template),
            note: "no delimiter; used last non-empty line".to_owned(),
        },
        _ => ExtractionOutcome {
            status: ExtractionStatus::Refusal,
            template: None,
            note: "empty response".to_owned(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn extracted(resp: &str) -> String {
        let out = extract_delimited(resp);
        assert_eq!(
            out.status,
            ExtractionStatus::Extracted,
            "{resp:?} -> {out:?}"
        );
        out.template.unwrap().raw().to_owned()
    }

    #[test]
    fn canonicalize_brace_placeholders() {
        let t = canonicalize("Putting block {block_id} with replication took {time}").unwrap();
        assert_eq!(t.raw(), "Putting block <*> with replication took <*>");
        assert_eq!(t.wildcard_count(), 2);
    }

    #[test]
    fn canonicalize_fixed_point_and_empty() {
        assert_eq!(canonicalize("Hello <*>").unwrap().raw(), "Hello <*>");
        assert_eq!(canonicalize("   "), Err(CanonicalizeError::EmptyTemplate));
        assert_eq!(canonicalize(""), Err(CanonicalizeError::EmptyTemplate));
    }

    #[test]
    fn canonicalize_keeps_adjacent_wildcards() {
        assert_eq!(canonicalize("{a} {b}").unwrap().raw(), "<*> <*>");
        assert_eq!(canonicalize("{ip}:{port}").unwrap().raw(), "<*>:<*>");
        assert_eq!(canonicalize("  x \t {y}  ").unwrap().raw(), "x <*>");
    }

    #[test]
    fn canonicalize_nested_braces() {
        assert_eq!(canonicalize("v={a{b}c}").unwrap().raw(), "v=<*>");
        // unbalanced braces are literal text
        assert_eq!(canonicalize("open { only").unwrap().raw(), "open { only");
    }

    #[test]
    fn canonicalize_leaves_angle_tokens() {
        assert_eq!(
            canonicalize("<init> <**> <*>").unwrap().raw(),
            "<init> <**> <*>"
        );
    }

    #[test]
    fn extract_backtick_apostrophe_quotes() {
        assert_eq!(
            extracted("`Putting block <*> with replication took <*>'"),
            "Putting block <*> with replication took <*>"
        );
    }

    #[test]
    fn extract_after_template_phrase() {
        assert_eq!(
            extracted("Sure! The template is: `Session opened for user {username} by (uid={uid})'"),
            "Session opened for user <*> by (uid=<*>)"
        );
        assert_eq!(
            extracted("The template of `send 5 bytes' is `send {n} bytes'."),
            "send <*> bytes"
        );
    }

    #[test]
    fn extract_markdown_backticks() {
        assert_eq!(
            extracted("Template: `user {u} can't log in`"),
            "user <*> can't log in"
        );
        assert_eq!(
            extracted("`user 'bob' logged {n}`"),
            "user 'bob' logged <*>"
        );
        assert_eq!(extracted("\u{2018}x {y}\u{2019}"), "x <*>");
    }

    #[test]
    fn extract_whole_response_span() {
        assert_eq!(extracted("`user 'bob' logged in'"), "user 'bob' logged in");
        assert_eq!(extracted("`run `ls` in {dir}'"), "run `ls` in <*>");
        assert_eq!(extracted("`x' and `y'"), "x' and `y");
        assert_eq!(
            extracted("`template {t} is loaded'"),
            "template <*> is loaded"
        );
    }

    #[test]
    fn extract_fenced_block() {
        assert_eq!(
            extracted("Here you go:\n```\nsend {n} bytes\n```\n"),
            "send <*> bytes"
        );
    }

    #[test]
    fn refusal_without_span() {
        let out = extract_delimited("Could you provide more context about this log?");
        assert_eq!(out.status, ExtractionStatus::Refusal);
        assert!(out.template.is_none());
        assert!(out.prediction().is_refused());
        let out = extract_delimited("I need more information to determine the template.");
        assert_eq!(out.status, ExtractionStatus::Refusal);
    }

    #[test]
    fn refusal_phrase_with_span_is_extracted() {
        let out = extract_delimited("I'm sorry, but the template is `a {b}'");
        assert_eq!(out.status, ExtractionStatus::Extracted);
        assert_eq!(out.template.unwrap().raw(), "a <*>");
    }

    #[test]
    fn no_delimiter_uses_last_line() {
        let out = extract_delimited("Here is the template:\n\nsend {n} bytes\n");
        assert_eq!(out.status, ExtractionStatus::NoDelimiter);
        assert_eq!(out.template.unwrap().raw(), "send <*> bytes");
    }

    #[test]
    fn empty_response_is_refusal() {
        assert_eq!(extract_delimited("  \n ").status, ExtractionStatus::Refusal);
        assert_eq!(extract_delimited("").status, ExtractionStatus::Refusal);
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent(s in "[a-z0-9{}<>* =:_.]{0,40}") {
            if let Ok(t) = canonicalize(&s) {
                prop_assert_eq!(canonicalize(t.raw()).unwrap(), t.clone());
                prop_assert!(!BRACE_SPAN.is_match(t.raw()));
            }
        }

        #[test]
        fn extraction_of_echoed_template_is_identity(s in "[a-z0-9<>*=:_.()\\[\\]/-]{1,12}( [a-z0-9<>*=:_.()/-]{1,12}){0,6}") {
            let t = Template::parse_canonical(&s);
            let canon = canonicalize(t.raw()).unwrap();
            let out = extract_delimited(&format!("`{}'", canon.raw()));
            prop_assert_eq!(out.status, ExtractionStatus::Extracted);
            prop_assert_eq!(out.template.unwrap(), canon);
        }
    }
}
