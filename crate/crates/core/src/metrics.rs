//! Group Accuracy, Message-Level Accuracy and Edit Distance.
//!
//! All three take per-message predictions and the labelled dataset, and all
//! three treat a `<REFUSED>` prediction as wrong.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::model::{LogRecord, Template};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub line_id: u64,
    pub template: Template,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("predictions do not cover the dataset: {missing} missing, {extra} unknown, {duplicate} duplicated line ids")]
    CoverageMismatch {
        missing: usize,
        extra: usize,
        duplicate: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageDetail {
    pub line_id: u64,
    pub group_correct: bool,
    pub message_correct: bool,
    pub edit_distance: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub ga: f64,
    pub mla: f64,
    pub ed: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_message: Option<Vec<MessageDetail>>,
}

/// Pairs every record with its prediction, in dataset order.
fn align<'a>(
    preds: &'a [Prediction],
    truth: &'a Dataset,
) -> Result<Vec<(&'a LogRecord, &'a Template)>, MetricsError> {
    let mut by_id: HashMap<u64, &Template> = HashMap::with_capacity(preds.len());
    let mut duplicate = 0;
    for p in preds {
        if by_id.insert(p.line_id, &p.template).is_some() {
            duplicate += 1;
        }
    }
    let mut missing = 0;
    let mut pairs = Vec::with_capacity(truth.len());
    for r in truth.records() {
        match by_id.get(&r.line_id) {
            Some(t) => pairs.push((r, *t)),
            None => missing += 1,
        }
    }
    let extra = by_id.len() - pairs.len();
    if missing + extra + duplicate > 0 {
        return Err(MetricsError::CoverageMismatch {
            missing,
            extra,
            duplicate,
        });
    }
    Ok(pairs)
}

fn group_flags(pairs: &[(&LogRecord, &Template)]) -> Vec<bool> {
    let mut predicted: HashMap<&str, BTreeSet<u64>> = HashMap::new();
    let mut actual: HashMap<&str, BTreeSet<u64>> = HashMap::new();
    let mut truth_of: HashMap<u64, &str> = HashMap::with_capacity(pairs.len());
    for (rec, pred) in pairs {
        truth_of.insert(rec.line_id, rec.truth_template.raw());
        if !pred.is_refused() {
            predicted.entry(pred.raw()).or_default().insert(rec.line_id);
        }
        actual
            .entry(rec.truth_template.raw())
            .or_default()
            .insert(rec.line_id);
    }
    // A predicted group is correct as a whole or not at all.
    let mut group_ok: HashMap<&str, bool> = HashMap::with_capacity(predicted.len());
    for (template, members) in &predicted {
        let first = members.first().expect("groups are non-empty");
        group_ok.insert(template, actual[truth_of[first]] == *members);
    }
    pairs
        .iter()
        .map(|(_, pred)| !pred.is_refused() && group_ok[pred.raw()])
        .collect()
}

fn message_correct(rec: &LogRecord, pred: &Template) -> bool {
    !pred.is_refused() && pred.tokens() == rec.truth_template.tokens()
}

pub fn group_accuracy(preds: &[Prediction], truth: &Dataset) -> Result<f64, MetricsError> {
    let pairs = align(preds, truth)?;
    let correct = group_flags(&pairs).into_iter().filter(|&ok| ok).count();
    Ok(correct as f64 / pairs.len() as f64)
}

pub fn message_level_accuracy(preds: &[Prediction], truth: &Dataset) -> Result<f64, MetricsError> {
    let pairs = align(preds, truth)?;
    let correct = pairs.iter().filter(|(r, p)| message_correct(r, p)).count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Character-level Levenshtein distance with unit costs.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() {
        (&a, &b)
    } else {
        (&b, &a)
    };
    if short.is_empty() {
        return long.len();
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if lc == sc {
                diag
            } else {
                1 + diag.min(above).min(row[j])
            };
            diag = above;
        }
    }
    row[short.len()]
}

pub fn avg_edit_distance(preds: &[Prediction], truth: &Dataset) -> Result<f64, MetricsError> {
    let pairs = align(preds, truth)?;
    let total: usize = pairs
        .par_iter()
        .map(|(r, p)| levenshtein(p.raw(), r.truth_template.raw()))
        .sum();
    Ok(total as f64 / pairs.len() as f64)
}

/// Computes all three metrics in one pass over the aligned predictions.
pub fn evaluate(
    preds: &[Prediction],
    truth: &Dataset,
    with_details: bool,
) -> Result<MetricsReport, MetricsError> {
    let pairs = align(preds, truth)?;
    let groups = group_flags(&pairs);
    let distances: Vec<usize> = pairs
        .par_iter()
        .map(|(r, p)| levenshtein(p.raw(), r.truth_template.raw()))
        .collect();
    let details: Vec<MessageDetail> = pairs
        .iter()
        .zip(&groups)
        .zip(&distances)
        .map(|(((r, p), &group_correct), &edit_distance)| MessageDetail {
            line_id: r.line_id,
            group_correct,
            message_correct: message_correct(r, p),
            edit_distance,
        })
        .collect();
    let n = details.len();
    let ga = details.iter().filter(|d| d.group_correct).count() as f64 / n as f64;
    let mla = details.iter().filter(|d| d.message_correct).count() as f64 / n as f64;
    let ed = distances.iter().sum::<usize>() as f64 / n as f64;
    Ok(MetricsReport {
        dataset: truth.name.clone(),
        ga,
        mla,
        ed,
        n,
        per_message: with_details.then_some(details),
    })
}
