//! Loader for LogPai-style structured CSV datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::extract::canonicalize;
use crate::model::{LogRecord, Template};

/// The sixteen systems of the corrected LogPai benchmark.
pub const BENCHMARK_DATASETS: [&str; 16] = [
    "HDFS",
    "Hadoop",
    "Spark",
    "Zookeeper",
    "BGL",
    "HPC",
    "Thunderbird",
    "Windows",
    "Linux",
    "Android",
    "HealthApp",
    "Apache",
    "Proxifier",
    "OpenSSH",
    "OpenStack",
    "Mac",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("dataset has no data rows")]
    EmptyDataset,
    #[error("row {row}: expected {expected} fields, found {found}")]
    MalformedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: invalid LineId `{value}`")]
    InvalidLineId { row: usize, value: String },
    #[error("row {row}: duplicate LineId {line_id}")]
    DuplicateLineId { row: usize, line_id: u64 },
    #[error("row {row}: empty Content")]
    EmptyContent { row: usize },
    #[error("row {row}: empty EventTemplate")]
    EmptyTemplate { row: usize },
}

/// Ground-truth grouping: canonical template text to the line ids carrying it.
pub type Grouping = BTreeMap<String, BTreeSet<u64>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    records: Vec<LogRecord>,
    template_index: Grouping,
}

impl Dataset {
    /// Builds a dataset from records already in memory.
    ///
    /// Applies the same validation as [`load_dataset`] apart from the file
    /// format checks; row numbers in errors are 1-based record positions.
    pub fn from_records(name: &str, records: Vec<LogRecord>) -> Result<Self, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::EmptyDataset);
        }
        let mut template_index = Grouping::new();
        let mut seen = BTreeSet::new();
        for (i, rec) in records.iter().enumerate() {
            let row = i + 1;
            if rec.content.trim().is_empty() {
                return Err(DatasetError::EmptyContent { row });
            }
            if rec.truth_template.is_empty() {
                return Err(DatasetError::EmptyTemplate { row });
            }
            if rec.line_id == 0 {
                return Err(DatasetError::InvalidLineId {
                    row,
                    value: "0".to_owned(),
                });
            }
            if !seen.insert(rec.line_id) {
                return Err(DatasetError::DuplicateLineId {
                    row,
                    line_id: rec.line_id,
                });
            }
            template_index
                .entry(rec.truth_template.raw().to_owned())
                .or_default()
                .insert(rec.line_id);
        }
        Ok(Dataset {
            name: name.to_owned(),
            records,
            template_index,
        })
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn template_index(&self) -> &Grouping {
        &self.template_index
    }

    pub fn distinct_templates(&self) -> usize {
        self.template_index.len()
    }

    pub fn record(&self, line_id: u64) -> Option<&LogRecord> {
        self.records.iter().find(|r| r.line_id == line_id)
    }
}

/// Conventional location of a benchmark file inside `data_dir`.
///
/// Accepts both a flat directory and the loghub `<name>/` layout.
pub fn dataset_path(data_dir: &Path, name: &str) -> PathBuf {
    let file = format!("{name}_2k.log_structured_corrected.csv");
    let nested = data_dir.join(name).join(&file);
    if nested.exists() {
        nested
    } else {
        data_dir.join(file)
    }
}

pub fn load_dataset(path: &Path, name: &str) -> Result<Dataset, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_dataset(file, name)
}

/// Parses the CSV body of a dataset from any reader.
pub fn read_dataset<R: Read>(reader: R, name: &str) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |want: &str| headers.iter().position(|h| h.trim() == want);
    let content_col = column("Content").ok_or(DatasetError::MissingColumn("Content"))?;
    let template_col =
        column("EventTemplate").ok_or(DatasetError::MissingColumn("EventTemplate"))?;
    let line_id_col = column("LineId");
    let width = headers.len();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        if row.len() != width {
            return Err(DatasetError::MalformedRow {
                row: row_no,
                expected: width,
                found: row.len(),
            });
        }
        let line_id = match line_id_col {
            Some(c) => {
                let value = row[c].trim();
                value
                    .parse::<u64>()
                    .ok()
                    .filter(|&id| id > 0)
                    .ok_or_else(|| DatasetError::InvalidLineId {
                        row: row_no,
                        value: value.to_owned(),
                    })?
            }
            None => row_no as u64,
        };
        let content = row[content_col].to_owned();
        if content.trim().is_empty() {
            return Err(DatasetError::EmptyContent { row: row_no });
        }
        let truth_template: Template = canonicalize(&row[template_col])
            .map_err(|_| DatasetError::EmptyTemplate { row: row_no })?;
        records.push(LogRecord {
            line_id,
            content,
            truth_template,
        });
    }
    Dataset::from_records(name, records)
}

/// The ground-truth grouping of `ds`.
pub fn truth_grouping(ds: &Dataset) -> Grouping {
    ds.template_index.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<Dataset, DatasetError> {
        read_dataset(text.as_bytes(), "fixture")
    }

    fn ids(xs: &[u64]) -> BTreeSet<u64> {
        xs.iter().copied().collect()
    }

    #[test]
    fn two_row_fixture() {
        let ds =
            load("Content,EventTemplate\nHello world,Hello <*>\nHello mars,Hello <*>\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.records()[1].line_id, 2);
        let g = truth_grouping(&ds);
        assert_eq!(g.len(), 1);
        assert_eq!(g["Hello <*>"], ids(&[1, 2]));
    }

    #[test]
    fn line_ids_taken_from_column() {
        let ds = load("LineId,Content,EventId,EventTemplate\n7,a 1,E1,a <*>\n9,b,E2,b\n").unwrap();
        assert_eq!(ds.records()[0].line_id, 7);
        assert_eq!(truth_grouping(&ds)["b"], ids(&[9]));
    }

    #[test]
    fn four_records_two_groups() {
        let ds = load("Content,EventTemplate\nA1,A\nA2,A\nB1,B\nB2,B\n").unwrap();
        let g = truth_grouping(&ds);
        assert_eq!(g["A"], ids(&[1, 2]));
        assert_eq!(g["B"], ids(&[3, 4]));
    }

    #[test]
    fn distinct_templates_give_singletons() {
        let ds = load("Content,EventTemplate\na,a\nb,b\nc,c\n").unwrap();
        let g = truth_grouping(&ds);
        assert_eq!(g.len(), 3);
        assert!(g.values().all(|s| s.len() == 1));
    }

    #[test]
    fn quoted_fields_with_commas_and_newlines() {
        let text = "Content,EventTemplate\n\"a, b\",\"a, <*>\"\n\"multi\nline\",\"multi {x}\"\n";
        let ds = load(text).unwrap();
        assert_eq!(ds.records()[0].content, "a, b");
        assert_eq!(ds.records()[0].truth_template.raw(), "a, <*>");
        assert_eq!(ds.records()[1].content, "multi\nline");
        assert_eq!(ds.records()[1].truth_template.raw(), "multi <*>");
    }

    #[test]
    fn missing_template_column() {
        let err = load("Content,Other\nx,y\n").unwrap_err();
        assert!(matches!(err, DatasetError::MissingColumn("EventTemplate")));
        let err = load("EventTemplate\nx\n").unwrap_err();
        assert!(matches!(err, DatasetError::MissingColumn("Content")));
    }

    #[test]
    fn empty_dataset() {
        assert!(matches!(
            load("Content,EventTemplate\n").unwrap_err(),
            DatasetError::EmptyDataset
        ));
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let err = load("Content,EventTemplate\na,a\nb,b,extra\n").unwrap_err();
        match err {
            DatasetError::MalformedRow {
                row,
                expected,
                found,
            } => {
                assert_eq!((row, expected, found), (2, 2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_invalid_line_ids() {
        assert!(matches!(
            load("LineId,Content,EventTemplate\n1,a,a\n1,b,b\n").unwrap_err(),
            DatasetError::DuplicateLineId { row: 2, line_id: 1 }
        ));
        assert!(matches!(
            load("LineId,Content,EventTemplate\nx,a,a\n").unwrap_err(),
            DatasetError::InvalidLineId { row: 1, .. }
        ));
    }

    #[test]
    fn blank_content_rejected() {
        assert!(matches!(
            load("Content,EventTemplate\n  ,a\n").unwrap_err(),
            DatasetError::EmptyContent { row: 1 }
        ));
    }

    #[test]
    fn duplicate_contents_with_different_templates_load_verbatim() {
        let ds = load("Content,EventTemplate\nsame,same\nsame,<*>\n").unwrap();
        assert_eq!(ds.distinct_templates(), 2);
    }

    #[test]
    fn group_sizes_sum_to_record_count() {
        let ds = load("Content,EventTemplate\na,x\nb,y\nc,x\nd,z\ne,y\n").unwrap();
        let total: usize = truth_grouping(&ds).values().map(BTreeSet::len).sum();
        assert_eq!(total, ds.len());
    }
}
