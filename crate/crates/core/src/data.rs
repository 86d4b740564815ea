//! Study-level diagnostic accuracy data and CSV ingestion.
//!
//! Each study contributes a 2x2 table: true/false positives among the
//! diseased and true/false negatives among the healthy.  Datasets are
//! validated on construction (positive denominators in both channels, unique
//! study ids, at least two studies) so the inference code can assume clean
//! input.  A small hand-rolled CSV reader handles header aliases, comment
//! lines and optional per-channel covariate columns, and reports errors with
//! their 1-based source line.

use crate::error::{Error, Result};
use serde::Serialize;
use std::collections::HashSet;
use std::fmt::Write as _;

/// One diagnostic accuracy study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRecord {
    /// Identifier, unique within a dataset.
    pub id: String,
    /// Diseased subjects with a positive index test.
    pub true_pos: u64,
    /// Diseased subjects with a negative index test.
    pub false_neg: u64,
    /// Healthy subjects with a negative index test.
    pub true_neg: u64,
    /// Healthy subjects with a positive index test.
    pub false_pos: u64,
    /// Covariate values entering the sensitivity linear predictor.
    pub se_covariates: Vec<f64>,
    /// Covariate values entering the specificity linear predictor.
    pub sp_covariates: Vec<f64>,
}

impl StudyRecord {
    /// Simple covariate-free record.
    pub fn new(id: impl Into<String>, tp: u64, fneg: u64, tn: u64, fp: u64) -> Self {
        StudyRecord {
            id: id.into(),
            true_pos: tp,
            false_neg: fneg,
            true_neg: tn,
            false_pos: fp,
            se_covariates: Vec::new(),
            sp_covariates: Vec::new(),
        }
    }

    /// Number of diseased subjects (sensitivity denominator).
    pub fn n_diseased(&self) -> u64 {
        self.true_pos + self.false_neg
    }

    /// Number of healthy subjects (specificity denominator).
    pub fn n_healthy(&self) -> u64 {
        self.true_neg + self.false_pos
    }

    /// Total study size.
    pub fn n_total(&self) -> u64 {
        self.n_diseased() + self.n_healthy()
    }
}

/// A validated collection of studies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    /// The studies, in input order.
    pub studies: Vec<StudyRecord>,
    /// Names of the sensitivity-channel covariates (may be empty).
    pub se_covariate_names: Vec<String>,
    /// Names of the specificity-channel covariates (may be empty).
    pub sp_covariate_names: Vec<String>,
}

impl Dataset {
    /// Build a covariate-free dataset, validating the invariants.
    pub fn new(studies: Vec<StudyRecord>) -> Result<Self> {
        Dataset::with_covariates(studies, Vec::new(), Vec::new())
    }

    /// Build a dataset with named covariates on either channel.
    pub fn with_covariates(
        studies: Vec<StudyRecord>,
        se_covariate_names: Vec<String>,
        sp_covariate_names: Vec<String>,
    ) -> Result<Self> {
        if studies.len() < 2 {
            return Err(Error::InvalidData(format!(
                "a meta-analysis needs at least 2 studies, got {}",
                studies.len()
            )));
        }
        let mut seen = HashSet::new();
        for s in &studies {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate study id `{}`", s.id)));
            }
            if s.n_diseased() == 0 {
                return Err(Error::InvalidData(format!(
                    "study `{}` has no diseased subjects (TP + FN = 0)",
                    s.id
                )));
            }
            if s.n_healthy() == 0 {
                return Err(Error::InvalidData(format!(
                    "study `{}` has no healthy subjects (TN + FP = 0)",
                    s.id
                )));
            }
            if s.se_covariates.len() != se_covariate_names.len() {
                return Err(Error::InvalidData(format!(
                    "study `{}` has {} sensitivity covariates, expected {}",
                    s.id,
                    s.se_covariates.len(),
                    se_covariate_names.len()
                )));
            }
            if s.sp_covariates.len() != sp_covariate_names.len() {
                return Err(Error::InvalidData(format!(
                    "study `{}` has {} specificity covariates, expected {}",
                    s.id,
                    s.sp_covariates.len(),
                    sp_covariate_names.len()
                )));
            }
            for v in s.se_covariates.iter().chain(&s.sp_covariates) {
                if !v.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "study `{}` has a non-finite covariate value",
                        s.id
                    )));
                }
            }
        }
        Ok(Dataset {
            studies,
            se_covariate_names,
            sp_covariate_names,
        })
    }

    /// Number of studies.
    pub fn len(&self) -> usize {
        self.studies.len()
    }

    /// Always false: validated datasets have at least two studies.
    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    /// True when either channel carries covariates.
    pub fn has_covariates(&self) -> bool {
        !self.se_covariate_names.is_empty() || !self.sp_covariate_names.is_empty()
    }

    /// Serialize to CSV with the canonical header `study,TP,FP,FN,TN` plus
    /// any covariate columns.  Floats print in shortest round-trip form, so
    /// `parse -> serialize` is the identity on files this function wrote.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("study,TP,FP,FN,TN");
        for name in &self.se_covariate_names {
            let _ = write!(out, ",{name}");
        }
        for name in &self.sp_covariate_names {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for s in &self.studies {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                s.id, s.true_pos, s.false_pos, s.false_neg, s.true_neg
            );
            for v in s.se_covariates.iter().chain(&s.sp_covariates) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Options for [`parse_dataset_csv`].
#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    /// Column names to load as sensitivity-channel covariates.
    pub se_covariates: Vec<String>,
    /// Column names to load as specificity-channel covariates.
    pub sp_covariates: Vec<String>,
}

/// Outcome of parsing: the dataset plus non-fatal warnings (ignored columns).
#[derive(Debug, Clone)]
pub struct ParsedCsv {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

const COUNT_COLUMNS: [&str; 4] = ["tp", "fp", "fn", "tn"];

/// Parse study data from CSV text.
///
/// The header must contain a study identifier column (`study`, `id` or
/// `name`) and the four count columns `TP`, `FP`, `FN`, `TN`; matching is
/// case-insensitive and column order is free.  Blank lines and lines starting
/// with `#` are skipped.  Extra columns are ignored with a warning unless
/// listed in [`CsvOptions`], in which case they are read as numeric
/// covariates for the requested channel.
pub fn parse_dataset_csv(text: &str, options: &CsvOptions) -> Result<ParsedCsv> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines
        .next()
        .ok_or_else(|| Error::InvalidData("csv input is empty".into()))?;
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let lower: Vec<String> = columns.iter().map(|c| c.to_ascii_lowercase()).collect();

    let find = |names: &[&str]| -> Option<usize> {
        lower.iter().position(|c| names.contains(&c.as_str()))
    };
    let id_col = find(&["study", "id", "name"]).ok_or_else(|| Error::CsvParse {
        line: header_line,
        message: "missing study identifier column (one of `study`, `id`, `name`)".into(),
    })?;
    let mut count_cols = [0usize; 4];
    for (k, name) in COUNT_COLUMNS.iter().enumerate() {
        count_cols[k] = find(&[name]).ok_or_else(|| Error::CsvParse {
            line: header_line,
            message: format!("missing count column `{}`", name.to_ascii_uppercase()),
        })?;
    }

    // Resolve covariate columns; anything else is ignored with a warning.
    let locate_covariates = |wanted: &[String]| -> Result<Vec<usize>> {
        wanted
            .iter()
            .map(|name| {
                let lc = name.to_ascii_lowercase();
                lower
                    .iter()
                    .position(|c| *c == lc)
                    .ok_or_else(|| Error::CsvParse {
                        line: header_line,
                        message: format!("covariate column `{name}` not found in header"),
                    })
            })
            .collect()
    };
    let se_cols = locate_covariates(&options.se_covariates)?;
    let sp_cols = locate_covariates(&options.sp_covariates)?;

    let mut warnings = Vec::new();
    for (j, name) in columns.iter().enumerate() {
        let used = j == id_col
            || count_cols.contains(&j)
            || se_cols.contains(&j)
            || sp_cols.contains(&j);
        if !used {
            warnings.push(format!("ignoring unrecognised column `{name}`"));
        }
    }

    let mut studies = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::CsvParse {
                line: line_no,
                message: format!(
                    "expected {} fields, found {}",
                    columns.len(),
                    fields.len()
                ),
            });
        }
        let parse_count = |j: usize| -> Result<u64> {
            fields[j].parse::<u64>().map_err(|_| Error::CsvParse {
                line: line_no,
                message: format!(
                    "column `{}`: `{}` is not a non-negative integer",
                    columns[j], fields[j]
                ),
            })
        };
        let parse_real = |j: usize| -> Result<f64> {
            fields[j].parse::<f64>().map_err(|_| Error::CsvParse {
                line: line_no,
                message: format!("column `{}`: `{}` is not a number", columns[j], fields[j]),
            })
        };
        let mut record = StudyRecord::new(
            fields[id_col],
            parse_count(count_cols[0])?,
            parse_count(count_cols[2])?,
            parse_count(count_cols[3])?,
            parse_count(count_cols[1])?,
        );
        for &j in &se_cols {
            record.se_covariates.push(parse_real(j)?);
        }
        for &j in &sp_cols {
            record.sp_covariates.push(parse_real(j)?);
        }
        studies.push(record);
    }

    let dataset = Dataset::with_covariates(
        studies,
        options.se_covariates.clone(),
        options.sp_covariates.clone(),
    )?;
    Ok(ParsedCsv { dataset, warnings })
}

/// The telomerase bladder-cancer dataset: ten studies evaluating telomerase
/// activity in voided urine as a tumour marker.
pub fn telomerase() -> Dataset {
    let rows: [(&str, u64, u64, u64, u64); 10] = [
        // (id, TP, FN, TN, FP)
        ("Ito", 25, 8, 25, 1),
        ("Rahat", 17, 4, 11, 3),
        ("Kavaler", 88, 16, 31, 16),
        ("Yoshida", 16, 10, 80, 3),
        ("Ramakumar", 40, 17, 137, 1),
        ("Landman", 38, 9, 24, 6),
        ("Kinoshita", 23, 19, 12, 0),
        ("Gelmini", 27, 6, 18, 2),
        ("Cheng", 14, 3, 29, 3),
        ("Cassel", 37, 7, 7, 22),
    ];
    let studies = rows
        .iter()
        .map(|&(id, tp, fneg, tn, fp)| StudyRecord::new(id, tp, fneg, tn, fp))
        .collect();
    Dataset::new(studies).expect("built-in dataset is valid")
}
