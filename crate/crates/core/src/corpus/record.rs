use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::MIN_YEAR;

/// Submission and acceptance dates as days since 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubmissionHistory {
    pub submitted: Option<i64>,
    pub accepted: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaperRecord {
    pub paper_id: String,
    pub doi: Option<String>,
    pub year: i32,
    pub journal: Option<String>,
    /// Ordinal position within a journal issue, when known.
    pub issue_order: Option<u32>,
    pub fields_l0: BTreeSet<String>,
    pub fields_l1: BTreeSet<String>,
    pub author_ids: Vec<String>,
    pub reference_ids: BTreeSet<String>,
    pub concept_ids: BTreeSet<String>,
    /// Row in the attached [`EmbeddingStore`](super::EmbeddingStore).
    pub embedding_ref: Option<usize>,
    pub history: Option<SubmissionHistory>,
}

impl PaperRecord {
    pub fn new(paper_id: impl Into<String>, year: i32) -> Self {
        Self {
            paper_id: paper_id.into(),
            doi: None,
            year,
            journal: None,
            issue_order: None,
            fields_l0: BTreeSet::new(),
            fields_l1: BTreeSet::new(),
            author_ids: Vec::new(),
            reference_ids: BTreeSet::new(),
            concept_ids: BTreeSet::new(),
            embedding_ref: None,
            history: None,
        }
    }

    pub fn with_fields_l1(mut self, fields: &[&str]) -> Self {
        self.fields_l1 = fields.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_authors(mut self, authors: &[&str]) -> Self {
        self.author_ids = authors.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_references(mut self, refs: &[&str]) -> Self {
        self.reference_ids = refs.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_concepts(mut self, concepts: &[&str]) -> Self {
        self.concept_ids = concepts.iter().map(|s| s.to_string()).collect();
        self
    }

    /// Normalised DOI used for duplicate detection.
    pub fn doi_key(&self) -> Option<String> {
        let d = self.doi.as_deref()?.trim();
        (!d.is_empty()).then(|| d.to_ascii_lowercase())
    }

    /// Lexicographically first level-1 field; used where a single field is
    /// needed (regression fixed effects, control sampling).
    pub fn primary_field(&self) -> Option<&str> {
        self.fields_l1.iter().next().map(String::as_str)
    }

    pub fn to_raw(&self) -> RawRecord {
        let fmt = |d: Option<i64>| d.map(format_date);
        RawRecord {
            schema: None,
            paper_id: Some(self.paper_id.clone()),
            doi: self.doi.clone(),
            year: Some(self.year as i64),
            journal: self.journal.clone(),
            issue_order: self.issue_order,
            fields_l0: self.fields_l0.iter().cloned().collect(),
            fields_l1: self.fields_l1.iter().cloned().collect(),
            author_ids: self.author_ids.clone(),
            reference_ids: self.reference_ids.iter().cloned().collect(),
            concept_ids: self.concept_ids.iter().cloned().collect(),
            submitted: self.history.and_then(|h| fmt(h.submitted)),
            accepted: self.history.and_then(|h| fmt(h.accepted)),
        }
    }
}

/// One NDJSON line as it appears on disk.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub paper_id: Option<String>,
    #[serde(default)]
    pub doi: Option<String>,
    pub year: Option<i64>,
    #[serde(default)]
    pub journal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue_order: Option<u32>,
    #[serde(default)]
    pub fields_l0: Vec<String>,
    #[serde(default)]
    pub fields_l1: Vec<String>,
    #[serde(default)]
    pub author_ids: Vec<String>,
    #[serde(default)]
    pub reference_ids: Vec<String>,
    #[serde(default)]
    pub concept_ids: Vec<String>,
    #[serde(default)]
    pub submitted: Option<String>,
    #[serde(default)]
    pub accepted: Option<String>,
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")
}

/// Parses an ISO-8601 calendar date into days since 1970-01-01.
pub fn parse_date(s: &str) -> Option<i64> {
    let d = NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()?;
    Some((d - epoch()).num_days())
}

pub fn format_date(days: i64) -> String {
    (epoch() + chrono::Duration::days(days))
        .format("%Y-%m-%d")
        .to_string()
}

impl TryFrom<RawRecord> for PaperRecord {
    type Error = String;

    fn try_from(raw: RawRecord) -> Result<Self, String> {
        let paper_id = raw
            .paper_id
            .filter(|s| !s.is_empty())
            .ok_or_else(|| "missing paper_id".to_string())?;
        let year = raw.year.ok_or_else(|| "missing year".to_string())?;
        if year < MIN_YEAR as i64 || year > i32::MAX as i64 {
            return Err(format!("year {year} out of range"));
        }
        let reference_ids: BTreeSet<String> = raw.reference_ids.into_iter().collect();
        if reference_ids.contains(&paper_id) {
            return Err("record cites itself".to_string());
        }
        let date = |field: &str, v: Option<String>| -> Result<Option<i64>, String> {
            match v {
                None => Ok(None),
                Some(s) if s.trim().is_empty() => Ok(None),
                Some(s) => parse_date(&s)
                    .map(Some)
                    .ok_or_else(|| format!("invalid {field} date {s:?}")),
            }
        };
        let submitted = date("submitted", raw.submitted)?;
        let accepted = date("accepted", raw.accepted)?;
        let history = (submitted.is_some() || accepted.is_some())
            .then_some(SubmissionHistory { submitted, accepted });
        Ok(PaperRecord {
            paper_id,
            doi: raw.doi.filter(|d| !d.trim().is_empty()),
            year: year as i32,
            journal: raw.journal.filter(|j| !j.is_empty()),
            issue_order: raw.issue_order,
            fields_l0: raw.fields_l0.into_iter().collect(),
            fields_l1: raw.fields_l1.into_iter().collect(),
            author_ids: raw.author_ids,
            reference_ids,
            concept_ids: raw.concept_ids.into_iter().collect(),
            embedding_ref: None,
            history,
        })
    }
}
