//! Publication metadata: loading, validation, DOI de-duplication and
//! `(year, field)` cohort views.
//!
//! A [`Corpus`] is immutable once built. Records are kept sorted by
//! `paper_id`, so every view and dump is deterministic.

mod embeddings;
mod record;

pub use embeddings::{EmbeddingError, EmbeddingStore, EMBEDDING_MAGIC};
pub use record::{format_date, parse_date, PaperRecord, RawRecord, SubmissionHistory};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Schema version understood by [`load_corpus`].
pub const SCHEMA_VERSION: &str = "1";

/// Earliest publication year accepted at load time.
pub const MIN_YEAR: i32 = 1800;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported schema version {requested:?} (this build reads {SCHEMA_VERSION:?})")]
    UnsupportedSchema { requested: String },
    #[error("{path}:{line}: record declares schema {found:?}, expected {expected:?}")]
    SchemaMismatch {
        path: PathBuf,
        line: usize,
        found: String,
        expected: String,
    },
    #[error("duplicate paper_id {0:?}")]
    DuplicateId(String),
    #[error("unknown level-1 field {0:?}")]
    UnknownField(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// A rejected input line. `line` is 1-based within `path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub path: PathBuf,
    pub line: usize,
    pub reason: String,
}

/// Papers sharing one publication year and one level-1 field tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cohort {
    pub year: i32,
    pub field: String,
    /// Sorted by `paper_id`; only papers with an embedding.
    pub members: Vec<String>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Counts produced when embeddings are attached to a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttachReport {
    pub attached: usize,
    /// Papers without a vector; they are excluded from stylization scoring.
    pub missing: usize,
    /// Store rows whose `paper_id` is not in the corpus.
    pub orphans: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    papers: Vec<PaperRecord>,
    index: HashMap<String, usize>,
    rejects: Vec<Reject>,
    embeddings: Option<EmbeddingStore>,
    known_l1: BTreeSet<String>,
}

impl Corpus {
    /// Builds a corpus from already validated records.
    pub fn from_records(mut records: Vec<PaperRecord>) -> Result<Self, CorpusError> {
        records.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
        if let Some(w) = records.windows(2).find(|w| w[0].paper_id == w[1].paper_id) {
            return Err(CorpusError::DuplicateId(w[0].paper_id.clone()));
        }
        let index = records
            .iter()
            .enumerate()
            .map(|(i, p)| (p.paper_id.clone(), i))
            .collect();
        let known_l1 = records
            .iter()
            .flat_map(|p| p.fields_l1.iter().cloned())
            .collect();
        Ok(Self {
            papers: records,
            index,
            rejects: Vec::new(),
            embeddings: None,
            known_l1,
        })
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    pub fn papers(&self) -> &[PaperRecord] {
        &self.papers
    }

    pub fn get(&self, paper_id: &str) -> Option<&PaperRecord> {
        self.index.get(paper_id).map(|&i| &self.papers[i])
    }

    pub fn position(&self, paper_id: &str) -> Option<usize> {
        self.index.get(paper_id).copied()
    }

    pub fn rejects(&self) -> &[Reject] {
        &self.rejects
    }

    pub fn known_fields(&self) -> &BTreeSet<String> {
        &self.known_l1
    }

    pub fn embeddings(&self) -> Option<&EmbeddingStore> {
        self.embeddings.as_ref()
    }

    /// Vector of a paper, if the corpus has embeddings and the paper has one.
    pub fn embedding(&self, paper_id: &str) -> Option<&[f32]> {
        let p = self.get(paper_id)?;
        let store = self.embeddings.as_ref()?;
        p.embedding_ref.map(|row| store.row(row))
    }

    /// `(min, max)` publication year, or `None` for an empty corpus.
    pub fn year_span(&self) -> Option<(i32, i32)> {
        let min = self.papers.iter().map(|p| p.year).min()?;
        let max = self.papers.iter().map(|p| p.year).max()?;
        Some((min, max))
    }

    /// Links every paper to its row in `store`.
    pub fn attach_embeddings(mut self, store: EmbeddingStore) -> (Self, AttachReport) {
        let mut report = AttachReport::default();
        for p in &mut self.papers {
            p.embedding_ref = store.row_of(&p.paper_id);
            if p.embedding_ref.is_some() {
                report.attached += 1;
            } else {
                report.missing += 1;
            }
        }
        report.orphans = store
            .ids()
            .iter()
            .filter(|id| !self.index.contains_key(id.as_str()))
            .count();
        self.embeddings = Some(store);
        (self, report)
    }

    fn check_field(&self, field: &str) -> Result<(), CorpusError> {
        if self.known_l1.contains(field) {
            Ok(())
        } else {
            Err(CorpusError::UnknownField(field.to_string()))
        }
    }

    /// Embedded papers published in `year` and tagged with level-1 `field`.
    pub fn cohort_view(&self, year: i32, field: &str) -> Result<Cohort, CorpusError> {
        self.check_field(field)?;
        let members = self
            .papers
            .iter()
            .filter(|p| p.year == year && p.embedding_ref.is_some() && p.fields_l1.contains(field))
            .map(|p| p.paper_id.clone())
            .collect();
        Ok(Cohort {
            year,
            field: field.to_string(),
            members,
        })
    }

    /// All non-empty cohorts, ordered by `(year, field)`.
    pub fn cohorts(&self) -> Vec<Cohort> {
        let mut map: BTreeMap<(i32, &str), Vec<String>> = BTreeMap::new();
        for p in self.papers.iter().filter(|p| p.embedding_ref.is_some()) {
            for f in &p.fields_l1 {
                map.entry((p.year, f.as_str()))
                    .or_default()
                    .push(p.paper_id.clone());
            }
        }
        map.into_iter()
            .map(|((year, field), members)| Cohort {
                year,
                field: field.to_string(),
                members,
            })
            .collect()
    }

    /// Number of papers (embedded or not) in a field-year.
    pub fn field_size(&self, year: i32, field: &str) -> Result<usize, CorpusError> {
        self.check_field(field)?;
        Ok(self
            .papers
            .iter()
            .filter(|p| p.year == year && p.fields_l1.contains(field))
            .count())
    }

    /// Field-size lookup table keyed by `(year, field)`.
    pub fn field_sizes(&self) -> HashMap<(i32, String), usize> {
        let mut out = HashMap::new();
        for p in &self.papers {
            for f in &p.fields_l1 {
                *out.entry((p.year, f.clone())).or_insert(0) += 1;
            }
        }
        out
    }

    /// Canonical text dump of the index: one JSON record per line in
    /// `paper_id` order.
    pub fn index_dump(&self) -> String {
        let mut out = String::new();
        for p in &self.papers {
            out.push_str(&serde_json::to_string(&p.to_raw()).expect("record serialises"));
            out.push('\n');
        }
        out
    }

    pub fn write_rejects<W: Write>(&self, w: W) -> csv::Result<()> {
        write_rejects(&self.rejects, w)
    }
}

pub fn write_rejects<W: Write>(rejects: &[Reject], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["line", "reason"])?;
    for r in rejects {
        wtr.write_record([r.line.to_string(), r.reason.clone()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads NDJSON publication records from `paths`.
///
/// Malformed lines are collected into [`Corpus::rejects`]. A duplicate
/// `paper_id` anywhere in the input is a hard error, as is a record that
/// declares a `schema` other than `schema_version`.
pub fn load_corpus<P: AsRef<Path>>(paths: &[P], schema_version: &str) -> Result<Corpus, CorpusError> {
    if schema_version != SCHEMA_VERSION {
        return Err(CorpusError::UnsupportedSchema {
            requested: schema_version.to_string(),
        });
    }
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    rejects.push(Reject {
                        path: path.to_path_buf(),
                        line: lineno,
                        reason: format!("invalid json: {e}"),
                    });
                    continue;
                }
            };
            if let Some(found) = &raw.schema {
                if found != schema_version {
                    return Err(CorpusError::SchemaMismatch {
                        path: path.to_path_buf(),
                        line: lineno,
                        found: found.clone(),
                        expected: schema_version.to_string(),
                    });
                }
            }
            match PaperRecord::try_from(raw) {
                Ok(rec) => records.push(rec),
                Err(reason) => rejects.push(Reject {
                    path: path.to_path_buf(),
                    line: lineno,
                    reason,
                }),
            }
        }
    }
    let mut corpus = Corpus::from_records(records)?;
    corpus.rejects = rejects;
    Ok(corpus)
}

/// Drops every paper whose DOI is shared with another paper.
///
/// No sharer is kept. DOIs compare case-insensitively after trimming; papers
/// without a DOI are untouched. Returns the filtered corpus and the number of
/// papers removed.
pub fn dedupe_by_doi(corpus: Corpus) -> (Corpus, usize) {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for key in corpus.papers.iter().filter_map(|p| p.doi_key()) {
        *counts.entry(key).or_insert(0) += 1;
    }
    let before = corpus.papers.len();
    let Corpus {
        papers,
        rejects,
        embeddings,
        ..
    } = corpus;
    let kept: Vec<PaperRecord> = papers
        .into_iter()
        .filter(|p| p.doi_key().is_none_or(|k| counts[&k] < 2))
        .collect();
    let removed = before - kept.len();
    let mut out = Corpus::from_records(kept).expect("ids were unique before filtering");
    out.rejects = rejects;
    if let Some(store) = embeddings {
        out = out.attach_embeddings(store).0;
    }
    (out, removed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn rec(id: &str, year: i32, fields: &[&str]) -> PaperRecord {
        PaperRecord::new(id, year).with_fields_l1(fields)
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let f = write_lines(&[]);
        let c = load_corpus(&[f.path()], SCHEMA_VERSION).unwrap();
        assert_eq!(c.len(), 0);
        assert!(c.rejects().is_empty());
    }

    #[test]
    fn missing_year_is_rejected_with_line_number() {
        let f = write_lines(&[
            r#"{"paper_id":"a","year":1990,"fields_l1":["x"]}"#,
            r#"{"paper_id":"b","year":1991,"fields_l1":["x"]}"#,
            r#"{"paper_id":"c","fields_l1":["x"]}"#,
            r#"{"paper_id":"d","year":1992,"fields_l1":["x"]}"#,
        ]);
        let c = load_corpus(&[f.path()], SCHEMA_VERSION).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.rejects().len(), 1);
        assert_eq!(c.rejects()[0].line, 3);
        assert!(c.rejects()[0].reason.contains("year"));

        let mut buf = Vec::new();
        c.write_rejects(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("line,reason\n3,"));
    }

    #[test]
    fn duplicate_id_is_a_hard_error() {
        let f = write_lines(&[
            r#"{"paper_id":"dup","year":1990}"#,
            r#"{"paper_id":"dup","year":1991}"#,
        ]);
        match load_corpus(&[f.path()], SCHEMA_VERSION) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "dup"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn schema_checks() {
        let f = write_lines(&[r#"{"schema":"2","paper_id":"a","year":1990}"#]);
        assert!(matches!(
            load_corpus(&[f.path()], SCHEMA_VERSION),
            Err(CorpusError::SchemaMismatch { line: 1, .. })
        ));
        assert!(matches!(
            load_corpus(&[f.path()], "2"),
            Err(CorpusError::UnsupportedSchema { .. })
        ));
    }

    #[test]
    fn unreadable_file() {
        let err = load_corpus(&["/nonexistent/x.ndjson"], SCHEMA_VERSION).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn invalid_records_are_rejected_not_dropped() {
        let f = write_lines(&[
            "not json",
            r#"{"paper_id":"a","year":1700}"#,
            r#"{"paper_id":"b","year":1990,"reference_ids":["b"]}"#,
            r#"{"paper_id":"c","year":1990,"submitted":"2020-13-01"}"#,
        ]);
        let c = load_corpus(&[f.path()], SCHEMA_VERSION).unwrap();
        assert_eq!(c.len(), 0);
        let lines: Vec<usize> = c.rejects().iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![1, 2, 3, 4]);
    }

    #[test]
    fn loading_is_idempotent() {
        let f = write_lines(&[
            r#"{"paper_id":"z","year":1990,"fields_l1":["b","a"],"concept_ids":["q","p"]}"#,
            r#"{"paper_id":"a","year":1991,"doi":"10.1/x","submitted":"2020-01-01","accepted":"2020-03-01"}"#,
        ]);
        let a = load_corpus(&[f.path()], SCHEMA_VERSION).unwrap().index_dump();
        let b = load_corpus(&[f.path()], SCHEMA_VERSION).unwrap().index_dump();
        assert_eq!(a, b);
        assert!(a.starts_with(r#"{"paper_id":"a""#));
    }

    fn with_dois(dois: &[Option<&str>]) -> Corpus {
        let recs = dois
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut r = rec(&format!("p{i}"), 2000, &["f"]);
                r.doi = d.map(str::to_string);
                r
            })
            .collect();
        Corpus::from_records(recs).unwrap()
    }

    #[test]
    fn dedupe_removes_all_sharers() {
        let doi = "10.5694/j.1326-5377.2006.tb00098.x";
        let (c, removed) = dedupe_by_doi(with_dois(&[Some(doi); 5]));
        assert_eq!(removed, 5);
        assert!(c.is_empty());

        let (c, removed) = dedupe_by_doi(with_dois(&[Some("a"), Some("b"), None]));
        assert_eq!((c.len(), removed), (3, 0));

        let (c, removed) = dedupe_by_doi(with_dois(&[
            Some("10.1/X"),
            Some("10.1/x "),
            Some("u1"),
            Some("u2"),
            None,
        ]));
        assert_eq!((c.len(), removed), (3, 2));
        let mut seen = HashMap::new();
        for k in c.papers().iter().filter_map(|p| p.doi_key()) {
            *seen.entry(k).or_insert(0) += 1;
        }
        assert!(seen.values().all(|&n| n == 1));
    }

    fn embedded_fixture() -> Corpus {
        let mut recs = vec![
            rec("d1", 1964, &["dft"]),
            rec("d2", 1964, &["dft"]),
            rec("d3", 1964, &["dft", "chem"]),
            rec("d4", 1964, &["dft"]),
            rec("d5", 1965, &["dft"]),
            rec("noemb", 1964, &["dft"]),
        ];
        recs.push(rec("c1", 1964, &["chem"]));
        let ids: Vec<&str> = vec!["d1", "d2", "d3", "d4", "d5", "c1"];
        let store = EmbeddingStore::from_rows(
            2,
            ids.iter().map(|id| (id.to_string(), vec![1.0f32, 0.0])),
        )
        .unwrap();
        let (c, report) = Corpus::from_records(recs).unwrap().attach_embeddings(store);
        assert_eq!(report, AttachReport { attached: 6, missing: 1, orphans: 0 });
        c
    }

    #[test]
    fn cohort_views() {
        let c = embedded_fixture();
        let dft = c.cohort_view(1964, "dft").unwrap();
        assert_eq!(dft.members, vec!["d1", "d2", "d3", "d4"]);
        assert!(c.cohort_view(1999, "dft").unwrap().is_empty());
        let chem = c.cohort_view(1964, "chem").unwrap();
        assert_eq!(chem.members, vec!["c1", "d3"]);
        assert!(matches!(
            c.cohort_view(1964, "nope"),
            Err(CorpusError::UnknownField(_))
        ));
    }

    #[test]
    fn cohorts_cover_embedded_papers_with_field_multiplicity() {
        let c = embedded_fixture();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for cohort in c.cohorts() {
            for m in cohort.members {
                *counts.entry(m).or_insert(0) += 1;
            }
        }
        for p in c.papers() {
            let expected = if p.embedding_ref.is_some() { p.fields_l1.len() } else { 0 };
            assert_eq!(counts.get(&p.paper_id).copied().unwrap_or(0), expected);
        }
    }

    #[test]
    fn field_sizes() {
        let mut recs: Vec<PaperRecord> = (0..7).map(|i| rec(&format!("a{i}"), 2001, &["x"])).collect();
        recs.push(rec("multi", 2002, &["x", "y"]));
        let c = Corpus::from_records(recs).unwrap();
        assert_eq!(c.field_size(2001, "x").unwrap(), 7);
        assert_eq!(c.field_size(1990, "x").unwrap(), 0);
        assert_eq!(c.field_size(2002, "x").unwrap(), 1);
        assert_eq!(c.field_size(2002, "y").unwrap(), 1);
        assert!(c.field_size(2002, "z").is_err());
    }
}
