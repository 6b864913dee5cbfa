//! Twin papers: repeatedly co-cited, same-year, author-disjoint papers with
//! overlapping references, and the battery that checks stylization scores
//! agree on them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, PaperRecord};
use crate::reception::rank_sum_test;
use crate::stats;

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("context line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("context line {0}: cited_ids is empty")]
    EmptyContext(usize),
    #[error("context io: {0}")]
    Io(#[from] std::io::Error),
    #[error("no control candidates for {0:?}")]
    EmptyPool(String),
    #[error("no twin pairs with scores")]
    NoPairs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationContext {
    pub citing_paper_id: String,
    pub sentence_index: i64,
    pub group_index: i64,
    pub cited_ids: Vec<String>,
}

pub fn read_contexts<R: BufRead>(r: R) -> Result<Vec<CitationContext>, TwinError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: CitationContext =
            serde_json::from_str(&line).map_err(|e| TwinError::Parse { line: i + 1, source: e })?;
        if c.cited_ids.is_empty() {
            return Err(TwinError::EmptyContext(i + 1));
        }
        out.push(c);
    }
    Ok(out)
}

pub fn write_contexts<W: Write>(contexts: &[CitationContext], mut w: W) -> std::io::Result<()> {
    for c in contexts {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub type PairKey = (String, String);

fn key(x: &str, y: &str) -> Option<PairKey> {
    match x.cmp(y) {
        std::cmp::Ordering::Less => Some((x.to_string(), y.to_string())),
        std::cmp::Ordering::Greater => Some((y.to_string(), x.to_string())),
        std::cmp::Ordering::Equal => None,
    }
}

fn group_pairs(ids: &BTreeSet<&str>) -> Vec<PairKey> {
    let v: Vec<&str> = ids.iter().copied().collect();
    let mut out = Vec::new();
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            out.push((v[i].to_string(), v[j].to_string()));
        }
    }
    out
}

/// Co-citation counts. Every pair inside one parenthetical group adds 1.
/// A pair cited in sentences at most one apart by the same paper, but
/// never inside a shared group there, adds 1 once for that paper.
pub fn cocitation_pairs(contexts: &[CitationContext]) -> BTreeMap<PairKey, usize> {
    let mut by_paper: BTreeMap<&str, Vec<&CitationContext>> = BTreeMap::new();
    for c in contexts {
        by_paper.entry(c.citing_paper_id.as_str()).or_default().push(c);
    }
    let partial: Vec<BTreeMap<PairKey, usize>> = by_paper
        .into_par_iter()
        .map(|(_, ctxs)| {
            let mut counts: BTreeMap<PairKey, usize> = BTreeMap::new();
            let mut grouped: HashSet<PairKey> = HashSet::new();
            for c in &ctxs {
                let ids: BTreeSet<&str> = c.cited_ids.iter().map(String::as_str).collect();
                for p in group_pairs(&ids) {
                    *counts.entry(p.clone()).or_default() += 1;
                    grouped.insert(p);
                }
            }
            let mut adjacent: BTreeSet<PairKey> = BTreeSet::new();
            for (i, c) in ctxs.iter().enumerate() {
                for d in &ctxs[i + 1..] {
                    if (c.sentence_index - d.sentence_index).abs() > 1 {
                        continue;
                    }
                    for x in &c.cited_ids {
                        for y in &d.cited_ids {
                            if let Some(k) = key(x, y) {
                                if !grouped.contains(&k) {
                                    adjacent.insert(k);
                                }
                            }
                        }
                    }
                }
            }
            for k in adjacent {
                *counts.entry(k).or_default() += 1;
            }
            counts
        })
        .collect();
    let mut total = BTreeMap::new();
    for m in partial {
        for (k, v) in m {
            *total.entry(k).or_default() += v;
        }
    }
    total
}

/// Overlap coefficient of two reference lists; `None` if either is empty.
pub fn refsim(a: &PaperRecord, b: &PaperRecord) -> Option<f64> {
    let m = a.reference_ids.len().min(b.reference_ids.len());
    if m == 0 {
        return None;
    }
    let shared = a.reference_ids.intersection(&b.reference_ids).count();
    Some(shared as f64 / m as f64)
}

/// `(back_to_back, order_unknown)`.
pub fn b2b_flag(a: &PaperRecord, b: &PaperRecord) -> (bool, bool) {
    let same_venue = a.journal.is_some() && a.journal == b.journal && a.year == b.year;
    if !same_venue {
        return (false, false);
    }
    match (a.issue_order, b.issue_order) {
        (Some(x), Some(y)) => (x.abs_diff(y) == 1, false),
        _ => (false, true),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinOptions {
    pub min_cocite: usize,
    pub refsim_threshold: f64,
}

impl Default for TwinOptions {
    fn default() -> Self {
        Self {
            min_cocite: 3,
            refsim_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinPair {
    pub paper_a: String,
    pub paper_b: String,
    pub co_citation_count: usize,
    pub refsim: f64,
    pub same_year: bool,
    pub b2b: bool,
    pub order_unknown: bool,
    pub score_a: Option<f64>,
    pub score_b: Option<f64>,
    pub control_id: Option<String>,
    pub control_score: Option<f64>,
}

impl TwinPair {
    pub fn score_diff(&self) -> Option<f64> {
        Some((self.score_a? - self.score_b?).abs())
    }

    pub fn control_diff(&self) -> Option<f64> {
        Some((self.score_a? - self.control_score?).abs())
    }
}

/// RefSim of `a` and `b` when they pass every twin filter except the
/// co-citation count.
pub fn eligible(a: &PaperRecord, b: &PaperRecord, threshold: f64) -> Option<f64> {
    if a.year != b.year {
        return None;
    }
    let authors: HashSet<&String> = a.author_ids.iter().collect();
    if b.author_ids.iter().any(|x| authors.contains(x)) {
        return None;
    }
    refsim(a, b).filter(|&s| s >= threshold)
}

/// Pairs passing every filter, ordered by `(paper_a, paper_b)`.
pub fn detect_twins(
    counts: &BTreeMap<PairKey, usize>,
    corpus: &Corpus,
    opts: &TwinOptions,
) -> Vec<TwinPair> {
    counts
        .iter()
        .filter(|(_, &c)| c >= opts.min_cocite)
        .filter_map(|((x, y), &c)| {
            let (a, b) = (corpus.get(x)?, corpus.get(y)?);
            let sim = eligible(a, b, opts.refsim_threshold)?;
            let (b2b, order_unknown) = b2b_flag(a, b);
            Some(TwinPair {
                paper_a: x.clone(),
                paper_b: y.clone(),
                co_citation_count: c,
                refsim: sim,
                same_year: true,
                b2b,
                order_unknown,
                score_a: None,
                score_b: None,
                control_id: None,
                control_score: None,
            })
        })
        .collect()
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Papers sharing `paper_a`'s year and primary field, excluding both twins.
pub fn control_pool<'a>(paper_a: &str, paper_b: &str, corpus: &'a Corpus) -> Vec<&'a str> {
    let Some(a) = corpus.get(paper_a) else { return Vec::new() };
    let field = a.primary_field();
    corpus
        .papers()
        .iter()
        .filter(|p| {
            p.year == a.year
                && p.primary_field() == field
                && p.paper_id != paper_a
                && p.paper_id != paper_b
        })
        .map(|p| p.paper_id.as_str())
        .collect()
}

/// Uniform draw from [`control_pool`]. The generator is keyed by the seed
/// and the pair, so each pair's control is stable across runs.
pub fn sample_control(
    paper_a: &str,
    paper_b: &str,
    corpus: &Corpus,
    seed: u64,
) -> Result<String, TwinError> {
    let pool = control_pool(paper_a, paper_b, corpus);
    if pool.is_empty() {
        return Err(TwinError::EmptyPool(paper_a.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&format!("{paper_a}\u{1f}{paper_b}")));
    Ok(pool[rng.random_range(0..pool.len())].to_string())
}

/// Fills scores and controls. Pairs whose control pool is empty keep
/// `control_id = None`.
pub fn attach_scores(
    pairs: &mut [TwinPair],
    scores: &BTreeMap<String, f64>,
    corpus: &Corpus,
    seed: u64,
) {
    for p in pairs.iter_mut() {
        p.score_a = scores.get(&p.paper_a).copied();
        p.score_b = scores.get(&p.paper_b).copied();
        p.control_id = sample_control(&p.paper_a, &p.paper_b, corpus, seed).ok();
        p.control_score = p.control_id.as_ref().and_then(|c| scores.get(c).copied());
    }
}

pub const SURVIVAL_STEP: f64 = 0.01;
pub const AGREEMENT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n_pairs: usize,
    /// `None` when either side has zero variance.
    pub pearson_r: Option<f64>,
    /// `(t, share of pairs with |Δ| > t)` for t = 0, 0.01, …, 1.
    pub survival_twins: Vec<(f64, f64)>,
    pub survival_control: Vec<(f64, f64)>,
    pub within_twins: f64,
    pub within_control: f64,
    /// Rank-sum p-value of twin against control differences.
    pub p_value: Option<f64>,
    pub mutual_knn: f64,
    /// Pairs by number of shared nearest neighbours, 0 through 5.
    pub overlap_histogram: [usize; 6],
}

fn survival(diffs: &[f64]) -> Vec<(f64, f64)> {
    let steps = (1.0 / SURVIVAL_STEP).round() as usize;
    (0..=steps)
        .map(|i| {
            let t = i as f64 * SURVIVAL_STEP;
            let share = if diffs.is_empty() {
                0.0
            } else {
                diffs.iter().filter(|&&d| d > t + 1e-12).count() as f64 / diffs.len() as f64
            };
            (t, share)
        })
        .collect()
}

fn share_within(diffs: &[f64]) -> f64 {
    if diffs.is_empty() {
        return 0.0;
    }
    diffs.iter().filter(|&&d| d <= AGREEMENT + 1e-12).count() as f64 / diffs.len() as f64
}

/// Agreement statistics of stylization scores on twin pairs. `neighbors`
/// maps each paper to its nearest-neighbour ids (first five are used).
pub fn validate_scores(
    pairs: &[TwinPair],
    neighbors: &BTreeMap<String, Vec<String>>,
) -> Result<ValidationReport, TwinError> {
    let scored: Vec<&TwinPair> = pairs.iter().filter(|p| p.score_diff().is_some()).collect();
    if scored.is_empty() {
        return Err(TwinError::NoPairs);
    }
    let xa: Vec<f64> = scored.iter().map(|p| p.score_a.unwrap()).collect();
    let xb: Vec<f64> = scored.iter().map(|p| p.score_b.unwrap()).collect();
    let twin_d: Vec<f64> = scored.iter().filter_map(|p| p.score_diff()).collect();
    let ctrl_d: Vec<f64> = scored.iter().filter_map(|p| p.control_diff()).collect();

    let mut mutual = 0;
    let mut hist = [0usize; 6];
    let empty = Vec::new();
    for p in &scored {
        let na: Vec<&String> = neighbors.get(&p.paper_a).unwrap_or(&empty).iter().take(5).collect();
        let nb: Vec<&String> = neighbors.get(&p.paper_b).unwrap_or(&empty).iter().take(5).collect();
        if na.contains(&&p.paper_b) && nb.contains(&&p.paper_a) {
            mutual += 1;
        }
        let shared = na.iter().filter(|x| nb.contains(x)).count();
        hist[shared.min(5)] += 1;
    }
    Ok(ValidationReport {
        n_pairs: scored.len(),
        pearson_r: stats::pearson(&xa, &xb),
        survival_twins: survival(&twin_d),
        survival_control: survival(&ctrl_d),
        within_twins: share_within(&twin_d),
        within_control: share_within(&ctrl_d),
        p_value: rank_sum_test(&twin_d, &ctrl_d).ok().map(|r| r.p_value),
        mutual_knn: mutual as f64 / scored.len() as f64,
        overlap_histogram: hist,
    })
}

pub fn write_twins_csv<W: Write>(pairs: &[TwinPair], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "paper_a",
        "paper_b",
        "cocite",
        "refsim",
        "b2b",
        "score_a",
        "score_b",
        "score_diff",
        "control_id",
        "control_diff",
    ])?;
    let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for p in pairs {
        let b2b = if p.order_unknown { "order_unknown".to_string() } else { p.b2b.to_string() };
        wtr.write_record([
            p.paper_a.clone(),
            p.paper_b.clone(),
            p.co_citation_count.to_string(),
            p.refsim.to_string(),
            b2b,
            f(p.score_a),
            f(p.score_b),
            f(p.score_diff()),
            p.control_id.clone().unwrap_or_default(),
            f(p.control_diff()),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
