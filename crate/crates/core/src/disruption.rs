//! Citation-graph metrics: CD index, its per-reference decomposition,
//! the disruption-likelihood ratio and PageRank.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::embed_space::Label;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum DisruptionError {
    #[error("unknown paper {0:?}")]
    UnknownPaper(String),
    #[error("paper {0:?} has no publication year")]
    NoYear(String),
    #[error("no {0} papers with a defined CD")]
    EmptyGroup(Label),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("damping must lie in (0, 1), got {0}")]
    BadDamping(f64),
}

/// Forward and inverse citation indices over every id that appears either
/// as a paper or as a reference. Referenced ids outside the corpus have no
/// year and no references of their own.
#[derive(Debug, Clone, Default)]
pub struct CitationGraph {
    ids: Vec<String>,
    index: HashMap<String, u32>,
    years: Vec<Option<i32>>,
    refs: Vec<Vec<u32>>,
    citers: Vec<Vec<u32>>,
}

impl CitationGraph {
    /// `papers` yields `(id, year, references)`; self-citations are dropped.
    pub fn from_papers<'a, I, R>(papers: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, i32, R)>,
        R: IntoIterator<Item = &'a str>,
    {
        let mut raw: Vec<(&str, i32, Vec<&str>)> = papers
            .into_iter()
            .map(|(id, y, r)| (id, y, r.into_iter().filter(|x| *x != id).collect()))
            .collect();
        raw.sort_by(|a, b| a.0.cmp(b.0));
        let mut names: Vec<&str> = raw
            .iter()
            .flat_map(|(id, _, r)| std::iter::once(*id).chain(r.iter().copied()))
            .collect();
        names.sort_unstable();
        names.dedup();
        let index: HashMap<String, u32> =
            names.iter().enumerate().map(|(i, s)| (s.to_string(), i as u32)).collect();
        let n = names.len();
        let mut years = vec![None; n];
        let mut refs = vec![Vec::new(); n];
        let mut citers = vec![Vec::new(); n];
        for (id, y, r) in &raw {
            let p = index[*id] as usize;
            years[p] = Some(*y);
            let mut rs: Vec<u32> = r.iter().map(|x| index[*x]).collect();
            rs.sort_unstable();
            rs.dedup();
            for &j in &rs {
                citers[j as usize].push(p as u32);
            }
            refs[p] = rs;
        }
        for c in &mut citers {
            c.sort_unstable();
            c.dedup();
        }
        Self {
            ids: names.into_iter().map(str::to_string).collect(),
            index,
            years,
            refs,
            citers,
        }
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        Self::from_papers(corpus.papers().iter().map(|p| {
            (
                p.paper_id.as_str(),
                p.year,
                p.reference_ids.iter().map(String::as_str),
            )
        }))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn year(&self, id: &str) -> Option<i32> {
        self.node(id).ok().and_then(|i| self.years[i])
    }

    pub fn references(&self, id: &str) -> impl Iterator<Item = &str> {
        let list = self.node(id).map(|i| self.refs[i].as_slice()).unwrap_or(&[]);
        list.iter().map(|&j| self.ids[j as usize].as_str())
    }

    pub fn citers(&self, id: &str) -> impl Iterator<Item = &str> {
        let list = self.node(id).map(|i| self.citers[i].as_slice()).unwrap_or(&[]);
        list.iter().map(|&j| self.ids[j as usize].as_str())
    }

    fn node(&self, id: &str) -> Result<usize, DisruptionError> {
        self.index
            .get(id)
            .map(|&i| i as usize)
            .ok_or_else(|| DisruptionError::UnknownPaper(id.to_string()))
    }

    /// Citers of node `i` published strictly after `year`.
    fn later_citers(&self, i: usize, year: i32) -> Vec<u32> {
        self.citers[i]
            .iter()
            .copied()
            .filter(|&c| self.years[c as usize].is_some_and(|y| y > year))
            .collect()
    }
}

fn count_intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// CD index of `paper_id`; `None` when no later paper cites it or any of its
/// references.
pub fn cd_index(graph: &CitationGraph, paper_id: &str) -> Result<Option<f64>, DisruptionError> {
    let p = graph.node(paper_id)?;
    let year = graph.years[p].ok_or_else(|| DisruptionError::NoYear(paper_id.to_string()))?;
    let direct = graph.later_citers(p, year);
    let mut indirect: Vec<u32> = graph.refs[p]
        .iter()
        .flat_map(|&r| graph.later_citers(r as usize, year))
        .collect();
    indirect.sort_unstable();
    indirect.dedup();
    let both = count_intersection(&direct, &indirect);
    let n = direct.len() + indirect.len() - both;
    if n == 0 {
        return Ok(None);
    }
    // f=1,b=0 → +1; f=1,b=1 → −1; f=0,b=1 → 0
    let sum = (direct.len() - both) as f64 - both as f64;
    Ok(Some(sum / n as f64))
}

/// Consolidation and disruption of the focal paper against one reference.
#[derive(Debug, Clone, PartialEq)]
pub struct RefComponent {
    pub reference_id: String,
    pub c_j: f64,
    pub d_j: f64,
    /// Size of the later citer set of the focal paper or this reference.
    pub n_citers: usize,
    /// Set when that citer set is empty and `c_j = d_j = 0` by convention.
    pub empty: bool,
}

/// Which per-reference quantity the third dispersion is taken over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CdPrimeMode {
    /// Spread of `D_j − C_j`, which reduces to the per-reference focal
    /// citation share.
    #[default]
    Literal,
    /// Spread of `D_j + C_j`, the single-reference CD.
    PerReferenceCd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisruptionProfile {
    pub paper_id: String,
    pub cd: Option<f64>,
    pub per_ref: Vec<RefComponent>,
    pub c_prime: Option<f64>,
    pub d_prime: Option<f64>,
    pub cd_prime: Option<f64>,
    /// Size of the CD citer set.
    pub n_citers: usize,
}

impl DisruptionProfile {
    pub fn n_refs(&self) -> usize {
        self.per_ref.len()
    }

    pub fn empty_refs(&self) -> usize {
        self.per_ref.iter().filter(|r| r.empty).count()
    }
}

pub fn decompose_cd(
    graph: &CitationGraph,
    paper_id: &str,
    mode: CdPrimeMode,
) -> Result<DisruptionProfile, DisruptionError> {
    let p = graph.node(paper_id)?;
    let year = graph.years[p].ok_or_else(|| DisruptionError::NoYear(paper_id.to_string()))?;
    let direct = graph.later_citers(p, year);

    let mut indirect: Vec<u32> = Vec::new();
    let mut per_ref = Vec::with_capacity(graph.refs[p].len());
    for &r in &graph.refs[p] {
        let cj = graph.later_citers(r as usize, year);
        let both = count_intersection(&direct, &cj);
        let n = direct.len() + cj.len() - both;
        let (c_j, d_j) = if n == 0 {
            (0.0, 0.0)
        } else {
            let n = n as f64;
            (-(both as f64) / n, (direct.len() - both) as f64 / n)
        };
        per_ref.push(RefComponent {
            reference_id: graph.ids[r as usize].clone(),
            c_j,
            d_j,
            n_citers: n,
            empty: n == 0,
        });
        indirect.extend(cj);
    }
    indirect.sort_unstable();
    indirect.dedup();
    let both = count_intersection(&direct, &indirect);
    let n_citers = direct.len() + indirect.len() - both;
    let cd = (n_citers > 0).then(|| ((direct.len() - both) as f64 - both as f64) / n_citers as f64);

    let cs: Vec<f64> = per_ref.iter().map(|r| r.c_j).collect();
    let ds: Vec<f64> = per_ref.iter().map(|r| r.d_j).collect();
    let third: Vec<f64> = per_ref
        .iter()
        .map(|r| match mode {
            CdPrimeMode::Literal => r.d_j - r.c_j,
            CdPrimeMode::PerReferenceCd => r.d_j + r.c_j,
        })
        .collect();
    Ok(DisruptionProfile {
        paper_id: paper_id.to_string(),
        cd,
        c_prime: stats::population_std(&cs),
        d_prime: stats::population_std(&ds),
        cd_prime: stats::population_std(&third),
        per_ref,
        n_citers,
    })
}

/// Profiles for every corpus paper (nodes with a year) with at least
/// `min_citations` later citers, ordered by paper id.
pub fn compute_profiles(
    graph: &CitationGraph,
    min_citations: usize,
    mode: CdPrimeMode,
) -> Vec<DisruptionProfile> {
    (0..graph.len())
        .into_par_iter()
        .filter(|&i| graph.years[i].is_some())
        .map(|i| decompose_cd(graph, &graph.ids[i], mode).expect("node has a year"))
        .filter(|p| p.n_citers >= min_citations)
        .collect()
}

pub fn write_profiles_csv<W: Write>(profiles: &[DisruptionProfile], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["paper_id", "cd", "c_prime", "d_prime", "cd_prime", "n_citers", "n_refs"])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for p in profiles {
        wtr.write_record([
            p.paper_id.clone(),
            opt(p.cd),
            opt(p.c_prime),
            opt(p.d_prime),
            opt(p.cd_prime),
            p.n_citers.to_string(),
            p.n_refs().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisruptionRatio {
    pub cutoff: f64,
    pub p_stylized: f64,
    pub p_popularized: f64,
    /// `None` when no popularized paper exceeds the cutoff.
    pub ratio: Option<f64>,
    pub n_stylized: usize,
    pub n_popularized: usize,
}

/// Ratio of the probabilities of exceeding the median CD for stylized and
/// popularized papers of one year. `items` holds `(cd, label)` pairs.
pub fn disruption_ratio(items: &[(f64, Label)]) -> Result<DisruptionRatio, DisruptionError> {
    let all: Vec<f64> = items.iter().map(|x| x.0).collect();
    let group = |l: Label| -> Vec<f64> { items.iter().filter(|x| x.1 == l).map(|x| x.0).collect() };
    let s = group(Label::Stylized);
    let p = group(Label::Popularized);
    if s.is_empty() {
        return Err(DisruptionError::EmptyGroup(Label::Stylized));
    }
    if p.is_empty() {
        return Err(DisruptionError::EmptyGroup(Label::Popularized));
    }
    let cutoff = stats::median(&all).expect("non-empty");
    let share = |v: &[f64]| v.iter().filter(|&&x| x > cutoff).count() as f64 / v.len() as f64;
    let (ps, pp) = (share(&s), share(&p));
    Ok(DisruptionRatio {
        cutoff,
        p_stylized: ps,
        p_popularized: pp,
        ratio: (pp > 0.0).then(|| ps / pp),
        n_stylized: s.len(),
        n_popularized: p.len(),
    })
}

/// Per-year ratios over profiles with a defined CD. Papers without a label
/// or year are skipped; years lacking either group are omitted.
pub fn disruption_ratios_by_year(
    profiles: &[DisruptionProfile],
    labels: &BTreeMap<String, Label>,
    graph: &CitationGraph,
) -> BTreeMap<i32, DisruptionRatio> {
    let mut by_year: BTreeMap<i32, Vec<(f64, Label)>> = BTreeMap::new();
    for p in profiles {
        if let (Some(cd), Some(&l), Some(y)) = (p.cd, labels.get(&p.paper_id), graph.year(&p.paper_id)) {
            by_year.entry(y).or_default().push((cd, l));
        }
    }
    by_year
        .into_iter()
        .filter_map(|(y, items)| disruption_ratio(&items).ok().map(|r| (y, r)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct PageRank {
    pub scores: BTreeMap<String, f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// PageRank over citation edges (citer → reference). Mass of nodes without
/// references is spread uniformly.
pub fn pagerank(graph: &CitationGraph, damping: f64, tol: f64) -> Result<PageRank, DisruptionError> {
    if !(damping > 0.0 && damping < 1.0) {
        return Err(DisruptionError::BadDamping(damping));
    }
    let n = graph.len();
    if n == 0 {
        return Err(DisruptionError::EmptyGraph);
    }
    let nf = n as f64;
    let mut x = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 10_000 {
        iterations += 1;
        let dangling: f64 = (0..n).filter(|&i| graph.refs[i].is_empty()).map(|i| x[i]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        next.iter_mut().for_each(|v| *v = base);
        for (i, rs) in graph.refs.iter().enumerate() {
            if rs.is_empty() {
                continue;
            }
            let share = damping * x[i] / rs.len() as f64;
            for &j in rs {
                next[j as usize] += share;
            }
        }
        let delta: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if delta < tol {
            converged = true;
            break;
        }
    }
    let total: f64 = x.iter().sum();
    Ok(PageRank {
        scores: graph.ids.iter().cloned().zip(x.into_iter().map(|v| v / total)).collect(),
        iterations,
        converged,
    })
}
