//! New concept-pair combinations, their distance in random-walk concept
//! embeddings, remote-link classification and reuse.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Corpus, PaperRecord};
use crate::embed_space::Label;
use crate::linalg::{top_eigenpairs, PowerOptions};

#[derive(Debug, Error, PartialEq)]
pub enum RecombinationError {
    #[error("no papers in window {0}..={1}")]
    EmptyWindow(i32, i32),
    #[error("no {0} papers in year {1}")]
    EmptyGroup(Label, i32),
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
}

/// Unordered concept pair stored with `a < b`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConceptPair {
    pub a: String,
    pub b: String,
}

impl ConceptPair {
    /// `None` when both concepts are equal.
    pub fn new(x: &str, y: &str) -> Option<Self> {
        match x.cmp(y) {
            std::cmp::Ordering::Less => Some(Self { a: x.into(), b: y.into() }),
            std::cmp::Ordering::Greater => Some(Self { a: y.into(), b: x.into() }),
            std::cmp::Ordering::Equal => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComboEvent {
    pub pair: ConceptPair,
    pub first_year: i32,
    pub originator_ids: Vec<String>,
    /// Filled by [`assign_distances`].
    pub distance: Option<f64>,
    pub remote: bool,
    pub disconnected: bool,
    pub reuse_count: usize,
}

pub fn extract_pairs(paper: &PaperRecord) -> BTreeSet<ConceptPair> {
    let c: Vec<&String> = paper.concept_ids.iter().collect();
    let mut out = BTreeSet::new();
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            out.extend(ConceptPair::new(c[i], c[j]));
        }
    }
    out
}

pub fn baseline_pairs(corpus: &Corpus, cutoff_year: i32) -> BTreeSet<ConceptPair> {
    corpus
        .papers()
        .iter()
        .filter(|p| p.year < cutoff_year)
        .flat_map(extract_pairs)
        .collect()
}

/// Scans years in ascending order. A pair missing from `baseline` and from
/// every earlier year becomes an event in the first year it appears; every
/// paper using it that year is an originator.
pub fn detect_new_combos(corpus: &Corpus, baseline: &BTreeSet<ConceptPair>) -> Vec<ComboEvent> {
    let pairs: Vec<BTreeSet<ConceptPair>> = corpus.papers().par_iter().map(extract_pairs).collect();
    let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, p) in corpus.papers().iter().enumerate() {
        by_year.entry(p.year).or_default().push(i);
    }

    let mut seen: HashMap<&ConceptPair, usize> = HashMap::new();
    let mut events: Vec<ComboEvent> = Vec::new();
    for (&year, idx) in &by_year {
        let mut fresh: BTreeMap<&ConceptPair, Vec<String>> = BTreeMap::new();
        for &i in idx {
            for pair in &pairs[i] {
                if baseline.contains(pair) {
                    continue;
                }
                match seen.get(pair) {
                    Some(&e) => events[e].reuse_count += 1,
                    None => fresh
                        .entry(pair)
                        .or_default()
                        .push(corpus.papers()[i].paper_id.clone()),
                }
            }
        }
        for (pair, originators) in fresh {
            seen.insert(pair, events.len());
            events.push(ComboEvent {
                pair: pair.clone(),
                first_year: year,
                originator_ids: originators,
                distance: None,
                remote: false,
                disconnected: false,
                reuse_count: 0,
            });
        }
    }
    events.sort_by(|a, b| a.first_year.cmp(&b.first_year).then_with(|| a.pair.cmp(&b.pair)));
    events
}

/// Later papers (year after the event year) containing the pair.
pub fn reuse_count(event: &ComboEvent, corpus: &Corpus) -> usize {
    corpus
        .papers()
        .iter()
        .filter(|p| {
            p.year > event.first_year
                && p.concept_ids.contains(&event.pair.a)
                && p.concept_ids.contains(&event.pair.b)
        })
        .count()
}

#[derive(Debug, Clone, Copy)]
pub struct WalkOptions {
    pub dim: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub context: usize,
    /// Window spans `[year − span + 1, year]`.
    pub span: i32,
    pub seed: u64,
}

impl Default for WalkOptions {
    fn default() -> Self {
        Self {
            dim: 64,
            walks_per_node: 10,
            walk_length: 40,
            context: 5,
            span: 5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptWindowEmbedding {
    pub window: (i32, i32),
    pub dim: usize,
    pub seed: u64,
    pub concepts: Vec<String>,
    /// Row-major `concepts.len() × dim` unit vectors.
    pub vectors: Vec<f64>,
    /// Connected component of each concept in the window graph.
    pub component: Vec<usize>,
    index: HashMap<String, usize>,
}

impl ConceptWindowEmbedding {
    pub fn vector(&self, concept: &str) -> Option<&[f64]> {
        let i = *self.index.get(concept)?;
        Some(&self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn connected(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => self.component[i] == self.component[j],
            _ => false,
        }
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Random-walk embedding of the concept co-occurrence graph of papers in
/// the window ending at `year`.
pub fn concept_window_embedding(
    corpus: &Corpus,
    year: i32,
    opts: &WalkOptions,
) -> Result<ConceptWindowEmbedding, RecombinationError> {
    let lo = year - opts.span + 1;
    let papers: Vec<&PaperRecord> = corpus
        .papers()
        .iter()
        .filter(|p| p.year >= lo && p.year <= year)
        .collect();
    if papers.is_empty() {
        return Err(RecombinationError::EmptyWindow(lo, year));
    }
    let concepts: Vec<String> = papers
        .iter()
        .flat_map(|p| p.concept_ids.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<String, usize> =
        concepts.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
    let v = concepts.len();

    let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for p in &papers {
        for pair in extract_pairs(p) {
            let (i, j) = (index[&pair.a], index[&pair.b]);
            *weights.entry((i, j)).or_default() += 1.0;
        }
    }
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); v];
    let mut parent: Vec<usize> = (0..v).collect();
    for (&(i, j), &w) in &weights {
        adj[i].push((j, w));
        adj[j].push((i, w));
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
        }
    }
    for a in &mut adj {
        a.sort_by_key(|x| x.0);
    }
    let component: Vec<usize> = (0..v).map(|i| find(&mut parent, i)).collect();

    let walks: Vec<Vec<Vec<usize>>> = (0..v)
        .into_par_iter()
        .map(|start| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(start as u64);
            (0..opts.walks_per_node)
                .map(|_| random_walk(&adj, start, opts.walk_length, &mut rng))
                .collect()
        })
        .collect();

    let mut counts = DMatrix::<f64>::zeros(v, v);
    for walk in walks.iter().flatten() {
        for t in 0..walk.len() {
            for o in 1..=opts.context {
                if t + o >= walk.len() {
                    break;
                }
                let (x, y) = (walk[t], walk[t + o]);
                counts[(x, y)] += 1.0;
                counts[(y, x)] += 1.0;
            }
        }
    }
    let ppmi = ppmi(&counts);
    let dim = opts.dim.min(v);
    let vectors = factorize(&ppmi, dim, opts.seed);

    Ok(ConceptWindowEmbedding {
        window: (lo, year),
        dim,
        seed: opts.seed,
        concepts,
        vectors,
        component,
        index,
    })
}

fn random_walk(adj: &[Vec<(usize, f64)>], start: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut walk = Vec::with_capacity(len);
    walk.push(start);
    let mut cur = start;
    while walk.len() < len {
        let nb = &adj[cur];
        if nb.is_empty() {
            break;
        }
        let total: f64 = nb.iter().map(|x| x.1).sum();
        let mut u = rng.random::<f64>() * total;
        let mut next = nb[nb.len() - 1].0;
        for &(j, w) in nb {
            if u < w {
                next = j;
                break;
            }
            u -= w;
        }
        walk.push(next);
        cur = next;
    }
    walk
}

/// Positive pointwise mutual information of a symmetric count matrix.
pub fn ppmi(counts: &DMatrix<f64>) -> DMatrix<f64> {
    let total: f64 = counts.sum();
    let rows: Vec<f64> = counts.row_iter().map(|r| r.sum()).collect();
    DMatrix::from_fn(counts.nrows(), counts.ncols(), |i, j| {
        let c = counts[(i, j)];
        if c <= 0.0 {
            return 0.0;
        }
        (c * total / (rows[i] * rows[j])).ln().max(0.0)
    })
}

/// Scaled leading positive eigenvectors of the symmetric matrix `m`, one
/// unit row per concept. Eigenvalues are found on `m + sI`, with `s` a
/// Gershgorin bound, so the leading pairs are the largest algebraic ones.
fn factorize(m: &DMatrix<f64>, dim: usize, seed: u64) -> Vec<f64> {
    let v = m.nrows();
    if dim == 0 {
        return Vec::new();
    }
    let shift = m.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
    let opts = PowerOptions {
        max_iter: 300,
        seed,
        ..PowerOptions::default()
    };
    let eig = top_eigenpairs(v, dim, |b| m * b + b * shift, &opts);
    let top = eig.values.first().map(|l| l - shift).unwrap_or(0.0).max(0.0);
    let mut out = vec![0.0; v * dim];
    for (c, &lam) in eig.values.iter().enumerate() {
        let lam = lam - shift;
        if lam <= 1e-12 * top.max(f64::MIN_POSITIVE) {
            continue;
        }
        let s = lam.sqrt();
        for i in 0..v {
            out[i * dim + c] = eig.vectors[(i, c)] * s;
        }
    }
    for row in out.chunks_mut(dim) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
    out
}

/// `(1 − cos)/2` of two vectors, clamped to `[0, 1]`.
pub fn cosine_distance01(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return 1.0;
    }
    ((1.0 - dot / (nx * ny)) / 2.0).clamp(0.0, 1.0)
}

/// Distance and a flag set when the pair is out of vocabulary or spans
/// two components (distance 1 by convention).
pub fn combo_distance(pair: &ConceptPair, emb: &ConceptWindowEmbedding) -> (f64, bool) {
    if !emb.connected(&pair.a, &pair.b) {
        return (1.0, true);
    }
    let (x, y) = (emb.vector(&pair.a).unwrap(), emb.vector(&pair.b).unwrap());
    (cosine_distance01(x, y), false)
}

pub fn classify_remote(distance: f64, threshold: f64) -> bool {
    distance > threshold
}

/// Measures each event in the window ending at its first year.
pub fn assign_distances(
    events: &mut [ComboEvent],
    corpus: &Corpus,
    opts: &WalkOptions,
    threshold: f64,
) -> Result<BTreeMap<i32, ConceptWindowEmbedding>, RecombinationError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(RecombinationError::BadThreshold(threshold));
    }
    let years: BTreeSet<i32> = events.iter().map(|e| e.first_year).collect();
    let embeddings: BTreeMap<i32, ConceptWindowEmbedding> = years
        .into_par_iter()
        .map(|y| concept_window_embedding(corpus, y, opts).map(|e| (y, e)))
        .collect::<Result<_, _>>()?;
    for e in events.iter_mut() {
        let (d, flag) = combo_distance(&e.pair, &embeddings[&e.first_year]);
        e.distance = Some(d);
        e.disconnected = flag;
        e.remote = classify_remote(d, threshold);
    }
    Ok(embeddings)
}

pub fn write_events_csv<W: Write>(events: &[ComboEvent], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "concept_a",
        "concept_b",
        "first_year",
        "originators",
        "distance",
        "remote",
        "reuse_count",
        "disconnected_flag",
    ])?;
    for e in events {
        wtr.write_record([
            e.pair.a.clone(),
            e.pair.b.clone(),
            e.first_year.to_string(),
            e.originator_ids.join(";"),
            e.distance.map(|d| d.to_string()).unwrap_or_default(),
            e.remote.to_string(),
            e.reuse_count.to_string(),
            e.disconnected.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Per-paper summary of the combinations it originated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PaperNovelty {
    pub n_combos: usize,
    pub mean_distance: f64,
    pub remote_share: f64,
    pub reuse: usize,
}

pub fn paper_novelty(events: &[ComboEvent]) -> BTreeMap<String, PaperNovelty> {
    let mut acc: BTreeMap<String, (usize, f64, usize, usize)> = BTreeMap::new();
    for e in events {
        for id in &e.originator_ids {
            let a = acc.entry(id.clone()).or_default();
            a.0 += 1;
            a.1 += e.distance.unwrap_or(0.0);
            a.2 += e.remote as usize;
            a.3 += e.reuse_count;
        }
    }
    acc.into_iter()
        .map(|(id, (n, d, r, u))| {
            let nf = n as f64;
            (
                id,
                PaperNovelty {
                    n_combos: n,
                    mean_distance: d / nf,
                    remote_share: r as f64 / nf,
                    reuse: u,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemoteStatsMode {
    /// Papers without new combinations count with distance 0 and no remote link.
    Inclusive,
    /// Papers without new combinations are dropped.
    ExcludeEmpty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteStats {
    pub year: i32,
    /// Group mean over the yearly mean; `None` for a group left empty.
    pub distance_ratio: BTreeMap<Label, Option<f64>>,
    pub remote_ratio: BTreeMap<Label, Option<f64>>,
    pub counts: BTreeMap<Label, usize>,
}

/// Stylized and popularized mean distance and remote probability relative
/// to all labelled papers of `year`.
pub fn group_remote_stats(
    events: &[ComboEvent],
    corpus: &Corpus,
    labels: &BTreeMap<String, Label>,
    year: i32,
    mode: RemoteStatsMode,
) -> Result<RemoteStats, RecombinationError> {
    let novelty = paper_novelty(events);
    let mut rows: Vec<(Label, f64, f64)> = Vec::new();
    let mut present: BTreeSet<Label> = BTreeSet::new();
    for p in corpus.papers().iter().filter(|p| p.year == year) {
        let Some(&label) = labels.get(&p.paper_id) else { continue };
        present.insert(label);
        match novelty.get(&p.paper_id) {
            Some(n) => rows.push((label, n.mean_distance, n.remote_share)),
            None if mode == RemoteStatsMode::Inclusive => rows.push((label, 0.0, 0.0)),
            None => {}
        }
    }
    for l in [Label::Stylized, Label::Popularized] {
        if !present.contains(&l) {
            return Err(RecombinationError::EmptyGroup(l, year));
        }
    }
    let mean = |f: &dyn Fn(&(Label, f64, f64)) -> bool, k: usize| -> Option<f64> {
        let v: Vec<f64> = rows.iter().filter(|r| f(r)).map(|r| if k == 0 { r.1 } else { r.2 }).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let all_d = mean(&|_| true, 0);
    let all_r = mean(&|_| true, 1);
    let ratio = |g: Option<f64>, all: Option<f64>| match (g, all) {
        (Some(g), Some(a)) if a > 0.0 => Some(g / a),
        _ => None,
    };
    let mut distance_ratio = BTreeMap::new();
    let mut remote_ratio = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for l in [Label::Stylized, Label::Popularized] {
        distance_ratio.insert(l, ratio(mean(&|r| r.0 == l, 0), all_d));
        remote_ratio.insert(l, ratio(mean(&|r| r.0 == l, 1), all_r));
        counts.insert(l, rows.iter().filter(|r| r.0 == l).count());
    }
    Ok(RemoteStats {
        year,
        distance_ratio,
        remote_ratio,
        counts,
    })
}
