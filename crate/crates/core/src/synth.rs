//! Seeded synthetic corpora with planted effects.
//!
//! Papers live on per-field Gaussian mixtures whose concentration grows over
//! the years, so stylization falls. Citations follow recency decay and
//! optional preferential attachment, with a multiplicative penalty on
//! stylized targets; review lags carry a multiplicative factor for stylized
//! papers. Near-duplicate twin pairs can be injected along with the
//! co-citation contexts that expose them. Everything planted is recorded in
//! [`Truth`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, EmbeddingStore, PaperRecord, SubmissionHistory, SCHEMA_VERSION};
use crate::embed_space::{Label, Variant};
use crate::stats;
use crate::twins::{write_contexts, CitationContext};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

fn d_start_year() -> i32 {
    2000
}
fn d_years() -> usize {
    10
}
fn d_fields() -> usize {
    4
}
fn d_papers() -> usize {
    100
}
fn d_growth() -> f64 {
    1.05
}
fn d_dim() -> usize {
    32
}
fn d_clusters() -> usize {
    8
}
fn d_kappa_start() -> f64 {
    1.5
}
fn d_kappa_end() -> f64 {
    4.0
}
fn d_refs() -> usize {
    10
}
fn d_decay() -> f64 {
    0.7
}
fn d_penalty() -> f64 {
    0.6
}
fn d_base_days() -> f64 {
    150.0
}
fn d_sigma() -> f64 {
    0.15
}
fn d_lag() -> f64 {
    1.05
}
fn d_team() -> usize {
    4
}
fn d_new_author() -> f64 {
    0.3
}
fn d_concepts_field() -> usize {
    20
}
fn d_concepts_paper() -> usize {
    3
}
fn d_cross() -> f64 {
    0.1
}
fn d_twin_noise() -> f64 {
    0.01
}
fn d_twin_cocite() -> usize {
    4
}
fn d_replicates() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    #[serde(default = "d_start_year")]
    pub start_year: i32,
    #[serde(default = "d_years")]
    pub years: usize,
    #[serde(default = "d_fields")]
    pub fields: usize,
    /// Papers per field in the first year.
    #[serde(default = "d_papers")]
    pub papers_per_year: usize,
    /// Multiplicative yearly growth of cohort sizes.
    #[serde(default = "d_growth")]
    pub growth_rate: f64,
    /// Field `f` gets `1 + field_skew · f` times the base size.
    #[serde(default)]
    pub field_skew: f64,
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_clusters")]
    pub clusters_per_field: usize,
    /// Cluster concentration (inverse noise scale) in the first year,
    /// interpolated linearly to `concentration_end`.
    #[serde(default = "d_kappa_start")]
    pub concentration_start: f64,
    #[serde(default = "d_kappa_end")]
    pub concentration_end: f64,
    #[serde(default = "d_refs")]
    pub refs_per_paper: usize,
    /// Attachment weight per prior citation; 0 disables.
    #[serde(default)]
    pub pa_strength: f64,
    /// Citation weight multiplier per year of target age.
    #[serde(default = "d_decay")]
    pub recency_decay: f64,
    /// Citation weight multiplier for stylized targets.
    #[serde(default = "d_penalty")]
    pub stylization_citation_penalty: f64,
    #[serde(default = "d_base_days")]
    pub review_base_days: f64,
    /// Log-scale spread of review lags.
    #[serde(default = "d_sigma")]
    pub review_sigma: f64,
    /// Review-lag multiplier for stylized papers.
    #[serde(default = "d_lag")]
    pub stylization_lag_factor: f64,
    #[serde(default = "d_team")]
    pub max_team_size: usize,
    #[serde(default = "d_new_author")]
    pub new_author_rate: f64,
    #[serde(default = "d_concepts_field")]
    pub concepts_per_field: usize,
    #[serde(default = "d_concepts_paper")]
    pub concepts_per_paper: usize,
    #[serde(default = "d_cross")]
    pub cross_field_rate: f64,
    #[serde(default)]
    pub twin_count: usize,
    /// Relative noise added to the twin's copy of the vector.
    #[serde(default = "d_twin_noise")]
    pub twin_noise: f64,
    /// Later papers co-citing each twin pair.
    #[serde(default = "d_twin_cocite")]
    pub twin_cocitations: usize,
    /// Independent replicate corpora used to estimate the expected yearly
    /// stylization; 0 skips the estimate.
    #[serde(default = "d_replicates")]
    pub calibration_replicates: usize,
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            start_year: d_start_year(),
            years: d_years(),
            fields: d_fields(),
            papers_per_year: d_papers(),
            growth_rate: d_growth(),
            field_skew: 0.0,
            dim: d_dim(),
            clusters_per_field: d_clusters(),
            concentration_start: d_kappa_start(),
            concentration_end: d_kappa_end(),
            refs_per_paper: d_refs(),
            pa_strength: 0.0,
            recency_decay: d_decay(),
            stylization_citation_penalty: d_penalty(),
            review_base_days: d_base_days(),
            review_sigma: d_sigma(),
            stylization_lag_factor: d_lag(),
            max_team_size: d_team(),
            new_author_rate: d_new_author(),
            concepts_per_field: d_concepts_field(),
            concepts_per_paper: d_concepts_paper(),
            cross_field_rate: d_cross(),
            twin_count: 0,
            twin_noise: d_twin_noise(),
            twin_cocitations: d_twin_cocite(),
            calibration_replicates: d_replicates(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        let positive = [
            ("growth_rate", self.growth_rate),
            ("concentration_start", self.concentration_start),
            ("concentration_end", self.concentration_end),
            ("recency_decay", self.recency_decay),
            ("stylization_citation_penalty", self.stylization_citation_penalty),
            ("review_base_days", self.review_base_days),
            ("stylization_lag_factor", self.stylization_lag_factor),
            ("twin_noise", self.twin_noise),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SynthError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("field_skew", self.field_skew),
            ("pa_strength", self.pa_strength),
            ("review_sigma", self.review_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SynthError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("new_author_rate", self.new_author_rate), ("cross_field_rate", self.cross_field_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.recency_decay > 1.0 {
            return bad("recency_decay must not exceed 1");
        }
        if self.years == 0 || self.fields == 0 || self.papers_per_year == 0 {
            return bad("years, fields and papers_per_year must be at least 1");
        }
        if self.dim < 2 || self.clusters_per_field == 0 || self.max_team_size == 0 {
            return bad("dim must be at least 2, clusters_per_field and max_team_size at least 1");
        }
        if self.concepts_per_paper > self.concepts_per_field {
            return bad("concepts_per_paper exceeds concepts_per_field");
        }
        if self.twin_count > 0 && self.years < 3 {
            return bad("twin injection needs at least 3 years");
        }
        Ok(())
    }

    pub fn cohort_size(&self, t: usize, f: usize) -> usize {
        let w = 1.0 + self.field_skew * f as f64;
        (self.papers_per_year as f64 * self.growth_rate.powi(t as i32) * w).round() as usize
    }

    pub fn concentration(&self, t: usize) -> f64 {
        if self.years == 1 {
            return self.concentration_start;
        }
        let a = t as f64 / (self.years - 1) as f64;
        self.concentration_start + a * (self.concentration_end - self.concentration_start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearExpectation {
    pub year: i32,
    pub n_stylized: usize,
    pub n_popularized: usize,
    pub expected_ratio: Option<f64>,
    pub expected_stars: String,
    /// Every paper of the year has a complete five-year citation window.
    pub full_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizationTruth {
    pub replicates: usize,
    /// `(year, expected mean knn5 score)` from independent replicates.
    pub expected_yearly_mean: Vec<(i32, f64)>,
    /// Least-squares slope of the expected yearly means.
    pub planted_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub config: SynthConfig,
    pub n_papers: usize,
    pub cohort_sizes: Vec<(i32, String, usize)>,
    pub stylization: StylizationTruth,
    pub c5_ratio: f64,
    pub c5_expected: Vec<YearExpectation>,
    pub turnaround_ratio: f64,
    pub turnaround_expected: Vec<YearExpectation>,
    pub twins: Vec<(String, String)>,
    pub n_stylized: usize,
    pub n_popularized: usize,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub records: Vec<PaperRecord>,
    pub embeddings: EmbeddingStore,
    pub contexts: Vec<CitationContext>,
    pub labels: BTreeMap<String, Label>,
    pub truth: Truth,
}

/// Paths written by [`SynthCorpus::write_to`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    pub citations: PathBuf,
    pub contexts: PathBuf,
    pub truth: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            corpus: dir.join("corpus.ndjson"),
            embeddings: dir.join("embeddings.bin"),
            citations: dir.join("citations.csv"),
            contexts: dir.join("contexts.ndjson"),
            truth: dir.join("truth.json"),
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

pub fn field_name(f: usize) -> String {
    format!("F{f:02}")
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// One cohort of mixture draws, rounded through `f32` as stored on disk.
fn draw_cohort(rng: &mut ChaCha8Rng, centers: &[Vec<f64>], n: usize, kappa: f64) -> Vec<Vec<f64>> {
    let dim = centers[0].len();
    let sd = 1.0 / (kappa * (dim as f64).sqrt());
    (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..centers.len())];
            c.iter()
                .map(|&x| {
                    let e: f64 = StandardNormal.sample(rng);
                    (x + sd * e) as f32 as f64
                })
                .collect()
        })
        .collect()
}

/// Knn5 scores computed directly: centre, project out the top eigenvector
/// of the scatter matrix, normalise, sort all distances.
pub fn reference_knn5(rows: &[Vec<f64>]) -> Vec<Option<f64>> {
    let n = rows.len();
    if n < 2 {
        return vec![None; n];
    }
    let d = rows[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let scale = x.row_iter().map(|r| r.norm()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let mean = x.row_sum() / n as f64;
    let mut c = x.clone();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    if n >= 3 {
        let eig = SymmetricEigen::new(c.transpose() * &c);
        let top = eig.eigenvalues.imax();
        let u = eig.eigenvectors.column(top).into_owned();
        let proj = (&c * &u) * u.transpose();
        c -= proj;
    }
    let mut valid = Vec::new();
    for i in 0..n {
        let norm = c.row(i).norm();
        if norm >= 1e-12 * scale {
            let r = c.row(i) / norm;
            c.set_row(i, &r);
            valid.push(i);
        }
    }
    let mut out = vec![None; n];
    if valid.len() < 2 {
        return out;
    }
    let k = Variant::Knn5.effective_k(valid.len());
    let v = DMatrix::from_fn(valid.len(), d, |i, j| c[(valid[i], j)]);
    let gram = &v * v.transpose();
    for (a, &i) in valid.iter().enumerate() {
        let mut ds: Vec<(f64, usize)> = (0..valid.len())
            .filter(|&b| b != a)
            .map(|b| {
                let dist = 1.0 - gram[(a, b)];
                (if dist < 1e-12 { 0.0 } else { dist }, valid[b])
            })
            .collect();
        ds.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        out[i] = Some(ds[..k].iter().map(|p| p.0).sum::<f64>() / k as f64);
    }
    out
}

fn cohort_labels(scores: &[Option<f64>]) -> Vec<Option<Label>> {
    let s: Vec<f64> = scores.iter().flatten().copied().collect();
    let Some(mean) = stats::mean(&s) else { return vec![None; scores.len()] };
    scores.iter().map(|x| x.map(|v| Label::from_score(v, mean))).collect()
}

fn z_stars(z: f64) -> String {
    stats::series_stars(2.0 * stats::normal_sf(z.abs())).to_string()
}

struct Paper {
    record: PaperRecord,
    vector: Vec<f64>,
    t: usize,
    label: Option<Label>,
    expected_c5: f64,
    lag_days: i64,
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    config.validate()?;
    let seed = config.seed;
    let years = config.years;
    let nf = config.fields;
    let mut rng_geo = stream(seed, 1);
    let mut rng_meta = stream(seed, 2);
    let mut rng_cite = stream(seed, 3);
    let mut rng_lag = stream(seed, 4);
    let mut rng_twin = stream(seed, 5);

    let centers: Vec<Vec<Vec<f64>>> = (0..nf)
        .map(|_| (0..config.clusters_per_field).map(|_| unit(&mut rng_geo, config.dim)).collect())
        .collect();

    // embeddings and metadata
    let mut papers: Vec<Paper> = Vec::new();
    let mut cohort_ranges: Vec<(usize, usize, std::ops::Range<usize>)> = Vec::new();
    let mut author_pool: Vec<Vec<String>> = vec![Vec::new(); nf];
    let mut next_author = 0usize;
    let mut cohort_sizes = Vec::new();
    for t in 0..years {
        let year = config.start_year + t as i32;
        for f in 0..nf {
            let n = config.cohort_size(t, f);
            cohort_sizes.push((year, field_name(f), n));
            let vecs = draw_cohort(&mut rng_geo, &centers[f], n, config.concentration(t));
            let start = papers.len();
            for (i, v) in vecs.into_iter().enumerate() {
                let team = rng_meta.random_range(1..=config.max_team_size);
                let mut authors: Vec<String> = Vec::new();
                while authors.len() < team {
                    let pool = &mut author_pool[f];
                    let a = if pool.is_empty() || rng_meta.random::<f64>() < config.new_author_rate {
                        next_author += 1;
                        let id = format!("A{next_author:07}");
                        pool.push(id.clone());
                        id
                    } else {
                        pool[rng_meta.random_range(0..pool.len())].clone()
                    };
                    if !authors.contains(&a) {
                        authors.push(a);
                    }
                }
                let mut concepts = BTreeSet::new();
                while concepts.len() < config.concepts_per_paper {
                    let cf = if nf > 1 && rng_meta.random::<f64>() < config.cross_field_rate {
                        rng_meta.random_range(0..nf)
                    } else {
                        f
                    };
                    concepts.insert(format!("C{cf:02}.{:03}", rng_meta.random_range(0..config.concepts_per_field)));
                }
                let mut rec = PaperRecord::new(format!("P{year}-{f:02}-{i:06}"), year);
                rec.fields_l0 = ["science".to_string()].into();
                rec.fields_l1 = [field_name(f)].into();
                rec.journal = Some(format!("J{f:02}"));
                rec.issue_order = Some(i as u32 + 1);
                rec.author_ids = authors;
                rec.concept_ids = concepts;
                papers.push(Paper {
                    record: rec,
                    vector: v,
                    t,
                    label: None,
                    expected_c5: 0.0,
                    lag_days: 0,
                });
            }
            cohort_ranges.push((t, f, start..papers.len()));
        }
    }

    // twin pairs: adjacent members of one cohort, second becomes a near copy
    let mut twins: Vec<(usize, usize)> = Vec::new();
    if config.twin_count > 0 {
        let eligible: Vec<&(usize, usize, std::ops::Range<usize>)> = cohort_ranges
            .iter()
            .filter(|(t, _, r)| *t >= 1 && *t + 1 < years && r.len() >= 8)
            .collect();
        let capacity: usize = eligible.iter().map(|(_, _, r)| r.len() / 4).sum();
        if capacity < config.twin_count {
            return Err(SynthError::Config(format!(
                "twin_count {} exceeds room for {capacity} pairs",
                config.twin_count
            )));
        }
        let weights: Vec<usize> = eligible.iter().map(|(_, _, r)| r.len()).collect();
        let pick = WeightedIndex::new(&weights).expect("non-empty cohorts");
        let mut used = vec![false; papers.len()];
        while twins.len() < config.twin_count {
            let r = &eligible[pick.sample(&mut rng_twin)].2;
            let a = r.start + 2 * rng_twin.random_range(0..r.len() / 2);
            let b = a + 1;
            if b >= r.end || used[a] || used[b] {
                continue;
            }
            used[a] = true;
            used[b] = true;
            let dim = config.dim as f64;
            let norm = papers[a].vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            let sd = config.twin_noise * norm / dim.sqrt();
            let copy: Vec<f64> = papers[a]
                .vector
                .iter()
                .map(|&x| {
                    let e: f64 = StandardNormal.sample(&mut rng_twin);
                    (x + sd * e) as f32 as f64
                })
                .collect();
            papers[b].vector = copy;
            let fresh: Vec<String> = (0..papers[a].record.author_ids.len())
                .map(|_| {
                    next_author += 1;
                    format!("A{next_author:07}")
                })
                .collect();
            papers[b].record.author_ids = fresh;
            papers[b].record.concept_ids = papers[a].record.concept_ids.clone();
            twins.push((a, b));
        }
        twins.sort();
    }

    // labels from the realised geometry
    for (_, _, r) in &cohort_ranges {
        let rows: Vec<Vec<f64>> = papers[r.clone()].iter().map(|p| p.vector.clone()).collect();
        let labels = cohort_labels(&reference_knn5(&rows));
        for (p, l) in papers[r.clone()].iter_mut().zip(labels) {
            p.label = l;
        }
    }

    // citations
    let penalty = |p: &Paper| match p.label {
        Some(Label::Stylized) => config.stylization_citation_penalty,
        _ => 1.0,
    };
    let year_start: Vec<usize> = (0..=years)
        .map(|t| papers.iter().position(|p| p.t >= t).unwrap_or(papers.len()))
        .collect();
    let mut indeg = vec![0usize; papers.len()];
    let mut refs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); papers.len()];
    for t in 1..years {
        let prior = year_start[t];
        let weights: Vec<f64> = papers[..prior]
            .iter()
            .enumerate()
            .map(|(j, p)| {
                config.recency_decay.powi((t - 1 - p.t) as i32)
                    * (1.0 + config.pa_strength * indeg[j] as f64)
                    * penalty(p)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let dist = WeightedIndex::new(&weights).expect("positive weights");
        let r = config.refs_per_paper.min(prior);
        let citers = year_start[t + 1] - year_start[t];
        for (j, w) in weights.iter().enumerate() {
            if t - papers[j].t <= 4 {
                papers[j].expected_c5 += citers as f64 * r as f64 * w / total;
            }
        }
        for i in year_start[t]..year_start[t + 1] {
            let mut tries = 0;
            while refs[i].len() < r && tries < 50 * r {
                refs[i].insert(dist.sample(&mut rng_cite));
                tries += 1;
            }
        }
        for i in year_start[t]..year_start[t + 1] {
            for &j in &refs[i] {
                indeg[j] += 1;
            }
        }
    }

    // twin references and the contexts that co-cite them
    let mut contexts = Vec::new();
    for &(a, b) in &twins {
        refs[b] = refs[a].clone();
        let later = year_start[papers[a].t + 1];
        let mut citing = BTreeSet::new();
        while citing.len() < config.twin_cocitations.min(papers.len() - later) {
            citing.insert(rng_twin.random_range(later..papers.len()));
        }
        for c in citing {
            refs[c].insert(a);
            refs[c].insert(b);
            contexts.push(CitationContext {
                citing_paper_id: papers[c].record.paper_id.clone(),
                sentence_index: rng_twin.random_range(0..40),
                group_index: 0,
                cited_ids: vec![papers[a].record.paper_id.clone(), papers[b].record.paper_id.clone()],
            });
        }
    }
    // background co-citations: one group of two references in some papers
    for (i, r) in refs.iter().enumerate() {
        if r.len() >= 2 && rng_twin.random::<f64>() < 0.2 {
            let v: Vec<&usize> = r.iter().collect();
            let x = rng_twin.random_range(0..v.len());
            let mut y = rng_twin.random_range(0..v.len() - 1);
            if y >= x {
                y += 1;
            }
            contexts.push(CitationContext {
                citing_paper_id: papers[i].record.paper_id.clone(),
                sentence_index: rng_twin.random_range(0..40),
                group_index: 1,
                cited_ids: vec![papers[*v[x]].record.paper_id.clone(), papers[*v[y]].record.paper_id.clone()],
            });
        }
    }
    contexts.sort_by(|a, b| {
        (&a.citing_paper_id, a.sentence_index, a.group_index).cmp(&(&b.citing_paper_id, b.sentence_index, b.group_index))
    });
    for i in 0..papers.len() {
        papers[i].record.reference_ids = refs[i].iter().map(|&j| papers[j].record.paper_id.clone()).collect();
    }

    // review lags
    for p in papers.iter_mut() {
        let e: f64 = StandardNormal.sample(&mut rng_lag);
        let factor = match p.label {
            Some(Label::Stylized) => config.stylization_lag_factor,
            _ => 1.0,
        };
        let mean_one = (-0.5 * config.review_sigma * config.review_sigma).exp();
        p.lag_days = (config.review_base_days * factor * mean_one * (config.review_sigma * e).exp()).round() as i64;
        let jan1 = NaiveDate::from_ymd_opt(p.record.year, 1, 1).expect("valid year");
        let submitted =
            (jan1 - NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days() + rng_lag.random_range(0..120);
        p.record.history = Some(SubmissionHistory {
            submitted: Some(submitted),
            accepted: Some(submitted + p.lag_days),
        });
    }

    let stylization = calibrate(config, &centers);
    let last = years - 1;
    let mut c5_expected = Vec::new();
    let mut turnaround_expected = Vec::new();
    for t in 0..years {
        let year = config.start_year + t as i32;
        let group = |l: Label| -> Vec<&Paper> {
            papers.iter().filter(|p| p.t == t && p.label == Some(l)).collect()
        };
        let (s, p) = (group(Label::Stylized), group(Label::Popularized));
        let (ns, np) = (s.len(), p.len());
        if ns == 0 || np == 0 {
            continue;
        }
        let ls = s.iter().map(|x| x.expected_c5).sum::<f64>() / ns as f64;
        let lp = p.iter().map(|x| x.expected_c5).sum::<f64>() / np as f64;
        let var = ls / ns as f64 + lp / np as f64;
        c5_expected.push(YearExpectation {
            year,
            n_stylized: ns,
            n_popularized: np,
            expected_ratio: (lp > 0.0).then(|| ls / lp),
            expected_stars: if var > 0.0 { z_stars((lp - ls) / var.sqrt()) } else { String::new() },
            full_window: t + 4 <= last,
        });
        let auc = if config.review_sigma > 0.0 {
            1.0 - stats::normal_sf(config.stylization_lag_factor.ln() / (config.review_sigma * 2f64.sqrt()))
        } else {
            0.5 + 0.5 * (config.stylization_lag_factor - 1.0).signum()
        };
        let (n1, n2) = (ns as f64, np as f64);
        let z = (auc - 0.5) / ((n1 + n2 + 1.0) / (12.0 * n1 * n2)).sqrt();
        turnaround_expected.push(YearExpectation {
            year,
            n_stylized: ns,
            n_popularized: np,
            expected_ratio: Some(config.stylization_lag_factor),
            expected_stars: z_stars(z),
            full_window: true,
        });
    }

    let rows = papers
        .iter()
        .map(|p| (p.record.paper_id.clone(), p.vector.iter().map(|&x| x as f32).collect::<Vec<f32>>()));
    let embeddings = EmbeddingStore::from_rows(config.dim, rows).expect("consistent dimension");
    let labels: BTreeMap<String, Label> =
        papers.iter().filter_map(|p| Some((p.record.paper_id.clone(), p.label?))).collect();
    let truth = Truth {
        seed,
        config: config.clone(),
        n_papers: papers.len(),
        cohort_sizes,
        stylization,
        c5_ratio: config.stylization_citation_penalty,
        c5_expected,
        turnaround_ratio: config.stylization_lag_factor,
        turnaround_expected,
        twins: twins
            .iter()
            .map(|&(a, b)| (papers[a].record.paper_id.clone(), papers[b].record.paper_id.clone()))
            .collect(),
        n_stylized: labels.values().filter(|l| **l == Label::Stylized).count(),
        n_popularized: labels.values().filter(|l| **l == Label::Popularized).count(),
    };
    Ok(SynthCorpus {
        records: papers.into_iter().map(|p| p.record).collect(),
        embeddings,
        contexts,
        labels,
        truth,
    })
}

/// Expected yearly mean knn5 score, averaged over fresh draws of every
/// cohort from the same mixture and schedule.
fn calibrate(config: &SynthConfig, centers: &[Vec<Vec<f64>>]) -> StylizationTruth {
    let m = config.calibration_replicates;
    let mut yearly = Vec::new();
    if m > 0 {
        let mut rng = stream(config.seed, 6);
        for t in 0..config.years {
            let mut sum = 0.0;
            let mut cnt = 0usize;
            for _ in 0..m {
                for (f, c) in centers.iter().enumerate() {
                    let rows = draw_cohort(&mut rng, c, config.cohort_size(t, f), config.concentration(t));
                    for s in reference_knn5(&rows).into_iter().flatten() {
                        sum += s;
                        cnt += 1;
                    }
                }
            }
            if cnt > 0 {
                yearly.push((config.start_year + t as i32, sum / cnt as f64));
            }
        }
    }
    let planted_slope = (yearly.len() >= 2).then(|| {
        let n = yearly.len() as f64;
        let mx = yearly.iter().map(|p| p.0 as f64).sum::<f64>() / n;
        let my = yearly.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = yearly.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
        let sxx: f64 = yearly.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
        sxy / sxx
    });
    StylizationTruth {
        replicates: m,
        expected_yearly_mean: yearly,
        planted_slope,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl SynthCorpus {
    pub fn corpus(&self) -> Result<Corpus, SynthError> {
        let c = Corpus::from_records(self.records.clone())?;
        Ok(c.attach_embeddings(self.embeddings.clone()).0)
    }

    pub fn write_to(&self, dir: &Path) -> Result<SynthFiles, SynthError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let files = SynthFiles::in_dir(dir);

        let path = &files.corpus;
        let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
        for r in &self.records {
            let mut raw = r.to_raw();
            raw.schema = Some(SCHEMA_VERSION.to_string());
            serde_json::to_writer(&mut w, &raw).map_err(|e| io_err(path)(e.into()))?;
            w.write_all(b"\n").map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))?;

        self.embeddings.write_file(&files.embeddings).map_err(io_err(&files.embeddings))?;

        let path = &files.citations;
        let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
        writeln!(w, "citing,cited").map_err(io_err(path))?;
        for r in &self.records {
            for c in &r.reference_ids {
                writeln!(w, "{},{c}", r.paper_id).map_err(io_err(path))?;
            }
        }
        w.flush().map_err(io_err(path))?;

        let path = &files.contexts;
        let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
        write_contexts(&self.contexts, &mut w).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;

        let path = &files.truth;
        let json = serde_json::to_string_pretty(&self.truth).map_err(|e| io_err(path)(e.into()))?;
        std::fs::write(path, json + "\n").map_err(io_err(path))?;
        Ok(files)
    }
}

/// Generates and writes a corpus in one step.
pub fn generate_corpus(config: &SynthConfig, dir: &Path) -> Result<(SynthFiles, Truth), SynthError> {
    let s = generate(config)?;
    let files = s.write_to(dir)?;
    Ok((files, s.truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_corpus;
    use crate::embed_space::{paper_scores, stylization_scores, RotationOptions};

    fn small() -> SynthConfig {
        SynthConfig {
            years: 3,
            fields: 2,
            papers_per_year: 10,
            growth_rate: 1.0,
            calibration_replicates: 0,
            ..SynthConfig::with_seed(5)
        }
    }

    #[test]
    fn exact_paper_count() {
        let s = generate(&small()).unwrap();
        assert_eq!(s.records.len(), 60);
        assert_eq!(s.truth.n_papers, 60);
        assert_eq!(s.embeddings.len(), 60);
    }

    #[test]
    fn byte_identical_reruns() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            twin_count: 3,
            ..small()
        };
        let fa = generate(&cfg).unwrap().write_to(a.path()).unwrap();
        let fb = generate(&cfg).unwrap().write_to(b.path()).unwrap();
        for (x, y) in [
            (&fa.corpus, &fb.corpus),
            (&fa.embeddings, &fb.embeddings),
            (&fa.citations, &fb.citations),
            (&fa.contexts, &fb.contexts),
            (&fa.truth, &fb.truth),
        ] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{x:?}");
        }
        let other = generate(&SynthConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(other.truth.twins, generate(&small()).unwrap().truth.twins);
    }

    #[test]
    fn written_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            twin_count: 2,
            ..small()
        };
        let s = generate(&cfg).unwrap();
        let files = s.write_to(dir.path()).unwrap();
        let corpus = load_corpus(&[&files.corpus], SCHEMA_VERSION).unwrap();
        assert_eq!(corpus.len(), 60);
        assert!(corpus.rejects().is_empty());
        let store = EmbeddingStore::read_file(&files.embeddings).unwrap();
        assert_eq!(store.len(), 60);
        for (a, b) in &s.truth.twins {
            let (pa, pb) = (corpus.get(a).unwrap(), corpus.get(b).unwrap());
            assert_eq!(pa.year, pb.year);
            assert_eq!(pa.reference_ids, pb.reference_ids);
            assert!(pa.author_ids.iter().all(|x| !pb.author_ids.contains(x)));
        }
    }

    #[test]
    fn references_point_backwards() {
        let s = generate(&small()).unwrap();
        let year: BTreeMap<&str, i32> = s.records.iter().map(|r| (r.paper_id.as_str(), r.year)).collect();
        for r in &s.records {
            for c in &r.reference_ids {
                assert!(year[c.as_str()] < r.year);
            }
        }
    }

    #[test]
    fn labels_match_pipeline_scores() {
        let s = generate(&SynthConfig {
            papers_per_year: 40,
            ..small()
        })
        .unwrap();
        let corpus = s.corpus().unwrap();
        let mut entries = Vec::new();
        for c in corpus.cohorts() {
            let sc = stylization_scores(&c, corpus.embeddings().unwrap(), Variant::Knn5, &RotationOptions::default())
                .unwrap();
            entries.extend(sc.entries);
        }
        let scored = paper_scores(&entries);
        assert_eq!(scored.len(), s.labels.len());
        for (id, l) in &s.labels {
            assert_eq!(scored[id].label, *l, "{id}");
        }
    }

    #[test]
    fn planted_decline() {
        let cfg = SynthConfig {
            years: 5,
            fields: 2,
            papers_per_year: 60,
            calibration_replicates: 2,
            ..SynthConfig::with_seed(9)
        };
        let s = generate(&cfg).unwrap();
        let corpus = s.corpus().unwrap();
        let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
        for c in corpus.cohorts() {
            let sc = stylization_scores(&c, corpus.embeddings().unwrap(), Variant::Knn5, &RotationOptions::default())
                .unwrap();
            for e in sc.entries {
                by_year.entry(e.cohort_year).or_default().push(e.score);
            }
        }
        let means: Vec<f64> = by_year.values().map(|v| stats::mean(v).unwrap()).collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
        let exp = &s.truth.stylization.expected_yearly_mean;
        assert!(exp.windows(2).all(|w| w[1].1 < w[0].1));
        assert!(s.truth.stylization.planted_slope.unwrap() < 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig {
            growth_rate: 0.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            recency_decay: 1.5,
            ..small()
        }
        .validate()
        .is_err());
        let missing_seed = toml_like_missing_seed();
        assert!(missing_seed.is_err());
    }

    fn toml_like_missing_seed() -> Result<SynthConfig, serde_json::Error> {
        serde_json::from_str(r#"{"years": 3}"#)
    }

    #[test]
    fn reference_scorer_agrees_with_rotation_path() {
        use crate::embed_space::{rotate_cohort, score_rotated};
        let mut rng = stream(3, 9);
        let centers: Vec<Vec<f64>> = (0..3).map(|_| unit(&mut rng, 12)).collect();
        let rows = draw_cohort(&mut rng, &centers, 40, 2.0);
        let reference = reference_knn5(&rows);
        let m = DMatrix::from_fn(40, 12, |i, j| rows[i][j]);
        let rot = rotate_cohort(&m, &RotationOptions::default()).unwrap();
        for r in score_rotated(&rot, Variant::Knn5).unwrap() {
            assert!((reference[r.index].unwrap() - r.score).abs() < 1e-9);
        }
    }
}
