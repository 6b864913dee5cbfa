//! Stylization scores: mean cosine distance from a paper to its nearest
//! same-cohort neighbours, after removing the components every paper in the
//! cohort shares.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Cohort, EmbeddingStore};
use crate::linalg::{top_eigenpairs, PowerOptions};

/// Rows whose norm drops below this fraction of the largest input norm are
/// treated as zero after rotation.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Cosine distances below this are rounding noise and count as zero.
pub const DISTANCE_FLOOR: f64 = 1e-12;

/// Histogram bin width used by [`decade_distribution`].
pub const BIN_WIDTH: f64 = 0.01;
pub const N_BINS: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("cohort has {0} usable members, need at least 2")]
    CohortTooSmall(usize),
    #[error("every cohort member is degenerate after rotation")]
    AllDegenerate,
    #[error("no embedding for paper {0:?}")]
    MissingEmbedding(String),
    #[error("no stylization entries for paper")]
    NoEntries,
    #[error("entries mix variants {0} and {1}")]
    MixedVariants(Variant, Variant),
    #[error("unknown variant {0:?} (expected knn5, knn10 or pct5)")]
    UnknownVariant(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("malformed score row: {0}")]
    BadRow(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Knn5,
    Knn10,
    Pct5,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Knn5, Variant::Knn10, Variant::Pct5];

    /// Number of neighbours averaged in a cohort of `n` usable members.
    pub fn effective_k(self, n: usize) -> usize {
        let others = n.saturating_sub(1);
        match self {
            Variant::Knn5 => 5.min(others),
            Variant::Knn10 => 10.min(others),
            Variant::Pct5 => ((0.05 * others as f64).ceil() as usize).max(1).min(others),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Knn5 => "knn5",
            Variant::Knn10 => "knn10",
            Variant::Pct5 => "pct5",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ScoringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "knn5" => Ok(Variant::Knn5),
            "knn10" => Ok(Variant::Knn10),
            "pct5" => Ok(Variant::Pct5),
            other => Err(ScoringError::UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Stylized,
    Popularized,
}

impl Label {
    /// Stylized iff `score` strictly exceeds `mean`.
    pub fn from_score(score: f64, mean: f64) -> Self {
        if score > mean {
            Label::Stylized
        } else {
            Label::Popularized
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Stylized => "stylized",
            Label::Popularized => "popularized",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = ScoringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stylized" => Ok(Label::Stylized),
            "popularized" => Ok(Label::Popularized),
            other => Err(ScoringError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StylizationEntry {
    pub paper_id: String,
    pub variant: Variant,
    pub score: f64,
    pub neighbor_ids: Vec<String>,
    pub cohort_year: i32,
    pub cohort_field: String,
    pub cohort_mean: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy)]
pub struct RotationOptions {
    /// Subtract the cohort mean vector.
    pub center: bool,
    /// Exclude each row from the mean it is centred by. After unit
    /// normalisation this gives the same directions as plain centring.
    pub leave_one_out: bool,
    /// Number of leading principal directions projected out after centring.
    pub removal_rank: usize,
    pub power: PowerOptions,
}

impl Default for RotationOptions {
    fn default() -> Self {
        Self {
            center: true,
            leave_one_out: false,
            removal_rank: 1,
            power: PowerOptions::default(),
        }
    }
}

impl RotationOptions {
    pub fn with_removal_rank(removal_rank: usize) -> Self {
        Self {
            removal_rank,
            ..Self::default()
        }
    }

    /// Unit normalisation only; the raw embedding geometry.
    pub fn none() -> Self {
        Self {
            center: false,
            removal_rank: 0,
            ..Self::default()
        }
    }
}

/// Cohort vectors after common-component removal.
#[derive(Debug, Clone)]
pub struct RotatedCohortMatrix {
    pub dim: usize,
    /// Row-major `n × dim`; unit rows, zero rows where `degenerate`.
    pub rows: Vec<f64>,
    pub degenerate: Vec<bool>,
    /// Rank actually removed (capped at `n − 2`).
    pub removal_rank: usize,
    /// Removed principal directions, one per entry.
    pub removed: Vec<Vec<f64>>,
}

impl RotatedCohortMatrix {
    pub fn n(&self) -> usize {
        self.degenerate.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn valid_count(&self) -> usize {
        self.degenerate.iter().filter(|d| !**d).count()
    }
}

/// Centres the cohort, projects out its leading principal directions and
/// renormalises every row.
///
/// `vectors` holds one paper per row. The removal rank is capped at
/// `n − 2` so at least one direction of variation survives.
pub fn rotate_cohort(
    vectors: &DMatrix<f64>,
    opts: &RotationOptions,
) -> Result<RotatedCohortMatrix, ScoringError> {
    let (n, dim) = vectors.shape();
    if n < 2 {
        return Err(ScoringError::CohortTooSmall(n));
    }
    let scale = vectors
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let mut x = vectors.clone();
    if opts.center {
        let sum = vectors.row_sum();
        if opts.leave_one_out {
            for (i, mut row) in x.row_iter_mut().enumerate() {
                let others = (&sum - vectors.row(i)) / (n - 1) as f64;
                row -= others;
            }
        } else {
            let mean = sum / n as f64;
            for mut row in x.row_iter_mut() {
                row -= &mean;
            }
        }
    }

    let rank = opts.removal_rank.min(n - 2).min(dim);
    let mut removed = Vec::new();
    if rank > 0 {
        let xt = x.transpose();
        let eig = top_eigenpairs(dim, rank, |b| &xt * (&x * b), &opts.power);
        let u = eig.vectors;
        let proj = (&x * &u) * u.transpose();
        x -= proj;
        removed = u.column_iter().map(|c| c.iter().copied().collect()).collect();
    }

    let mut rows = vec![0.0; n * dim];
    let mut degenerate = vec![false; n];
    for (i, r) in x.row_iter().enumerate() {
        let norm = r.norm();
        if !(norm >= DEGENERATE_NORM * scale) {
            degenerate[i] = true;
            continue;
        }
        for (j, v) in r.iter().enumerate() {
            rows[i * dim + j] = v / norm;
        }
    }
    Ok(RotatedCohortMatrix {
        dim,
        rows,
        degenerate,
        removal_rank: rank,
        removed,
    })
}

/// Score and neighbour positions of one non-degenerate row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowScore {
    pub index: usize,
    pub score: f64,
    /// Positions into the rotated matrix, nearest first.
    pub neighbors: Vec<usize>,
}

/// Mean of the `k` smallest cosine distances from each usable row to the
/// other usable rows. Distance ties go to the lower row index.
pub fn score_rotated(m: &RotatedCohortMatrix, variant: Variant) -> Result<Vec<RowScore>, ScoringError> {
    let valid: Vec<usize> = (0..m.n()).filter(|&i| !m.degenerate[i]).collect();
    if valid.is_empty() && m.n() >= 2 {
        return Err(ScoringError::AllDegenerate);
    }
    if valid.len() < 2 {
        return Err(ScoringError::CohortTooSmall(valid.len()));
    }
    let k = variant.effective_k(valid.len());
    let out = valid
        .par_iter()
        .map(|&i| {
            let xi = m.row(i);
            let mut cand: Vec<(f64, usize)> = valid
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| {
                    let dot: f64 = xi.iter().zip(m.row(j)).map(|(a, b)| a * b).sum();
                    let d = 1.0 - dot;
                    (if d < DISTANCE_FLOOR { 0.0 } else { d }, j)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_by(cmp);
            let score = cand.iter().map(|c| c.0).sum::<f64>() / k as f64;
            RowScore {
                index: i,
                score,
                neighbors: cand.into_iter().map(|c| c.1).collect(),
            }
        })
        .collect();
    Ok(out)
}

/// Scores of one cohort plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortScores {
    pub entries: Vec<StylizationEntry>,
    /// Members dropped because their rotated vector vanished.
    pub degenerate: Vec<String>,
    /// Fewer than six usable members: `k` was reduced below 5.
    pub small_cohort: bool,
}

/// Stylization entries for every member of `cohort`.
pub fn stylization_scores(
    cohort: &Cohort,
    store: &EmbeddingStore,
    variant: Variant,
    opts: &RotationOptions,
) -> Result<CohortScores, ScoringError> {
    if cohort.len() < 2 {
        return Err(ScoringError::CohortTooSmall(cohort.len()));
    }
    let dim = store.dim();
    let mut data = Vec::with_capacity(cohort.len() * dim);
    for id in &cohort.members {
        let v = store
            .get(id)
            .ok_or_else(|| ScoringError::MissingEmbedding(id.clone()))?;
        data.extend(v.iter().map(|&x| x as f64));
    }
    let matrix = DMatrix::from_row_slice(cohort.len(), dim, &data);
    let rotated = rotate_cohort(&matrix, opts)?;
    let scored = score_rotated(&rotated, variant)?;

    let cohort_mean = scored.iter().map(|s| s.score).sum::<f64>() / scored.len() as f64;
    let entries = scored
        .into_iter()
        .map(|s| StylizationEntry {
            paper_id: cohort.members[s.index].clone(),
            variant,
            score: s.score,
            neighbor_ids: s.neighbors.iter().map(|&j| cohort.members[j].clone()).collect(),
            cohort_year: cohort.year,
            cohort_field: cohort.field.clone(),
            cohort_mean,
            label: Label::from_score(s.score, cohort_mean),
        })
        .collect::<Vec<_>>();
    let degenerate = rotated
        .degenerate
        .iter()
        .enumerate()
        .filter(|(_, d)| **d)
        .map(|(i, _)| cohort.members[i].clone())
        .collect();
    Ok(CohortScores {
        small_cohort: entries.len() < 6,
        entries,
        degenerate,
    })
}

/// Mean of one paper's per-cohort scores.
pub fn paper_score(entries: &[&StylizationEntry]) -> Result<f64, ScoringError> {
    let first = entries.first().ok_or(ScoringError::NoEntries)?;
    if let Some(other) = entries.iter().find(|e| e.variant != first.variant) {
        return Err(ScoringError::MixedVariants(first.variant, other.variant));
    }
    Ok(entries.iter().map(|e| e.score).sum::<f64>() / entries.len() as f64)
}

/// Paper-level stylization after averaging over a paper's cohorts.
#[derive(Debug, Clone, PartialEq)]
pub struct PaperStylization {
    pub score: f64,
    /// Mean of the paper's cohort means.
    pub reference: f64,
    pub label: Label,
    pub year: i32,
}

/// Collapses per-cohort entries to one score and label per paper. A paper
/// in several cohorts is stylized iff its mean score exceeds the mean of
/// its cohort means.
pub fn paper_scores(entries: &[StylizationEntry]) -> BTreeMap<String, PaperStylization> {
    let mut grouped: BTreeMap<&str, Vec<&StylizationEntry>> = BTreeMap::new();
    for e in entries {
        grouped.entry(e.paper_id.as_str()).or_default().push(e);
    }
    grouped
        .into_iter()
        .map(|(id, es)| {
            let n = es.len() as f64;
            let score = es.iter().map(|e| e.score).sum::<f64>() / n;
            let reference = es.iter().map(|e| e.cohort_mean).sum::<f64>() / n;
            let p = PaperStylization {
                score,
                reference,
                label: if es.len() == 1 { es[0].label } else { Label::from_score(score, reference) },
                year: es[0].cohort_year,
            };
            (id.to_string(), p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecadeRow {
    pub count: usize,
    pub mean: f64,
    /// `N_BINS` counts of width `BIN_WIDTH` over `[0, 2]`.
    pub histogram: Vec<u64>,
    /// Field → (mean score, entry count).
    pub field_means: BTreeMap<String, (f64, usize)>,
}

pub fn bin_index(score: f64) -> usize {
    let b = ((score / BIN_WIDTH) + 1e-9).floor();
    (b.max(0.0) as usize).min(N_BINS - 1)
}

/// Per-decade score histograms and per-field decade means. Decades without
/// entries are absent.
pub fn decade_distribution(entries: &[StylizationEntry]) -> BTreeMap<i32, DecadeRow> {
    let mut acc: BTreeMap<i32, (Vec<u64>, f64, usize, BTreeMap<String, (f64, usize)>)> =
        BTreeMap::new();
    for e in entries {
        let decade = e.cohort_year.div_euclid(10) * 10;
        let slot = acc
            .entry(decade)
            .or_insert_with(|| (vec![0; N_BINS], 0.0, 0, BTreeMap::new()));
        slot.0[bin_index(e.score)] += 1;
        slot.1 += e.score;
        slot.2 += 1;
        let f = slot.3.entry(e.cohort_field.clone()).or_insert((0.0, 0));
        f.0 += e.score;
        f.1 += 1;
    }
    acc.into_iter()
        .map(|(d, (histogram, sum, count, fields))| {
            let field_means = fields
                .into_iter()
                .map(|(f, (s, c))| (f, (s / c as f64, c)))
                .collect();
            (
                d,
                DecadeRow {
                    count,
                    mean: sum / count as f64,
                    histogram,
                    field_means,
                },
            )
        })
        .collect()
}

pub const SCORES_HEADER: [&str; 8] = [
    "paper_id",
    "variant",
    "year",
    "field",
    "score",
    "cohort_mean",
    "label",
    "neighbors",
];

pub fn write_entries_csv<W: Write>(entries: &[StylizationEntry], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SCORES_HEADER)?;
    for e in entries {
        wtr.write_record([
            e.paper_id.clone(),
            e.variant.to_string(),
            e.cohort_year.to_string(),
            e.cohort_field.clone(),
            e.score.to_string(),
            e.cohort_mean.to_string(),
            e.label.to_string(),
            e.neighbor_ids.join(";"),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a scores CSV; `#` lines are comments.
pub fn read_entries_csv<R: Read>(r: R) -> Result<Vec<StylizationEntry>, ScoringError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let bad = |e: &dyn fmt::Display| ScoringError::BadRow(e.to_string());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        if rec.len() != SCORES_HEADER.len() {
            return Err(ScoringError::BadRow(format!("expected 8 columns, got {}", rec.len())));
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(&e));
        out.push(StylizationEntry {
            paper_id: rec[0].to_string(),
            variant: rec[1].parse()?,
            cohort_year: rec[2].parse().map_err(|e| bad(&e))?,
            cohort_field: rec[3].to_string(),
            score: num(4)?,
            cohort_mean: num(5)?,
            label: rec[6].parse()?,
            neighbor_ids: if rec[7].is_empty() {
                Vec::new()
            } else {
                rec[7].split(';').map(str::to_string).collect()
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sorted_eigen;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    fn cohort_of(vectors: &[Vec<f32>]) -> (Cohort, EmbeddingStore) {
        let ids: Vec<String> = (0..vectors.len()).map(|i| format!("p{i:03}")).collect();
        let store = EmbeddingStore::from_rows(
            vectors[0].len(),
            ids.iter().cloned().zip(vectors.iter().cloned()),
        )
        .unwrap();
        (
            Cohort {
                year: 1964,
                field: "f".into(),
                members: ids,
            },
            store,
        )
    }

    #[test]
    fn effective_k() {
        assert_eq!(Variant::Knn5.effective_k(3), 2);
        assert_eq!(Variant::Knn5.effective_k(100), 5);
        assert_eq!(Variant::Knn10.effective_k(8), 7);
        assert_eq!(Variant::Pct5.effective_k(2), 1);
        assert_eq!(Variant::Pct5.effective_k(21), 1);
        assert_eq!(Variant::Pct5.effective_k(22), 2);
        assert_eq!(Variant::Pct5.effective_k(201), 10);
    }

    #[test]
    fn antipodal_pair_unchanged_by_centering() {
        let m = DMatrix::from_row_slice(2, 3, &[0.6, 0.8, 0.0, -0.6, -0.8, 0.0]);
        let r = rotate_cohort(&m, &RotationOptions::with_removal_rank(0)).unwrap();
        assert_eq!(r.rows, vec![0.6, 0.8, 0.0, -0.6, -0.8, 0.0]);
        assert!(r.degenerate.iter().all(|d| !d));
    }

    #[test]
    fn identical_rows_become_degenerate() {
        let m = DMatrix::from_fn(5, 4, |_, j| 0.1 * (j as f64 + 1.0));
        let r = rotate_cohort(&m, &RotationOptions::default()).unwrap();
        assert!(r.degenerate.iter().all(|d| *d));
        assert_eq!(score_rotated(&r, Variant::Knn5), Err(ScoringError::AllDegenerate));
    }

    #[test]
    fn too_small() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(
            rotate_cohort(&m, &RotationOptions::default()).unwrap_err(),
            ScoringError::CohortTooSmall(1)
        );
    }

    #[test]
    fn removed_direction_matches_dense_eigenvector() {
        let m = random_matrix(20, 8, 3);
        let r = rotate_cohort(&m, &RotationOptions::default()).unwrap();
        // oracle: leading eigenvector of the centred scatter matrix
        let mean = m.row_sum() / 20.0;
        let mut c = m.clone();
        for mut row in c.row_iter_mut() {
            row -= &mean;
        }
        let (_, vecs) = sorted_eigen(c.transpose() * &c);
        let top = vecs.column(0);
        let got = nalgebra::DVector::from_vec(r.removed[0].clone());
        assert!((got.dot(&top).abs() - 1.0).abs() < 1e-9);
        for i in 0..20 {
            let row = nalgebra::DVector::from_row_slice(r.row(i));
            assert!(row.dot(&top).abs() < 1e-9);
            assert!((row.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_vectors_score_zero() {
        let (c, s) = cohort_of(&vec![vec![0.3, 0.4, 0.5]; 6]);
        let out = stylization_scores(&c, &s, Variant::Knn5, &RotationOptions::none()).unwrap();
        assert_eq!(out.entries.len(), 6);
        for e in &out.entries {
            assert_eq!(e.score, 0.0);
            assert_eq!(e.label, Label::Popularized);
            assert_eq!(e.neighbor_ids.len(), 5);
        }
    }

    #[test]
    fn orthogonal_outlier_is_stylized() {
        let mut v = vec![vec![1.0f32, 0.0, 0.0]; 6];
        v.push(vec![0.0, 1.0, 0.0]);
        let (c, s) = cohort_of(&v);
        let out = stylization_scores(&c, &s, Variant::Knn5, &RotationOptions::none()).unwrap();
        let outlier = out.entries.iter().find(|e| e.paper_id == "p006").unwrap();
        assert!((outlier.score - 1.0).abs() < 1e-12);
        assert_eq!(outlier.label, Label::Stylized);
        for e in out.entries.iter().filter(|e| e.paper_id != "p006") {
            assert!(e.score.abs() < 1e-12);
            assert_eq!(e.label, Label::Popularized);
            // five identical neighbours at distance 0, ties by id
            assert!(!e.neighbor_ids.contains(&"p006".to_string()));
        }
    }

    #[test]
    fn small_cohort_reduced_k() {
        let (c, s) = cohort_of(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.7, 0.7]]);
        let out = stylization_scores(&c, &s, Variant::Knn5, &RotationOptions::default()).unwrap();
        assert!(out.small_cohort);
        for e in &out.entries {
            assert!(e.neighbor_ids.len() <= 2);
        }
    }

    #[test]
    fn paper_score_mean() {
        let mk = |s: f64, v: Variant| StylizationEntry {
            paper_id: "x".into(),
            variant: v,
            score: s,
            neighbor_ids: vec![],
            cohort_year: 2000,
            cohort_field: "f".into(),
            cohort_mean: 0.0,
            label: Label::Stylized,
        };
        let a = mk(0.2, Variant::Knn5);
        let b = mk(0.4, Variant::Knn5);
        let c = mk(0.9, Variant::Knn5);
        assert_eq!(paper_score(&[&a]).unwrap(), 0.2);
        assert!((paper_score(&[&a, &b]).unwrap() - 0.3).abs() < 1e-15);
        assert!((paper_score(&[&a, &b, &c]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(paper_score(&[]), Err(ScoringError::NoEntries));
        let d = mk(0.1, Variant::Pct5);
        assert!(matches!(paper_score(&[&a, &d]), Err(ScoringError::MixedVariants(..))));
    }

    #[test]
    fn decade_histogram() {
        let e = StylizationEntry {
            paper_id: "x".into(),
            variant: Variant::Knn5,
            score: 0.613,
            neighbor_ids: vec![],
            cohort_year: 1964,
            cohort_field: "f".into(),
            cohort_mean: 0.613,
            label: Label::Popularized,
        };
        let d = decade_distribution(std::slice::from_ref(&e));
        assert_eq!(d.len(), 1);
        let row = &d[&1960];
        assert_eq!(row.histogram[61], 1);
        assert_eq!(row.histogram.iter().sum::<u64>(), 1);
        assert!(!d.contains_key(&1970));
        assert_eq!(bin_index(0.62), 62);
        assert_eq!(bin_index(0.29), 29);
        assert_eq!(bin_index(2.0), N_BINS - 1);
    }

    #[test]
    fn csv_round_trip() {
        let (c, s) = cohort_of(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.7, 0.7], vec![-1.0, 0.2]]);
        let out = stylization_scores(&c, &s, Variant::Knn5, &RotationOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_entries_csv(&out.entries, &mut buf).unwrap();
        assert!(buf.starts_with(b"paper_id,variant,year,field,score,cohort_mean,label,neighbors\n"));
        assert_eq!(read_entries_csv(&buf[..]).unwrap(), out.entries);
    }

    fn scores_of(m: &DMatrix<f64>, opts: &RotationOptions) -> Vec<f64> {
        let r = rotate_cohort(m, opts).unwrap();
        let mut s = score_rotated(&r, Variant::Knn5).unwrap();
        s.sort_by_key(|x| x.index);
        s.into_iter().map(|x| x.score).collect()
    }

    #[test]
    fn leave_one_out_centering_gives_same_scores() {
        let m = random_matrix(40, 6, 11);
        let a = scores_of(&m, &RotationOptions::default());
        let b = scores_of(
            &m,
            &RotationOptions {
                leave_one_out: true,
                ..RotationOptions::default()
            },
        );
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn scale_and_permutation_invariance(seed in 0u64..1000, scale in 0.01f64..100.0, n in 8usize..40) {
            let m = random_matrix(n, 5, seed);
            let base = scores_of(&m, &RotationOptions::default());
            let scaled = scores_of(&(&m * scale), &RotationOptions::default());
            for (a, b) in base.iter().zip(&scaled) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            // reverse row order
            let rev = DMatrix::from_fn(n, 5, |i, j| m[(n - 1 - i, j)]);
            let reversed = scores_of(&rev, &RotationOptions::default());
            for i in 0..n {
                prop_assert!((base[i] - reversed[n - 1 - i]).abs() < 1e-9);
            }
        }

        #[test]
        fn labels_partition_and_max_is_stylized(seed in 0u64..1000, n in 3usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<Vec<f32>> = (0..n)
                .map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let (c, s) = cohort_of(&v);
            let out = stylization_scores(&c, &s, Variant::Knn5, &RotationOptions::default()).unwrap();
            let styl = out.entries.iter().filter(|e| e.label == Label::Stylized).count();
            let pop = out.entries.iter().filter(|e| e.label == Label::Popularized).count();
            prop_assert_eq!(styl + pop, out.entries.len());
            let max = out.entries.iter().map(|e| e.score).fold(f64::MIN, f64::max);
            let min = out.entries.iter().map(|e| e.score).fold(f64::MAX, f64::min);
            if max > min {
                let top = out.entries.iter().find(|e| e.score == max).unwrap();
                prop_assert_eq!(top.label, Label::Stylized);
            }
            for e in &out.entries {
                prop_assert!(e.score >= 0.0);
            }
        }
    }
}
