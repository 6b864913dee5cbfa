//! Reception metrics: citation windows, field-year normalisation,
//! sleeping-beauty strength, review turnaround, rank-sum tests, yearly
//! stylized/popularized ratio series, kernel smoothing and linear trends.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Corpus, SubmissionHistory};
use crate::disruption::CitationGraph;
use crate::embed_space::Label;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum ReceptionError {
    #[error("unknown paper {0:?}")]
    UnknownPaper(String),
    #[error("empty citation trajectory")]
    EmptyTrajectory,
    #[error("accepted {accepted} precedes submitted {submitted}")]
    AcceptedBeforeSubmitted { submitted: String, accepted: String },
    #[error("rank-sum test needs two non-empty samples")]
    EmptySample,
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("x values span no range")]
    DegenerateRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CitationWindow {
    /// Count offsets 5 and 10 as inside the windows.
    pub inclusive_end: bool,
}

/// `(c5, c10, total)` citations received by `paper_id`. Offsets are
/// citer year minus focal year; offset 0 counts.
pub fn citation_windows(
    graph: &CitationGraph,
    paper_id: &str,
    window: CitationWindow,
) -> Result<(usize, usize, usize), ReceptionError> {
    let year = graph
        .year(paper_id)
        .ok_or_else(|| ReceptionError::UnknownPaper(paper_id.to_string()))?;
    let (mut c5, mut c10, mut total) = (0, 0, 0);
    for c in graph.citers(paper_id) {
        total += 1;
        let Some(y) = graph.year(c) else { continue };
        let off = y - year;
        if off < 0 {
            continue;
        }
        let inside = |w: i32| if window.inclusive_end { off <= w } else { off < w };
        c5 += inside(5) as usize;
        c10 += inside(10) as usize;
    }
    Ok((c5, c10, total))
}

/// Yearly citation counts from the publication year through `last_year`.
pub fn citation_trajectory(graph: &CitationGraph, paper_id: &str, last_year: i32) -> Vec<u64> {
    let Some(year) = graph.year(paper_id) else { return Vec::new() };
    let len = (last_year - year + 1).max(1) as usize;
    let mut t = vec![0u64; len];
    for c in graph.citers(paper_id) {
        if let Some(y) = graph.year(c) {
            let off = y - year;
            if off >= 0 && (off as usize) < len {
                t[off as usize] += 1;
            }
        }
    }
    t
}

/// Divides each value by the mean of its group. All-zero groups give zeros
/// and set the flag. Output order follows `values`.
pub fn normalize_group(values: &[f64]) -> (Vec<f64>, bool) {
    let m = stats::mean(values).unwrap_or(0.0);
    if m == 0.0 {
        return (vec![0.0; values.len()], true);
    }
    (values.iter().map(|v| v / m).collect(), false)
}

/// Field-year normalisation. Each item is `(fields, year, count)`; a paper
/// in several fields is normalised in each and the results are averaged.
/// The flag marks papers touching an all-zero group.
pub fn normalize_citations(items: &[(Vec<String>, i32, f64)]) -> Vec<(f64, bool)> {
    let mut groups: BTreeMap<(&str, i32), Vec<usize>> = BTreeMap::new();
    for (i, (fields, year, _)) in items.iter().enumerate() {
        for f in fields {
            groups.entry((f.as_str(), *year)).or_default().push(i);
        }
    }
    let mut acc = vec![(0.0, 0usize, false); items.len()];
    for members in groups.values() {
        let vals: Vec<f64> = members.iter().map(|&i| items[i].2).collect();
        let (norm, flag) = normalize_group(&vals);
        for (&i, v) in members.iter().zip(norm) {
            acc[i].0 += v;
            acc[i].1 += 1;
            acc[i].2 |= flag;
        }
    }
    acc.into_iter()
        .map(|(s, n, f)| if n == 0 { (0.0, false) } else { (s / n as f64, f) })
        .collect()
}

/// Sleeping-beauty strength: summed gap between the straight line from the
/// first year to the citation peak and the trajectory, each year divided
/// by `max(1, c_t)`.
///
/// ```
/// use sciline_core::reception::sleeping_beauty;
/// assert_eq!(sleeping_beauty(&[0, 0, 0, 4]).unwrap(), 4.0);
/// ```
pub fn sleeping_beauty(trajectory: &[u64]) -> Result<f64, ReceptionError> {
    if trajectory.is_empty() {
        return Err(ReceptionError::EmptyTrajectory);
    }
    let max = *trajectory.iter().max().unwrap();
    let tm = trajectory.iter().position(|&c| c == max).unwrap();
    if tm == 0 {
        return Ok(0.0);
    }
    let c0 = trajectory[0] as f64;
    let slope = (max as f64 - c0) / tm as f64;
    Ok((0..=tm)
        .map(|t| {
            let ct = trajectory[t] as f64;
            (slope * t as f64 + c0 - ct) / ct.max(1.0)
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExclusionReason {
    TooShort,
    TooLong,
    MissingDates,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::TooShort => "too_short",
            ExclusionReason::TooLong => "too_long",
            ExclusionReason::MissingDates => "missing_dates",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnaroundFilter {
    pub min_days: i64,
    pub max_days: i64,
    pub include_outliers: bool,
}

impl Default for TurnaroundFilter {
    fn default() -> Self {
        Self {
            min_days: 30,
            max_days: 1000,
            include_outliers: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turnaround {
    Kept(i64),
    /// Reason plus the raw duration when both dates exist.
    Excluded(ExclusionReason, Option<i64>),
}

pub fn turnaround(
    history: Option<&SubmissionHistory>,
    filter: &TurnaroundFilter,
) -> Result<Turnaround, ReceptionError> {
    let (Some(s), Some(a)) = (history.and_then(|h| h.submitted), history.and_then(|h| h.accepted)) else {
        return Ok(Turnaround::Excluded(ExclusionReason::MissingDates, None));
    };
    let days = a - s;
    if days < 0 {
        return Err(ReceptionError::AcceptedBeforeSubmitted {
            submitted: crate::corpus::format_date(s),
            accepted: crate::corpus::format_date(a),
        });
    }
    if filter.include_outliers {
        return Ok(Turnaround::Kept(days));
    }
    Ok(if days < filter.min_days {
        Turnaround::Excluded(ExclusionReason::TooShort, Some(days))
    } else if days > filter.max_days {
        Turnaround::Excluded(ExclusionReason::TooLong, Some(days))
    } else {
        Turnaround::Kept(days)
    })
}

/// Samples no larger than this on both sides use the exact null distribution.
pub const EXACT_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSum {
    /// Mann–Whitney U of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks (1-based) of the pooled sample, doubled so they are integers.
fn doubled_midranks(pooled: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let n = pooled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1; doubled midrank = i + j + 2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Two-sided Wilcoxon rank-sum (Mann–Whitney) test. Both samples of size
/// at most [`EXACT_LIMIT`] use the exact permutation distribution of the
/// midrank sum; otherwise a normal approximation with tie and continuity
/// corrections.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> Result<RankSum, ReceptionError> {
    if a.is_empty() || b.is_empty() {
        return Err(ReceptionError::EmptySample);
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let s: u64 = ranks[..na].iter().sum();
    let u = s as f64 / 2.0 - (na * (na + 1)) as f64 / 2.0;

    if na <= EXACT_LIMIT && nb <= EXACT_LIMIT {
        // count[k][sum] = subsets of size k with doubled-rank sum `sum`
        let max_sum: usize = ranks.iter().sum::<u64>() as usize;
        let mut count = vec![vec![0u64; max_sum + 1]; na + 1];
        count[0][0] = 1;
        for &r in &ranks {
            let r = r as usize;
            for k in (1..=na).rev() {
                for sum in (r..=max_sum).rev() {
                    count[k][sum] += count[k - 1][sum - r];
                }
            }
        }
        let centre = (na * (n + 1)) as i64;
        let obs = (s as i64 - centre).abs();
        let (mut hit, mut total) = (0u64, 0u64);
        for (sum, &c) in count[na].iter().enumerate() {
            total += c;
            if (sum as i64 - centre).abs() >= obs {
                hit += c;
            }
        }
        return Ok(RankSum {
            u,
            p_value: hit as f64 / total as f64,
            exact: true,
        });
    }

    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let mu = naf * nbf / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = naf * nbf / 12.0 * ((nf + 1.0) - tie_term);
    if var <= 0.0 {
        return Ok(RankSum { u, p_value: 1.0, exact: false });
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(RankSum {
        u,
        p_value: (2.0 * stats::normal_sf(z)).min(1.0),
        exact: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub year: i32,
    pub stylized_mean: f64,
    pub popularized_mean: f64,
    /// `None` when the popularized mean is not positive.
    pub ratio: Option<f64>,
    pub p_value: f64,
    pub stars: &'static str,
    pub n_stylized: usize,
    pub n_popularized: usize,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioSeries {
    pub metric: String,
    pub rows: Vec<RatioRow>,
}

/// Yearly stylized/popularized ratio of means with rank-sum p-values.
/// Each item is `(year, label, value)`; years missing a group are skipped.
pub fn ratio_series(metric: &str, items: &[(i32, Label, f64)]) -> RatioSeries {
    let mut by_year: BTreeMap<i32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for &(y, l, v) in items {
        let g = by_year.entry(y).or_default();
        match l {
            Label::Stylized => g.0.push(v),
            Label::Popularized => g.1.push(v),
        }
    }
    let rows = by_year
        .into_par_iter()
        .filter(|(_, (s, p))| !s.is_empty() && !p.is_empty())
        .map(|(year, (s, p))| {
            let sm = stats::mean(&s).unwrap();
            let pm = stats::mean(&p).unwrap();
            let test = rank_sum_test(&s, &p).expect("non-empty groups");
            RatioRow {
                year,
                stylized_mean: sm,
                popularized_mean: pm,
                ratio: (pm > 0.0).then(|| sm / pm),
                p_value: test.p_value,
                stars: stats::series_stars(test.p_value),
                n_stylized: s.len(),
                n_popularized: p.len(),
                exact: test.exact,
            }
        })
        .collect();
    RatioSeries {
        metric: metric.to_string(),
        rows,
    }
}

/// Pools all years into a single comparison row labelled with `year = 0`.
pub fn pooled_ratio(metric: &str, items: &[(i32, Label, f64)]) -> Option<RatioRow> {
    let flat: Vec<(i32, Label, f64)> = items.iter().map(|&(_, l, v)| (0, l, v)).collect();
    ratio_series(metric, &flat).rows.into_iter().next()
}

pub const GRID_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub bandwidth: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb, `0.9 · min(σ, IQR/1.34) · n^(−1/5)`, falling
/// back to σ when the IQR is zero.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = (quantile(&s, 0.75) - quantile(&s, 0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Nadaraya–Watson regression with a Gaussian kernel, evaluated on
/// [`GRID_POINTS`] evenly spaced x values spanning the data.
pub fn kernel_smooth(points: &[(f64, f64)], bandwidth: Option<f64>) -> Result<Curve, ReceptionError> {
    if points.len() < 2 {
        return Err(ReceptionError::TooFewPoints { need: 2, got: points.len() });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(ReceptionError::DegenerateRange);
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(&xs));
    if !(h > 0.0) {
        return Err(ReceptionError::DegenerateRange);
    }
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let y = grid
        .iter()
        .map(|&g| {
            // shift exponents by the nearest point so tiny bandwidths do not underflow
            let zmin = points.iter().map(|p| ((g - p.0) / h).powi(2)).fold(f64::INFINITY, f64::min);
            let (mut num, mut den) = (0.0, 0.0);
            for &(x, v) in points {
                let w = (-0.5 * (((g - x) / h).powi(2) - zmin)).exp();
                num += w * v;
                den += w;
            }
            num / den
        })
        .collect();
    Ok(Curve { x: grid, y, bandwidth: h })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendFit {
    pub beta: f64,
    pub intercept: f64,
    pub r2: f64,
    pub se_beta: f64,
    /// `(x, fitted, lower, upper)` at each input x; 95% band for the mean.
    pub band: Vec<(f64, f64, f64, f64)>,
}

pub fn trend_fit(points: &[(f64, f64)]) -> Result<TrendFit, ReceptionError> {
    let n = points.len();
    if n < 3 {
        return Err(ReceptionError::TooFewPoints { need: 3, got: n });
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(ReceptionError::DegenerateRange);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let beta = sxy / sxx;
    let intercept = my - beta * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - intercept - beta * p.0).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - sse / syy).max(0.0) } else { 0.0 };
    let s = (sse / (nf - 2.0)).sqrt();
    let tq = stats::t_quantile(0.975, nf - 2.0);
    let band = points
        .iter()
        .map(|p| {
            let fit = intercept + beta * p.0;
            let half = tq * s * (1.0 / nf + (p.0 - mx).powi(2) / sxx).sqrt();
            (p.0, fit, fit - half, fit + half)
        })
        .collect();
    Ok(TrendFit {
        beta,
        intercept,
        r2,
        se_beta: s / sxx.sqrt(),
        band,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptionRow {
    pub paper_id: String,
    pub c5: usize,
    pub c10: usize,
    pub citation_count: usize,
    pub citation_normalized: f64,
    pub normalization_flag: bool,
    pub sb_strength: Option<f64>,
    pub turnaround_days: Option<i64>,
    pub excluded_reason: Option<ExclusionReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptionReport {
    pub rows: Vec<ReceptionRow>,
    /// Papers whose dates are inconsistent, with the error message.
    pub data_errors: Vec<(String, String)>,
}

impl ReceptionReport {
    /// Turnaround outcome counts: kept, then each exclusion reason.
    pub fn turnaround_counts(&self) -> (usize, BTreeMap<ExclusionReason, usize>) {
        let mut kept = 0;
        let mut excl = BTreeMap::new();
        for r in &self.rows {
            match (r.turnaround_days, r.excluded_reason) {
                (_, Some(e)) => *excl.entry(e).or_default() += 1,
                (Some(_), None) => kept += 1,
                _ => {}
            }
        }
        (kept, excl)
    }
}

/// Per-paper reception metrics for every corpus paper, ordered by id.
pub fn compute_reception(
    corpus: &Corpus,
    graph: &CitationGraph,
    window: CitationWindow,
    filter: &TurnaroundFilter,
) -> ReceptionReport {
    let last_year = corpus.year_span().map(|s| s.1).unwrap_or(0);
    let partial: Vec<_> = corpus
        .papers()
        .par_iter()
        .map(|p| {
            let (c5, c10, total) = citation_windows(graph, &p.paper_id, window).unwrap_or((0, 0, 0));
            let sb = (total > 0)
                .then(|| sleeping_beauty(&citation_trajectory(graph, &p.paper_id, last_year)).ok())
                .flatten();
            (c5, c10, total, sb, turnaround(p.history.as_ref(), filter))
        })
        .collect();
    let items: Vec<(Vec<String>, i32, f64)> = corpus
        .papers()
        .iter()
        .zip(&partial)
        .map(|(p, x)| (p.fields_l1.iter().cloned().collect(), p.year, x.2 as f64))
        .collect();
    let normalized = normalize_citations(&items);

    let mut rows = Vec::with_capacity(partial.len());
    let mut data_errors = Vec::new();
    for ((p, (c5, c10, total, sb, ta)), (norm, flag)) in corpus.papers().iter().zip(partial).zip(normalized) {
        let (days, reason) = match ta {
            Ok(Turnaround::Kept(d)) => (Some(d), None),
            Ok(Turnaround::Excluded(r, d)) => (d, Some(r)),
            Err(e) => {
                data_errors.push((p.paper_id.clone(), e.to_string()));
                (None, None)
            }
        };
        rows.push(ReceptionRow {
            paper_id: p.paper_id.clone(),
            c5,
            c10,
            citation_count: total,
            citation_normalized: norm,
            normalization_flag: flag,
            sb_strength: sb,
            turnaround_days: days,
            excluded_reason: reason,
        });
    }
    ReceptionReport { rows, data_errors }
}

pub fn write_reception_csv<W: Write>(rows: &[ReceptionRow], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "paper_id",
        "c5",
        "c10",
        "citation_count",
        "citation_normalized",
        "sb_strength",
        "turnaround_days",
        "excluded_reason",
    ])?;
    for r in rows {
        wtr.write_record([
            r.paper_id.clone(),
            r.c5.to_string(),
            r.c10.to_string(),
            r.citation_count.to_string(),
            r.citation_normalized.to_string(),
            r.sb_strength.map(|v| v.to_string()).unwrap_or_default(),
            r.turnaround_days.map(|v| v.to_string()).unwrap_or_default(),
            r.excluded_reason.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_ratio_series_csv<W: Write>(series: &[RatioSeries], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "metric",
        "year",
        "stylized_mean",
        "popularized_mean",
        "ratio",
        "p_value",
        "stars",
        "n_stylized",
        "n_popularized",
    ])?;
    for s in series {
        for r in &s.rows {
            wtr.write_record([
                s.metric.clone(),
                r.year.to_string(),
                r.stylized_mean.to_string(),
                r.popularized_mean.to_string(),
                r.ratio.map(|v| v.to_string()).unwrap_or_default(),
                r.p_value.to_string(),
                r.stars.to_string(),
                r.n_stylized.to_string(),
                r.n_popularized.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_trend_csv<W: Write>(trends: &[(String, TrendFit)], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["series", "x", "fitted", "lower", "upper", "beta", "se_beta", "r2"])?;
    for (name, t) in trends {
        for &(x, f, lo, hi) in &t.band {
            wtr.write_record([
                name.clone(),
                x.to_string(),
                f.to_string(),
                lo.to_string(),
                hi.to_string(),
                t.beta.to_string(),
                t.se_beta.to_string(),
                t.r2.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_date;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn graph(nodes: &[(&str, i32, Vec<&str>)]) -> CitationGraph {
        CitationGraph::from_papers(nodes.iter().map(|(id, y, r)| (*id, *y, r.iter().copied())))
    }

    #[test]
    fn windows() {
        let g = graph(&[
            ("p", 2000, vec![]),
            ("a", 2001, vec!["p"]),
            ("b", 2004, vec!["p"]),
            ("c", 2007, vec!["p"]),
            ("d", 2012, vec!["p"]),
            ("q", 2000, vec![]),
            ("s", 2000, vec!["q"]),
        ]);
        let w = CitationWindow::default();
        assert_eq!(citation_windows(&g, "p", w).unwrap(), (2, 3, 4));
        assert_eq!(citation_windows(&g, "a", w).unwrap(), (0, 0, 0));
        assert_eq!(citation_windows(&g, "q", w).unwrap(), (1, 1, 1));
        assert!(citation_windows(&g, "zz", w).is_err());
        let g = graph(&[("p", 2000, vec![]), ("a", 2005, vec!["p"])]);
        assert_eq!(citation_windows(&g, "p", w).unwrap(), (0, 1, 1));
        assert_eq!(
            citation_windows(&g, "p", CitationWindow { inclusive_end: true }).unwrap(),
            (1, 1, 1)
        );
        assert_eq!(citation_trajectory(&g, "p", 2006), vec![0, 0, 0, 0, 0, 1, 0]);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_group(&[0.0, 2.0, 4.0]), (vec![0.0, 1.0, 2.0], false));
        assert_eq!(normalize_group(&[0.0, 0.0]), (vec![0.0, 0.0], true));
        let f = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let items = vec![
            (f(&["a"]), 2000, 2.0),
            (f(&["a", "b"]), 2000, 4.0),
            (f(&["b"]), 2000, 0.0),
            (f(&["c"]), 2000, 0.0),
        ];
        let out = normalize_citations(&items);
        // group a mean 3, group b mean 2
        assert!((out[0].0 - 2.0 / 3.0).abs() < 1e-15);
        assert!((out[1].0 - (4.0 / 3.0 + 2.0) / 2.0).abs() < 1e-15);
        assert_eq!(out[2], (0.0, false));
        assert_eq!(out[3], (0.0, true));
    }

    #[test]
    fn sleeping_beauty_examples() {
        assert_eq!(sleeping_beauty(&[0, 0, 0, 4]).unwrap(), 4.0);
        assert_eq!(sleeping_beauty(&[0, 1, 2, 3]).unwrap(), 0.0);
        assert_eq!(sleeping_beauty(&[5, 1, 0]).unwrap(), 0.0);
        assert_eq!(sleeping_beauty(&[]), Err(ReceptionError::EmptyTrajectory));
        // convex above the line: negative
        assert!(sleeping_beauty(&[0, 3, 4]).unwrap() < 0.0);
    }

    #[test]
    fn turnaround_filter() {
        let h = |s: &str, a: &str| SubmissionHistory { submitted: parse_date(s), accepted: parse_date(a) };
        let f = TurnaroundFilter::default();
        assert_eq!(turnaround(Some(&h("2020-01-01", "2020-03-01")), &f), Ok(Turnaround::Kept(60)));
        assert_eq!(
            turnaround(Some(&h("2020-01-01", "2020-01-16")), &f),
            Ok(Turnaround::Excluded(ExclusionReason::TooShort, Some(15)))
        );
        let s = parse_date("2020-01-01").unwrap();
        let long = SubmissionHistory { submitted: Some(s), accepted: Some(s + 1200) };
        assert_eq!(turnaround(Some(&long), &f), Ok(Turnaround::Excluded(ExclusionReason::TooLong, Some(1200))));
        let edge = |d| SubmissionHistory { submitted: Some(s), accepted: Some(s + d) };
        assert_eq!(turnaround(Some(&edge(30)), &f), Ok(Turnaround::Kept(30)));
        assert_eq!(turnaround(Some(&edge(1000)), &f), Ok(Turnaround::Kept(1000)));
        assert_eq!(turnaround(None, &f), Ok(Turnaround::Excluded(ExclusionReason::MissingDates, None)));
        let half = SubmissionHistory { submitted: Some(s), accepted: None };
        assert_eq!(turnaround(Some(&half), &f), Ok(Turnaround::Excluded(ExclusionReason::MissingDates, None)));
        assert!(matches!(turnaround(Some(&edge(-3)), &f), Err(ReceptionError::AcceptedBeforeSubmitted { .. })));
        let open = TurnaroundFilter { include_outliers: true, ..f };
        assert_eq!(turnaround(Some(&long), &open), Ok(Turnaround::Kept(1200)));
    }

    /// Enumerates every assignment of pooled positions to the first sample.
    fn exact_oracle(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        // pairwise U statistic (ties count 1/2), doubled to stay integral
        let u2 = |mask: u32| -> i64 {
            let mut s = 0;
            for i in 0..n {
                if mask & (1 << i) == 0 {
                    continue;
                }
                for j in 0..n {
                    if mask & (1 << j) != 0 {
                        continue;
                    }
                    s += match pooled[i].partial_cmp(&pooled[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
            s
        };
        let centre = (a.len() * b.len()) as i64;
        let obs = (u2((1u32 << a.len()) - 1) - centre).abs();
        let (mut hit, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            total += 1;
            if (u2(mask) - centre).abs() >= obs {
                hit += 1;
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn rank_sum_examples() {
        let r = rank_sum_test(&[1.0, 2.0, 3.0], &[101.0, 102.0, 103.0]).unwrap();
        assert!(r.exact);
        assert_eq!(r.p_value, 0.1);
        assert_eq!(r.u, 0.0);
        let same = rank_sum_test(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(same.p_value > 0.9);
        assert_eq!(rank_sum_test(&[], &[1.0]), Err(ReceptionError::EmptySample));
        assert!(rank_sum_test(&[1.0], &[2.0]).unwrap().exact);
        assert!(!rank_sum_test(&[1.0; 9], &[2.0; 3]).unwrap().exact);
    }

    #[test]
    fn rank_sum_large_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..300).map(|_| nrm.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..300).map(|_| nrm.sample(&mut rng) + 1.0).collect();
        assert!(rank_sum_test(&a, &b).unwrap().p_value < 1e-6);
    }

    #[test]
    fn rank_sum_normal_matches_closed_form() {
        // no ties, n=10 each: var = 10·10·21/12 = 175
        let a: Vec<f64> = (0..10).map(|i| if i < 5 { i as f64 } else { 10.0 + i as f64 }).collect();
        let b: Vec<f64> = (0..10).map(|i| 5.25 + i as f64 * 1.5).collect();
        let u: f64 = a.iter().map(|x| b.iter().filter(|y| x > y).count() as f64).sum();
        let r = rank_sum_test(&a, &b).unwrap();
        assert_eq!(r.u, u);
        let z = ((u - 50.0).abs() - 0.5) / 175.0f64.sqrt();
        assert!((r.p_value - 2.0 * stats::normal_sf(z)).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn exact_path_matches_enumeration(
            a in proptest::collection::vec(0u8..6, 1..=8),
            b in proptest::collection::vec(0u8..6, 1..=8),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let got = rank_sum_test(&a, &b).unwrap();
            prop_assert!(got.exact);
            prop_assert_eq!(got.p_value, exact_oracle(&a, &b));
            prop_assert_eq!(got.p_value, rank_sum_test(&b, &a).unwrap().p_value);
        }

        #[test]
        fn normal_path_symmetric(
            a in proptest::collection::vec(-50i32..50, 9..40),
            b in proptest::collection::vec(-50i32..50, 1..40),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let p1 = rank_sum_test(&a, &b).unwrap().p_value;
            let p2 = rank_sum_test(&b, &a).unwrap().p_value;
            prop_assert!((p1 - p2).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&p1));
        }

        #[test]
        fn normalized_group_mean_is_one(v in proptest::collection::vec(0u32..500, 1..60)) {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let (n, flag) = normalize_group(&v);
            if !flag {
                prop_assert!((stats::mean(&n).unwrap() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn sleeping_beauty_matches_hand_sum(t in proptest::collection::vec(0u64..20, 1..15)) {
            let max = *t.iter().max().unwrap();
            let tm = t.iter().position(|&c| c == max).unwrap();
            let mut want = 0.0;
            if tm > 0 {
                for (i, &c) in t.iter().enumerate().take(tm + 1) {
                    let line = t[0] as f64 + (max as f64 - t[0] as f64) * i as f64 / tm as f64;
                    want += (line - c as f64) / (c.max(1) as f64);
                }
            }
            let got = sleeping_beauty(&t).unwrap();
            prop_assert!((got - want).abs() < 1e-9);
            prop_assert_eq!(got > 1e-9, want > 1e-9);
        }
    }

    #[test]
    fn ratio_series_cases() {
        use Label::*;
        let items = vec![(2000, Stylized, 1.0), (2000, Popularized, 1.0), (2001, Stylized, 2.0)];
        let s = ratio_series("c5", &items);
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.rows[0].ratio, Some(1.0));
        assert_eq!(s.rows[0].stars, "");
        assert!(s.rows[0].exact);
        let zero = ratio_series("c5", &[(2000, Stylized, 1.0), (2000, Popularized, 0.0)]);
        assert_eq!(zero.rows[0].ratio, None);
    }

    #[test]
    fn ratio_series_planted() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut items = Vec::new();
        for _ in 0..4000 {
            let s = rng.random_bool(0.5);
            let lam: f64 = if s { 6.0 } else { 10.0 };
            let v = rand_distr::Poisson::new(lam).unwrap().sample(&mut rng);
            items.push((2000, if s { Label::Stylized } else { Label::Popularized }, v));
        }
        let r = &ratio_series("c5", &items).rows[0];
        assert!((r.ratio.unwrap() - 0.6).abs() < 0.05);
        assert_eq!(r.stars, "***");
    }

    #[test]
    fn smoothing() {
        let flat: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 3.5)).collect();
        let c = kernel_smooth(&flat, None).unwrap();
        assert_eq!(c.x.len(), GRID_POINTS);
        assert!(c.y.iter().all(|y| (y - 3.5).abs() < 1e-12));

        let sym: Vec<(f64, f64)> = (-10..=10).map(|i| (i as f64, (i * i) as f64)).collect();
        let c = kernel_smooth(&sym, Some(1.5)).unwrap();
        for i in 0..GRID_POINTS {
            assert!((c.y[i] - c.y[GRID_POINTS - 1 - i]).abs() < 1e-9);
        }

        let lin: Vec<(f64, f64)> = (0..=2000).map(|i| (i as f64 / 2000.0, 2.0 * i as f64 / 2000.0 + 1.0)).collect();
        let c = kernel_smooth(&lin, Some(2e-4)).unwrap();
        let worst = c.x.iter().zip(&c.y).map(|(x, y)| (y - (2.0 * x + 1.0)).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");

        assert_eq!(kernel_smooth(&[(1.0, 1.0)], None), Err(ReceptionError::TooFewPoints { need: 2, got: 1 }));
        assert_eq!(kernel_smooth(&[(1.0, 1.0), (1.0, 2.0)], None), Err(ReceptionError::DegenerateRange));
    }

    #[test]
    fn silverman_value() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        // sd = sqrt(2.5), IQR = 2 → 2/1.34 < sd
        let want = 0.9 * (2.0 / 1.34) * 5f64.powf(-0.2);
        assert!((silverman_bandwidth(&xs) - want).abs() < 1e-15);
    }

    #[test]
    fn trends() {
        let line: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let t = trend_fit(&line).unwrap();
        assert!((t.beta - 2.0).abs() < 1e-12);
        assert!((t.r2 - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 7.0)).collect();
        let t = trend_fit(&flat).unwrap();
        assert_eq!((t.beta, t.r2), (0.0, 0.0));
        assert!(trend_fit(&line[..2]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nrm = Normal::new(0.0, 0.01).unwrap();
        let noisy: Vec<(f64, f64)> = (1960..2011)
            .map(|y| (y as f64, 0.8 - 0.003 * (y - 1960) as f64 + nrm.sample(&mut rng)))
            .collect();
        let t = trend_fit(&noisy).unwrap();
        assert!((t.beta + 0.003).abs() < 2.0 * t.se_beta);
        for &(_, f, lo, hi) in &t.band {
            assert!(lo < f && f < hi);
        }
    }
}
