//! Covariates and fixed-effects regressions: within-transformation OLS with
//! HC1 standard errors and Poisson pseudo-maximum likelihood.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum RegressError {
    #[error("column {0:?} is collinear with the other regressors or fixed effects")]
    Collinear(String),
    #[error("need more than {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error("response must be a non-negative count, row {0} has {1}")]
    BadCount(usize, f64),
    #[error("IRLS did not converge in {} iterations (last step {:e})", .trace.len(), .trace.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { trace: Vec<f64> },
    #[error("no rows left after dropping all-zero groups")]
    Empty,
}

pub const COVARIATES: [&str; 8] = ["s", "ts", "fs", "rc", "k_mu", "k_theta", "c_mu", "c_theta"];

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateRow {
    pub paper_id: String,
    pub s: Option<f64>,
    pub ts: usize,
    pub fs: usize,
    pub rc: usize,
    pub k_mu: Option<f64>,
    pub k_theta: Option<f64>,
    pub c_mu: Option<f64>,
    pub c_theta: Option<f64>,
    pub year: i32,
    pub field: Option<String>,
}

impl CovariateRow {
    /// Covariate values in [`COVARIATES`] order; `None` if any is missing.
    pub fn values(&self) -> Option<[f64; 8]> {
        if self.ts == 0 {
            return None;
        }
        Some([
            self.s?,
            self.ts as f64,
            self.fs as f64,
            self.rc as f64,
            self.k_mu?,
            self.k_theta?,
            self.c_mu?,
            self.c_theta?,
        ])
    }

    pub fn missing(&self) -> Vec<&'static str> {
        let mut m = Vec::new();
        if self.s.is_none() {
            m.push("s");
        }
        if self.ts == 0 {
            m.push("ts");
        }
        if self.k_mu.is_none() {
            m.push("k_mu");
        }
        if self.c_mu.is_none() {
            m.push("c_mu");
        }
        if self.field.is_none() {
            m.push("field");
        }
        m
    }
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    (stats::mean(v), stats::population_std(v))
}

/// One row per corpus paper. Reference ages use references found in the
/// corpus; career ages count from each author's first paper in the corpus.
pub fn build_covariates(corpus: &Corpus, scores: &BTreeMap<String, f64>) -> Vec<CovariateRow> {
    let mut first: HashMap<&str, i32> = HashMap::new();
    for p in corpus.papers() {
        for a in &p.author_ids {
            let e = first.entry(a.as_str()).or_insert(p.year);
            *e = (*e).min(p.year);
        }
    }
    let sizes = corpus.field_sizes();
    corpus
        .papers()
        .iter()
        .map(|p| {
            let ages: Vec<f64> = p
                .reference_ids
                .iter()
                .filter_map(|r| corpus.get(r))
                .map(|r| (p.year - r.year) as f64)
                .collect();
            let careers: Vec<f64> = p.author_ids.iter().map(|a| (p.year - first[a.as_str()]) as f64).collect();
            let (k_mu, k_theta) = mean_std(&ages);
            let (c_mu, c_theta) = mean_std(&careers);
            let field = p.primary_field().map(str::to_string);
            let fs = field
                .as_ref()
                .and_then(|f| sizes.get(&(p.year, f.clone())).copied())
                .unwrap_or(0);
            CovariateRow {
                paper_id: p.paper_id.clone(),
                s: scores.get(&p.paper_id).copied(),
                ts: p.author_ids.len(),
                fs,
                rc: p.reference_ids.len(),
                k_mu,
                k_theta,
                c_mu,
                c_theta,
                year: p.year,
                field,
            }
        })
        .collect()
}

/// Regression inputs: regressors, response and fixed-effect group codes.
#[derive(Debug, Clone)]
pub struct Design {
    pub names: Vec<String>,
    /// `n × k`.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub fe_names: Vec<String>,
    /// One code vector of length `n` per fixed-effect dimension.
    pub fe: Vec<Vec<usize>>,
    pub row_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedEffect {
    Year,
    Field,
}

impl FixedEffect {
    pub fn name(self) -> &'static str {
        match self {
            FixedEffect::Year => "year",
            FixedEffect::Field => "field",
        }
    }
}

fn encode<T: Ord + Clone>(keys: &[T]) -> Vec<usize> {
    let mut levels: Vec<T> = keys.to_vec();
    levels.sort();
    levels.dedup();
    keys.iter().map(|k| levels.binary_search(k).unwrap()).collect()
}

impl Design {
    /// Complete rows with a response, all eight covariates and the
    /// requested fixed effects.
    pub fn from_covariates(
        rows: &[CovariateRow],
        response: &BTreeMap<String, f64>,
        fe: &[FixedEffect],
    ) -> Self {
        let kept: Vec<(&CovariateRow, [f64; 8], f64)> = rows
            .iter()
            .filter(|r| !fe.contains(&FixedEffect::Field) || r.field.is_some())
            .filter_map(|r| Some((r, r.values()?, *response.get(&r.paper_id)?)))
            .collect();
        let n = kept.len();
        let x = DMatrix::from_fn(n, 8, |i, j| kept[i].1[j]);
        let y = DVector::from_iterator(n, kept.iter().map(|k| k.2));
        let codes = fe
            .iter()
            .map(|f| match f {
                FixedEffect::Year => encode(&kept.iter().map(|k| k.0.year.to_string()).collect::<Vec<_>>()),
                FixedEffect::Field => encode(&kept.iter().map(|k| k.0.field.clone().unwrap()).collect::<Vec<_>>()),
            })
            .collect();
        Self {
            names: COVARIATES.iter().map(|s| s.to_string()).collect(),
            x,
            y,
            fe_names: fe.iter().map(|f| f.name().to_string()).collect(),
            fe: codes,
            row_ids: kept.iter().map(|k| k.0.paper_id.clone()).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn subset(&self, keep: &[bool]) -> Self {
        let idx: Vec<usize> = (0..self.n()).filter(|&i| keep[i]).collect();
        Self {
            names: self.names.clone(),
            x: DMatrix::from_fn(idx.len(), self.x.ncols(), |i, j| self.x[(idx[i], j)]),
            y: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i])),
            fe_names: self.fe_names.clone(),
            fe: self.fe.iter().map(|c| encode(&idx.iter().map(|&i| c[i]).collect::<Vec<_>>())).collect(),
            row_ids: idx.iter().map(|&i| self.row_ids[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    OlsFe,
    PoissonPml,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::OlsFe => "ols_fe",
            Model::PoissonPml => "poisson_pml",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult {
    pub model: Model,
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub p_values: Vec<f64>,
    pub n_obs: usize,
    /// Within R² for OLS, deviance pseudo-R² for Poisson.
    pub r2: f64,
    /// `(dimension, number of groups)`.
    pub fe_dims: Vec<(String, usize)>,
    /// Rows removed because their group had only zero outcomes.
    pub dropped_rows: usize,
    /// Some coefficient exceeded 30 in magnitude.
    pub separation: bool,
    pub iterations: usize,
    /// Sum of fitted means over the fitted rows.
    pub fitted_sum: f64,
    pub response_sum: f64,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.coef[i], self.se[i]))
    }
}

const DEMEAN_TOL: f64 = 1e-10;

/// Removes group means of every fixed-effect dimension by alternating
/// projections until a sweep changes no value by more than 1e-10.
pub fn demean(v: &mut [f64], fe: &[Vec<usize>]) {
    let n = v.len();
    let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    for _ in 0..100_000 {
        let mut change = 0.0f64;
        for codes in fe {
            let g = codes.iter().max().map_or(0, |m| m + 1);
            let mut sum = vec![0.0; g];
            let mut cnt = vec![0usize; g];
            for i in 0..n {
                sum[codes[i]] += v[i];
                cnt[codes[i]] += 1;
            }
            for i in 0..n {
                let m = sum[codes[i]] / cnt[codes[i]] as f64;
                v[i] -= m;
                change = change.max(m.abs());
            }
        }
        if fe.len() <= 1 || change <= DEMEAN_TOL * scale {
            return;
        }
    }
}

fn group_count(codes: &[usize]) -> usize {
    codes.iter().max().map_or(0, |m| m + 1)
}

/// Parameters absorbed by the fixed effects: `G₁` for one dimension,
/// `G₁ + G₂ − components` for two.
pub fn absorbed_dof(fe: &[Vec<usize>]) -> usize {
    match fe.len() {
        0 => 0,
        1 => group_count(&fe[0]),
        _ => {
            let g1 = group_count(&fe[0]);
            let g2 = group_count(&fe[1]);
            let mut parent: Vec<usize> = (0..g1 + g2).collect();
            fn find(p: &mut [usize], mut x: usize) -> usize {
                while p[x] != x {
                    p[x] = p[p[x]];
                    x = p[x];
                }
                x
            }
            for i in 0..fe[0].len() {
                let (a, b) = (find(&mut parent, fe[0][i]), find(&mut parent, g1 + fe[1][i]));
                if a != b {
                    parent[a] = b;
                }
            }
            let comps = (0..g1 + g2).filter(|&x| find(&mut parent, x) == x).count();
            let extra: usize = fe[2..].iter().map(|c| group_count(c) - 1).sum();
            g1 + g2 - comps + extra
        }
    }
}

/// Errors naming the first column, in `order`, that is (numerically) a
/// combination of those visited before it.
fn check_rank(x: &DMatrix<f64>, names: &[String], order: impl IntoIterator<Item = usize>) -> Result<(), RegressError> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in order {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        let mut r = col.clone();
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&r);
                r -= b * d;
            }
        }
        let norm = r.norm();
        if norm0 == 0.0 || norm <= 1e-9 * norm0 {
            return Err(RegressError::Collinear(names[j].clone()));
        }
        basis.push(r / norm);
    }
    Ok(())
}

fn invert_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.inverse())
}

/// Two-way (or any-way) fixed-effects OLS. With no fixed effects an
/// intercept is absorbed instead.
pub fn ols_fe(design: &Design) -> Result<RegressionResult, RegressError> {
    let n = design.n();
    let k = design.x.ncols();
    let fe: Vec<Vec<usize>> = if design.fe.is_empty() { vec![vec![0; n]] } else { design.fe.clone() };
    let absorbed = absorbed_dof(&fe);
    let dof = n as i64 - k as i64 - absorbed as i64;
    if dof <= 0 {
        return Err(RegressError::TooFewObservations { need: k + absorbed, got: n });
    }

    let mut xt = design.x.clone();
    for j in 0..k {
        let mut col: Vec<f64> = xt.column(j).iter().copied().collect();
        demean(&mut col, &fe);
        xt.set_column(j, &DVector::from_vec(col));
    }
    let mut yv: Vec<f64> = design.y.iter().copied().collect();
    demean(&mut yv, &fe);
    let yt = DVector::from_vec(yv);
    check_rank(&xt, &design.names, 0..k)?;

    let xtx = xt.transpose() * &xt;
    let inv = invert_spd(&xtx).ok_or_else(|| RegressError::Collinear(design.names[k - 1].clone()))?;
    let beta = &inv * (xt.transpose() * &yt);
    let resid = &yt - &xt * &beta;

    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let xi = xt.row(i).transpose();
        meat += (&xi * xi.transpose()) * (resid[i] * resid[i]);
    }
    let v = &inv * meat * &inv * (n as f64 / dof as f64);
    let se: Vec<f64> = (0..k).map(|j| v[(j, j)].max(0.0).sqrt()).collect();
    let p_values = beta
        .iter()
        .zip(&se)
        .map(|(b, s)| if *s > 0.0 { stats::t_two_sided(b / s, dof as f64) } else { f64::NAN })
        .collect();
    let sst = yt.norm_squared();
    let r2 = if sst > 0.0 { 1.0 - resid.norm_squared() / sst } else { 0.0 };
    Ok(RegressionResult {
        model: Model::OlsFe,
        names: design.names.clone(),
        coef: beta.iter().copied().collect(),
        se,
        p_values,
        n_obs: n,
        r2,
        fe_dims: design.fe_names.iter().cloned().zip(design.fe.iter().map(|c| group_count(c))).collect(),
        dropped_rows: 0,
        separation: false,
        iterations: 1,
        fitted_sum: design.y.sum() - resid.sum(),
        response_sum: design.y.sum(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct PoissonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub separation_bound: f64,
}

impl Default for PoissonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            separation_bound: 30.0,
        }
    }
}

/// Rows whose group, in any fixed-effect dimension, has only zero
/// outcomes. Repeated until no such group remains.
fn nonzero_groups(design: &Design) -> Vec<bool> {
    let n = design.n();
    let mut keep = vec![true; n];
    loop {
        let mut changed = false;
        for codes in &design.fe {
            let mut pos = vec![false; group_count(codes)];
            for i in (0..n).filter(|&i| keep[i]) {
                pos[codes[i]] |= design.y[i] > 0.0;
            }
            for i in 0..n {
                if keep[i] && !pos[codes[i]] {
                    keep[i] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            return keep;
        }
    }
}

fn poisson_deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    2.0 * y
        .iter()
        .zip(mu.iter())
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

/// Log-link Poisson PML by IRLS with an intercept and indicator columns
/// for every fixed-effect level but the first. Reports the intercept and
/// the design's regressors with sandwich standard errors.
pub fn poisson_pml(design: &Design, opts: &PoissonOptions) -> Result<RegressionResult, RegressError> {
    for (i, &y) in design.y.iter().enumerate() {
        if !(y >= 0.0) || y.fract() != 0.0 {
            return Err(RegressError::BadCount(i, y));
        }
    }
    let keep = nonzero_groups(design);
    let dropped_rows = keep.iter().filter(|k| !**k).count();
    let d = if dropped_rows > 0 { design.subset(&keep) } else { design.clone() };
    let n = d.n();
    if n == 0 {
        return Err(RegressError::Empty);
    }
    let k = d.x.ncols();
    let mut names = vec!["(intercept)".to_string()];
    names.extend(d.names.iter().cloned());
    let mut cols: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0)];
    cols.extend((0..k).map(|j| d.x.column(j).into_owned()));
    for (f, codes) in d.fe_names.iter().zip(&d.fe) {
        for g in 1..group_count(codes) {
            cols.push(DVector::from_iterator(n, codes.iter().map(|&c| (c == g) as u8 as f64)));
            names.push(format!("{f}[{g}]"));
        }
    }
    let p = cols.len();
    if n <= p {
        return Err(RegressError::TooFewObservations { need: p, got: n });
    }
    let z = DMatrix::from_columns(&cols);
    check_rank(&z, &names, std::iter::once(0).chain(k + 1..p).chain(1..=k))?;

    let ybar = d.y.mean();
    let mut beta = DVector::<f64>::zeros(p);
    beta[0] = ybar.ln();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let eta = &z * &beta;
        let mu = eta.map(f64::exp);
        let mut zw = z.clone();
        let mut rhs = DVector::<f64>::zeros(n);
        for i in 0..n {
            let w = mu[i].sqrt();
            zw.row_mut(i).scale_mut(w);
            rhs[i] = w * (eta[i] + (d.y[i] - mu[i]) / mu[i]);
        }
        let a = zw.transpose() * &zw;
        let new = invert_spd(&a)
            .map(|inv| inv * (zw.transpose() * rhs))
            .ok_or_else(|| RegressError::Collinear(names[p - 1].clone()))?;
        let step = (&new - &beta).amax();
        beta = new;
        trace.push(step);
        if step < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(RegressError::NoConvergence { trace });
    }

    let mu = (&z * &beta).map(f64::exp);
    let mut bread = DMatrix::<f64>::zeros(p, p);
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let zi = z.row(i).transpose();
        let zz = &zi * zi.transpose();
        bread += &zz * mu[i];
        let e = d.y[i] - mu[i];
        meat += zz * (e * e);
    }
    let inv = invert_spd(&bread).ok_or_else(|| RegressError::Collinear(names[p - 1].clone()))?;
    let v = &inv * meat * &inv * (n as f64 / (n - p) as f64);
    let shown = k + 1;
    let se: Vec<f64> = (0..shown).map(|j| v[(j, j)].max(0.0).sqrt()).collect();
    let p_values = (0..shown)
        .map(|j| if se[j] > 0.0 { 2.0 * stats::normal_sf((beta[j] / se[j]).abs()) } else { f64::NAN })
        .collect();
    let dev = poisson_deviance(&d.y, &mu);
    let dev0 = poisson_deviance(&d.y, &DVector::from_element(n, ybar));
    Ok(RegressionResult {
        model: Model::PoissonPml,
        names: names[..shown].to_vec(),
        coef: beta.iter().take(shown).copied().collect(),
        se,
        p_values,
        n_obs: n,
        r2: if dev0 > 0.0 { 1.0 - dev / dev0 } else { 0.0 },
        fe_dims: d.fe_names.iter().cloned().zip(d.fe.iter().map(|c| group_count(c))).collect(),
        dropped_rows,
        separation: beta.iter().any(|b| b.abs() > opts.separation_bound),
        iterations: trace.len(),
        fitted_sum: mu.sum(),
        response_sum: d.y.sum(),
    })
}

/// Table significance markers: `+` p<0.1, `*` p<0.05, `**` p<0.01, `***` p<0.001.
pub fn table_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "+"
    } else {
        ""
    }
}

/// Markdown table with one column per model: coefficients with stars and
/// robust standard errors in parentheses, then N and (pseudo) R².
pub fn model_table(results: &[RegressionResult]) -> String {
    let mut names: Vec<&str> = Vec::new();
    for r in results {
        for n in &r.names {
            if !names.contains(&n.as_str()) {
                names.push(n);
            }
        }
    }
    let mut out = String::from("|");
    for (i, r) in results.iter().enumerate() {
        let _ = write!(out, " | ({}) {}", i + 1, r.model.name());
    }
    out.push_str(" |\n|---");
    out.push_str(&"|---".repeat(results.len()));
    out.push_str("|\n");
    for name in names {
        let _ = write!(out, "| {name}");
        for r in results {
            match r.names.iter().position(|n| n == name) {
                Some(i) => {
                    let _ = write!(out, " | {:.4}{} ({:.4})", r.coef[i], table_stars(r.p_values[i]), r.se[i]);
                }
                None => out.push_str(" | "),
            }
        }
        out.push_str(" |\n");
    }
    out.push_str("| N");
    for r in results {
        let _ = write!(out, " | {}", r.n_obs);
    }
    out.push_str(" |\n| R²");
    for r in results {
        let _ = write!(out, " | {:.4}", r.r2);
    }
    out.push_str(" |\n| Fixed effects");
    for r in results {
        let fe: Vec<&str> = r.fe_dims.iter().map(|f| f.0.as_str()).collect();
        let _ = write!(out, " | {}", if fe.is_empty() { "none".to_string() } else { fe.join(", ") });
    }
    out.push_str(" |\n");
    out
}

/// Long-format CSV of every result: `model,term,coef,se,p,stars,n_obs,r2`.
pub fn results_csv(results: &[RegressionResult]) -> String {
    let mut out = String::from("model,term,coef,se,p,stars,n_obs,r2\n");
    for (i, r) in results.iter().enumerate() {
        for j in 0..r.names.len() {
            let _ = writeln!(
                out,
                "{}_{},{},{},{},{},{},{},{}",
                i + 1,
                r.model.name(),
                r.names[j],
                r.coef[j],
                r.se[j],
                r.p_values[j],
                table_stars(r.p_values[j]),
                r.n_obs,
                r.r2
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PaperRecord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Poisson};

    fn design(x: DMatrix<f64>, y: Vec<f64>, fe: Vec<Vec<usize>>) -> Design {
        let k = x.ncols();
        let n = x.nrows();
        Design {
            names: (0..k).map(|j| format!("x{j}")).collect(),
            x,
            y: DVector::from_vec(y),
            fe_names: (0..fe.len()).map(|d| format!("fe{d}")).collect(),
            fe,
            row_ids: (0..n).map(|i| i.to_string()).collect(),
        }
    }

    fn fixture(n: usize, seed: u64) -> Design {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let years: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let fields: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let x = DMatrix::from_fn(n, 3, |i, j| nrm.sample(&mut rng) + 0.3 * (years[i] + j) as f64);
        let y = (0..n)
            .map(|i| {
                1.5 * x[(i, 0)] - 0.7 * x[(i, 1)] + 0.2 * x[(i, 2)]
                    + 0.4 * years[i] as f64
                    - 0.9 * fields[i] as f64
                    + nrm.sample(&mut rng) * (1.0 + x[(i, 0)].abs())
            })
            .collect();
        design(x, y, vec![years, fields])
    }

    /// Full dummy-variable least squares with HC1 errors.
    fn dummy_oracle(d: &Design) -> (Vec<f64>, Vec<f64>) {
        let n = d.n();
        let k = d.x.ncols();
        let mut cols: Vec<DVector<f64>> = (0..k).map(|j| d.x.column(j).into_owned()).collect();
        cols.push(DVector::from_element(n, 1.0));
        for codes in &d.fe {
            for g in 1..group_count(codes) {
                cols.push(DVector::from_iterator(n, codes.iter().map(|&c| (c == g) as u8 as f64)));
            }
        }
        let z = DMatrix::from_columns(&cols);
        let p = z.ncols();
        let zz = z.transpose() * &z;
        let inv = zz.try_inverse().unwrap();
        let beta = &inv * z.transpose() * &d.y;
        let e = &d.y - &z * &beta;
        let mut meat = DMatrix::zeros(p, p);
        for i in 0..n {
            let zi = z.row(i).transpose();
            meat += &zi * zi.transpose() * (e[i] * e[i]);
        }
        let v = &inv * meat * &inv * (n as f64 / (n - p) as f64);
        ((0..k).map(|j| beta[j]).collect(), (0..k).map(|j| v[(j, j)].sqrt()).collect())
    }

    #[test]
    fn within_matches_dummy_regression() {
        let d = fixture(200, 1);
        let r = ols_fe(&d).unwrap();
        let (b, se) = dummy_oracle(&d);
        for j in 0..3 {
            assert!((r.coef[j] - b[j]).abs() < 1e-8, "{j}: {} vs {}", r.coef[j], b[j]);
            assert!((r.se[j] - se[j]).abs() < 1e-8, "{j}: {} vs {}", r.se[j], se[j]);
            assert!(r.se[j] > 0.0);
        }
        assert_eq!(r.fe_dims, vec![("fe0".to_string(), 10), ("fe1".to_string(), 5)]);
    }

    #[test]
    fn exact_recovery_without_noise() {
        let mut d = fixture(120, 2);
        for i in 0..d.n() {
            d.y[i] = 2.0 * d.x[(i, 0)] + 3.0 * d.fe[0][i] as f64;
        }
        let r = ols_fe(&d).unwrap();
        assert!((r.coef[0] - 2.0).abs() < 1e-10);
        assert!(r.coef[1].abs() < 1e-10);
    }

    #[test]
    fn collinear_column_named() {
        let mut d = fixture(100, 3);
        let col = d.x.column(0).into_owned();
        d.x = d.x.clone().insert_column(3, 0.0);
        d.x.set_column(3, &col);
        d.names.push("dup".into());
        assert_eq!(ols_fe(&d).unwrap_err(), RegressError::Collinear("dup".into()));

        // a regressor constant within years is absorbed
        let mut d = fixture(100, 3);
        for i in 0..d.n() {
            d.x[(i, 2)] = d.fe[0][i] as f64;
        }
        assert_eq!(ols_fe(&d).unwrap_err(), RegressError::Collinear("x2".into()));
    }

    #[test]
    fn absorbed_dof_counts_components() {
        assert_eq!(absorbed_dof(&[vec![0, 1, 2]]), 3);
        assert_eq!(absorbed_dof(&[vec![0, 0, 1, 1], vec![0, 1, 0, 1]]), 3);
        // two disconnected blocks
        assert_eq!(absorbed_dof(&[vec![0, 1], vec![0, 1]]), 2);
    }

    #[test]
    fn poisson_constant_response() {
        let n = 50;
        let d = design(DMatrix::zeros(n, 0), vec![4.0; n], vec![]);
        let r = poisson_pml(&d, &PoissonOptions::default()).unwrap();
        assert!((r.coef[0] - 4f64.ln()).abs() < 1e-12);
        assert_eq!(r.names, vec!["(intercept)"]);
    }

    #[test]
    fn poisson_recovers_slope() {
        let n = 50_000;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..n).map(|_| nrm.sample(&mut rng)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| Poisson::new((1.0 + 0.5 * xi).exp()).unwrap().sample(&mut rng))
            .collect();
        let d = design(DMatrix::from_vec(n, 1, x), y, vec![]);
        let r = poisson_pml(&d, &PoissonOptions::default()).unwrap();
        assert!((r.coef[1] - 0.5).abs() < 0.02, "{:?}", r.coef);
        assert!((r.coef[0] - 1.0).abs() < 0.02);
        assert!(r.se[1] > 0.0 && r.r2 > 0.0 && r.r2 < 1.0);
        assert!(!r.separation);
    }

    #[test]
    fn poisson_drops_all_zero_groups_and_matches_score_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 400;
        let g: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                if g[i] == 3 {
                    0.0
                } else {
                    Poisson::new((0.3 * g[i] as f64 + 0.8 * x[i]).exp()).unwrap().sample(&mut rng)
                }
            })
            .collect();
        let d = design(DMatrix::from_vec(n, 1, x), y.clone(), vec![g]);
        let r = poisson_pml(&d, &PoissonOptions::default()).unwrap();
        assert_eq!(r.dropped_rows, 100);
        assert_eq!(r.n_obs, 300);
        assert_eq!(r.fe_dims[0].1, 3);
        assert!((r.coef[1] - 0.8).abs() < 0.2);

        assert!((r.fitted_sum - r.response_sum).abs() <= 1e-6 * r.response_sum);
        let keep: Vec<bool> = (0..n).map(|i| i % 4 != 3).collect();
        let sub = d.subset(&keep);
        let full = poisson_pml(&sub, &PoissonOptions::default()).unwrap();
        assert_eq!(full.coef, r.coef);
    }

    #[test]
    fn poisson_rejects_non_counts() {
        let d = design(DMatrix::zeros(3, 0), vec![1.0, 0.5, 2.0], vec![]);
        assert_eq!(poisson_pml(&d, &PoissonOptions::default()).unwrap_err(), RegressError::BadCount(1, 0.5));
    }

    #[test]
    fn stars_and_table() {
        assert_eq!(table_stars(0.03), "*");
        assert_eq!(table_stars(0.0005), "***");
        assert_eq!(table_stars(0.005), "**");
        assert_eq!(table_stars(0.07), "+");
        assert_eq!(table_stars(0.2), "");
        let r = ols_fe(&fixture(200, 4)).unwrap();
        let t = model_table(std::slice::from_ref(&r));
        assert!(t.starts_with("| | (1) ols_fe |\n|---|---|\n| x0 | "));
        assert!(t.contains("| N | 200 |"));
        assert_eq!(results_csv(&[r]).lines().count(), 4);
    }

    #[test]
    fn covariates_by_hand() {
        let corpus = Corpus::from_records(vec![
            PaperRecord::new("r1", 2000).with_authors(&["old"]),
            PaperRecord::new("r2", 2010).with_authors(&["old"]),
            PaperRecord::new("p", 2020)
                .with_authors(&["old", "new"])
                .with_references(&["r1", "r2", "missing"])
                .with_fields_l1(&["f"]),
            PaperRecord::new("solo", 2020).with_authors(&["fresh"]),
        ])
        .unwrap();
        let scores: BTreeMap<String, f64> = [("p".to_string(), 0.3)].into();
        let rows = build_covariates(&corpus, &scores);
        let p = rows.iter().find(|r| r.paper_id == "p").unwrap();
        assert_eq!((p.k_mu, p.k_theta), (Some(15.0), Some(5.0)));
        assert_eq!((p.c_mu, p.c_theta), (Some(10.0), Some(10.0)));
        assert_eq!((p.ts, p.rc, p.fs), (2, 3, 1));
        assert!(p.values().is_some());
        let solo = rows.iter().find(|r| r.paper_id == "solo").unwrap();
        assert_eq!((solo.c_mu, solo.c_theta), (Some(0.0), Some(0.0)));
        assert_eq!(solo.k_mu, None);
        assert!(solo.missing().contains(&"k_mu"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn group_shifts_absorbed(seed in 0u64..1000, shift in -50.0f64..50.0) {
            let d = fixture(150, seed);
            let base = ols_fe(&d).unwrap();
            let mut shifted = d.clone();
            for i in 0..d.n() {
                shifted.y[i] += shift * (d.fe[0][i] as f64 + 1.0) - 3.0 * d.fe[1][i] as f64;
            }
            let r = ols_fe(&shifted).unwrap();
            for j in 0..3 {
                prop_assert!((r.coef[j] - base.coef[j]).abs() < 1e-8);
            }
        }

        #[test]
        fn row_permutation_invariant(seed in 0u64..1000) {
            let d = fixture(120, seed);
            let base = ols_fe(&d).unwrap();
            let n = d.n();
            let perm: Vec<usize> = (0..n).rev().collect();
            let p = Design {
                names: d.names.clone(),
                x: DMatrix::from_fn(n, 3, |i, j| d.x[(perm[i], j)]),
                y: DVector::from_iterator(n, perm.iter().map(|&i| d.y[i])),
                fe_names: d.fe_names.clone(),
                fe: d.fe.iter().map(|c| perm.iter().map(|&i| c[i]).collect()).collect(),
                row_ids: perm.iter().map(|i| i.to_string()).collect(),
            };
            let r = ols_fe(&p).unwrap();
            for j in 0..3 {
                prop_assert!((r.coef[j] - base.coef[j]).abs() < 1e-9);
                prop_assert!((r.se[j] - base.se[j]).abs() < 1e-9);
                prop_assert!(r.se[j].is_finite() && r.se[j] > 0.0);
            }
        }
    }
}
