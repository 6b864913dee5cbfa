use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use sciline_core::corpus::{dedupe_by_doi, load_corpus, AttachReport, Corpus, EmbeddingStore};
use sciline_core::disruption::{
    compute_profiles, disruption_ratios_by_year, pagerank, write_profiles_csv, CitationGraph,
};
use sciline_core::embed_space::{
    decade_distribution, paper_scores, read_entries_csv, stylization_scores, write_entries_csv,
    PaperStylization, RotationOptions, ScoringError, BIN_WIDTH,
};
use sciline_core::recombination::{
    assign_distances, baseline_pairs, detect_new_combos, group_remote_stats, paper_novelty,
    write_events_csv, RemoteStatsMode, WalkOptions,
};
use sciline_core::reception::{
    citation_windows, compute_reception, kernel_smooth, pooled_ratio, ratio_series, trend_fit,
    write_ratio_series_csv, write_reception_csv, write_trend_csv, CitationWindow, RatioSeries,
    TurnaroundFilter,
};
use sciline_core::regress::{
    build_covariates, model_table, ols_fe, poisson_pml, results_csv, Design, PoissonOptions,
    RegressError, RegressionResult,
};
use sciline_core::twins::{
    attach_scores, cocitation_pairs, detect_twins, read_contexts, validate_scores, write_twins_csv,
    TwinError, TwinOptions,
};
use sciline_core::{Label, StylizationEntry};

use crate::config::PipelineConfig;
use crate::svg;

/// What one stage read, wrote and was configured with.
#[derive(Default)]
struct StageRecord {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    params: Value,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    out: PathBuf,
    corpus: Option<Corpus>,
    ingest_info: Option<(usize, Option<AttachReport>)>,
    graph: Option<CitationGraph>,
    entries: Option<Vec<StylizationEntry>>,
    hashes: HashMap<PathBuf, String>,
}

#[derive(Debug)]
pub struct StageFailure {
    pub stage: &'static str,
    pub error: anyhow::Error,
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Text of a seeded output with its leading `#` lines removed.
fn read_seeded(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().skip_while(|l| l.starts_with('#')).map(|l| format!("{l}\n")).collect())
}

fn read_table(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect());
    }
    Ok(rows)
}

fn num(row: &BTreeMap<String, String>, key: &str) -> Option<f64> {
    row.get(key)?.parse().ok()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Self {
        let out = cfg.out_dir.clone();
        Self {
            cfg,
            out,
            corpus: None,
            ingest_info: None,
            graph: None,
            entries: None,
            hashes: HashMap::new(),
        }
    }

    fn manifest_path(&self) -> PathBuf {
        self.out.join("manifest.jsonl")
    }

    /// Runs `stages` in order, appending one manifest line per stage. The
    /// first failure is recorded and stops the run.
    pub fn run(&mut self, stages: &[&'static str]) -> Result<(), StageFailure> {
        let setup = |e: anyhow::Error| StageFailure { stage: "setup", error: e };
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))
            .map_err(setup)?;
        File::create(self.manifest_path())
            .with_context(|| format!("creating {}", self.manifest_path().display()))
            .map_err(setup)?;
        for &stage in stages {
            let start = Instant::now();
            let result = match stage {
                "ingest" => self.ingest(),
                "stylize" => self.stylize(),
                "disrupt" => self.disrupt(),
                "recombine" => self.recombine(),
                "reception" => self.reception(),
                "twins" => self.twins(),
                "regress" => self.regress(),
                "report" => self.report(),
                other => Err(anyhow!("unknown stage {other}")),
            };
            let ms = start.elapsed().as_millis() as u64;
            let line = match &result {
                Ok(rec) => {
                    let mut inputs = serde_json::Map::new();
                    for p in &rec.inputs {
                        let h = match self.hashes.get(p) {
                            Some(h) => h.clone(),
                            None => {
                                let h = sha256_file(p).map_err(|e| StageFailure { stage, error: e })?;
                                self.hashes.insert(p.clone(), h.clone());
                                h
                            }
                        };
                        let name = p.strip_prefix(&self.out).unwrap_or(p).display().to_string();
                        inputs.insert(name, Value::String(h));
                    }
                    let outputs: Vec<String> = rec
                        .outputs
                        .iter()
                        .map(|p| p.strip_prefix(&self.out).unwrap_or(p).display().to_string())
                        .collect();
                    json!({
                        "stage": stage,
                        "status": "ok",
                        "seed": self.cfg.seed,
                        "inputs": inputs,
                        "params": rec.params,
                        "outputs": outputs,
                        "duration_ms": ms,
                    })
                }
                Err(e) => json!({
                    "stage": stage,
                    "status": "failed",
                    "seed": self.cfg.seed,
                    "error": format!("{e:#}"),
                    "duration_ms": ms,
                }),
            };
            self.append_manifest(&line).map_err(|e| StageFailure { stage, error: e })?;
            if let Err(error) = result {
                return Err(StageFailure { stage, error });
            }
        }
        Ok(())
    }

    fn append_manifest(&self, line: &Value) -> Result<()> {
        let mut f = fs::OpenOptions::new().append(true).open(self.manifest_path())?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    /// Creates `rel` under the output directory with a seed header line and
    /// hands the writer to `body`.
    fn emit<F>(&self, rec: &mut StageRecord, rel: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext == "csv" {
            writeln!(w, "# seed={}", self.cfg.seed)?;
        } else if ext == "md" {
            writeln!(w, "<!-- seed={} -->", self.cfg.seed)?;
        }
        body(&mut w)?;
        w.flush()?;
        rec.outputs.push(path);
        Ok(())
    }

    fn corpus_inputs(&self, rec: &mut StageRecord) {
        rec.inputs.extend(self.cfg.input.corpus.iter().cloned());
        rec.inputs.extend(self.cfg.input.embeddings.iter().cloned());
    }

    fn ensure_corpus(&mut self) -> Result<()> {
        if self.corpus.is_some() {
            return Ok(());
        }
        let input = &self.cfg.input;
        let corpus = load_corpus(&input.corpus, &input.schema_version)?;
        let (corpus, removed) = if input.dedupe_doi { dedupe_by_doi(corpus) } else { (corpus, 0) };
        let (corpus, attach) = match &input.embeddings {
            Some(p) => {
                let store = EmbeddingStore::read_file(p).with_context(|| format!("reading {}", p.display()))?;
                let (c, r) = corpus.attach_embeddings(store);
                (c, Some(r))
            }
            None => (corpus, None),
        };
        self.ingest_info = Some((removed, attach));
        self.corpus = Some(corpus);
        Ok(())
    }

    fn ensure_graph(&mut self) -> Result<()> {
        self.ensure_corpus()?;
        if self.graph.is_none() {
            self.graph = Some(CitationGraph::from_corpus(self.corpus.as_ref().unwrap()));
        }
        Ok(())
    }

    fn primary_scores_path(&self) -> Result<PathBuf> {
        Ok(self.out.join(format!("stylize/scores_{}.csv", self.cfg.primary()?)))
    }

    /// Primary-variant entries, from this run or a previous stylize run.
    fn load_entries(&mut self, rec: &mut StageRecord, required: bool) -> Result<bool> {
        if self.entries.is_some() {
            return Ok(true);
        }
        let path = self.primary_scores_path()?;
        if !path.is_file() {
            if required {
                bail!("needs stylization scores at {}; run the stylize stage first", path.display());
            }
            return Ok(false);
        }
        let text = read_seeded(&path)?;
        self.entries = Some(read_entries_csv(text.as_bytes())?);
        rec.inputs.push(path);
        Ok(true)
    }

    fn paper_map(&self) -> BTreeMap<String, PaperStylization> {
        paper_scores(self.entries.as_deref().unwrap_or(&[]))
    }

    fn ingest(&mut self) -> Result<StageRecord> {
        let mut rec = StageRecord::default();
        self.ensure_corpus()?;
        self.corpus_inputs(&mut rec);
        let corpus = self.corpus.as_ref().unwrap();
        let (removed, attach) = self.ingest_info.unwrap();
        let span = corpus.year_span();
        let cohorts = corpus.cohorts();
        self.emit(&mut rec, "ingest/summary.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["key", "value"])?;
            let mut put = |k: &str, v: String| c.write_record([k, v.as_str()]);
            put("papers", corpus.len().to_string())?;
            put("rejects", corpus.rejects().len().to_string())?;
            put("doi_duplicates_removed", removed.to_string())?;
            put("first_year", span.map(|s| s.0.to_string()).unwrap_or_default())?;
            put("last_year", span.map(|s| s.1.to_string()).unwrap_or_default())?;
            put("fields", corpus.known_fields().len().to_string())?;
            put("cohorts", cohorts.len().to_string())?;
            if let Some(a) = attach {
                put("embeddings_attached", a.attached.to_string())?;
                put("embeddings_missing", a.missing.to_string())?;
                put("embeddings_orphaned", a.orphans.to_string())?;
            }
            c.flush()?;
            Ok(())
        })?;
        self.emit(&mut rec, "ingest/cohorts.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["year", "field", "size"])?;
            for h in &cohorts {
                c.write_record([h.year.to_string(), h.field.clone(), h.len().to_string()])?;
            }
            c.flush()?;
            Ok(())
        })?;
        self.emit(&mut rec, "ingest/rejects.csv", |w| Ok(corpus.write_rejects(w)?))?;
        rec.params = json!({
            "schema_version": self.cfg.input.schema_version,
            "dedupe_doi": self.cfg.input.dedupe_doi,
        });
        Ok(rec)
    }

    fn stylize(&mut self) -> Result<StageRecord> {
        let mut rec = StageRecord::default();
        self.ensure_corpus()?;
        self.corpus_inputs(&mut rec);
        let variants = self.cfg.variants()?;
        let primary = self.cfg.primary()?;
        let opts = RotationOptions {
            leave_one_out: self.cfg.stylize.leave_one_out,
            ..RotationOptions::with_removal_rank(self.cfg.stylize.removal_rank)
        };
        let corpus = self.corpus.as_ref().unwrap();
        let store = corpus
            .embeddings()
            .ok_or_else(|| anyhow!("no embeddings attached to the corpus"))?;
        let cohorts = corpus.cohorts();
        let mut skipped: Vec<[String; 5]> = Vec::new();
        let mut degenerate: Vec<[String; 2]> = Vec::new();
        let mut primary_entries = Vec::new();
        for &v in &variants {
            let results: Vec<_> = cohorts
                .par_iter()
                .map(|c| (c, stylization_scores(c, store, v, &opts)))
                .collect();
            let mut entries = Vec::new();
            for (c, r) in results {
                match r {
                    Ok(s) => {
                        if s.small_cohort {
                            skipped.push([v.to_string(), c.year.to_string(), c.field.clone(), c.len().to_string(), "small_cohort".into()]);
                        }
                        degenerate.extend(s.degenerate.into_iter().map(|id| [v.to_string(), id]));
                        entries.extend(s.entries);
                    }
                    Err(e @ (ScoringError::CohortTooSmall(_) | ScoringError::AllDegenerate | ScoringError::MissingEmbedding(_))) => {
                        skipped.push([v.to_string(), c.year.to_string(), c.field.clone(), c.len().to_string(), e.to_string()]);
                    }
                    Err(e) => return Err(e).with_context(|| format!("cohort {} {}", c.year, c.field)),
                }
            }
            self.emit(&mut rec, &format!("stylize/scores_{v}.csv"), |w| Ok(write_entries_csv(&entries, w)?))?;
            if v == primary {
                primary_entries = entries;
            }
        }
        self.emit(&mut rec, "stylize/skipped.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["variant", "year", "field", "size", "reason"])?;
            for s in &skipped {
                c.write_record(s)?;
            }
            c.flush()?;
            Ok(())
        })?;
        self.emit(&mut rec, "stylize/degenerate.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["variant", "paper_id"])?;
            for d in &degenerate {
                c.write_record(d)?;
            }
            c.flush()?;
            Ok(())
        })?;

        let papers = paper_scores(&primary_entries);
        self.emit(&mut rec, "stylize/papers.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["paper_id", "year", "score", "reference", "label"])?;
            for (id, p) in &papers {
                c.write_record([id.clone(), p.year.to_string(), p.score.to_string(), p.reference.to_string(), p.label.to_string()])?;
            }
            c.flush()?;
            Ok(())
        })?;
        let mut by_year: BTreeMap<i32, (Vec<f64>, usize)> = BTreeMap::new();
        for p in papers.values() {
            let e = by_year.entry(p.year).or_default();
            e.0.push(p.score);
            e.1 += (p.label == Label::Stylized) as usize;
        }
        let yearly: Vec<(i32, usize, f64, usize)> = by_year
            .iter()
            .map(|(&y, (s, n_sty))| (y, s.len(), s.iter().sum::<f64>() / s.len() as f64, *n_sty))
            .collect();
        self.emit(&mut rec, "stylize/yearly.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["year", "n", "mean_score", "n_stylized"])?;
            for (y, n, m, s) in &yearly {
                c.write_record([y.to_string(), n.to_string(), m.to_string(), s.to_string()])?;
            }
            c.flush()?;
            Ok(())
        })?;
        let points: Vec<(f64, f64)> = yearly.iter().map(|r| (r.0 as f64, r.2)).collect();
        let trends: Vec<(String, _)> = trend_fit(&points).ok().map(|t| ("mean_score".to_string(), t)).into_iter().collect();
        self.emit(&mut rec, "stylize/trend.csv", |w| Ok(write_trend_csv(&trends, w)?))?;
        let decades = decade_distribution(&primary_entries);
        self.emit(&mut rec, "stylize/decades.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["decade", "bin_lower", "count", "decade_count", "decade_mean"])?;
            for (d, row) in &decades {
                for (b, &n) in row.histogram.iter().enumerate().filter(|x| *x.1 > 0) {
                    c.write_record([
                        d.to_string(),
                        format!("{:.2}", b as f64 * BIN_WIDTH),
                        n.to_string(),
                        row.count.to_string(),
                        row.mean.to_string(),
                    ])?;
                }
            }
            c.flush()?;
            Ok(())
        })?;
        rec.params = json!({
            "variants": variants.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            "primary": primary.to_string(),
            "removal_rank": self.cfg.stylize.removal_rank,
            "leave_one_out": self.cfg.stylize.leave_one_out,
        });
        self.entries = Some(primary_entries);
        Ok(rec)
    }

    fn labels(&self) -> BTreeMap<String, Label> {
        self.paper_map().into_iter().map(|(k, v)| (k, v.label)).collect()
    }

    fn disrupt(&mut self) -> Result<StageRecord> {
        let mut rec = StageRecord::default();
        self.ensure_graph()?;
        rec.inputs.extend(self.cfg.input.corpus.iter().cloned());
        let have_labels = self.load_entries(&mut rec, false)?;
        let g = self.graph.as_ref().unwrap();
        let mode = self.cfg.cd_prime()?;
        let profiles = compute_profiles(g, self.cfg.disrupt.min_citations, mode);
        self.emit(&mut rec, "disrupt/profiles.csv", |w| Ok(write_profiles_csv(&profiles, w)?))?;
        if have_labels {
            let ratios = disruption_ratios_by_year(&profiles, &self.labels(), g);
            self.emit(&mut rec, "disrupt/ratios.csv", |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["year", "cutoff", "p_stylized", "p_popularized", "ratio", "n_stylized", "n_popularized"])?;
                for (y, r) in &ratios {
                    c.write_record([
                        y.to_string(),
                        r.cutoff.to_string(),
                        r.p_stylized.to_string(),
                        r.p_popularized.to_string(),
                        opt(r.ratio),
                        r.n_stylized.to_string(),
                        r.n_popularized.to_string(),
                    ])?;
                }
                c.flush()?;
                Ok(())
            })?;
        }
        let pr = pagerank(g, self.cfg.disrupt.damping, self.cfg.disrupt.tol)?;
        self.emit(&mut rec, "disrupt/pagerank.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["paper_id", "pagerank"])?;
            for (id, s) in &pr.scores {
                c.write_record([id.clone(), s.to_string()])?;
            }
            c.flush()?;
            Ok(())
        })?;
        rec.params = json!({
            "min_citations": self.cfg.disrupt.min_citations,
            "cd_prime": self.cfg.disrupt.cd_prime,
            "damping": self.cfg.disrupt.damping,
            "pagerank_iterations": pr.iterations,
            "pagerank_converged": pr.converged,
        });
        Ok(rec)
    }

    fn recombine(&mut self) -> Result<StageRecord> {
        let mut rec = StageRecord::default();
        self.ensure_corpus()?;
        rec.inputs.extend(self.cfg.input.corpus.iter().cloned());
        let have_labels = self.load_entries(&mut rec, false)?;
        let corpus = self.corpus.as_ref().unwrap();
        let rc = &self.cfg.recombine;
        let (first, last) = corpus.year_span().ok_or_else(|| anyhow!("empty corpus"))?;
        let cutoff = first + rc.baseline_years;
        let baseline = baseline_pairs(corpus, cutoff);
        let mut events = detect_new_combos(corpus, &baseline);
        let opts = WalkOptions {
            dim: rc.dim,
            walks_per_node: rc.walks_per_node,
            walk_length: rc.walk_length,
            context: rc.context,
            span: rc.span,
            seed: self.cfg.seed,
        };
        if !events.is_empty() {
            assign_distances(&mut events, corpus, &opts, rc.remote_threshold)?;
        }
        self.emit(&mut rec, "recombine/events.csv", |w| Ok(write_events_csv(&events, w)?))?;
        let novelty = paper_novelty(&events);
        self.emit(&mut rec, "recombine/novelty.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["paper_id", "n_combos", "mean_distance", "remote_share", "reuse"])?;
            for (id, n) in &novelty {
                c.write_record([
                    id.clone(),
                    n.n_combos.to_string(),
                    n.mean_distance.to_string(),
                    n.remote_share.to_string(),
                    n.reuse.to_string(),
                ])?;
            }
            c.flush()?;
            Ok(())
        })?;
        if have_labels {
            let labels = self.labels();
            let mut rows = Vec::new();
            for year in cutoff..=last {
                if let Ok(s) = group_remote_stats(&events, corpus, &labels, year, RemoteStatsMode::Inclusive) {
                    for (l, n) in &s.counts {
                        rows.push([
                            year.to_string(),
                            l.to_string(),
                            opt(s.distance_ratio.get(l).copied().flatten()),
                            opt(s.remote_ratio.get(l).copied().flatten()),
                            n.to_string(),
                        ]);
                    }
                }
            }
            self.emit(&mut rec, "recombine/remote.csv", |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["year", "label", "distance_ratio", "remote_ratio", "n"])?;
                for r in &rows {
                    c.write_record(r)?;
                }
                c.flush()?;
                Ok(())
            })?;
        }
        rec.params = json!({
            "baseline_cutoff": cutoff,
            "baseline_pairs": baseline.len(),
            "events": events.len(),
            "remote_threshold": rc.remote_threshold,
            "dim": rc.dim,
            "walks_per_node": rc.walks_per_node,
            "walk_length": rc.walk_length,
            "context": rc.context,
            "span": rc.span,
        });
        Ok(rec)
    }

    fn reception(&mut self) -> Result<StageRecord> {
        let mut rec = StageRecord::default();
        self.ensure_graph()?;
        rec.inputs.extend(self.cfg.input.corpus.iter().cloned());
        let have_labels = self.load_entries(&mut rec, false)?;
        let corpus = self.corpus.as_ref().unwrap();
        let g = self.graph.as_ref().unwrap();
        let rc = &self.cfg.reception;
        let window = CitationWindow {
            inclusive_end: rc.inclusive_end,
        };
        let filter = TurnaroundFilter {
            min_days: rc.min_days,
            max_days: rc.max_days,
            include_outliers: rc.include_outliers,
        };
        let report = compute_reception(corpus, g, window, &filter);
        self.emit(&mut rec, "reception/papers.csv", |w| Ok(write_reception_csv(&report.rows, w)?))?;
        let (kept, excluded) = report.turnaround_counts();
        self.emit(&mut rec, "reception/turnaround_counts.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["outcome", "count"])?;
            c.write_record(["kept".to_string(), kept.to_string()])?;
            for (r, n) in &excluded {
                c.write_record([r.to_string(), n.to_string()])?;
            }
            c.write_record(["data_error".to_string(), report.data_errors.len().to_string()])?;
            c.flush()?;
            Ok(())
        })?;
        self.emit(&mut rec, "reception/data_errors.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["paper_id", "error"])?;
            for (id, e) in &report.data_errors {
                c.write_record([id, e])?;
            }
            c.flush()?;
            Ok(())
        })?;

        if have_labels {
            let papers = self.paper_map();
            type Pick = fn(&sciline_core::reception::ReceptionRow) -> Option<f64>;
            let metrics: [(&str, Pick); 6] = [
                ("c5", |r| Some(r.c5 as f64)),
                ("c10", |r| Some(r.c10 as f64)),
                ("citations", |r| Some(r.citation_count as f64)),
                ("citation_normalized", |r| (!r.normalization_flag).then_some(r.citation_normalized)),
                ("sb_strength", |r| r.sb_strength),
                ("turnaround_days", |r| if r.excluded_reason.is_none() { r.turnaround_days.map(|d| d as f64) } else { None }),
            ];
            let mut series: Vec<RatioSeries> = Vec::new();
            let mut pooled: Vec<RatioSeries> = Vec::new();
            let mut curves: Vec<[String; 4]> = Vec::new();
            for (name, pick) in metrics {
                let mut items = Vec::new();
                let mut points = Vec::new();
                for r in &report.rows {
                    let (Some(p), Some(v)) = (papers.get(&r.paper_id), pick(r)) else { continue };
                    items.push((p.year, p.label, v));
                    points.push((p.score, v));
                }
                series.push(ratio_series(name, &items));
                if let Some(row) = pooled_ratio(name, &items) {
                    pooled.push(RatioSeries {
                        metric: name.to_string(),
                        rows: vec![row],
                    });
                }
                if matches!(name, "c5" | "turnaround_days") {
                    if let Ok(curve) = kernel_smooth(&points, None) {
                        for (x, y) in curve.x.iter().zip(&curve.y) {
                            curves.push([name.to_string(), x.to_string(), y.to_string(), curve.bandwidth.to_string()]);
                        }
                    }
                }
            }
            self.emit(&mut rec, "reception/ratios.csv", |w| Ok(write_ratio_series_csv(&series, w)?))?;
            self.emit(&mut rec, "reception/pooled.csv", |w| Ok(write_ratio_series_csv(&pooled, w)?))?;
            self.emit(&mut rec, "reception/curves.csv", |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["metric", "score", "smoothed", "bandwidth"])?;
                for r in &curves {
                    c.write_record(r)?;
                }
                c.flush()?;
                Ok(())
            })?;
            let trends: Vec<(String, _)> = series
                .iter()
                .filter_map(|s| {
                    let pts: Vec<(f64, f64)> = s.rows.iter().filter_map(|r| Some((r.year as f64, r.ratio?))).collect();
                    trend_fit(&pts).ok().map(|t| (format!("{}_ratio", s.metric), t))
                })
                .collect();
            self.emit(&mut rec, "reception/trend.csv", |w| Ok(write_trend_csv(&trends, w)?))?;
        }
        rec.params = json!({
            "inclusive_end": rc.inclusive_end,
            "min_days": rc.min_days,
            "max_days": rc.max_days,
            "include_outliers": rc.include_outliers,
        });
        Ok(rec)
    }

    fn twins(&mut self) -> Result<StageRecord> {
        let mut rec = StageRecord::default();
        self.ensure_corpus()?;
        rec.inputs.extend(self.cfg.input.corpus.iter().cloned());
        self.load_entries(&mut rec, true)?;
        let contexts = match &self.cfg.input.contexts {
            Some(p) => {
                rec.inputs.push(p.clone());
                let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                read_contexts(BufReader::new(f))?
            }
            None => Vec::new(),
        };
        let corpus = self.corpus.as_ref().unwrap();
        let counts = cocitation_pairs(&contexts);
        let opts = TwinOptions {
            min_cocite: self.cfg.twins.min_cocite,
            refsim_threshold: self.cfg.twins.refsim_threshold,
        };
        let mut pairs = detect_twins(&counts, corpus, &opts);
        let scores: BTreeMap<String, f64> = self.paper_map().into_iter().map(|(k, v)| (k, v.score)).collect();
        attach_scores(&mut pairs, &scores, corpus, self.cfg.seed);
        self.emit(&mut rec, "twins/pairs.csv", |w| Ok(write_twins_csv(&pairs, w)?))?;

        let mut neighbors: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in self.entries.as_deref().unwrap_or(&[]) {
            neighbors.entry(e.paper_id.clone()).or_insert_with(|| e.neighbor_ids.clone());
        }
        let report = match validate_scores(&pairs, &neighbors) {
            Ok(r) => Some(r),
            Err(TwinError::NoPairs) => None,
            Err(e) => return Err(e.into()),
        };
        self.emit(&mut rec, "twins/validation.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["metric", "value"])?;
            let Some(r) = &report else {
                c.write_record(["n_pairs", "0"])?;
                c.flush()?;
                return Ok(());
            };
            let rows = [
                ("n_pairs", r.n_pairs.to_string()),
                ("pearson_r", opt(r.pearson_r)),
                ("within_0.05_twins", r.within_twins.to_string()),
                ("within_0.05_control", r.within_control.to_string()),
                ("rank_sum_p", opt(r.p_value)),
                ("mutual_5nn", r.mutual_knn.to_string()),
            ];
            for (k, v) in rows {
                c.write_record([k, v.as_str()])?;
            }
            c.flush()?;
            Ok(())
        })?;
        if let Some(r) = &report {
            self.emit(&mut rec, "twins/survival.csv", |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["threshold", "twins", "control"])?;
                for (a, b) in r.survival_twins.iter().zip(&r.survival_control) {
                    c.write_record([format!("{:.2}", a.0), a.1.to_string(), b.1.to_string()])?;
                }
                c.flush()?;
                Ok(())
            })?;
            self.emit(&mut rec, "twins/overlap.csv", |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["shared_neighbors", "pairs"])?;
                for (i, n) in r.overlap_histogram.iter().enumerate() {
                    c.write_record([i.to_string(), n.to_string()])?;
                }
                c.flush()?;
                Ok(())
            })?;
        }
        rec.params = json!({
            "contexts": contexts.len(),
            "candidate_pairs": counts.len(),
            "twin_pairs": pairs.len(),
            "min_cocite": opts.min_cocite,
            "refsim_threshold": opts.refsim_threshold,
        });
        Ok(rec)
    }

    fn regress(&mut self) -> Result<StageRecord> {
        let mut rec = StageRecord::default();
        self.ensure_graph()?;
        rec.inputs.extend(self.cfg.input.corpus.iter().cloned());
        self.load_entries(&mut rec, true)?;
        let corpus = self.corpus.as_ref().unwrap();
        let g = self.graph.as_ref().unwrap();
        let scores: BTreeMap<String, f64> = self.paper_map().into_iter().map(|(k, v)| (k, v.score)).collect();
        let rows = build_covariates(corpus, &scores);
        self.emit(&mut rec, "regress/covariates.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["paper_id", "year", "field", "s", "ts", "fs", "rc", "k_mu", "k_theta", "c_mu", "c_theta", "missing"])?;
            for r in &rows {
                c.write_record([
                    r.paper_id.clone(),
                    r.year.to_string(),
                    r.field.clone().unwrap_or_default(),
                    opt(r.s),
                    r.ts.to_string(),
                    r.fs.to_string(),
                    r.rc.to_string(),
                    opt(r.k_mu),
                    opt(r.k_theta),
                    opt(r.c_mu),
                    opt(r.c_theta),
                    r.missing().join(";"),
                ])?;
            }
            c.flush()?;
            Ok(())
        })?;

        let window = CitationWindow {
            inclusive_end: self.cfg.reception.inclusive_end,
        };
        let counts: BTreeMap<&str, (usize, usize, usize)> = corpus
            .papers()
            .iter()
            .map(|p| (p.paper_id.as_str(), citation_windows(g, &p.paper_id, window).unwrap_or((0, 0, 0))))
            .collect();
        let fe = self.cfg.fixed_effects()?;
        let mut notes: Vec<[String; 8]> = Vec::new();
        for response in &self.cfg.regress.responses {
            let y: BTreeMap<String, f64> = counts
                .iter()
                .map(|(id, c)| {
                    let v = match response.as_str() {
                        "c5" => c.0,
                        "c10" => c.1,
                        _ => c.2,
                    };
                    (id.to_string(), v as f64)
                })
                .collect();
            let design = Design::from_covariates(&rows, &y, &fe);
            let mut results = Vec::new();
            for model in &self.cfg.regress.models {
                match fit_dropping(&design, model) {
                    Ok((r, dropped)) => {
                        notes.push([
                            response.clone(),
                            model.clone(),
                            "ok".into(),
                            r.n_obs.to_string(),
                            dropped.join(";"),
                            r.dropped_rows.to_string(),
                            r.separation.to_string(),
                            String::new(),
                        ]);
                        results.push(r);
                    }
                    Err(e) => notes.push([
                        response.clone(),
                        model.clone(),
                        "failed".into(),
                        design.n().to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                        e.to_string(),
                    ]),
                }
            }
            if !results.is_empty() {
                self.emit(&mut rec, &format!("regress/{response}_table.md"), |w| {
                    writeln!(w, "Response: {response}\n")?;
                    w.write_all(model_table(&results).as_bytes())?;
                    Ok(())
                })?;
                self.emit(&mut rec, &format!("regress/{response}_results.csv"), |w| {
                    w.write_all(results_csv(&results).as_bytes())?;
                    Ok(())
                })?;
            }
        }
        self.emit(&mut rec, "regress/notes.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["response", "model", "status", "n_obs", "dropped_columns", "dropped_rows", "separation", "message"])?;
            for n in &notes {
                c.write_record(n)?;
            }
            c.flush()?;
            Ok(())
        })?;
        rec.params = json!({
            "responses": self.cfg.regress.responses,
            "models": self.cfg.regress.models,
            "fe": self.cfg.regress.fe,
        });
        Ok(rec)
    }

    fn report(&mut self) -> Result<StageRecord> {
        let mut rec = StageRecord::default();
        let comment = format!("seed={}", self.cfg.seed);
        let mut made: Vec<String> = Vec::new();
        let mut missing: Vec<String> = Vec::new();

        let yearly = self.out.join("stylize/yearly.csv");
        if yearly.is_file() {
            rec.inputs.push(yearly.clone());
            let rows = read_table(&yearly)?;
            let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((num(r, "year")?, num(r, "mean_score")?))).collect();
            let mut series = vec![svg::Series {
                name: "yearly mean".into(),
                points: pts.clone(),
                band: None,
            }];
            if let Ok(t) = trend_fit(&pts) {
                series.push(svg::Series {
                    name: format!("trend {:.4}/yr", t.beta),
                    points: t.band.iter().map(|b| (b.0, b.1)).collect(),
                    band: Some(t.band.iter().map(|b| (b.0, b.2, b.3)).collect()),
                });
            }
            let chart = svg::line_chart(&comment, "Mean stylization by year", "year", "score", &series);
            self.write_plot(&mut rec, "report/stylization_trend.svg", &chart, &mut made)?;
        } else {
            missing.push(yearly.display().to_string());
        }

        let scores = self.primary_scores_path()?;
        if scores.is_file() {
            rec.inputs.push(scores.clone());
            let entries = read_entries_csv(read_seeded(&scores)?.as_bytes())?;
            let v: Vec<f64> = entries.iter().map(|e| e.score).collect();
            if !v.is_empty() {
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let nb = 40usize;
                let width = ((hi - lo) / nb as f64).max(1e-9);
                let mut counts = vec![0usize; nb];
                for x in &v {
                    counts[(((x - lo) / width) as usize).min(nb - 1)] += 1;
                }
                let bars: Vec<(f64, f64, f64)> =
                    counts.iter().enumerate().map(|(i, &c)| (lo + i as f64 * width, width, c as f64)).collect();
                let chart = svg::bar_chart(&comment, "Stylization scores", "score", "papers", &bars);
                self.write_plot(&mut rec, "report/stylization_hist.svg", &chart, &mut made)?;
            }
        } else {
            missing.push(scores.display().to_string());
        }

        let ratios = self.out.join("reception/ratios.csv");
        if ratios.is_file() {
            rec.inputs.push(ratios.clone());
            let rows = read_table(&ratios)?;
            let series: Vec<svg::Series> = ["c5", "c10", "turnaround_days"]
                .iter()
                .map(|m| svg::Series {
                    name: m.to_string(),
                    points: rows
                        .iter()
                        .filter(|r| r.get("metric").map(String::as_str) == Some(m))
                        .filter_map(|r| Some((num(r, "year")?, num(r, "ratio")?)))
                        .collect(),
                    band: None,
                })
                .collect();
            let chart = svg::line_chart(&comment, "Stylized / popularized ratio", "year", "ratio", &series);
            self.write_plot(&mut rec, "report/reception_ratios.svg", &chart, &mut made)?;
        } else {
            missing.push(ratios.display().to_string());
        }

        let curves = self.out.join("reception/curves.csv");
        if curves.is_file() {
            rec.inputs.push(curves.clone());
            let rows = read_table(&curves)?;
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.get("metric").map(String::as_str) == Some("c5"))
                .filter_map(|r| Some((num(r, "score")?, num(r, "smoothed")?)))
                .collect();
            let series = [svg::Series {
                name: "c5".into(),
                points: pts,
                band: None,
            }];
            let chart = svg::line_chart(&comment, "Five-year citations against stylization", "score", "c5", &series);
            self.write_plot(&mut rec, "report/c5_vs_stylization.svg", &chart, &mut made)?;
        } else {
            missing.push(curves.display().to_string());
        }

        let survival = self.out.join("twins/survival.csv");
        if survival.is_file() {
            rec.inputs.push(survival.clone());
            let rows = read_table(&survival)?;
            let series: Vec<svg::Series> = ["twins", "control"]
                .iter()
                .map(|k| svg::Series {
                    name: k.to_string(),
                    points: rows.iter().filter_map(|r| Some((num(r, "threshold")?, num(r, k)?))).collect(),
                    band: None,
                })
                .collect();
            let chart = svg::line_chart(&comment, "Share of pairs with |score difference| above t", "t", "share", &series);
            self.write_plot(&mut rec, "report/twin_survival.svg", &chart, &mut made)?;
        } else {
            missing.push(survival.display().to_string());
        }

        self.emit(&mut rec, "report/index.md", |w| {
            writeln!(w, "# Plots\n")?;
            for m in &made {
                writeln!(w, "- [{m}]({m})")?;
            }
            if !missing.is_empty() {
                writeln!(w, "\nSkipped, inputs not found:\n")?;
                for m in &missing {
                    let rel = Path::new(m).strip_prefix(&self.out).map(|p| p.display().to_string()).unwrap_or(m.clone());
                    writeln!(w, "- {rel}")?;
                }
            }
            Ok(())
        })?;
        rec.params = json!({ "plots": made.len() });
        Ok(rec)
    }

    fn write_plot(&self, rec: &mut StageRecord, rel: &str, body: &str, made: &mut Vec<String>) -> Result<()> {
        self.emit(rec, rel, |w| Ok(w.write_all(body.as_bytes())?))?;
        made.push(Path::new(rel).file_name().unwrap().to_string_lossy().into_owned());
        Ok(())
    }
}

/// Fits `model`, dropping any regressor reported as collinear and refitting.
pub fn fit_dropping(design: &Design, model: &str) -> Result<(RegressionResult, Vec<String>), RegressError> {
    let mut d = design.clone();
    let mut dropped = Vec::new();
    loop {
        let r = match model {
            "poisson" => poisson_pml(&d, &PoissonOptions::default()),
            _ => ols_fe(&d),
        };
        match r {
            Err(RegressError::Collinear(name)) => {
                let Some(j) = d.names.iter().position(|n| *n == name) else {
                    return Err(RegressError::Collinear(name));
                };
                d.x = d.x.clone().remove_column(j);
                d.names.remove(j);
                dropped.push(name);
            }
            other => return other.map(|r| (r, dropped)),
        }
    }
}
