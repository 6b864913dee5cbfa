use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sciline_core::disruption::CdPrimeMode;
use sciline_core::embed_space::Variant;
use sciline_core::regress::FixedEffect;

pub const STAGES: [&str; 8] = [
    "ingest",
    "stylize",
    "disrupt",
    "recombine",
    "reception",
    "twins",
    "regress",
    "report",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing input file: {0}")]
    MissingPath(PathBuf),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub stages: Option<Vec<String>>,
    pub input: InputConfig,
    pub stylize: StylizeConfig,
    pub disrupt: DisruptConfig,
    pub recombine: RecombineConfig,
    pub reception: ReceptionConfig,
    pub twins: TwinsConfig,
    pub regress: RegressConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            stages: None,
            input: InputConfig::default(),
            stylize: StylizeConfig::default(),
            disrupt: DisruptConfig::default(),
            recombine: RecombineConfig::default(),
            reception: ReceptionConfig::default(),
            twins: TwinsConfig::default(),
            regress: RegressConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    pub corpus: Vec<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub contexts: Option<PathBuf>,
    pub dedupe_doi: bool,
    pub schema_version: String,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            corpus: Vec::new(),
            embeddings: None,
            contexts: None,
            dedupe_doi: false,
            schema_version: sciline_core::corpus::SCHEMA_VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StylizeConfig {
    pub variants: Vec<String>,
    /// Variant whose scores and labels feed every downstream stage.
    pub primary: String,
    pub removal_rank: usize,
    pub leave_one_out: bool,
}

impl Default for StylizeConfig {
    fn default() -> Self {
        Self {
            variants: vec!["knn5".into(), "knn10".into(), "pct5".into()],
            primary: "knn5".into(),
            removal_rank: 1,
            leave_one_out: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisruptConfig {
    pub min_citations: usize,
    /// `literal` or `per_reference`.
    pub cd_prime: String,
    pub damping: f64,
    pub tol: f64,
}

impl Default for DisruptConfig {
    fn default() -> Self {
        Self {
            min_citations: 1,
            cd_prime: "literal".into(),
            damping: 0.85,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecombineConfig {
    /// Leading corpus years whose concept pairs form the baseline.
    pub baseline_years: i32,
    pub remote_threshold: f64,
    pub dim: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub context: usize,
    pub span: i32,
}

impl Default for RecombineConfig {
    fn default() -> Self {
        Self {
            baseline_years: 1,
            remote_threshold: 0.5,
            dim: 32,
            walks_per_node: 10,
            walk_length: 40,
            context: 5,
            span: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceptionConfig {
    pub inclusive_end: bool,
    pub min_days: i64,
    pub max_days: i64,
    pub include_outliers: bool,
}

impl Default for ReceptionConfig {
    fn default() -> Self {
        Self {
            inclusive_end: false,
            min_days: 30,
            max_days: 1000,
            include_outliers: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwinsConfig {
    pub min_cocite: usize,
    pub refsim_threshold: f64,
}

impl Default for TwinsConfig {
    fn default() -> Self {
        Self {
            min_cocite: 3,
            refsim_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressConfig {
    /// Any of `c5`, `c10`, `citations`.
    pub responses: Vec<String>,
    /// Any of `ols`, `poisson`.
    pub models: Vec<String>,
    pub fe: Vec<String>,
}

impl Default for RegressConfig {
    fn default() -> Self {
        Self {
            responses: vec!["c5".into(), "c10".into()],
            models: vec!["ols".into(), "poisson".into()],
            fe: vec!["year".into(), "field".into()],
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a TOML file. Relative paths inside are taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.input.corpus {
            resolve(base, p);
        }
        for p in [&mut cfg.input.embeddings, &mut cfg.input.contexts].into_iter().flatten() {
            resolve(base, p);
        }
        resolve(base, &mut cfg.out_dir);
        Ok(cfg)
    }

    pub fn stage_list(&self) -> Result<Vec<&'static str>, ConfigError> {
        let Some(wanted) = &self.stages else { return Ok(STAGES.to_vec()) };
        for s in wanted {
            if !STAGES.contains(&s.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "unknown stage {s:?}; expected one of {}",
                    STAGES.join(", ")
                )));
            }
        }
        Ok(STAGES.iter().copied().filter(|s| wanted.iter().any(|w| w == s)).collect())
    }

    pub fn variants(&self) -> Result<Vec<Variant>, ConfigError> {
        let mut out: Vec<Variant> = Vec::new();
        for v in &self.stylize.variants {
            let v: Variant = v.parse().map_err(|_| ConfigError::Invalid(format!("unknown variant {v:?}")))?;
            if !out.contains(&v) {
                out.push(v);
            }
        }
        let p = self.primary()?;
        if !out.contains(&p) {
            out.insert(0, p);
        }
        Ok(out)
    }

    pub fn primary(&self) -> Result<Variant, ConfigError> {
        self.stylize
            .primary
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("unknown variant {:?}", self.stylize.primary)))
    }

    pub fn cd_prime(&self) -> Result<CdPrimeMode, ConfigError> {
        match self.disrupt.cd_prime.as_str() {
            "literal" => Ok(CdPrimeMode::Literal),
            "per_reference" => Ok(CdPrimeMode::PerReferenceCd),
            other => Err(ConfigError::Invalid(format!("cd_prime must be literal or per_reference, got {other:?}"))),
        }
    }

    pub fn fixed_effects(&self) -> Result<Vec<FixedEffect>, ConfigError> {
        self.regress
            .fe
            .iter()
            .map(|f| match f.as_str() {
                "year" => Ok(FixedEffect::Year),
                "field" => Ok(FixedEffect::Field),
                other => Err(ConfigError::Invalid(format!("unknown fixed effect {other:?}"))),
            })
            .collect()
    }

    /// Checks everything that can be checked before any stage runs.
    pub fn validate(&self) -> Result<Vec<&'static str>, ConfigError> {
        let stages = self.stage_list()?;
        self.variants()?;
        self.cd_prime()?;
        self.fixed_effects()?;
        let needs_corpus = stages.iter().any(|s| *s != "report");
        if needs_corpus && self.input.corpus.is_empty() {
            return Err(ConfigError::Invalid("no corpus input given (input.corpus or --corpus)".into()));
        }
        for p in &self.input.corpus {
            if !p.is_file() {
                return Err(ConfigError::MissingPath(p.clone()));
            }
        }
        for p in [&self.input.embeddings, &self.input.contexts].into_iter().flatten() {
            if !p.is_file() {
                return Err(ConfigError::MissingPath(p.clone()));
            }
        }
        if stages.contains(&"stylize") && self.input.embeddings.is_none() {
            return Err(ConfigError::Invalid("stylize needs input.embeddings (or --embeddings)".into()));
        }
        for r in &self.regress.responses {
            if !["c5", "c10", "citations"].contains(&r.as_str()) {
                return Err(ConfigError::Invalid(format!("unknown response {r:?}")));
            }
        }
        for m in &self.regress.models {
            if !["ols", "poisson"].contains(&m.as_str()) {
                return Err(ConfigError::Invalid(format!("unknown model {m:?}")));
            }
        }
        let t = self.recombine.remote_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(ConfigError::Invalid(format!("remote_threshold must lie in (0, 1), got {t}")));
        }
        if !(self.disrupt.damping > 0.0 && self.disrupt.damping < 1.0) {
            return Err(ConfigError::Invalid("damping must lie in (0, 1)".into()));
        }
        if self.recombine.baseline_years < 1 {
            return Err(ConfigError::Invalid("baseline_years must be at least 1".into()));
        }
        Ok(stages)
    }
}
