mod config;
mod pipeline;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, PipelineConfig};
use sciline_core::synth::{generate_corpus, SynthConfig};

#[derive(Parser)]
#[command(name = "sciline", version, about = "Stylization and reception analysis for citation corpora")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config. For `synth` this is a generator config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Corpus file(s); replaces input.corpus.
    #[arg(long, global = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    contexts: Option<PathBuf>,
    /// Primary stylization variant (knn5, knn10, pct5).
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true)]
    min_cocite: Option<usize>,
    #[arg(long, global = true)]
    refsim_threshold: Option<f64>,
    #[arg(long, global = true)]
    remote_threshold: Option<f64>,
    #[arg(long, global = true, num_args = 1..)]
    response: Vec<String>,
    #[arg(long, global = true, num_args = 1..)]
    model: Vec<String>,
    #[arg(long, global = true, num_args = 1..)]
    fe: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline, or the stages given.
    Run {
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
    },
    Ingest,
    Stylize,
    Disrupt,
    Recombine,
    Reception,
    Twins,
    Regress,
    Report,
    /// Write a synthetic corpus with known ground truth.
    Synth,
}

fn pipeline_config(g: &Global, stages: Option<Vec<String>>) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    if !g.corpus.is_empty() {
        cfg.input.corpus = g.corpus.clone();
    }
    if let Some(e) = &g.embeddings {
        cfg.input.embeddings = Some(e.clone());
    }
    if let Some(c) = &g.contexts {
        cfg.input.contexts = Some(c.clone());
    }
    if let Some(v) = &g.variant {
        cfg.stylize.primary = v.clone();
    }
    if let Some(m) = g.min_cocite {
        cfg.twins.min_cocite = m;
    }
    if let Some(t) = g.refsim_threshold {
        cfg.twins.refsim_threshold = t;
    }
    if let Some(t) = g.remote_threshold {
        cfg.recombine.remote_threshold = t;
    }
    if !g.response.is_empty() {
        cfg.regress.responses = g.response.clone();
    }
    if !g.model.is_empty() {
        cfg.regress.models = g.model.clone();
    }
    if !g.fe.is_empty() {
        cfg.regress.fe = g.fe.clone();
    }
    if stages.is_some() {
        cfg.stages = stages;
    }
    Ok(cfg)
}

fn synth_config(g: &Global) -> Result<SynthConfig, ConfigError> {
    let mut table = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.clone(),
                source,
            })?;
            text.parse::<toml::Table>().map_err(|e| ConfigError::Parse {
                path: p.clone(),
                message: e.to_string(),
            })?
        }
        None => toml::Table::new(),
    };
    if let Some(s) = g.seed {
        table.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    let name = g.config.clone().unwrap_or_else(|| PathBuf::from("<command line>"));
    let cfg: SynthConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
        path: name.clone(),
        message: e.to_string(),
    })?;
    cfg.validate().map_err(|e| ConfigError::Parse {
        path: name,
        message: e.to_string(),
    })?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    if let Some(n) = g.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    if let Command::Synth = cli.command {
        let cfg = match synth_config(g) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        };
        let out = g.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
        return match generate_corpus(&cfg, &out) {
            Ok((files, truth)) => {
                eprintln!(
                    "wrote {} papers to {} (truth: {})",
                    truth.n_papers,
                    out.display(),
                    files.truth.display()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        };
    }

    let stages = match &cli.command {
        Command::Run { stages } if stages.is_empty() => None,
        Command::Run { stages } => Some(stages.clone()),
        Command::Ingest => Some(vec!["ingest".into()]),
        Command::Stylize => Some(vec!["stylize".into()]),
        Command::Disrupt => Some(vec!["disrupt".into()]),
        Command::Recombine => Some(vec!["recombine".into()]),
        Command::Reception => Some(vec!["reception".into()]),
        Command::Twins => Some(vec!["twins".into()]),
        Command::Regress => Some(vec!["regress".into()]),
        Command::Report => Some(vec!["report".into()]),
        Command::Synth => unreachable!(),
    };
    let cfg = match pipeline_config(g, stages) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let stages = match cfg.validate() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut p = pipeline::Pipeline::new(cfg);
    match p.run(&stages) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: stage {} failed: {:#}", f.stage, f.error);
            ExitCode::from(1)
        }
    }
}
