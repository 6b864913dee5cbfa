//! Metric engine for publication corpora.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: NDJSON ingestion, DOI de-duplication, cohort views and the
//!   binary embedding store.
//! - [`embed_space`]: per-cohort stylization scores in embedding space.
//! - [`disruption`]: CD index, its per-reference decomposition, PageRank.
//! - [`recombination`]: new concept-pair combinations and their distance in
//!   random-walk concept embeddings.
//! - [`reception`]: citation windows, normalisation, sleeping-beauty strength,
//!   turnaround filters, rank-sum tests, ratio series, smoothing and trends.
//! - [`twins`]: twin-paper detection and the score validation battery.
//! - [`regress`]: covariates, fixed-effects OLS and Poisson PML.
//! - [`synth`]: seeded synthetic corpora with planted effects.

pub mod corpus;
pub mod disruption;
pub mod embed_space;
pub mod linalg;
pub mod recombination;
pub mod reception;
pub mod regress;
pub mod stats;
pub mod synth;
pub mod twins;

pub use corpus::{Corpus, EmbeddingStore, PaperRecord};
pub use embed_space::{Label, StylizationEntry, Variant};
