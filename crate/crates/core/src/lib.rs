//! Audit harness for web search engines.
//!
//! A fleet of identical synthetic agents issues the same queries at the same
//! instants; the organic results they receive are extracted from the captured
//! result pages and compared pairwise with set-based (Jaccard) and rank-aware
//! (Rank Biased Overlap) similarity. Aggregated similarity matrices, source
//! composition profiles and agent-level permutation tests summarise how much
//! results differ between engines, browsers and otherwise identical agents.
//!
//! The crate is organised bottom-up:
//!
//! * [`metrics`] – Jaccard, agreement at depth and RBO over [`RankedList`]s.
//! * [`serp`] – URL normalisation, declarative extractors, page assembly and
//!   fixture replay.
//! * [`sim`] – a deterministic pseudo engine with tunable randomisation.
//! * [`orchestrator`] – fleet planning, session protocol, browser hygiene.
//! * [`compare`] – all-pairs similarity records and engine×engine matrices.
//! * [`classify`] – rule-based source categories and top-k composition.
//! * [`stats`] – agent-level permutation tests and significance tables.
//! * [`config`], [`store`], [`commands`] – fleet config, append-only run
//!   storage and the `run` / `analyze` / `replay` entry points.
//!
//! Data-parallel loops (pairwise comparison, permutation replicates) run on
//! rayon when the `parallel` feature is enabled and fall back to sequential
//! iteration otherwise; results are identical either way.

pub mod classify;
pub mod commands;
pub mod compare;
pub mod config;
pub mod exec;
pub mod ids;
pub mod metrics;
pub mod orchestrator;
pub mod seed;
pub mod serp;
pub mod sim;
pub mod stats;
pub mod store;

pub use exec::Execution;
pub use ids::{AgentId, BrowserId, EngineId, MachineId, QueryId};
pub use metrics::{RankedList, RboMode, RboParams, SimilarityScore};
