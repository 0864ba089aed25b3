//! Reranking evaluation harness for large vision-language models used as
//! sequential recommenders.
//!
//! The pipeline samples users from an interaction log, builds leave-last-out
//! candidate sets, optionally distills each history image into a textual
//! visual summary, asks the model to rank the candidates under one of several
//! prompting strategies, parses the free-text ranking back into candidate
//! indices and reports Recall@K / NDCG@K averaged over users and repeated
//! runs.
//!
//! | module | role |
//! |---|---|
//! | [`corpus`] | logs, catalogs, sampling, evaluation instances, statistics |
//! | [`prompting`] | summary and ranking prompts for every strategy |
//! | [`client`] | chat-completions transport, mocks, retries, cache |
//! | [`parser`] | free-text ranking recovery |
//! | [`metrics`] | Recall@K, NDCG@K, aggregation |
//! | [`runner`] | experiment orchestration |
//! | [`report`] | CSV and Markdown reports |

pub mod client;
pub mod config;
pub mod corpus;
pub mod exec;
pub mod metrics;
pub mod parser;
pub mod prompting;
pub mod report;
pub mod runner;
pub mod synthetic;

pub use config::ExperimentConfig;
pub use runner::{run_experiment, Experiment, RunError};
