//! Context-sensitivity measurements for language models: persuasion and
//! susceptibility scores, the providers that supply answer distributions,
//! dataset construction, hypothesis tests, and corpus/graph statistics.

pub mod corpus;
pub mod dataset;
pub mod info_metrics;
pub mod kg;
pub mod pipeline;
pub mod prob_model;
pub mod stats;
