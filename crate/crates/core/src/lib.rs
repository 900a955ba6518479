pub mod ablation;
pub mod backend;
pub mod changepoint;
pub mod config;
pub mod chat;
pub mod embedding;
pub mod error;
pub mod evaluate;
pub mod grouping;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod prompts;
pub mod sampler;
pub mod semantics;
pub mod summarizer;
pub mod synthetic;
pub mod util;

pub use error::{Error, Result};
