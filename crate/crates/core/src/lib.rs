//! Knowledge-graph completion that embeds triples from entity and relation
//! descriptions with a small transformer encoder and trains the embeddings
//! with a translation-structured, negative-sampling objective. Also ships
//! lookup-table baselines, filtered ranking and classification evaluation,
//! and the `lass` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod loss;
pub mod optim;
pub mod shallow;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod trainer;
