pub mod engine;
pub mod error;
pub mod feedback;
pub mod hierarchy;
pub mod hypergraph;
pub mod ingest;
pub mod predictor;
pub mod provenance;
pub mod reorder;
pub mod search;
pub mod synthetic;
