//! Toolkit for building, refining, analyzing and evaluating question-answer
//! datasets mined from forum threads.

pub mod ingest;
pub mod cli;
pub mod eval;
pub mod llm;
pub mod model;
pub mod preprocess;
pub mod refine;
pub mod review;
pub mod rng;
pub mod source;
pub mod store;
pub mod topics;
