//! Day-ahead EV charging demand forecasting: ingestion, feature encoding, an
//! LSTM with additive attention trained by hand-written backpropagation,
//! exact grouped Shapley explanations and a synthetic data generator.

pub mod cli;
pub mod explain;
pub mod features;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;
