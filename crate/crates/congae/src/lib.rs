//! Network-wide anomaly detection for time series of origin-destination
//! travel-time graphs.

pub mod anomaly_eval;
pub mod backprop;
pub(crate) mod bytesio;
pub mod cli;
pub mod decoder;
pub mod encoder;
pub mod model;
pub mod nn_core;
pub mod od_graph;
pub mod training;
