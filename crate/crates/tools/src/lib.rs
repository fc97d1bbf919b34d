//! Operator tooling for gridfed: the command line, synthetic ntuple data
//! and the response-time benchmarks.

pub mod bench;
pub mod cli;
pub mod ntuple;
