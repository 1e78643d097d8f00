//! Deterministic virtual-time harness: latency model, synthetic workloads,
//! the experiment runner and its metrics.

pub mod latency;

pub use latency::LatencyModel;
pub mod workload;
pub mod config;
pub mod runner;
pub mod experiments;
