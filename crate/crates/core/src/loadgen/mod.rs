//! Benchmark harness: registers producers and subscribers through the
//! gateway, drives concurrent publish/subscribe load and reports
//! throughput and latency.

pub mod client;
pub mod compare;
pub mod profile;
pub mod report;
pub mod runner;
pub mod sweep;

pub use client::{ApiClient, Reply};
pub use compare::{compare_modes, ModeComparison, ModePair};
pub use profile::{LoadProfile, LARGE_PAYLOAD, SMALL_PAYLOAD};
pub use report::{table, ThroughputReport};
pub use runner::{run_against, run_load, LoadError, Target};
pub use sweep::payload_sweep;
