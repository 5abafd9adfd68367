//! Benchmark harness around the `amfvi` crate: declarative run configs, a
//! worker-pool grid runner, report/CSV emission, and SVG plots.

pub mod config;
pub mod model;
pub mod plot;
pub mod report;
pub mod runner;
