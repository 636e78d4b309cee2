//! Trace-driven simulator for an SSD-backed DRAM page cache whose admission
//! and eviction decisions come from a two-dimensional Gaussian mixture over
//! (page index, window timestamp).
//!
//! Pipeline: [`trace`] turns requests into samples, [`gmm`] fits and scores
//! the mixture, [`cache`] replays samples under a policy, and [`cli`] wires it
//! together behind the `gmmcache` binary.

pub mod cache;
pub mod cli;
pub mod gmm;
pub mod trace;
