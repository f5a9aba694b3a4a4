//! Network-proximity engine built on Wi-Fi scan fingerprints.
//!
//! The crate models the wireless environment a device hears (sets of
//! access points with signal strengths), compares environments with
//! vector and rank metrics, evaluates production rules against the live
//! scan context, keeps an append-only proximity log, detects groups of
//! co-moving clients from that log, maintains a proximity-scoped
//! check-in registry, and ships a deterministic simulator that produces
//! scan logs with known ground truth.
//!
//! With the default `parallel` feature the batch-heavy operations
//! (scenario simulation, k-nearest-neighbour scans) run on rayon;
//! building with `--no-default-features` selects the sequential
//! fallback with identical output.

pub mod checkin;
pub mod fingerprint;
pub mod groups;
pub mod metrics;
pub mod proxlog;
pub mod rules;
pub mod simulator;

pub use fingerprint::{ApObservation, Fingerprint, Mac, SignalVector};
pub use metrics::{DistanceResult, Metric, Ranking};
pub use proxlog::{LogRecord, LogStore};
pub use rules::{EvalContext, Rule, VisitHistory};
pub use simulator::Scenario;
