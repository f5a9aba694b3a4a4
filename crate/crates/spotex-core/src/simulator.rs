//! Deterministic synthetic scenarios: access points placed in a 2-D
//! venue, clients moving along waypoint paths, and a log-distance radio
//! model producing scan logs with known ground truth.
//!
//! Determinism contract: a scenario (including its seed) maps to exactly
//! one log, bit for bit. Noise comes from one ChaCha12 stream per client,
//! sub-seeded from the scenario seed and the client's index, so the
//! parallel and sequential runs produce identical output.
//!
//! A scenario is a single JSON document (`"schema": 1`):
//!
//! ```json
//! {
//!   "schema": 1,
//!   "venue": { "aps": [ { "ssid": "cafe", "mac": "aa:00:00:00:00:01",
//!                         "pos": [0.0, 0.0], "tx_ref_dbm": -40.0 } ] },
//!   "clients": [ { "mac": "02:00:00:00:00:01",
//!                  "waypoints": [ { "t": 0, "pos": [0.0, 0.0] },
//!                                 { "t": 120000, "pos": [30.0, 10.0] } ] } ],
//!   "scan_period_ms": 2000,
//!   "seed": 7,
//!   "noise_sigma_db": 0.0,
//!   "visibility_floor_dbm": -95.0
//! }
//! ```
//!
//! `scan_period_ms`, `noise_sigma_db`, `visibility_floor_dbm`, and
//! `tx_ref_dbm` may be omitted and default to 2000, 2.0, −95, and −40.

use std::fs;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::fingerprint::{ApObservation, Fingerprint, Mac, RSSI_CEIL_DBM, RSSI_FLOOR_DBM};
use crate::proxlog::LogRecord;

/// Path-loss exponent of the log-distance model.
pub const PATH_LOSS_EXPONENT: f64 = 3.0;
/// Default transmit reference level at 1 m, dBm.
pub const DEFAULT_TX_REF_DBM: f64 = -40.0;
/// Default level below which an access point drops out of a scan, dBm.
pub const DEFAULT_VISIBILITY_FLOOR_DBM: f64 = -95.0;
/// Default noise standard deviation, dB.
pub const DEFAULT_NOISE_SIGMA_DB: f64 = 2.0;
/// Default scan cadence: one scan every two seconds.
pub const DEFAULT_SCAN_PERIOD_MS: i64 = 2000;
/// Transmitter and receiver never get closer than this, metres.
pub const MIN_SEPARATION_M: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unsupported scenario schema {0}, expected 1")]
    UnsupportedSchema(u32),
    #[error("duplicate access-point mac {0}")]
    DuplicateApMac(Mac),
    #[error("duplicate client mac {0}")]
    DuplicateClientMac(Mac),
    #[error("non-finite coordinate in scenario")]
    NonFinitePosition,
    #[error("client {0} has no waypoints")]
    NoWaypoints(Mac),
    #[error("client {0} waypoints are not strictly time-increasing")]
    WaypointsOutOfOrder(Mac),
    #[error("scan_period_ms must be > 0, got {0}")]
    InvalidScanPeriod(i64),
    #[error("noise_sigma_db must be a finite value >= 0, got {0}")]
    InvalidNoiseSigma(f64),
    #[error("{0} must be finite")]
    NonFiniteParameter(&'static str),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacedAp {
    pub ssid: String,
    pub mac: Mac,
    pub pos: [f64; 2],
    #[serde(default = "default_tx_ref")]
    pub tx_ref_dbm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Venue {
    pub aps: Vec<PlacedAp>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: i64,
    pub pos: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientPath {
    pub mac: Mac,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: u32,
    pub venue: Venue,
    pub clients: Vec<ClientPath>,
    #[serde(default = "default_scan_period")]
    pub scan_period_ms: i64,
    pub seed: u64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma_db: f64,
    #[serde(default = "default_visibility_floor")]
    pub visibility_floor_dbm: f64,
}

fn default_tx_ref() -> f64 {
    DEFAULT_TX_REF_DBM
}

fn default_scan_period() -> i64 {
    DEFAULT_SCAN_PERIOD_MS
}

fn default_noise_sigma() -> f64 {
    DEFAULT_NOISE_SIGMA_DB
}

fn default_visibility_floor() -> f64 {
    DEFAULT_VISIBILITY_FLOOR_DBM
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.schema != 1 {
            return Err(SimError::UnsupportedSchema(self.schema));
        }
        if self.scan_period_ms <= 0 {
            return Err(SimError::InvalidScanPeriod(self.scan_period_ms));
        }
        if !self.noise_sigma_db.is_finite() || self.noise_sigma_db < 0.0 {
            return Err(SimError::InvalidNoiseSigma(self.noise_sigma_db));
        }
        if !self.visibility_floor_dbm.is_finite() {
            return Err(SimError::NonFiniteParameter("visibility_floor_dbm"));
        }
        let mut ap_macs = std::collections::BTreeSet::new();
        for ap in &self.venue.aps {
            if !ap.pos.iter().all(|c| c.is_finite()) {
                return Err(SimError::NonFinitePosition);
            }
            if !ap.tx_ref_dbm.is_finite() {
                return Err(SimError::NonFiniteParameter("tx_ref_dbm"));
            }
            if !ap_macs.insert(ap.mac) {
                return Err(SimError::DuplicateApMac(ap.mac));
            }
        }
        let mut client_macs = std::collections::BTreeSet::new();
        for client in &self.clients {
            if !client_macs.insert(client.mac) {
                return Err(SimError::DuplicateClientMac(client.mac));
            }
            if client.waypoints.is_empty() {
                return Err(SimError::NoWaypoints(client.mac));
            }
            for pair in client.waypoints.windows(2) {
                if pair[1].t <= pair[0].t {
                    return Err(SimError::WaypointsOutOfOrder(client.mac));
                }
            }
            for wp in &client.waypoints {
                if !wp.pos.iter().all(|c| c.is_finite()) {
                    return Err(SimError::NonFinitePosition);
                }
            }
        }
        Ok(())
    }
}

/// Log-distance path loss: `tx_ref − 10·γ·log10(d) + noise`, γ = 3,
/// clamped to the representable dBm range. Distances at or under zero
/// are treated as the minimum separation.
pub fn rssi_model(distance_m: f64, tx_ref_dbm: f64, noise_db: f64) -> f64 {
    let d = if distance_m <= 0.0 {
        MIN_SEPARATION_M
    } else {
        distance_m
    };
    let raw = tx_ref_dbm - 10.0 * PATH_LOSS_EXPONENT * d.log10() + noise_db;
    raw.clamp(f64::from(RSSI_FLOOR_DBM), f64::from(RSSI_CEIL_DBM))
}

/// Runs the scenario into scan records, globally ordered by time and
/// client. Dispatches to the rayon path when the `parallel` feature is
/// enabled; output is identical either way.
pub fn simulate(scenario: &Scenario) -> Result<Vec<LogRecord>, SimError> {
    #[cfg(feature = "parallel")]
    {
        simulate_parallel(scenario)
    }
    #[cfg(not(feature = "parallel"))]
    {
        simulate_sequential(scenario)
    }
}

/// Sequential fallback of [`simulate`]; always available.
pub fn simulate_sequential(scenario: &Scenario) -> Result<Vec<LogRecord>, SimError> {
    scenario.validate()?;
    let per_client: Vec<Vec<LogRecord>> = scenario
        .clients
        .iter()
        .enumerate()
        .map(|(idx, client)| simulate_client(scenario, idx, client))
        .collect();
    Ok(merge(per_client))
}

/// Rayon variant of [`simulate`]: clients are generated data-parallel.
#[cfg(feature = "parallel")]
pub fn simulate_parallel(scenario: &Scenario) -> Result<Vec<LogRecord>, SimError> {
    scenario.validate()?;
    let per_client: Vec<Vec<LogRecord>> = scenario
        .clients
        .par_iter()
        .enumerate()
        .map(|(idx, client)| simulate_client(scenario, idx, client))
        .collect();
    Ok(merge(per_client))
}

fn merge(per_client: Vec<Vec<LogRecord>>) -> Vec<LogRecord> {
    let mut records: Vec<LogRecord> = per_client.into_iter().flatten().collect();
    records.sort_by_key(|r| (r.t(), r.client()));
    records
}

fn sub_seed(seed: u64, client_index: usize) -> u64 {
    seed ^ (client_index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn simulate_client(scenario: &Scenario, index: usize, client: &ClientPath) -> Vec<LogRecord> {
    let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(scenario.seed, index));
    let noise = Normal::new(0.0, scenario.noise_sigma_db)
        .expect("sigma validated to be finite and nonnegative");

    let first_t = client.waypoints.first().expect("waypoints validated").t;
    let last_t = client.waypoints.last().expect("waypoints validated").t;

    let mut records = Vec::new();
    let mut t = first_t;
    while t <= last_t {
        let pos = position_at(&client.waypoints, t);
        let mut observations = Vec::new();
        for ap in &scenario.venue.aps {
            let dx = pos[0] - ap.pos[0];
            let dy = pos[1] - ap.pos[1];
            let distance = (dx * dx + dy * dy).sqrt();
            // One noise draw per (tick, AP) keeps the stream layout
            // independent of visibility outcomes.
            let value = rssi_model(distance, ap.tx_ref_dbm, noise.sample(&mut rng));
            if value < scenario.visibility_floor_dbm {
                continue;
            }
            let rssi = (value.round() as i32).clamp(RSSI_FLOOR_DBM, RSSI_CEIL_DBM);
            observations.push(
                ApObservation::new(ap.ssid.clone(), ap.mac, rssi)
                    .expect("clamped rssi is in range"),
            );
        }
        let fingerprint =
            Fingerprint::new(t, observations).expect("venue macs validated distinct");
        records.push(LogRecord::new(client.mac, fingerprint));
        t += scenario.scan_period_ms;
    }
    records
}

fn position_at(waypoints: &[Waypoint], t: i64) -> [f64; 2] {
    if let [only] = waypoints {
        return only.pos;
    }
    for pair in waypoints.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if t <= b.t {
            if t <= a.t {
                return a.pos;
            }
            let frac = (t - a.t) as f64 / (b.t - a.t) as f64;
            return [
                a.pos[0] + frac * (b.pos[0] - a.pos[0]),
                a.pos[1] + frac * (b.pos[1] - a.pos[1]),
            ];
        }
    }
    waypoints.last().expect("nonempty").pos
}
