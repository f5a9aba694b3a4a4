//! Temporal check-in registry: opaque identities paired with the
//! fingerprint of where they checked in, expiring after a TTL.
//!
//! Places are defined purely by network proximity: a query returns only
//! identities whose fingerprint shares at least one access point with
//! the probe, ranked by vector distance. Records for the same identity
//! replace each other; the registry holds at most one per identity.
//!
//! Persisted as JSON Lines:
//!
//! ```text
//! {"identity": "nick", "t": 1000, "expires_at": 901000, "attrs": {"friends": 120}, "aps": [...]}
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{average_vector, ApObservation, Fingerprint, Mac};
use crate::metrics::{euclidean_distance, tanimoto_distance, Metric, MetricsError};

/// Default record lifetime: 15 minutes.
pub const DEFAULT_TTL_MS: i64 = 15 * 60 * 1000;

#[derive(Debug, Error)]
pub enum CheckinError {
    #[error("identity must be nonempty")]
    EmptyIdentity,
    #[error("expiry {expires_at} does not follow the fingerprint time {t}")]
    ExpiryBeforeScan { expires_at: i64, t: i64 },
    #[error("record for `{identity}` already expired at registration time {now}")]
    AlreadyExpired { identity: String, now: i64 },
    #[error("invalid threshold: must be a nonnegative number, got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One check-in: who, where (as a fingerprint), until when, plus opaque
/// caller-validated integer attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckInRecord {
    identity: String,
    fingerprint: Fingerprint,
    expires_at: i64,
    attrs: BTreeMap<String, i64>,
}

impl CheckInRecord {
    pub fn new(
        identity: impl Into<String>,
        fingerprint: Fingerprint,
        expires_at: i64,
        attrs: BTreeMap<String, i64>,
    ) -> Result<Self, CheckinError> {
        let identity = identity.into();
        if identity.is_empty() {
            return Err(CheckinError::EmptyIdentity);
        }
        if expires_at <= fingerprint.t() {
            return Err(CheckinError::ExpiryBeforeScan {
                expires_at,
                t: fingerprint.t(),
            });
        }
        Ok(Self {
            identity,
            fingerprint,
            expires_at,
            attrs,
        })
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn expires_at(&self) -> i64 {
        self.expires_at
    }

    pub fn attrs(&self) -> &BTreeMap<String, i64> {
        &self.attrs
    }
}

/// The registry: at most one record per identity, newest wins.
#[derive(Debug, Clone, Default)]
pub struct CheckInRegistry {
    records: BTreeMap<String, CheckInRecord>,
}

impl CheckInRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, identity: &str) -> Option<&CheckInRecord> {
        self.records.get(identity)
    }

    /// Records in identity order.
    pub fn iter(&self) -> impl Iterator<Item = &CheckInRecord> {
        self.records.values()
    }

    /// Stores a check-in, replacing any older record for the identity.
    /// A record already expired at `now` is rejected.
    pub fn register(&mut self, rec: CheckInRecord, now: i64) -> Result<(), CheckinError> {
        if rec.expires_at <= now {
            return Err(CheckinError::AlreadyExpired {
                identity: rec.identity,
                now,
            });
        }
        self.records.insert(rec.identity.clone(), rec);
        Ok(())
    }

    /// Identities near the probe: unexpired, sharing at least one access
    /// point with it, and within `threshold` under the chosen metric.
    /// Ascending by distance, ties by identity.
    pub fn nearby(
        &self,
        probe: &Fingerprint,
        metric: Metric,
        threshold: f64,
        now: i64,
    ) -> Result<Vec<(String, f64)>, CheckinError> {
        if !(threshold >= 0.0) {
            return Err(CheckinError::InvalidThreshold(threshold));
        }
        let probe_avg =
            average_vector(std::slice::from_ref(probe)).expect("slice of one scan is nonempty");
        let mut out = Vec::new();
        for rec in self.records.values() {
            if rec.expires_at <= now {
                continue;
            }
            // Proximity exists only through a shared access point; the
            // metric then grades it. Fill-induced distances between
            // disjoint environments never count.
            if !probe.shares_access_point(&rec.fingerprint) {
                continue;
            }
            let rec_avg = average_vector(std::slice::from_ref(&rec.fingerprint))
                .expect("slice of one scan is nonempty");
            let value = match metric {
                Metric::Euclidean => euclidean_distance(&probe_avg, &rec_avg).value,
                Metric::Tanimoto => tanimoto_distance(&probe_avg, &rec_avg)?.value,
            };
            if value <= threshold {
                out.push((rec.identity.clone(), value));
            }
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        Ok(out)
    }

    /// Drops every record with `expires_at <= now`; returns how many.
    pub fn expire(&mut self, now: i64) -> usize {
        let before = self.records.len();
        self.records.retain(|_, rec| rec.expires_at > now);
        before - self.records.len()
    }

    /// Writes the registry as JSON Lines in identity order.
    pub fn save<W: Write>(&self, mut writer: W) -> Result<(), CheckinError> {
        for rec in self.records.values() {
            let wire = RecordWire {
                identity: rec.identity.clone(),
                t: rec.fingerprint.t(),
                expires_at: rec.expires_at,
                attrs: rec.attrs.clone(),
                aps: rec
                    .fingerprint
                    .observations()
                    .map(|o| ApWire {
                        ssid: o.ssid().to_string(),
                        mac: o.mac(),
                        rssi: o.rssi(),
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut writer, &wire).map_err(|e| CheckinError::Io(e.into()))?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save_path(&self, path: impl AsRef<Path>) -> Result<(), CheckinError> {
        self.save(BufWriter::new(File::create(path)?))
    }

    /// Reads a JSON Lines registry; `#` and blank lines are ignored and
    /// errors name the 1-based line. Later lines for an identity replace
    /// earlier ones.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, CheckinError> {
        let mut registry = Self::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rec = parse_record_line(trimmed).map_err(|message| CheckinError::Line {
                line: lineno,
                message,
            })?;
            registry.records.insert(rec.identity.clone(), rec);
        }
        Ok(registry)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self, CheckinError> {
        Self::load(BufReader::new(File::open(path)?))
    }
}

#[derive(Serialize, Deserialize)]
struct ApWire {
    ssid: String,
    mac: Mac,
    rssi: i32,
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    identity: String,
    t: i64,
    expires_at: i64,
    attrs: BTreeMap<String, i64>,
    aps: Vec<ApWire>,
}

fn parse_record_line(line: &str) -> Result<CheckInRecord, String> {
    let wire: RecordWire = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obs = wire
        .aps
        .into_iter()
        .map(|a| ApObservation::new(a.ssid, a.mac, a.rssi))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let fp = Fingerprint::new(wire.t, obs).map_err(|e| e.to_string())?;
    CheckInRecord::new(wire.identity, fp, wire.expires_at, wire.attrs).map_err(|e| e.to_string())
}
