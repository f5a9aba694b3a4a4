//! Wi-Fi scan snapshots and the signal vectors derived from them.
//!
//! A scan hears a set of access points, each identified by SSID and MAC
//! address with a received signal strength in dBm. Averaging scans per
//! access point yields a [`SignalVector`]; two fingerprints are
//! *comparable* when they share an access point heard at similar
//! strength. All types here are immutable value objects after
//! construction and safe to share across threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Weakest representable signal strength in dBm.
pub const RSSI_FLOOR_DBM: i32 = -100;
/// Strongest representable signal strength in dBm.
pub const RSSI_CEIL_DBM: i32 = 0;
/// Fill value used when aligning two signal vectors over their united
/// universe: access points not measurable in one vector enter at this
/// level.
pub const DEFAULT_FILL_DBM: f64 = -100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FingerprintError {
    #[error("invalid mac address `{0}`")]
    InvalidMac(String),
    #[error("rssi {0} dBm outside [{RSSI_FLOOR_DBM}, {RSSI_CEIL_DBM}]")]
    InvalidRssi(i32),
    #[error("duplicate observation for mac {0}")]
    DuplicateMac(Mac),
    #[error("signal value {0} is not a valid dBm level")]
    InvalidSignal(f64),
    #[error("no scans")]
    NoScans,
    #[error("invalid threshold: omega must be > 0, got {0}")]
    InvalidThreshold(f64),
}

/// Hardware address of an access-point radio, canonical form
/// `aa:bb:cc:dd:ee:ff`.
///
/// Ordering is byte order, which coincides with lexicographic order of
/// the canonical lowercase rendering.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mac([u8; 6]);

impl Mac {
    pub const fn from_bytes(bytes: [u8; 6]) -> Self {
        Mac(bytes)
    }

    pub const fn bytes(self) -> [u8; 6] {
        self.0
    }
}

impl FromStr for Mac {
    type Err = FingerprintError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FingerprintError::InvalidMac(s.to_string());
        let mut bytes = [0u8; 6];
        let mut parts = s.split(':');
        for slot in &mut bytes {
            let part = parts.next().ok_or_else(bad)?;
            if part.len() != 2 || !part.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(bad());
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| bad())?;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Mac(bytes))
    }
}

impl fmt::Display for Mac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e, g] = self.0;
        write!(f, "{a:02x}:{b:02x}:{c:02x}:{d:02x}:{e:02x}:{g:02x}")
    }
}

impl fmt::Debug for Mac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mac({self})")
    }
}

impl Serialize for Mac {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Mac {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// One heard access point: network name, radio address, signal strength.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApObservation {
    ssid: String,
    mac: Mac,
    rssi: i32,
}

impl ApObservation {
    pub fn new(
        ssid: impl Into<String>,
        mac: Mac,
        rssi: i32,
    ) -> Result<Self, FingerprintError> {
        if !(RSSI_FLOOR_DBM..=RSSI_CEIL_DBM).contains(&rssi) {
            return Err(FingerprintError::InvalidRssi(rssi));
        }
        Ok(Self {
            ssid: ssid.into(),
            mac,
            rssi,
        })
    }

    pub fn ssid(&self) -> &str {
        &self.ssid
    }

    pub fn mac(&self) -> Mac {
        self.mac
    }

    pub fn rssi(&self) -> i32 {
        self.rssi
    }
}

/// A timestamped scan: the wireless environment heard at one instant.
///
/// Observations are keyed by MAC; a fingerprint may be empty (the device
/// heard nothing).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    t: i64,
    observations: BTreeMap<Mac, ApObservation>,
}

impl Fingerprint {
    /// Builds a fingerprint at time `t` (milliseconds since epoch).
    /// Rejects two observations for the same MAC.
    pub fn new(
        t: i64,
        observations: impl IntoIterator<Item = ApObservation>,
    ) -> Result<Self, FingerprintError> {
        let mut map = BTreeMap::new();
        for obs in observations {
            let mac = obs.mac();
            if map.insert(mac, obs).is_some() {
                return Err(FingerprintError::DuplicateMac(mac));
            }
        }
        Ok(Self {
            t,
            observations: map,
        })
    }

    pub fn empty(t: i64) -> Self {
        Self {
            t,
            observations: BTreeMap::new(),
        }
    }

    pub fn t(&self) -> i64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn get(&self, mac: Mac) -> Option<&ApObservation> {
        self.observations.get(&mac)
    }

    /// Observations in MAC order.
    pub fn observations(&self) -> impl Iterator<Item = &ApObservation> {
        self.observations.values()
    }

    pub fn macs(&self) -> impl Iterator<Item = Mac> + '_ {
        self.observations.keys().copied()
    }

    /// True when the two environments hear at least one common radio.
    pub fn shares_access_point(&self, other: &Fingerprint) -> bool {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.macs().any(|mac| large.get(mac).is_some())
    }
}

/// Per-access-point mean signal strengths over a fixed universe.
///
/// Iteration order over the universe is deterministic: lexicographic by
/// MAC. Values are real dBm, always ≤ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVector {
    entries: BTreeMap<Mac, f64>,
}

impl SignalVector {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (Mac, f64)>,
    ) -> Result<Self, FingerprintError> {
        let mut map = BTreeMap::new();
        for (mac, value) in entries {
            if !value.is_finite() || value > 0.0 {
                return Err(FingerprintError::InvalidSignal(value));
            }
            if map.insert(mac, value).is_some() {
                return Err(FingerprintError::DuplicateMac(mac));
            }
        }
        Ok(Self { entries: map })
    }

    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, mac: Mac) -> Option<f64> {
        self.entries.get(&mac).copied()
    }

    /// The universe, in lexicographic MAC order.
    pub fn macs(&self) -> impl Iterator<Item = Mac> + '_ {
        self.entries.keys().copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (Mac, f64)> + '_ {
        self.entries.iter().map(|(m, v)| (*m, *v))
    }

    pub fn same_universe(&self, other: &SignalVector) -> bool {
        self.len() == other.len() && self.macs().eq(other.macs())
    }
}

/// Averages a nonempty list of scans into one vector of mean signal
/// strengths per access point.
///
/// The universe is the union of all MACs seen; scans in which an access
/// point is absent do not contribute to its mean.
pub fn average_vector(scans: &[Fingerprint]) -> Result<SignalVector, FingerprintError> {
    if scans.is_empty() {
        return Err(FingerprintError::NoScans);
    }
    let mut acc: BTreeMap<Mac, (f64, u32)> = BTreeMap::new();
    for scan in scans {
        for obs in scan.observations() {
            let slot = acc.entry(obs.mac()).or_insert((0.0, 0));
            slot.0 += f64::from(obs.rssi());
            slot.1 += 1;
        }
    }
    let entries = acc
        .into_iter()
        .map(|(mac, (sum, count))| (mac, sum / f64::from(count)))
        .collect();
    Ok(SignalVector { entries })
}

/// Aligns two signal vectors over the union of their universes.
///
/// Both outputs have one entry per MAC of the united universe, in
/// lexicographic MAC order; an access point missing from a vector enters
/// at `fill_dbm`.
pub fn align(a: &SignalVector, b: &SignalVector, fill_dbm: f64) -> (Vec<f64>, Vec<f64>) {
    let universe: BTreeSet<Mac> = a.macs().chain(b.macs()).collect();
    let mut va = Vec::with_capacity(universe.len());
    let mut vb = Vec::with_capacity(universe.len());
    for mac in universe {
        va.push(a.get(mac).unwrap_or(fill_dbm));
        vb.push(b.get(mac).unwrap_or(fill_dbm));
    }
    (va, vb)
}

/// Comparability predicate: true iff the two fingerprints share at least
/// one access point whose signal strengths differ by strictly less than
/// `omega_db`.
pub fn comparable(
    a: &Fingerprint,
    b: &Fingerprint,
    omega_db: f64,
) -> Result<bool, FingerprintError> {
    if !(omega_db > 0.0) {
        return Err(FingerprintError::InvalidThreshold(omega_db));
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    for obs in small.observations() {
        if let Some(other) = large.get(obs.mac()) {
            if f64::from((obs.rssi() - other.rssi()).abs()) < omega_db {
                return Ok(true);
            }
        }
    }
    Ok(false)
}
