//! Append-only, timestamp-ordered store of per-client scan fingerprints,
//! with the window and predecessor queries group detection needs.
//!
//! Appends must be time-ordered per client; global iteration yields
//! nondecreasing timestamps regardless of how client streams interleave.
//! The store is single-writer, any number of readers against a snapshot.
//!
//! On disk a store is JSON Lines, one record per line:
//!
//! ```text
//! {"t": 1000, "client": "02:00:00:00:00:01", "aps": [{"ssid": "cafe", "mac": "aa:00:00:00:00:01", "rssi": -47}]}
//! ```
//!
//! Lines beginning with `#` (and blank lines) are ignored.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{ApObservation, Fingerprint, Mac};

#[derive(Debug, Error)]
pub enum ProxlogError {
    #[error("out-of-order record for client {client}: t={t} precedes t={last_t}")]
    OutOfOrder { client: Mac, last_t: i64, t: i64 },
    #[error("empty window: t_from {t_from} exceeds t_to {t_to}")]
    EmptyWindow { t_from: i64, t_to: i64 },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One proximity-log entry: which client heard what, when.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    client: Mac,
    fingerprint: Fingerprint,
}

impl LogRecord {
    pub fn new(client: Mac, fingerprint: Fingerprint) -> Self {
        Self {
            client,
            fingerprint,
        }
    }

    pub fn client(&self) -> Mac {
        self.client
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn t(&self) -> i64 {
        self.fingerprint.t()
    }
}

/// In-memory proximity log. Records live in arrival order; a sorted view
/// keeps global iteration in time order and a per-client index serves
/// the group-detection queries.
#[derive(Debug, Clone, Default)]
pub struct LogStore {
    records: Vec<LogRecord>,
    sorted: Vec<u32>,
    by_client: HashMap<Mac, Vec<u32>>,
}

impl LogStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(
        records: impl IntoIterator<Item = LogRecord>,
    ) -> Result<Self, ProxlogError> {
        let mut store = Self::new();
        for rec in records {
            store.append(rec)?;
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record. Fails when the record's timestamp precedes the
    /// client's latest one (equal timestamps are allowed).
    pub fn append(&mut self, rec: LogRecord) -> Result<(), ProxlogError> {
        let t = rec.t();
        let client = rec.client();
        if let Some(indices) = self.by_client.get(&client) {
            if let Some(&last) = indices.last() {
                let last_t = self.records[last as usize].t();
                if t < last_t {
                    return Err(ProxlogError::OutOfOrder { client, last_t, t });
                }
            }
        }
        let idx = self.records.len() as u32;
        // Equal timestamps keep arrival order.
        let pos = self
            .sorted
            .partition_point(|&i| self.records[i as usize].t() <= t);
        self.sorted.insert(pos, idx);
        self.by_client.entry(client).or_default().push(idx);
        self.records.push(rec);
        Ok(())
    }

    /// All records in global time order (ties in arrival order).
    pub fn iter(&self) -> impl Iterator<Item = &LogRecord> {
        self.sorted.iter().map(|&i| &self.records[i as usize])
    }

    /// Clients present in the store, in MAC order.
    pub fn clients(&self) -> Vec<Mac> {
        let mut macs: Vec<Mac> = self.by_client.keys().copied().collect();
        macs.sort();
        macs
    }

    /// All of one client's records in time order.
    pub fn client_records(&self, client: Mac) -> Vec<&LogRecord> {
        self.by_client
            .get(&client)
            .map(|ix| ix.iter().map(|&i| &self.records[i as usize]).collect())
            .unwrap_or_default()
    }

    /// Records with `t_from <= t <= t_to` in time order, optionally
    /// excluding one client.
    pub fn query_window(
        &self,
        t_from: i64,
        t_to: i64,
        exclude_client: Option<Mac>,
    ) -> Result<Vec<&LogRecord>, ProxlogError> {
        if t_from > t_to {
            return Err(ProxlogError::EmptyWindow { t_from, t_to });
        }
        let lo = self
            .sorted
            .partition_point(|&i| self.records[i as usize].t() < t_from);
        let hi = self
            .sorted
            .partition_point(|&i| self.records[i as usize].t() <= t_to);
        Ok(self.sorted[lo..hi]
            .iter()
            .map(|&i| &self.records[i as usize])
            .filter(|r| exclude_client != Some(r.client()))
            .collect())
    }

    /// One client's records with `t_from <= t <= t_to`, in time order.
    pub fn client_window(&self, client: Mac, t_from: i64, t_to: i64) -> Vec<&LogRecord> {
        let Some(indices) = self.by_client.get(&client) else {
            return Vec::new();
        };
        let lo = indices.partition_point(|&i| self.records[i as usize].t() < t_from);
        let hi = indices.partition_point(|&i| self.records[i as usize].t() <= t_to);
        indices[lo..hi]
            .iter()
            .map(|&i| &self.records[i as usize])
            .collect()
    }

    /// The latest record of `client` strictly before `strictly_before`,
    /// if any. Among equal timestamps the latest-appended wins.
    pub fn previous_measurement(
        &self,
        client: Mac,
        strictly_before: i64,
    ) -> Option<&LogRecord> {
        let indices = self.by_client.get(&client)?;
        let pos = indices.partition_point(|&i| self.records[i as usize].t() < strictly_before);
        pos.checked_sub(1)
            .map(|p| &self.records[indices[p] as usize])
    }

    /// The latest record of `client` with `t <= at`, if any.
    pub fn latest_at_or_before(&self, client: Mac, at: i64) -> Option<&LogRecord> {
        let indices = self.by_client.get(&client)?;
        let pos = indices.partition_point(|&i| self.records[i as usize].t() <= at);
        pos.checked_sub(1)
            .map(|p| &self.records[indices[p] as usize])
    }

    /// Writes the store as JSON Lines in global time order.
    pub fn save<W: Write>(&self, writer: W) -> Result<(), ProxlogError> {
        let records: Vec<&LogRecord> = self.iter().collect();
        save_records_iter(records.into_iter(), writer)
    }

    pub fn save_path(&self, path: impl AsRef<Path>) -> Result<(), ProxlogError> {
        self.save(BufWriter::new(File::create(path)?))
    }

    /// Reads a JSON Lines scan log, enforcing per-client time order.
    /// Errors name the offending 1-based line.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, ProxlogError> {
        let mut store = Self::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rec = parse_record_line(trimmed).map_err(|message| ProxlogError::Line {
                line: lineno,
                message,
            })?;
            store.append(rec).map_err(|e| ProxlogError::Line {
                line: lineno,
                message: e.to_string(),
            })?;
        }
        Ok(store)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self, ProxlogError> {
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
    t: i64,
    client: Mac,
    aps: Vec<ApWire>,
}

fn parse_record_line(line: &str) -> Result<LogRecord, String> {
    let wire: RecordWire = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obs = wire
        .aps
        .into_iter()
        .map(|a| ApObservation::new(a.ssid, a.mac, a.rssi))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let fp = Fingerprint::new(wire.t, obs).map_err(|e| e.to_string())?;
    Ok(LogRecord::new(wire.client, fp))
}

fn record_to_wire(rec: &LogRecord) -> RecordWire {
    RecordWire {
        t: rec.t(),
        client: rec.client(),
        aps: rec
            .fingerprint()
            .observations()
            .map(|o| ApWire {
                ssid: o.ssid().to_string(),
                mac: o.mac(),
                rssi: o.rssi(),
            })
            .collect(),
    }
}

/// Writes records as JSON Lines in the order given.
pub fn save_records<'a, W: Write>(
    records: impl IntoIterator<Item = &'a LogRecord>,
    writer: W,
) -> Result<(), ProxlogError> {
    save_records_iter(records.into_iter(), writer)
}

fn save_records_iter<'a, W: Write>(
    records: impl Iterator<Item = &'a LogRecord>,
    mut writer: W,
) -> Result<(), ProxlogError> {
    for rec in records {
        serde_json::to_writer(&mut writer, &record_to_wire(rec))
            .map_err(|e| ProxlogError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mac(n: u8) -> Mac {
        Mac::from_bytes([2, 0, 0, 0, 0, n])
    }

    fn rec(client: u8, t: i64) -> LogRecord {
        let ap = ApObservation::new("net", Mac::from_bytes([0xaa, 0, 0, 0, 0, 1]), -50).unwrap();
        LogRecord::new(mac(client), Fingerprint::new(t, [ap]).unwrap())
    }

    #[test]
    fn append_to_empty_store() {
        let mut store = LogStore::new();
        store.append(rec(1, 10)).unwrap();
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn equal_timestamps_for_one_client_are_kept() {
        let mut store = LogStore::new();
        store.append(rec(1, 10)).unwrap();
        store.append(rec(1, 10)).unwrap();
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn per_client_regression_is_rejected() {
        let mut store = LogStore::new();
        store.append(rec(1, 10)).unwrap();
        let err = store.append(rec(1, 9)).unwrap_err();
        assert!(matches!(err, ProxlogError::OutOfOrder { .. }));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn interleaved_clients_may_arrive_out_of_global_order() {
        let mut store = LogStore::new();
        store.append(rec(1, 100)).unwrap();
        store.append(rec(2, 50)).unwrap();
        store.append(rec(1, 150)).unwrap();
        store.append(rec(2, 60)).unwrap();
        let ts: Vec<i64> = store.iter().map(|r| r.t()).collect();
        assert_eq!(ts, vec![50, 60, 100, 150]);
    }

    #[test]
    fn window_covering_nothing_is_empty() {
        let mut store = LogStore::new();
        store.append(rec(1, 100)).unwrap();
        assert!(store.query_window(0, 50, None).unwrap().is_empty());
    }

    #[test]
    fn window_covering_all_respects_exclusion() {
        let mut store = LogStore::new();
        store.append(rec(1, 10)).unwrap();
        store.append(rec(2, 20)).unwrap();
        store.append(rec(1, 30)).unwrap();
        let all = store.query_window(i64::MIN, i64::MAX, None).unwrap();
        assert_eq!(all.len(), 3);
        let without_one = store
            .query_window(i64::MIN, i64::MAX, Some(mac(1)))
            .unwrap();
        assert_eq!(without_one.len(), 1);
        assert_eq!(without_one[0].client(), mac(2));
    }

    #[test]
    fn window_bounds_are_inclusive() {
        let mut store = LogStore::new();
        store.append(rec(1, 10)).unwrap();
        store.append(rec(1, 20)).unwrap();
        store.append(rec(1, 30)).unwrap();
        let got: Vec<i64> = store
            .query_window(10, 20, None)
            .unwrap()
            .iter()
            .map(|r| r.t())
            .collect();
        assert_eq!(got, vec![10, 20]);
    }

    #[test]
    fn inverted_window_is_an_error() {
        let store = LogStore::new();
        assert!(matches!(
            store.query_window(10, 5, None),
            Err(ProxlogError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn previous_measurement_is_strict() {
        let mut store = LogStore::new();
        store.append(rec(1, 5)).unwrap();
        assert!(store.previous_measurement(mac(1), 10).is_some());
        assert!(store.previous_measurement(mac(1), 5).is_none());
        assert!(store.previous_measurement(mac(2), 10).is_none());
    }

    #[test]
    fn previous_measurement_on_empty_store() {
        assert!(LogStore::new().previous_measurement(mac(1), 10).is_none());
    }

    #[test]
    fn latest_at_or_before_is_inclusive() {
        let mut store = LogStore::new();
        store.append(rec(1, 5)).unwrap();
        assert_eq!(store.latest_at_or_before(mac(1), 5).unwrap().t(), 5);
        assert!(store.latest_at_or_before(mac(1), 4).is_none());
    }

    #[test]
    fn load_ignores_comments_and_blank_lines() {
        let input = "# header comment\n\n{\"t\":10,\"client\":\"02:00:00:00:00:01\",\"aps\":[]}\n";
        let store = LogStore::load(input.as_bytes()).unwrap();
        assert_eq!(store.len(), 1);
        assert!(store.iter().next().unwrap().fingerprint().is_empty());
    }

    #[test]
    fn load_reports_line_numbers() {
        let input = "{\"t\":10,\"client\":\"02:00:00:00:00:01\",\"aps\":[]}\nnot json\n";
        match LogStore::load(input.as_bytes()) {
            Err(ProxlogError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_per_client_time_regression_with_line() {
        let input = "{\"t\":10,\"client\":\"02:00:00:00:00:01\",\"aps\":[]}\n\
                     {\"t\":5,\"client\":\"02:00:00:00:00:01\",\"aps\":[]}\n";
        match LogStore::load(input.as_bytes()) {
            Err(ProxlogError::Line { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("out-of-order"), "{message}");
            }
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_invalid_rssi_with_line() {
        let input = "{\"t\":10,\"client\":\"02:00:00:00:00:01\",\"aps\":[{\"ssid\":\"x\",\"mac\":\"aa:00:00:00:00:01\",\"rssi\":5}]}\n";
        match LogStore::load(input.as_bytes()) {
            Err(ProxlogError::Line { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn save_then_load_round_trips() {
        let mut store = LogStore::new();
        store.append(rec(1, 100)).unwrap();
        store.append(rec(2, 50)).unwrap();
        store.append(rec(1, 150)).unwrap();
        let mut buf = Vec::new();
        store.save(&mut buf).unwrap();
        let reloaded = LogStore::load(buf.as_slice()).unwrap();
        assert_eq!(reloaded.len(), store.len());
        let a: Vec<_> = store.iter().collect();
        let b: Vec<_> = reloaded.iter().collect();
        assert_eq!(a, b);
    }
}
