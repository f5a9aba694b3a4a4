//! Detection of co-moving client groups from the proximity log, and the
//! `IN_GROUP_OF(n, t)` predicate built on it.
//!
//! Starting from the querying client's current environment at time `t0`,
//! candidates are every other client with a recent record, and the
//! algorithm walks the querier's measurements backwards through the
//! lookback horizon: at each step every candidate must have a record
//! within ±Δ of the querier's measurement and that record must stay
//! comparable (shared access point within Ω) with the querier's
//! environment. [`brute_force_group`] recomputes the same definition
//! per candidate by exhaustive scan and serves as the verification
//! oracle for [`detect_group`].

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::fingerprint::{comparable, Fingerprint, Mac};
use crate::proxlog::{LogRecord, LogStore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupError {
    #[error("invalid group parameters: {0}")]
    InvalidParams(&'static str),
    #[error("no anchor measurement for client {client} at or before t0={t0}")]
    NoAnchor { client: Mac, t0: i64 },
}

/// Thresholds and origin of a group query: the candidate window Δ, the
/// comparability threshold Ω, the query origin `t0`, and the lookback
/// horizon `t_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupParams {
    delta_ms: i64,
    omega_db: f64,
    t0: i64,
    t_max_ms: i64,
}

impl GroupParams {
    pub fn new(
        delta_ms: i64,
        omega_db: f64,
        t0: i64,
        t_max_ms: i64,
    ) -> Result<Self, GroupError> {
        if delta_ms <= 0 {
            return Err(GroupError::InvalidParams("delta must be > 0"));
        }
        if !(omega_db > 0.0) {
            return Err(GroupError::InvalidParams("omega must be > 0"));
        }
        if t_max_ms < delta_ms {
            return Err(GroupError::InvalidParams("t_max must be >= delta"));
        }
        Ok(Self {
            delta_ms,
            omega_db,
            t0,
            t_max_ms,
        })
    }

    pub fn delta_ms(&self) -> i64 {
        self.delta_ms
    }

    pub fn omega_db(&self) -> f64 {
        self.omega_db
    }

    pub fn t0(&self) -> i64 {
        self.t0
    }

    pub fn t_max_ms(&self) -> i64 {
        self.t_max_ms
    }
}

fn is_comparable(a: &Fingerprint, b: &Fingerprint, omega_db: f64) -> bool {
    comparable(a, b, omega_db).expect("omega validated by GroupParams::new")
}

/// Looks up the querying client's anchor measurement (latest at or
/// before `t0`) and runs [`detect_group_from`] from it.
pub fn detect_group(
    store: &LogStore,
    client: Mac,
    params: &GroupParams,
) -> Result<BTreeSet<Mac>, GroupError> {
    let anchor = store
        .latest_at_or_before(client, params.t0)
        .ok_or(GroupError::NoAnchor {
            client,
            t0: params.t0,
        })?;
    detect_group_from(store, client, anchor.fingerprint(), params)
}

/// The incremental group walk, given the querying client's starting
/// environment explicitly. Returns the surviving candidate MACs; never
/// contains the querying client.
pub fn detect_group_from(
    store: &LogStore,
    client: Mac,
    start_env: &Fingerprint,
    params: &GroupParams,
) -> Result<BTreeSet<Mac>, GroupError> {
    let (delta, omega) = (params.delta_ms, params.omega_db);

    // Candidate seeding: the latest record per other client in
    // [t0 - delta, t0]. Window iteration is time-ordered, so the last
    // write per client wins.
    let mut candidates: BTreeMap<Mac, &Fingerprint> = BTreeMap::new();
    let window = store
        .query_window(params.t0 - delta, params.t0, Some(client))
        .expect("delta > 0 keeps the window ordered");
    for rec in window {
        candidates.insert(rec.client(), rec.fingerprint());
    }
    if candidates.is_empty() {
        return Ok(BTreeSet::new());
    }

    candidates.retain(|_, env| is_comparable(env, start_env, omega));
    if candidates.is_empty() {
        return Ok(BTreeSet::new());
    }

    // Backward walk over the querier's own measurements.
    let mut t = params.t0;
    while t > params.t0 - params.t_max_ms {
        // No earlier measurement: the data is exhausted and the walk
        // ends with the current survivors.
        let Some(prev) = store.previous_measurement(client, t) else {
            break;
        };
        t = prev.t();
        let env = prev.fingerprint();

        // Refresh each candidate from its latest record within t ± delta;
        // candidates without new data drop out.
        let mut refreshed: BTreeMap<Mac, &Fingerprint> = BTreeMap::new();
        for mac in candidates.keys() {
            if let Some(rec) = store.client_window(*mac, t - delta, t + delta).last() {
                refreshed.insert(*mac, rec.fingerprint());
            }
        }
        candidates = refreshed;
        candidates.retain(|_, cand_env| is_comparable(cand_env, env, omega));
        if candidates.is_empty() {
            break;
        }
    }

    Ok(candidates.keys().copied().collect())
}

/// Verification oracle for [`detect_group_from`]: evaluates the group
/// definition per candidate by exhaustive linear scans over the whole
/// store, with no incremental pruning and no use of the store's indexes.
pub fn brute_force_group(
    store: &LogStore,
    client: Mac,
    start_env: &Fingerprint,
    params: &GroupParams,
) -> Result<BTreeSet<Mac>, GroupError> {
    let (delta, omega) = (params.delta_ms, params.omega_db);
    let all: Vec<&LogRecord> = store.iter().collect();

    let latest_in = |who: Mac, from: i64, to: i64| -> Option<&Fingerprint> {
        all.iter()
            .filter(|r| r.client() == who && r.t() >= from && r.t() <= to)
            .last()
            .map(|r| r.fingerprint())
    };
    let prev_of = |who: Mac, before: i64| -> Option<&LogRecord> {
        all.iter()
            .filter(|r| r.client() == who && r.t() < before)
            .last()
            .copied()
    };

    let others: BTreeSet<Mac> = all
        .iter()
        .map(|r| r.client())
        .filter(|&c| c != client)
        .collect();

    let mut group = BTreeSet::new();
    'candidates: for v in others {
        let Some(env_v) = latest_in(v, params.t0 - delta, params.t0) else {
            continue;
        };
        if !is_comparable(env_v, start_env, omega) {
            continue;
        }
        let mut t = params.t0;
        while t > params.t0 - params.t_max_ms {
            let Some(prev) = prev_of(client, t) else {
                break;
            };
            t = prev.t();
            let env = prev.fingerprint();
            let Some(env_v) = latest_in(v, t - delta, t + delta) else {
                continue 'candidates;
            };
            if !is_comparable(env_v, env, omega) {
                continue 'candidates;
            }
        }
        group.insert(v);
    }
    Ok(group)
}

/// True when the client travelled in a group of at least `n` people
/// (counting itself) for at least `t_secs` seconds, judged at time
/// `now`. A client with no measurement at or before `now` is simply not
/// in any group.
pub fn in_group_of(
    store: &LogStore,
    client: Mac,
    n: u32,
    t_secs: u64,
    now: i64,
    delta_ms: i64,
    omega_db: f64,
) -> Result<bool, GroupError> {
    if n < 1 {
        return Err(GroupError::InvalidParams("n must be >= 1"));
    }
    if t_secs < 1 {
        return Err(GroupError::InvalidParams("t must be >= 1 second"));
    }
    let params = GroupParams::new(delta_ms, omega_db, now, (t_secs as i64) * 1000)?;
    match detect_group(store, client, &params) {
        Ok(group) => Ok(group.len() as u64 >= u64::from(n) - 1),
        Err(GroupError::NoAnchor { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}
