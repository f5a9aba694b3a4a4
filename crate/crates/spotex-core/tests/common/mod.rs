//! Shared proptest strategies over the domain types.
//!
//! Each test binary compiles this file separately and uses a different
//! subset of it.
#![allow(dead_code)]

use proptest::prelude::*;

use spotex_core::fingerprint::{ApObservation, Fingerprint, Mac, SignalVector};
use spotex_core::proxlog::{LogRecord, LogStore};

/// A small AP pool so that independently drawn fingerprints overlap often.
pub fn pool_mac(n: u8) -> Mac {
    Mac::from_bytes([0xaa, 0, 0, 0, 0, n])
}

pub fn client_mac(n: u8) -> Mac {
    Mac::from_bytes([2, 0, 0, 0, 0, n])
}

pub fn arb_mac() -> impl Strategy<Value = Mac> {
    any::<[u8; 6]>().prop_map(Mac::from_bytes)
}

/// Observations drawn from a pool of `pool` access points.
pub fn arb_fingerprint(t: i64, pool: u8) -> impl Strategy<Value = Fingerprint> {
    prop::collection::btree_map(0..pool, -100..=0i32, 0..=usize::from(pool))
        .prop_map(move |obs| {
            Fingerprint::new(
                t,
                obs.into_iter().map(|(m, rssi)| {
                    ApObservation::new(format!("net{m}"), pool_mac(m), rssi).unwrap()
                }),
            )
            .unwrap()
        })
}

/// `count` signal vectors over one shared universe, entries in [-100, -1].
pub fn arb_shared_universe_vectors(
    count: usize,
    max_len: usize,
) -> impl Strategy<Value = Vec<SignalVector>> {
    prop::collection::btree_set(arb_mac(), 1..=max_len).prop_flat_map(move |universe| {
        let macs: Vec<Mac> = universe.into_iter().collect();
        let n = macs.len();
        prop::collection::vec(
            prop::collection::vec(-100.0..=-1.0f64, n),
            count..=count,
        )
        .prop_map(move |value_rows| {
            value_rows
                .into_iter()
                .map(|values| {
                    SignalVector::from_entries(macs.iter().copied().zip(values)).unwrap()
                })
                .collect()
        })
    })
}

/// A store over up to `max_clients` clients, each with an increasing
/// timestamp sequence. Returns the store plus the participating clients.
pub fn arb_store(
    max_clients: u8,
    max_records_per_client: usize,
) -> impl Strategy<Value = (LogStore, Vec<Mac>)> {
    let per_client = prop::collection::vec(
        (1..4000i64, arb_fingerprint(0, 4)),
        1..=max_records_per_client,
    );
    prop::collection::vec(per_client, 1..=usize::from(max_clients)).prop_map(|clients| {
        let mut store = LogStore::new();
        let mut macs = Vec::new();
        for (ci, steps) in clients.into_iter().enumerate() {
            let client = client_mac(ci as u8 + 1);
            macs.push(client);
            let mut t = 0i64;
            for (gap, fp) in steps {
                t += gap;
                let fp = Fingerprint::new(t, fp.observations().cloned()).unwrap();
                store.append(LogRecord::new(client, fp)).unwrap();
            }
        }
        (store, macs)
    })
}
