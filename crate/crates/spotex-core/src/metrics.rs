//! Fingerprint similarity: Euclidean and Tanimoto distances over aligned
//! signal vectors, the rank transform with Spearman correlation, and
//! k-nearest-neighbour search in signal space.
//!
//! Both distances align their inputs over the united universe with the
//! −100 dBm fill first, so vectors over different access-point sets are
//! always commensurable.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::fingerprint::{align, average_vector, Fingerprint, Mac, SignalVector, DEFAULT_FILL_DBM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("undefined Tanimoto distance: both aligned vectors are zero")]
    UndefinedTanimoto,
    #[error("incomparable rankings: universes differ")]
    IncomparableRankings,
    #[error("degenerate ranking: {0}")]
    Degenerate(&'static str),
    #[error("k must be at least 1")]
    InvalidK,
}

/// Distance family over aligned signal vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Euclidean,
    Tanimoto,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Euclidean => f.write_str("euclidean"),
            Metric::Tanimoto => f.write_str("tanimoto"),
        }
    }
}

/// A computed distance, tagged with the metric that produced it.
/// `value` is nonnegative: dB for Euclidean, unitless for Tanimoto.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceResult {
    pub value: f64,
    pub metric: Metric,
}

/// Relative signal-strength ranking over a vector's universe.
/// Rank 1 is the strongest signal; tied values receive the average of
/// the ranks they span.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    ranks: BTreeMap<Mac, f64>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn get(&self, mac: Mac) -> Option<f64> {
        self.ranks.get(&mac).copied()
    }

    /// Entries in lexicographic MAC order.
    pub fn entries(&self) -> impl Iterator<Item = (Mac, f64)> + '_ {
        self.ranks.iter().map(|(m, r)| (*m, *r))
    }

    pub fn same_universe(&self, other: &Ranking) -> bool {
        self.ranks.len() == other.ranks.len() && self.ranks.keys().eq(other.ranks.keys())
    }
}

/// L2 norm of the difference of the two vectors aligned with the
/// −100 dBm fill. Empty universes give distance 0.
pub fn euclidean_distance(a: &SignalVector, b: &SignalVector) -> DistanceResult {
    let (va, vb) = align(a, b, DEFAULT_FILL_DBM);
    let sum_sq: f64 = va
        .iter()
        .zip(&vb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    DistanceResult {
        value: sum_sq.sqrt(),
        metric: Metric::Euclidean,
    }
}

/// One minus the Tanimoto similarity of the two aligned vectors:
/// `1 − a·b / (‖a‖² + ‖b‖² − a·b)`. Grows as the vectors become more
/// dissimilar. Undefined when both aligned vectors are all zero.
pub fn tanimoto_distance(
    a: &SignalVector,
    b: &SignalVector,
) -> Result<DistanceResult, MetricsError> {
    let (va, vb) = align(a, b, DEFAULT_FILL_DBM);
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in va.iter().zip(&vb) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    let denom = norm_a + norm_b - dot;
    if denom == 0.0 {
        return Err(MetricsError::UndefinedTanimoto);
    }
    Ok(DistanceResult {
        value: 1.0 - dot / denom,
        metric: Metric::Tanimoto,
    })
}

/// Replaces absolute signal strengths by their relative ranking: the
/// numerically greatest value (e.g. −20 over −40) gets rank 1, ties get
/// average ranks.
pub fn rank_transform(v: &SignalVector) -> Ranking {
    let mut items: Vec<(Mac, f64)> = v.entries().collect();
    // Strongest first; MAC order within ties keeps the sort total.
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut ranks = BTreeMap::new();
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j < items.len() && items[j].1 == items[i].1 {
            j += 1;
        }
        // Positions i..j (0-based) span ranks i+1..=j; ties share the mean.
        let rank = (i + 1 + j) as f64 / 2.0;
        for item in &items[i..j] {
            ranks.insert(item.0, rank);
        }
        i = j;
    }
    Ranking { ranks }
}

/// Spearman rank-order correlation of two rankings over the same
/// universe: the Pearson correlation of the rank sequences, which under
/// average-rank ties stays exact. Result lies in [−1, 1].
pub fn spearman_correlation(a: &Ranking, b: &Ranking) -> Result<f64, MetricsError> {
    if !a.same_universe(b) {
        return Err(MetricsError::IncomparableRankings);
    }
    let n = a.len();
    if n < 2 {
        return Err(MetricsError::Degenerate("fewer than two ranked access points"));
    }
    let ra: Vec<f64> = a.entries().map(|(_, r)| r).collect();
    let rb: Vec<f64> = b.entries().map(|(_, r)| r).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut num = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        var_a += (x - ma) * (x - ma);
        var_b += (y - mb) * (y - mb);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(MetricsError::Degenerate("zero rank variance"));
    }
    Ok((num / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}

/// The `k` database entries closest to the query scan, ascending by
/// distance, ties broken by label. The query is averaged into a signal
/// vector first (a no-op for a single scan).
///
/// Dispatches to the rayon scan when the `parallel` feature is enabled.
pub fn knn_neighbors(
    query: &Fingerprint,
    db: &[(String, SignalVector)],
    k: usize,
    metric: Metric,
) -> Result<Vec<(String, DistanceResult)>, MetricsError> {
    #[cfg(feature = "parallel")]
    {
        knn_neighbors_parallel(query, db, k, metric)
    }
    #[cfg(not(feature = "parallel"))]
    {
        knn_neighbors_sequential(query, db, k, metric)
    }
}

/// Sequential fallback of [`knn_neighbors`]; always available.
pub fn knn_neighbors_sequential(
    query: &Fingerprint,
    db: &[(String, SignalVector)],
    k: usize,
    metric: Metric,
) -> Result<Vec<(String, DistanceResult)>, MetricsError> {
    let qv = query_vector(query, k)?;
    let scored = db
        .iter()
        .map(|(label, v)| score_entry(&qv, label, v, metric))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(take_nearest(scored, k))
}

/// Rayon variant of [`knn_neighbors`]: the distance scan runs data-parallel
/// over the database.
#[cfg(feature = "parallel")]
pub fn knn_neighbors_parallel(
    query: &Fingerprint,
    db: &[(String, SignalVector)],
    k: usize,
    metric: Metric,
) -> Result<Vec<(String, DistanceResult)>, MetricsError> {
    let qv = query_vector(query, k)?;
    let scored = db
        .par_iter()
        .map(|(label, v)| score_entry(&qv, label, v, metric))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(take_nearest(scored, k))
}

fn query_vector(query: &Fingerprint, k: usize) -> Result<SignalVector, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    Ok(average_vector(std::slice::from_ref(query)).expect("slice of one scan is nonempty"))
}

fn score_entry(
    qv: &SignalVector,
    label: &str,
    v: &SignalVector,
    metric: Metric,
) -> Result<(String, DistanceResult), MetricsError> {
    let dist = match metric {
        Metric::Euclidean => euclidean_distance(qv, v),
        Metric::Tanimoto => tanimoto_distance(qv, v)?,
    };
    Ok((label.to_string(), dist))
}

fn take_nearest(
    mut scored: Vec<(String, DistanceResult)>,
    k: usize,
) -> Vec<(String, DistanceResult)> {
    scored.sort_by(|a, b| a.1.value.total_cmp(&b.1.value).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
