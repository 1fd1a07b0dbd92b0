//! Exact k-nearest-neighbor search under the Euclidean metric.
//!
//! Everything here is brute force on purpose: the detectors upstream need
//! exact distances with a reproducible tie order, and at the corpus sizes
//! involved a scan with a bounded heap beats index structures once you
//! account for build time. Distances accumulate in `f64` regardless of the
//! `f32` storage type, and candidates are ranked by `(distance, row index)`
//! so equal distances always resolve to the smaller index.
//!
//! Selection happens on *squared* distances (the square root is monotone,
//! so the ranking is identical) and results are reported as true Euclidean
//! distances.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Squared Euclidean distance, accumulated in `f64`. No dimension check;
/// callers validate shapes once per batch, not once per pair.
#[inline]
fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// Euclidean distance between two equal-length vectors.
pub fn euclidean_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(squared_distance(a, b).sqrt())
}

/// Heap entry ordered by (squared distance, row index); the heap keeps the
/// current k best, with the worst on top.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Distances are finite by construction (inputs are validated at
        // load), so total_cmp agrees with the usual order.
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn select_k<I: Iterator<Item = Candidate>>(candidates: I, k: usize) -> Vec<Candidate> {
    let mut heap = std::collections::BinaryHeap::with_capacity(k + 1);
    for c in candidates {
        if heap.len() < k {
            heap.push(c);
        } else if let Some(worst) = heap.peek() {
            if c < *worst {
                heap.pop();
                heap.push(c);
            }
        }
    }
    heap.into_sorted_vec()
}

/// The `k` nearest rows of `base` to `query`, restricted to the rows named
/// by `candidates`. Returns `(base_row_index, distance)` pairs sorted
/// ascending by distance, ties by smaller index.
///
/// With `exclude_zero`, rows at exactly distance zero are dropped before
/// selection — used when the query itself may sit in the base set.
pub fn knn_indexed(
    query: &[f32],
    base: &Matrix,
    candidates: &[usize],
    k: usize,
    exclude_zero: bool,
) -> Result<Vec<(usize, f64)>> {
    if query.len() != base.dims() {
        return Err(Error::DimensionMismatch {
            left: query.len(),
            right: base.dims(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let iter = candidates.iter().filter_map(|&i| {
        let d2 = squared_distance(query, base.row(i));
        if exclude_zero && d2 == 0.0 {
            None
        } else {
            Some(Candidate { d2, index: i })
        }
    });
    let selected = select_k(iter, k);
    if selected.len() < k {
        return Err(Error::InvalidArgument(format!(
            "asked for {k} neighbors but only {} candidates remain{}",
            selected.len(),
            if exclude_zero {
                " after excluding zero distances"
            } else {
                ""
            }
        )));
    }
    Ok(selected
        .into_iter()
        .map(|c| (c.index, c.d2.sqrt()))
        .collect())
}

/// The `k` smallest distances from `query` to the rows of `base`, sorted
/// ascending (ties resolved by smaller row index before dropping indices).
pub fn knn_distances(
    query: &[f32],
    base: &Matrix,
    k: usize,
    exclude_zero: bool,
) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..base.rows()).collect();
    Ok(knn_indexed(query, base, &all, k, exclude_zero)?
        .into_iter()
        .map(|(_, d)| d)
        .collect())
}

/// Neighbors of one query row from a batch search.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query_index: usize,
    /// `(base_row_index, distance)`, ascending by distance then index.
    pub neighbors: Vec<(usize, f64)>,
}

/// k-NN for every row of `queries` against `base`, parallelized across
/// queries. Results are in query order regardless of thread schedule.
pub fn knn_search_batch(
    queries: &Matrix,
    base: &Matrix,
    k: usize,
    exclude_zero: bool,
) -> Result<Vec<NeighborList>> {
    if queries.dims() != base.dims() {
        return Err(Error::DimensionMismatch {
            left: queries.dims(),
            right: base.dims(),
        });
    }
    let all: Vec<usize> = (0..base.rows()).collect();
    (0..queries.rows())
        .into_par_iter()
        .map(|qi| {
            let neighbors = knn_indexed(queries.row(qi), base, &all, k, exclude_zero)?;
            Ok(NeighborList {
                query_index: qi,
                neighbors,
            })
        })
        .collect()
}

/// Nearest row of `base` whose entry in `labels` equals `label`, as
/// `(row_index, distance)`. Ties resolve to the smaller index.
pub fn nearest_same_label(
    query: &[f32],
    base: &Matrix,
    labels: &[u32],
    label: u32,
) -> Result<(usize, f64)> {
    if query.len() != base.dims() {
        return Err(Error::DimensionMismatch {
            left: query.len(),
            right: base.dims(),
        });
    }
    if labels.len() != base.rows() {
        return Err(Error::Misaligned(format!(
            "{} labels for {} base rows",
            labels.len(),
            base.rows()
        )));
    }
    let mut best: Option<Candidate> = None;
    for (i, &l) in labels.iter().enumerate() {
        if l != label {
            continue;
        }
        let c = Candidate {
            d2: squared_distance(query, base.row(i)),
            index: i,
        };
        if best.is_none_or(|b| c < b) {
            best = Some(c);
        }
    }
    match best {
        Some(c) => Ok((c.index, c.d2.sqrt())),
        None => Err(Error::EmptyCandidates {
            label,
            context: "nearest_same_label".into(),
        }),
    }
}
