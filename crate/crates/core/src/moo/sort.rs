//! Dominance, fast non-dominated sorting and crowding distance.

use serde::{Deserialize, Serialize};

/// (peak heap bytes, wallclock seconds); both minimized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveVector(pub [f64; 2]);

impl ObjectiveVector {
    pub fn new(peak_heap: f64, wallclock: f64) -> Self {
        ObjectiveVector([peak_heap, wallclock])
    }

    pub fn peak_heap(&self) -> f64 {
        self.0[0]
    }

    pub fn wallclock(&self) -> f64 {
        self.0[1]
    }
}

/// Minimization dominance: no worse everywhere, strictly better somewhere.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    let mut strictly = false;
    for (x, y) in a.0.iter().zip(&b.0) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// For point `i`: how many points dominate it, and which points it dominates.
fn dominance_of(points: &[ObjectiveVector], i: usize) -> (usize, Vec<usize>) {
    let mut dominated_by = 0;
    let mut dominated = Vec::new();
    for (j, q) in points.iter().enumerate() {
        if i == j {
            continue;
        }
        if dominates(&points[i], q) {
            dominated.push(j);
        } else if dominates(q, &points[i]) {
            dominated_by += 1;
        }
    }
    (dominated_by, dominated)
}

fn peel_fronts(mut counts: Vec<usize>, dominated: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Deb's fast non-dominated sort, single-threaded. Indices within a front
/// are ascending.
pub fn non_dominated_sort_seq(points: &[ObjectiveVector]) -> Vec<Vec<usize>> {
    let (counts, dominated) = (0..points.len()).map(|i| dominance_of(points, i)).unzip();
    peel_fronts(counts, dominated)
}

/// Same result as [`non_dominated_sort_seq`]; the O(N²) dominance pass runs
/// on the rayon pool.
#[cfg(feature = "parallel")]
pub fn non_dominated_sort_par(points: &[ObjectiveVector]) -> Vec<Vec<usize>> {
    use rayon::prelude::*;
    let (counts, dominated) = (0..points.len())
        .into_par_iter()
        .map(|i| dominance_of(points, i))
        .unzip();
    peel_fronts(counts, dominated)
}

/// Below this size the thread hand-off costs more than the comparisons.
#[cfg(feature = "parallel")]
const PARALLEL_SORT_THRESHOLD: usize = 512;

pub fn non_dominated_sort(points: &[ObjectiveVector]) -> Vec<Vec<usize>> {
    #[cfg(feature = "parallel")]
    if points.len() >= PARALLEL_SORT_THRESHOLD {
        return non_dominated_sort_par(points);
    }
    non_dominated_sort_seq(points)
}

/// Crowding distance of each point of one front, in input order.
pub fn crowding_distance(front: &[ObjectiveVector]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    for m in 0..2 {
        order.sort_by(|&a, &b| front[a].0[m].total_cmp(&front[b].0[m]).then(a.cmp(&b)));
        let lo = front[order[0]].0[m];
        let hi = front[order[n - 1]].0[m];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for k in 1..n - 1 {
            let i = order[k];
            if dist[i].is_finite() {
                dist[i] += (front[order[k + 1]].0[m] - front[order[k - 1]].0[m]) / range;
            }
        }
    }
    dist
}
