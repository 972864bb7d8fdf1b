//! Pareto front extraction and the summary numbers reported for a campaign.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::EvaluationRecord;
use crate::moo::{dominates, ObjectiveVector};
use crate::space::{EnvMap, Genotype};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    /// Position of the source record in the evaluation log.
    pub record_index: usize,
    pub genotype: Genotype,
    pub env: EnvMap,
    pub objectives: ObjectiveVector,
}

/// Mutually non-dominated points, strictly ascending in peak heap (and so
/// strictly descending in wallclock).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub points: Vec<FrontPoint>,
}

impl ParetoFront {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn objectives(&self) -> Vec<ObjectiveVector> {
        self.points.iter().map(|p| p.objectives).collect()
    }
}

/// Non-dominated subset of the ok records. Records with identical
/// objectives collapse onto the earliest one.
pub fn extract_front(records: &[EvaluationRecord]) -> Result<ParetoFront> {
    let mut ok: Vec<(usize, ObjectiveVector)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_ok())
        .map(|(i, r)| (i, r.objective_vector()))
        .collect();
    if ok.is_empty() {
        return Err(Error::Data("no successful evaluations to build a front from".into()));
    }
    // Stable sort keeps archive order among equal vectors.
    ok.sort_by(|a, b| {
        a.1 .0[0]
            .total_cmp(&b.1 .0[0])
            .then(a.1 .0[1].total_cmp(&b.1 .0[1]))
    });
    let mut points = Vec::new();
    let mut best_time = f64::INFINITY;
    for (i, v) in ok {
        if v.wallclock() < best_time {
            best_time = v.wallclock();
            let r = &records[i];
            points.push(FrontPoint {
                record_index: i,
                genotype: r.genotype.clone(),
                env: r.env.clone(),
                objectives: v,
            });
        }
    }
    Ok(ParetoFront { points })
}

/// Exact dominated area of `points` inside the box bounded by `reference`.
///
/// Each point must be strictly better than the reference in both
/// objectives. Dominated or duplicate points are allowed and add nothing.
pub fn hypervolume_2d(points: &[ObjectiveVector], reference: ObjectiveVector) -> Result<f64> {
    let offending: Vec<String> = points
        .iter()
        .filter(|p| !(p.0[0] < reference.0[0] && p.0[1] < reference.0[1]))
        .map(|p| format!("({}, {})", p.0[0], p.0[1]))
        .collect();
    if !offending.is_empty() {
        return Err(Error::Data(format!(
            "front points {} do not strictly dominate the reference point ({}, {})",
            offending.join(", "),
            reference.0[0],
            reference.0[1]
        )));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.0[1].total_cmp(&b.0[1])));
    let mut area = 0.0;
    let mut ceiling = reference.0[1];
    for p in sorted {
        if p.0[1] < ceiling {
            area += (reference.0[0] - p.0[0]) * (ceiling - p.0[1]);
            ceiling = p.0[1];
        }
    }
    Ok(area)
}

/// `100 × (max − min) / min` per objective; `None` where the minimum is 0.
pub fn spans(points: &[ObjectiveVector]) -> [Option<f64>; 2] {
    std::array::from_fn(|k| {
        let (lo, hi) = min_max(points, k);
        if points.len() < 2 || hi == lo {
            Some(0.0)
        } else if lo == 0.0 {
            None
        } else {
            Some(100.0 * (hi - lo) / lo)
        }
    })
}

fn min_max(points: &[ObjectiveVector], k: usize) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.0[k]), hi.max(p.0[k]))
    })
}

/// Least-squares slope of wallclock against peak heap, both expressed as
/// percent above the front minimum. `None` for fewer than two points or a
/// degenerate (zero-minimum or zero-variance) axis.
pub fn tradeoff_slope(points: &[ObjectiveVector]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let (x0, _) = min_max(points, 0);
    let (y0, _) = min_max(points, 1);
    if x0 == 0.0 || y0 == 0.0 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| 100.0 * (p.0[0] - x0) / x0).collect();
    let ys: Vec<f64> = points.iter().map(|p| 100.0 * (p.0[1] - y0) / y0).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Indices into the front for the three recipes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Representatives {
    pub min_time: usize,
    pub min_memory: usize,
    pub knee: usize,
}

const TIE_EPS: f64 = 1e-12;

/// Picks the fastest point, the smallest-heap point, and the knee: the point
/// farthest from the line through those two extremes after min-max
/// normalization. Distance ties go to the point nearest (0.5, 0.5).
pub fn select_representatives(points: &[ObjectiveVector]) -> Representatives {
    assert!(!points.is_empty(), "select_representatives needs a nonempty front");
    let argmin = |k: usize, other: usize| {
        (0..points.len())
            .min_by(|&a, &b| {
                points[a].0[k]
                    .total_cmp(&points[b].0[k])
                    .then(points[a].0[other].total_cmp(&points[b].0[other]))
                    .then(a.cmp(&b))
            })
            .unwrap()
    };
    let min_memory = argmin(0, 1);
    let min_time = argmin(1, 0);

    let bounds = [min_max(points, 0), min_max(points, 1)];
    let norm = |p: &ObjectiveVector| -> [f64; 2] {
        std::array::from_fn(|k| {
            let (lo, hi) = bounds[k];
            if hi > lo {
                (p.0[k] - lo) / (hi - lo)
            } else {
                0.0
            }
        })
    };
    let a = norm(&points[min_memory]);
    let b = norm(&points[min_time]);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = dx.hypot(dy);
    let distance = |q: [f64; 2]| {
        if len == 0.0 {
            0.0
        } else {
            (dy * (q[0] - a[0]) - dx * (q[1] - a[1])).abs() / len
        }
    };
    let centre = |q: [f64; 2]| (q[0] - 0.5).hypot(q[1] - 0.5);

    let mut knee = min_memory;
    let mut best = (distance(a), centre(a));
    for (i, p) in points.iter().enumerate() {
        let q = norm(p);
        let cand = (distance(q), centre(q));
        let better = cand.0 > best.0 + TIE_EPS || ((cand.0 - best.0).abs() <= TIE_EPS && cand.1 < best.1 - TIE_EPS);
        if better {
            knee = i;
            best = cand;
        }
    }
    Representatives {
        min_time,
        min_memory,
        knee,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontAnalytics {
    pub hypervolume: f64,
    pub reference_point: ObjectiveVector,
    pub front_size: usize,
    /// Percent spread per objective; `null` when that objective's minimum is 0.
    pub span_percent: [Option<f64>; 2],
    /// `null` for fronts with fewer than two points.
    pub tradeoff_slope: Option<f64>,
}

/// 1.1 × the worst ok value per objective. An objective whose worst value
/// is not positive gets `worst + 1` so the front still strictly dominates it.
pub fn reference_point(records: &[EvaluationRecord]) -> Result<ObjectiveVector> {
    let ok: Vec<_> = records.iter().filter(|r| r.is_ok()).map(|r| r.objective_vector()).collect();
    if ok.is_empty() {
        return Err(Error::Data("no successful evaluations".into()));
    }
    let (_, w0) = min_max(&ok, 0);
    let (_, w1) = min_max(&ok, 1);
    let scale = |w: f64| if w > 0.0 { 1.1 * w } else { w + 1.0 };
    Ok(ObjectiveVector([scale(w0), scale(w1)]))
}

pub fn analyze(records: &[EvaluationRecord]) -> Result<(ParetoFront, FrontAnalytics)> {
    let front = extract_front(records)?;
    let reference = reference_point(records)?;
    let pts = front.objectives();
    let analytics = FrontAnalytics {
        hypervolume: hypervolume_2d(&pts, reference)?,
        reference_point: reference,
        front_size: pts.len(),
        span_percent: spans(&pts),
        tradeoff_slope: tradeoff_slope(&pts),
    };
    Ok((front, analytics))
}

/// Brute-force front by pairwise dominance; the reference for tests.
pub fn front_by_pairwise(points: &[ObjectiveVector]) -> Vec<ObjectiveVector> {
    let mut out: Vec<ObjectiveVector> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .copied()
        .collect();
    out.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]));
    out.dedup();
    out
}
