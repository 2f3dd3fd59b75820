//! Client clustering: budget sampling, k-means and head selection.
//!
//! k-means runs Lloyd iterations from k-means++ seeding. Points are put
//! into a canonical (lexicographic) order before seeding, so the resulting
//! partition does not depend on the order the caller passes them in.

use std::cmp::Ordering;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::ClientShard;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid budget range [{lo}, {hi}]")]
    BudgetRange { lo: usize, hi: usize },
    #[error("k = {k} needs at least {k} distinct points, found {distinct}")]
    TooFewPoints { k: usize, distinct: usize },
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("points must share one finite dimensionality")]
    BadPoints,
}

pub type FeatureVector = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centers: Vec<FeatureVector>,
    pub heads: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub sse_trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == cluster)
            .map(|(i, _)| i)
    }

    pub fn sse(&self, points: &[FeatureVector]) -> f64 {
        wcss(points, &self.labels, &self.centers)
    }
}

/// Uniform integer budget in `[lo, hi]`.
pub fn choose_budget<R: Rng + ?Sized>(
    rng: &mut R,
    lo: usize,
    hi: usize,
) -> Result<usize, ClusterError> {
    if lo < 2 || lo > hi {
        return Err(ClusterError::BudgetRange { lo, hi });
    }
    Ok(rng.random_range(lo..=hi))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn wcss(points: &[FeatureVector], labels: &[usize], centers: &[FeatureVector]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum()
}

fn nearest(point: &[f64], centers: &[FeatureVector]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(
    points: &[FeatureVector],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<FeatureVector> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        // k never exceeds the number of distinct points, so some weight is positive
        let next = WeightedIndex::new(&d2)
            .map(|w| w.sample(rng))
            .unwrap_or_else(|_| {
                d2.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            });
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// Gives every empty cluster the point farthest from its current center,
/// taken from clusters that have more than one member.
fn repair_empty(points: &[FeatureVector], labels: &mut [usize], centers: &mut [FeatureVector]) {
    let k = centers.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(&points[a], &centers[labels[a]]);
                let db = sq_dist(&points[b], &centers[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= distinct points leaves a splittable cluster");
        centers[empty] = points[far].clone();
        labels[far] = empty;
    }
}

pub fn kmeans(
    points: &[FeatureVector],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterAssignment, ClusterError> {
    if k < 2 {
        return Err(ClusterError::KTooSmall(k));
    }
    let dim = points.first().map_or(0, Vec::len);
    if points
        .iter()
        .any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite()))
    {
        return Err(ClusterError::BadPoints);
    }

    // canonical order: the partition is then independent of input order
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
    let sorted: Vec<FeatureVector> = order.iter().map(|&i| points[i].clone()).collect();
    let distinct = 1 + sorted
        .windows(2)
        .filter(|w| lex_cmp(&w[0], &w[1]).is_ne())
        .count();
    if sorted.is_empty() || k > distinct {
        return Err(ClusterError::TooFewPoints {
            k,
            distinct: if sorted.is_empty() { 0 } else { distinct },
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(&sorted, k, &mut rng);
    let mut labels: Vec<usize> = sorted.iter().map(|p| nearest(p, &centers).0).collect();
    repair_empty(&sorted, &mut labels, &mut centers);
    let mut sse_trace = vec![wcss(&sorted, &labels, &centers)];

    for _ in 0..max_iter {
        // update step
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in sorted.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((center, sum), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            *center = sum.into_iter().map(|s| s / n as f64).collect();
        }
        // assignment step, keeping the current label on exact ties
        let mut next: Vec<usize> = sorted
            .iter()
            .zip(&labels)
            .map(|(p, &cur)| {
                let (best, d) = nearest(p, &centers);
                if sq_dist(p, &centers[cur]) <= d {
                    cur
                } else {
                    best
                }
            })
            .collect();
        repair_empty(&sorted, &mut next, &mut centers);
        sse_trace.push(wcss(&sorted, &next, &centers));
        let changed = next != labels;
        labels = next;
        if !changed {
            break;
        }
    }

    let mut out_labels = vec![0; points.len()];
    for (pos, &orig) in order.iter().enumerate() {
        out_labels[orig] = labels[pos];
    }
    let mut assignment = ClusterAssignment {
        k,
        labels: out_labels,
        centers,
        heads: Vec::new(),
        sse_trace,
    };
    assignment.heads = select_heads(&assignment, points);
    Ok(assignment)
}

/// Raw clustering descriptor of a shard: `(count, index midpoint)`.
pub fn raw_client_features(shard: &ClientShard) -> FeatureVector {
    vec![
        shard.count as f64,
        (shard.min_index + shard.max_index) as f64 / 2.0,
    ]
}

/// Standardized descriptors for a cohort (zero mean, unit variance per
/// coordinate; constant coordinates map to 0).
pub fn client_features(shards: &[ClientShard]) -> Vec<FeatureVector> {
    let mut raw: Vec<FeatureVector> = shards.iter().map(raw_client_features).collect();
    if raw.is_empty() {
        return raw;
    }
    let n = raw.len() as f64;
    for c in 0..2 {
        let mean = raw.iter().map(|v| v[c]).sum::<f64>() / n;
        let var = raw.iter().map(|v| (v[c] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for v in &mut raw {
            v[c] = if sd > 0.0 { (v[c] - mean) / sd } else { 0.0 };
        }
    }
    raw
}

/// Per cluster, the member closest to the centroid; ties go to the lowest index.
pub fn select_heads(assignment: &ClusterAssignment, points: &[FeatureVector]) -> Vec<usize> {
    let mut best: Vec<Option<(usize, f64)>> = vec![None; assignment.k];
    for (i, (p, &l)) in points.iter().zip(&assignment.labels).enumerate() {
        let d = sq_dist(p, &assignment.centers[l]);
        match best[l] {
            Some((_, bd)) if bd <= d => {}
            _ => best[l] = Some((i, d)),
        }
    }
    best.into_iter()
        .map(|b| b.expect("clusters are non-empty").0)
        .collect()
}
