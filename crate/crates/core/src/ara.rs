//! Report aggregation.
//!
//! Bit reports are combined with per-position constants derived from
//! TF-IDF over the report collection. Shuffled data reports are merged into
//! a training index set, shuffled weight reports are rebuilt into parameter
//! vectors, and the vectors are combined with sample-weighted averaging.

use std::collections::BTreeSet;

use log::warn;
use thiserror::Error;

use crate::buds::{Cell, ShuffledReport, WEIGHT_QUERY_COLUMN};
use crate::BitString;

#[derive(Debug, Error, PartialEq)]
pub enum AraError {
    #[error("no reports to aggregate")]
    NoReports,
    #[error("report {index} has length {found}, expected {expected}")]
    LengthMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("report {index} has no index-range column")]
    MissingRangeColumn { index: usize },
    #[error("report {index} row {row}: malformed index range ({detail})")]
    MalformedRange {
        index: usize,
        row: usize,
        detail: String,
    },
    #[error("sample count of entry {index} must be positive")]
    ZeroCount { index: usize },
}

pub type Result<T, E = AraError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitReport {
    pub bits: BitString,
    pub source_tag: u64,
}

impl BitReport {
    pub fn new(bits: BitString, source_tag: u64) -> Self {
        Self { bits, source_tag }
    }
}

/// Per-position weights, non-negative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AraConstants {
    pub weights: Vec<f64>,
}

fn check_lengths(reports: &[BitReport]) -> Result<usize> {
    let first = reports.first().ok_or(AraError::NoReports)?;
    let len = first.bits.len();
    for (index, r) in reports.iter().enumerate() {
        if r.bits.len() != len {
            return Err(AraError::LengthMismatch {
                index,
                expected: len,
                found: r.bits.len(),
            });
        }
    }
    Ok(len)
}

fn position_counts(reports: &[BitReport], len: usize) -> Vec<usize> {
    let mut counts = vec![0usize; len];
    for r in reports {
        for p in r.bits.iter_ones() {
            counts[p] += 1;
        }
    }
    counts
}

/// TF-IDF constants over `R` reports of `L` bits.
///
/// Per position `p`: `tf = ones_p / R`, `idf = ln((R + 1) / (df_p + 1)) + 1`
/// with `df_p` the number of reports setting `p`, raw weight `tf * idf`.
/// Raw weights are normalized to sum 1; all-zero input gives uniform `1/L`.
pub fn compute_constants(reports: &[BitReport]) -> Result<AraConstants> {
    let len = check_lengths(reports)?;
    let r = reports.len() as f64;
    let ones = position_counts(reports, len);
    // bits are 0/1, so per-position term count and document frequency agree
    let raw: Vec<f64> = ones
        .iter()
        .map(|&df| {
            let tf = df as f64 / r;
            let idf = ((r + 1.0) / (df as f64 + 1.0)).ln() + 1.0;
            tf * idf
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let weights = if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / len.max(1) as f64; len]
    };
    Ok(AraConstants { weights })
}

/// Weighted per-position counts: `estimate_p = constant_p * ones_p`.
pub fn aggregate_bits(reports: &[BitReport], constants: &AraConstants) -> Result<Vec<f64>> {
    let len = check_lengths(reports)?;
    if constants.weights.len() != len {
        return Err(AraError::LengthMismatch {
            index: 0,
            expected: constants.weights.len(),
            found: len,
        });
    }
    Ok(position_counts(reports, len)
        .into_iter()
        .zip(&constants.weights)
        .map(|(n, w)| w * n as f64)
        .collect())
}

fn range_column(report: &ShuffledReport) -> Option<(usize, usize, usize)> {
    report
        .table
        .column_names()
        .iter()
        .enumerate()
        .find_map(|(c, name)| {
            let parts: Vec<&str> = name.split(':').collect();
            let min = parts.iter().position(|p| *p == "min_index")?;
            let max = parts.iter().position(|p| *p == "max_index")?;
            Some((c, min, max))
        })
}

/// Union of every reported inclusive `[min, max]` index range.
///
/// Reports must carry a composite column whose name includes both
/// `min_index` and `max_index`.
pub fn merge_data_reports(reports: &[ShuffledReport]) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for (index, report) in reports.iter().enumerate() {
        let (col, min_at, max_at) =
            range_column(report).ok_or(AraError::MissingRangeColumn { index })?;
        for (row, cells) in report.table.rows().iter().enumerate() {
            let bad = |detail: &str| AraError::MalformedRange {
                index,
                row,
                detail: detail.into(),
            };
            let tuple = cells[col].as_tuple().ok_or_else(|| bad("not a tuple"))?;
            let get = |at: usize| {
                tuple
                    .get(at)
                    .and_then(Cell::as_int)
                    .filter(|v| *v >= 0)
                    .map(|v| v as usize)
            };
            let (min, max) = match (get(min_at), get(max_at)) {
                (Some(min), Some(max)) => (min, max),
                _ => return Err(bad("bounds must be non-negative integers")),
            };
            if min > max {
                return Err(bad(&format!("min {min} > max {max}")));
            }
            out.extend(min..=max);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    MissingColumns,
    MalformedCell { row: usize },
    DuplicatePosition(usize),
    MissingPosition(usize),
    InconsistentSampleCount,
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub report: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightAggregation {
    pub accepted: Vec<(Vec<f64>, u64)>,
    pub rejected: Vec<Rejection>,
}

fn rebuild_weights(report: &ShuffledReport) -> std::result::Result<(Vec<f64>, u64), RejectReason> {
    let table = &report.table;
    let pv = table
        .column_index(WEIGHT_QUERY_COLUMN)
        .ok_or(RejectReason::MissingColumns)?;
    let sc = table
        .column_index("sample_count")
        .ok_or(RejectReason::MissingColumns)?;
    let dim = table.n_rows();
    let mut params: Vec<Option<f64>> = vec![None; dim];
    let mut count = None;
    for (row, cells) in table.rows().iter().enumerate() {
        let malformed = RejectReason::MalformedCell { row };
        let pair = cells[pv].as_tuple().ok_or(malformed.clone())?;
        let (pos, value) = match pair {
            [Cell::Int(p), Cell::Real(v)] if *p >= 0 && v.is_finite() => (*p as usize, *v),
            _ => return Err(malformed),
        };
        if pos >= dim {
            return Err(RejectReason::MissingPosition(
                (0..dim).find(|p| params[*p].is_none()).unwrap_or(0),
            ));
        }
        if params[pos].replace(value).is_some() {
            return Err(RejectReason::DuplicatePosition(pos));
        }
        let n = cells[sc].as_int().filter(|n| *n > 0).ok_or(malformed)? as u64;
        if *count.get_or_insert(n) != n {
            return Err(RejectReason::InconsistentSampleCount);
        }
    }
    let params = params
        .into_iter()
        .enumerate()
        .map(|(p, v)| v.ok_or(RejectReason::MissingPosition(p)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((params, count.ok_or(RejectReason::MissingColumns)?))
}

/// Rebuilds each report's parameter vector by position.
///
/// Reports that are incomplete, repeat a position, disagree on their sample
/// count, or differ in dimension from the first accepted report are dropped
/// and listed in `rejected`.
pub fn aggregate_weight_reports(reports: &[ShuffledReport]) -> WeightAggregation {
    let mut out = WeightAggregation::default();
    for (index, report) in reports.iter().enumerate() {
        let result = rebuild_weights(report).and_then(|(params, n)| match out.accepted.first() {
            Some((first, _)) if first.len() != params.len() => {
                Err(RejectReason::DimensionMismatch {
                    expected: first.len(),
                    found: params.len(),
                })
            }
            _ => Ok((params, n)),
        });
        match result {
            Ok(entry) => out.accepted.push(entry),
            Err(reason) => {
                warn!("dropping weight report {index}: {reason:?}");
                out.rejected.push(Rejection {
                    report: index,
                    reason,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedWeights {
    pub params: Vec<f64>,
    pub total_examples: u64,
}

/// Sums vectors pairwise (tree order) so the result does not depend on
/// how work is split.
fn tree_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// Sample-weighted mean `sum_k (n_k / N) w_k`.
pub fn fed_avg(cluster_weights: &[(Vec<f64>, u64)]) -> Result<FedWeights> {
    let (first, _) = cluster_weights.first().ok_or(AraError::NoReports)?;
    let dim = first.len();
    for (index, (w, n)) in cluster_weights.iter().enumerate() {
        if w.len() != dim {
            return Err(AraError::LengthMismatch {
                index,
                expected: dim,
                found: w.len(),
            });
        }
        if *n == 0 {
            return Err(AraError::ZeroCount { index });
        }
    }
    let total: u64 = cluster_weights.iter().map(|(_, n)| n).sum();
    let scaled = cluster_weights
        .iter()
        .map(|(w, n)| {
            let share = *n as f64 / total as f64;
            w.iter().map(|v| share * v).collect()
        })
        .collect();
    Ok(FedWeights {
        params: tree_sum(scaled),
        total_examples: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buds::{reduce_attributes, weight_report, AttributeTable, WeightMeta};
    use bitvec::prelude::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reports(rows: &[&str]) -> Vec<BitReport> {
        rows.iter()
            .enumerate()
            .map(|(i, s)| BitReport::new(s.chars().map(|c| c == '1').collect(), i as u64))
            .collect()
    }

    #[test]
    fn all_zero_reports_give_uniform_constants() {
        let c = compute_constants(&reports(&["0000", "0000"])).unwrap();
        assert_eq!(c.weights, vec![0.25; 4]);
    }

    #[test]
    fn single_report_single_bit() {
        let c = compute_constants(&reports(&["0010"])).unwrap();
        assert_eq!(c.weights, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn three_by_four_example() {
        // hand computation, R = 3, counts (3, 1, 1, 0):
        //   p0: tf 1,   idf ln(4/4)+1 = 1          -> 1
        //   p1: tf 1/3, idf ln(4/2)+1 = 1.693147.. -> 0.564382..
        //   p2: same as p1
        //   p3: 0
        let rs = reports(&["1100", "1000", "1010"]);
        let c = compute_constants(&rs).unwrap();
        let p1 = (2f64.ln() + 1.0) / 3.0;
        let total = 1.0 + 2.0 * p1;
        let expected = [1.0 / total, p1 / total, p1 / total, 0.0];
        for (a, b) in c.weights.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let est = aggregate_bits(&rs, &c).unwrap();
        let expected_est = [3.0 / total, p1 / total, p1 / total, 0.0];
        for (a, b) in est.iter().zip(expected_est) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_reports_scale_estimates() {
        let one = reports(&["1011"]);
        let c = compute_constants(&one).unwrap();
        let five: Vec<BitReport> = (0..5).map(|_| one[0].clone()).collect();
        let est = aggregate_bits(&five, &c).unwrap();
        for (p, e) in est.iter().enumerate() {
            let bit = if one[0].bits[p] { 1.0 } else { 0.0 };
            assert!((e - 5.0 * c.weights[p] * bit).abs() < 1e-12);
        }
        assert_eq!(est[1], 0.0);
    }

    #[test]
    fn constant_errors() {
        assert_eq!(compute_constants(&[]), Err(AraError::NoReports));
        assert!(matches!(
            compute_constants(&reports(&["10", "101"])),
            Err(AraError::LengthMismatch { index: 1, .. })
        ));
        let c = AraConstants { weights: vec![1.0] };
        assert!(aggregate_bits(&reports(&["10"]), &c).is_err());
    }

    fn range_report(ranges: &[(i64, i64)]) -> ShuffledReport {
        let rows = ranges
            .iter()
            .enumerate()
            .map(|(i, &(min, max))| {
                vec![
                    Cell::Int(i as i64),
                    Cell::Int(max - min + 1),
                    Cell::Int(max),
                    Cell::Int(min),
                ]
            })
            .collect();
        let table = AttributeTable::new(
            ["user_id", "count", "max_index", "min_index"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            rows,
        )
        .unwrap();
        ShuffledReport {
            table: reduce_attributes(&table, &["max_index", "min_index"]).unwrap(),
            plan_digest: [0; 32],
        }
    }

    #[test]
    fn merge_example_ranges() {
        let ranges = [
            (300, 501),
            (600, 801),
            (900, 1102),
            (1, 198),
            (487, 686),
            (1200, 1403),
        ];
        let merged = merge_data_reports(&[range_report(&ranges)]).unwrap();
        // 487:686 overlaps 300:501 (15 indices) and 600:801 (87 indices)
        let brute: BTreeSet<usize> = ranges
            .iter()
            .flat_map(|&(a, b)| a as usize..=b as usize)
            .collect();
        assert_eq!(merged, brute);
        let lengths: usize = ranges.iter().map(|(a, b)| (b - a + 1) as usize).sum();
        assert_eq!(lengths, 1209);
        assert_eq!(merged.len(), 1107);
    }

    #[test]
    fn merge_disjoint_sizes_add_up() {
        let ranges = [(300, 501), (600, 801), (900, 1102), (1, 198), (1200, 1403)];
        let merged =
            merge_data_reports(&[range_report(&ranges[..3]), range_report(&ranges[3..])]).unwrap();
        assert_eq!(merged.len(), 202 + 202 + 203 + 198 + 204);
    }

    #[test]
    fn merge_small_cases() {
        let m = merge_data_reports(&[range_report(&[(0, 9)])]).unwrap();
        assert_eq!(m, (0..10).collect());
        let m = merge_data_reports(&[range_report(&[(0, 5), (3, 9)])]).unwrap();
        assert_eq!(m.len(), 10);
        assert!(matches!(
            merge_data_reports(&[range_report(&[(5, 2)])]),
            Err(AraError::MalformedRange { .. })
        ));
        let no_range = ShuffledReport {
            table: AttributeTable::new(vec!["a".into()], vec![vec![Cell::Int(1)]]).unwrap(),
            plan_digest: [0; 32],
        };
        assert_eq!(
            merge_data_reports(&[no_range]),
            Err(AraError::MissingRangeColumn { index: 0 })
        );
    }

    #[test]
    fn merged_set_ignores_shuffling() {
        let report = range_report(&[(0, 4), (10, 12), (20, 30), (40, 41)]);
        let base = merge_data_reports(std::slice::from_ref(&report)).unwrap();
        for seed in 0..10 {
            let shuffled = crate::buds::iterative_shuffle(
                &report.table,
                3,
                2,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            assert_eq!(merge_data_reports(&[shuffled]).unwrap(), base);
        }
    }

    fn meta(n: u64) -> WeightMeta {
        WeightMeta {
            cluster_id: 0,
            sample_count: n,
        }
    }

    #[test]
    fn single_valid_report() {
        let v = vec![0.5, -1.0, 2.25];
        let r = weight_report(&v, meta(7), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let agg = aggregate_weight_reports(&[r]);
        assert_eq!(agg.accepted, vec![(v, 7)]);
        assert!(agg.rejected.is_empty());
    }

    #[test]
    fn incomplete_and_duplicate_reports_are_rejected() {
        let v = vec![0.5, -1.0, 2.25];
        let good = weight_report(&v, meta(3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();

        let mut dup = good.clone();
        let mut rows = dup.table.rows().to_vec();
        rows[1][0] = rows[0][0].clone();
        dup.table = AttributeTable::new(dup.table.column_names().to_vec(), rows).unwrap();

        let mut missing = good.clone();
        let rows: Vec<Vec<Cell>> = missing
            .table
            .rows()
            .iter()
            .filter(|r| r[0].as_tuple().unwrap()[0] != Cell::Int(1))
            .cloned()
            .collect();
        missing.table = AttributeTable::new(missing.table.column_names().to_vec(), rows).unwrap();

        let short = weight_report(&[1.0], meta(3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();

        let agg = aggregate_weight_reports(&[dup, good, missing, short]);
        assert_eq!(agg.accepted, vec![(v, 3)]);
        let reasons: Vec<_> = agg
            .rejected
            .iter()
            .map(|r| (r.report, r.reason.clone()))
            .collect();
        assert!(matches!(
            reasons[0],
            (0, RejectReason::DuplicatePosition(_))
        ));
        assert!(matches!(reasons[1], (2, RejectReason::MissingPosition(_))));
        assert_eq!(
            reasons[2],
            (
                3,
                RejectReason::DimensionMismatch {
                    expected: 3,
                    found: 1
                }
            )
        );
    }

    #[test]
    fn three_reports_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vectors: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                (0..100)
                    .map(|i| (i as f64).sin() * (k + 1) as f64)
                    .collect()
            })
            .collect();
        let reports: Vec<ShuffledReport> = vectors
            .iter()
            .enumerate()
            .map(|(k, v)| {
                weight_report(
                    v,
                    WeightMeta {
                        cluster_id: k,
                        sample_count: 10 + k as u64,
                    },
                    &mut rng,
                )
                .unwrap()
            })
            .collect();
        let agg = aggregate_weight_reports(&reports);
        for (k, (v, n)) in agg.accepted.iter().enumerate() {
            assert_eq!(v, &vectors[k]);
            assert_eq!(*n, 10 + k as u64);
        }
    }

    #[test]
    fn fed_avg_examples() {
        let w = vec![0.3, -2.0, 7.5];
        let same = fed_avg(&[(w.clone(), 4), (w.clone(), 9), (w.clone(), 1)]).unwrap();
        for (a, b) in same.params.iter().zip(&w) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
        let avg = fed_avg(&[(vec![0.0, 2.0], 1), (vec![2.0, 4.0], 3)]).unwrap();
        assert_eq!(avg.params, vec![1.5, 3.5]);
        assert_eq!(avg.total_examples, 4);
        assert!(matches!(
            fed_avg(&[(vec![0.0], 1), (vec![0.0, 1.0], 1)]),
            Err(AraError::LengthMismatch { .. })
        ));
        assert_eq!(fed_avg(&[]), Err(AraError::NoReports));
        assert_eq!(
            fed_avg(&[(vec![1.0], 0)]),
            Err(AraError::ZeroCount { index: 0 })
        );
    }

    proptest! {
        #[test]
        fn fed_avg_is_a_convex_combination(
            entries in prop::collection::vec((prop::collection::vec(-100.0f64..100.0, 5), 1u64..1000), 1..12)
        ) {
            let avg = fed_avg(&entries).unwrap();
            for p in 0..5 {
                let lo = entries.iter().map(|(w, _)| w[p]).fold(f64::INFINITY, f64::min);
                let hi = entries.iter().map(|(w, _)| w[p]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(avg.params[p] >= lo - 1e-9 && avg.params[p] <= hi + 1e-9);
            }
            let mut reversed = entries.clone();
            reversed.reverse();
            let back = fed_avg(&reversed).unwrap();
            for (a, b) in avg.params.iter().zip(&back.params) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn constants_sum_to_one_and_follow_report_order(
            rows in prop::collection::vec(prop::collection::vec(any::<bool>(), 6), 1..10)
        ) {
            let rs: Vec<BitReport> = rows.iter().enumerate()
                .map(|(i, r)| BitReport::new(r.iter().copied().collect::<BitVec<u8, Msb0>>(), i as u64)).collect();
            let c = compute_constants(&rs).unwrap();
            prop_assert!((c.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(c.weights.iter().all(|w| *w >= 0.0));
            let mut rev = rs.clone();
            rev.reverse();
            prop_assert_eq!(compute_constants(&rev).unwrap(), c);
        }
    }
}
