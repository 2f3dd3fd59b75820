//! Attribute reduction followed by batched, multi-channel shuffling.
//!
//! A table is first reduced: the columns a downstream query needs are tied
//! into one composite column whose tuples never split. Rows are then cut
//! into near-equal batches; inside every batch each column group picks a
//! distinct shuffler channel and has its values permuted independently of
//! the other groups. Column multisets survive, row linkage does not.

mod codec;

pub use codec::{decode_report, encode_report};

use std::cmp::Ordering;
use std::ops::Range;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::BitString;

#[derive(Debug, Error, PartialEq)]
pub enum BudsError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("query selects no columns")]
    EmptyQuery,
    #[error("channel count needs 1 <= n ({n}) <= m ({m})")]
    ChannelRange { m: usize, n: usize },
    #[error("{shufflers} shufflers cannot serve {groups} column groups")]
    TooFewShufflers { shufflers: usize, groups: usize },
    #[error("table has no rows")]
    EmptyTable,
    #[error("invalid table: {0}")]
    Invalid(String),
    #[error("report decode error at byte {offset}: {message}")]
    Decode { offset: usize, message: String },
}

pub type Result<T, E = BudsError> = std::result::Result<T, E>;

/// One table cell. Composite (tied) attributes are stored as `Tuple`.
#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
    Bits(BitString),
    Tuple(Vec<Cell>),
}

impl Cell {
    fn rank(&self) -> u8 {
        match self {
            Cell::Int(_) => 0,
            Cell::Real(_) => 1,
            Cell::Text(_) => 2,
            Cell::Bits(_) => 3,
            Cell::Tuple(_) => 4,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Cell::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Cell::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bits(&self) -> Option<&BitString> {
        match self {
            Cell::Bits(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_tuple(&self) -> Option<&[Cell]> {
        match self {
            Cell::Tuple(t) => Some(t),
            _ => None,
        }
    }
}

// Reals compare by total order so cells can be sorted into multisets.
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Real(a), Cell::Real(b)) => a.total_cmp(b),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Bits(a), Cell::Bits(b)) => a.cmp(b),
            (Cell::Tuple(a), Cell::Tuple(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Cell {}

/// Rows of attribute values under named columns.
///
/// `groups` partitions the column indices; a group is the unit that one
/// shuffler channel permutes. Fresh and reduced tables use one group per
/// column.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeTable {
    column_names: Vec<String>,
    rows: Vec<Vec<Cell>>,
    groups: Vec<Vec<usize>>,
}

impl AttributeTable {
    pub fn new(column_names: Vec<String>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        let groups = (0..column_names.len()).map(|c| vec![c]).collect();
        Self::with_groups(column_names, rows, groups)
    }

    pub fn with_groups(
        column_names: Vec<String>,
        rows: Vec<Vec<Cell>>,
        groups: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if column_names.is_empty() {
            return Err(BudsError::Invalid("table needs at least one column".into()));
        }
        if let Some(r) = rows.iter().position(|r| r.len() != column_names.len()) {
            return Err(BudsError::Invalid(format!(
                "row {r} has {} values for {} columns",
                rows[r].len(),
                column_names.len()
            )));
        }
        let mut seen = vec![false; column_names.len()];
        for &c in groups.iter().flatten() {
            if c >= seen.len() || std::mem::replace(&mut seen[c], true) {
                return Err(BudsError::Invalid(
                    "groups must partition the columns".into(),
                ));
            }
        }
        if groups.iter().any(Vec::is_empty) || seen.contains(&false) {
            return Err(BudsError::Invalid(
                "groups must partition the columns".into(),
            ));
        }
        Ok(Self {
            column_names,
            rows,
            groups,
        })
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_columns(&self) -> usize {
        self.column_names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn column(&self, index: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.rows.iter().map(move |r| &r[index])
    }

    /// Sorted values of one column.
    pub fn column_multiset(&self, index: usize) -> Vec<Cell> {
        let mut values: Vec<Cell> = self.column(index).cloned().collect();
        values.sort();
        values
    }

    /// Splits the table into one-row tables with the same columns and groups.
    pub fn split_rows(&self) -> Vec<AttributeTable> {
        self.rows
            .iter()
            .map(|r| AttributeTable {
                column_names: self.column_names.clone(),
                rows: vec![r.clone()],
                groups: self.groups.clone(),
            })
            .collect()
    }
}

/// Ties the query columns into one composite column.
///
/// The composite is named by joining the member names with `:` in table
/// order, sits where the first member was, and holds `Tuple` cells. A
/// single-column query leaves the table as it is.
pub fn reduce_attributes(table: &AttributeTable, query_columns: &[&str]) -> Result<AttributeTable> {
    if query_columns.is_empty() {
        return Err(BudsError::EmptyQuery);
    }
    let mut members = Vec::with_capacity(query_columns.len());
    for name in query_columns {
        let idx = table
            .column_index(name)
            .ok_or_else(|| BudsError::UnknownColumn(name.to_string()))?;
        if !members.contains(&idx) {
            members.push(idx);
        }
    }
    members.sort_unstable();
    if members.len() == 1 {
        return Ok(table.clone());
    }

    let first = members[0];
    let composite_name = members
        .iter()
        .map(|&c| table.column_names[c].as_str())
        .collect::<Vec<_>>()
        .join(":");
    let mut names = Vec::with_capacity(table.n_columns() - members.len() + 1);
    for (c, name) in table.column_names.iter().enumerate() {
        if c == first {
            names.push(composite_name.clone());
        } else if !members.contains(&c) {
            names.push(name.clone());
        }
    }
    let rows = table
        .rows
        .iter()
        .map(|row| {
            let mut out = Vec::with_capacity(names.len());
            for (c, cell) in row.iter().enumerate() {
                if c == first {
                    out.push(Cell::Tuple(
                        members.iter().map(|&m| row[m].clone()).collect(),
                    ));
                } else if !members.contains(&c) {
                    out.push(cell.clone());
                }
            }
            out
        })
        .collect();
    AttributeTable::new(names, rows)
}

/// Number of shuffler channels `g = m - n + 1` for `m` attributes of which
/// `n` answer the query.
pub fn channel_count(m: usize, n_query: usize) -> Result<usize> {
    if n_query == 0 || n_query > m {
        return Err(BudsError::ChannelRange { m, n: n_query });
    }
    Ok(m - n_query + 1)
}

/// Default batch count: one batch per 64 rows, rounded up.
pub fn default_batches(rows: usize) -> usize {
    rows.div_ceil(64).max(1)
}

/// Which shuffler served which column group in which batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShufflePlan {
    pub n_shufflers: usize,
    pub batch_bounds: Vec<Range<usize>>,
    /// `assignment[batch][group]` is a shuffler id.
    pub assignment: Vec<Vec<usize>>,
}

impl ShufflePlan {
    /// SHA-256 over the plan layout. Permutations are not part of it.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n_shufflers as u64).to_be_bytes());
        for (bounds, ids) in self.batch_bounds.iter().zip(&self.assignment) {
            h.update((bounds.start as u64).to_be_bytes());
            h.update((bounds.end as u64).to_be_bytes());
            for &id in ids {
                h.update((id as u64).to_be_bytes());
            }
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShuffledReport {
    pub table: AttributeTable,
    pub plan_digest: [u8; 32],
}

/// Near-equal contiguous batches; sizes differ by at most one.
pub fn batch_bounds(rows: usize, n_batches: usize) -> Vec<Range<usize>> {
    let t = n_batches.clamp(1, rows.max(1));
    let base = rows / t;
    let extra = rows % t;
    let mut start = 0;
    (0..t)
        .map(|b| {
            let len = base + usize::from(b < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

pub fn iterative_shuffle<R: Rng + ?Sized>(
    table: &AttributeTable,
    n_shufflers: usize,
    n_batches: usize,
    rng: &mut R,
) -> Result<ShuffledReport> {
    iterative_shuffle_planned(table, n_shufflers, n_batches, rng).map(|(report, _)| report)
}

/// [`iterative_shuffle`] that also hands back the plan it followed.
pub fn iterative_shuffle_planned<R: Rng + ?Sized>(
    table: &AttributeTable,
    n_shufflers: usize,
    n_batches: usize,
    rng: &mut R,
) -> Result<(ShuffledReport, ShufflePlan)> {
    if table.rows.is_empty() {
        return Err(BudsError::EmptyTable);
    }
    let n_groups = table.groups.len();
    if n_shufflers < n_groups {
        return Err(BudsError::TooFewShufflers {
            shufflers: n_shufflers,
            groups: n_groups,
        });
    }
    if n_batches == 0 {
        return Err(BudsError::Invalid("at least one batch is required".into()));
    }

    // every channel owns its own permutation stream
    let mut shufflers: Vec<ChaCha8Rng> = (0..n_shufflers)
        .map(|_| ChaCha8Rng::seed_from_u64(rng.random()))
        .collect();
    let bounds = batch_bounds(table.rows.len(), n_batches);
    let mut out = table.rows.clone();
    let mut assignment = Vec::with_capacity(bounds.len());

    for batch in &bounds {
        let ids = index::sample(rng, n_shufflers, n_groups).into_vec();
        for (group, &id) in table.groups.iter().zip(&ids) {
            let mut perm: Vec<usize> = batch.clone().collect();
            perm.shuffle(&mut shufflers[id]);
            for (dst, &src) in batch.clone().zip(&perm) {
                for &col in group {
                    out[dst][col] = table.rows[src][col].clone();
                }
            }
        }
        assignment.push(ids);
    }

    let plan = ShufflePlan {
        n_shufflers,
        batch_bounds: bounds,
        assignment,
    };
    let report = ShuffledReport {
        table: AttributeTable {
            column_names: table.column_names.clone(),
            rows: out,
            groups: table.groups.clone(),
        },
        plan_digest: plan.digest(),
    };
    Ok((report, plan))
}

/// Column names of a weight report before reduction.
pub const WEIGHT_COLUMNS: [&str; 5] = ["position", "value", "cluster_id", "sample_count", "nonce"];
/// Name of the tied `(position, value)` column in a weight report.
pub const WEIGHT_QUERY_COLUMN: &str = "position:value";

/// Metadata attached to every row of a weight report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightMeta {
    pub cluster_id: usize,
    pub sample_count: u64,
}

/// Privatized tabular form of a parameter vector.
///
/// One row per parameter. `(position, value)` is tied because the server
/// averages per position; the metadata columns (cluster id, sample count,
/// a random row nonce) are shuffled on their own channels.
pub fn weight_report<R: Rng + ?Sized>(
    params: &[f64],
    meta: WeightMeta,
    rng: &mut R,
) -> Result<ShuffledReport> {
    if params.is_empty() {
        return Err(BudsError::EmptyTable);
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(BudsError::Invalid("parameters must be finite".into()));
    }
    let rows = params
        .iter()
        .enumerate()
        .map(|(pos, &value)| {
            vec![
                Cell::Int(pos as i64),
                Cell::Real(value),
                Cell::Int(meta.cluster_id as i64),
                Cell::Int(meta.sample_count as i64),
                Cell::Int(rng.random()),
            ]
        })
        .collect();
    let table = AttributeTable::new(WEIGHT_COLUMNS.iter().map(|s| s.to_string()).collect(), rows)?;
    let reduced = reduce_attributes(&table, &["position", "value"])?;
    let g = channel_count(reduced.n_columns(), 1)?;
    iterative_shuffle(&reduced, g, default_batches(params.len()), rng)
}
