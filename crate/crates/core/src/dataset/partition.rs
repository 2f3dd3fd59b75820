use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, Result};

/// One client's slice of the training set.
///
/// Index ranges are inclusive, so `max_index - min_index + 1 == count`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClientShard {
    pub user_id: u32,
    pub count: usize,
    pub min_index: usize,
    pub max_index: usize,
    pub cluster_id: Option<usize>,
}

impl ClientShard {
    pub const ATTRIBUTES: [&'static str; 5] =
        ["user_id", "count", "max_index", "min_index", "cluster_id"];

    pub fn new(user_id: u32, min_index: usize, count: usize) -> Self {
        assert!(count > 0, "shards hold at least one example");
        Self {
            user_id,
            count,
            min_index,
            max_index: min_index + count - 1,
            cluster_id: None,
        }
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.min_index..=self.max_index
    }

    /// Attribute values in [`Self::ATTRIBUTES`] order; an unassigned cluster
    /// is rendered as `none`.
    pub fn attributes(&self) -> Vec<(&'static str, String)> {
        let cluster = self
            .cluster_id
            .map_or_else(|| "none".to_string(), |c| c.to_string());
        vec![
            ("user_id", self.user_id.to_string()),
            ("count", self.count.to_string()),
            ("max_index", self.max_index.to_string()),
            ("min_index", self.min_index.to_string()),
            ("cluster_id", cluster),
        ]
    }

    pub fn from_attributes<S: AsRef<str>>(pairs: &[(S, String)]) -> Result<Self> {
        let get = |name: &str| -> Result<&str> {
            pairs
                .iter()
                .find(|(n, _)| n.as_ref() == name)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| DatasetError::Invalid(format!("missing attribute `{name}`")))
        };
        let num = |name: &str| -> Result<usize> {
            get(name)?
                .parse()
                .map_err(|_| DatasetError::Invalid(format!("attribute `{name}` is not an integer")))
        };
        let cluster_id = match get("cluster_id")? {
            "none" => None,
            v => Some(v.parse().map_err(|_| {
                DatasetError::Invalid("attribute `cluster_id` is not an integer".into())
            })?),
        };
        let shard = Self {
            user_id: num("user_id")? as u32,
            count: num("count")?,
            min_index: num("min_index")?,
            max_index: num("max_index")?,
            cluster_id,
        };
        if shard.max_index + 1 != shard.min_index + shard.count {
            return Err(DatasetError::Invalid(format!(
                "range {}:{} does not hold {} examples",
                shard.min_index, shard.max_index, shard.count
            )));
        }
        Ok(shard)
    }
}

/// Splits `[0, n_examples)` into `n_clients` contiguous shards of nearly
/// equal size.
///
/// Sizes start at `n / c` with the remainder spread one extra example per
/// shard. Shards are then paired at random and each pair trades up to
/// `min(2, base / 8)` examples, which keeps every size within
/// `[base - 2, base + 3]` and the total exact. Finally the block sizes are
/// shuffled and laid out in order. User ids run from 1.
pub fn partition_random(
    n_examples: usize,
    n_clients: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if n_clients == 0 {
        return Err(DatasetError::Precondition(
            "at least one client is required".into(),
        ));
    }
    if n_clients > n_examples {
        return Err(DatasetError::Precondition(format!(
            "{n_clients} clients cannot share {n_examples} examples"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = n_examples / n_clients;
    let remainder = n_examples % n_clients;
    let mut sizes: Vec<usize> = (0..n_clients)
        .map(|i| base + usize::from(i < remainder))
        .collect();

    let jitter = (base / 8).min(2) as i64;
    if jitter > 0 {
        let mut order: Vec<usize> = (0..n_clients).collect();
        order.shuffle(&mut rng);
        for pair in order.chunks_exact(2) {
            let delta = rng.random_range(-jitter..=jitter);
            sizes[pair[0]] = (sizes[pair[0]] as i64 + delta) as usize;
            sizes[pair[1]] = (sizes[pair[1]] as i64 - delta) as usize;
        }
    }
    sizes.shuffle(&mut rng);

    let mut start = 0;
    Ok(sizes
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let shard = ClientShard::new(i as u32 + 1, start, count);
            start += count;
            shard
        })
        .collect())
}
