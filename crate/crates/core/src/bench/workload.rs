use std::collections::HashMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TraceOp;
use crate::{Error, Key, Result};

/// Range sizes of the range sweep.
pub const RANGE_SIZES: [u64; 4] = [1 << 4, 1 << 7, 1 << 10, 1 << 13];
/// Ranges issued per size in a range sweep.
pub const RANGES_PER_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkloadKind {
    SearchOnly,
    InsertOnly,
    /// Writes with probability `insert_ratio`, searches otherwise.
    Mixed {
        insert_ratio: f64,
    },
    /// `RANGES_PER_SIZE` ranges of every size in `range_sizes`.
    RangeSweep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub ops: usize,
    /// Keys are drawn from `0..key_domain`.
    pub key_domain: u64,
    pub range_sizes: Vec<u64>,
    /// Share of writes that are deletes / updates of live keys; the rest
    /// are inserts of absent keys.
    pub delete_share: f64,
    pub update_share: f64,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, ops: usize, key_domain: u64, seed: u64) -> Self {
        WorkloadSpec {
            kind,
            ops,
            key_domain,
            range_sizes: RANGE_SIZES.to_vec(),
            delete_share: 0.0,
            update_share: 0.0,
            seed,
        }
    }

    pub fn with_write_mix(mut self, delete_share: f64, update_share: f64) -> Self {
        self.delete_share = delete_share;
        self.update_share = update_share;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::InvalidInput(format!("workload: {why}")));
        if self.key_domain == 0 || self.key_domain > crate::MAX_KEY {
            return bad(format!("key domain {} out of range", self.key_domain));
        }
        if let WorkloadKind::Mixed { insert_ratio } = self.kind {
            if !(0.0..=1.0).contains(&insert_ratio) {
                return bad(format!("insert ratio {insert_ratio} outside [0, 1]"));
            }
        }
        let (d, u) = (self.delete_share, self.update_share);
        if !(d >= 0.0 && u >= 0.0 && d + u <= 1.0) {
            return bad(format!(
                "delete share {d} and update share {u} must be >= 0 and sum to <= 1"
            ));
        }
        if self.kind == WorkloadKind::RangeSweep && self.range_sizes.iter().any(|&s| s == 0 || s > self.key_domain) {
            return bad("range sizes must be in 1..=key_domain".into());
        }
        Ok(())
    }
}

/// `n` distinct keys from `0..domain`, sorted, reproducible from `seed`.
pub fn initial_keys(n: usize, domain: u64, seed: u64) -> Result<Vec<Key>> {
    if n as u64 > domain {
        return Err(Error::InvalidInput(format!(
            "cannot draw {n} distinct keys from a domain of {domain}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = usize::try_from(domain).map_err(|_| Error::InvalidInput(format!("key domain {domain} too large")))?;
    let mut keys: Vec<Key> = sample(&mut rng, domain, n).into_iter().map(|k| k as Key).collect();
    keys.sort_unstable();
    Ok(keys)
}

/// Live key set with O(1) random pick, insert and remove.
#[derive(Debug, Default)]
struct LiveSet {
    keys: Vec<Key>,
    pos: HashMap<Key, usize>,
}

impl LiveSet {
    fn contains(&self, k: Key) -> bool {
        self.pos.contains_key(&k)
    }

    fn insert(&mut self, k: Key) {
        if !self.contains(k) {
            self.pos.insert(k, self.keys.len());
            self.keys.push(k);
        }
    }

    fn remove(&mut self, k: Key) {
        if let Some(i) = self.pos.remove(&k) {
            self.keys.swap_remove(i);
            if let Some(&moved) = self.keys.get(i) {
                self.pos.insert(moved, i);
            }
        }
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> Option<Key> {
        (!self.keys.is_empty()).then(|| self.keys[rng.gen_range(0..self.keys.len())])
    }
}

/// Generates a reproducible operation stream. `live` is the key set the
/// index holds before the first operation; inserts draw absent keys and
/// deletes / updates draw live keys.
pub fn generate(spec: &WorkloadSpec, live: &[Key]) -> Result<Vec<TraceOp>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut set = LiveSet::default();
    for &k in live {
        set.insert(k);
    }
    if spec.kind == WorkloadKind::RangeSweep {
        let mut ops = Vec::with_capacity(spec.range_sizes.len() * RANGES_PER_SIZE);
        for &size in &spec.range_sizes {
            for _ in 0..RANGES_PER_SIZE {
                let start = rng.gen_range(0..=spec.key_domain - size);
                ops.push(TraceOp::Range(start, start + size - 1));
            }
        }
        return Ok(ops);
    }
    let write_ratio = match spec.kind {
        WorkloadKind::SearchOnly => 0.0,
        WorkloadKind::InsertOnly => 1.0,
        WorkloadKind::Mixed { insert_ratio } => insert_ratio,
        WorkloadKind::RangeSweep => unreachable!(),
    };
    let mut ops = Vec::with_capacity(spec.ops);
    for _ in 0..spec.ops {
        if !rng.gen_bool(write_ratio) {
            ops.push(TraceOp::Search(rng.gen_range(0..spec.key_domain)));
            continue;
        }
        let roll: f64 = rng.gen();
        let victim = if roll < spec.delete_share + spec.update_share {
            set.pick(&mut rng)
        } else {
            None
        };
        let op = match victim {
            Some(k) if roll < spec.delete_share => {
                set.remove(k);
                TraceOp::Delete(k)
            }
            Some(k) => TraceOp::Update(k),
            None => {
                let k = absent_key(&set, spec.key_domain, &mut rng)?;
                set.insert(k);
                TraceOp::Insert(k)
            }
        };
        ops.push(op);
    }
    Ok(ops)
}

fn absent_key(set: &LiveSet, domain: u64, rng: &mut ChaCha8Rng) -> Result<Key> {
    if set.keys.len() as u64 >= domain {
        return Err(Error::InvalidInput(format!("key domain of {domain} is full")));
    }
    loop {
        let k = rng.gen_range(0..domain);
        if !set.contains(k) {
            return Ok(k);
        }
    }
}
