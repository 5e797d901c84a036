use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bloom::{splitmix64, BloomFilter};
use crate::cost::{fp_rate, level_count};
use crate::error::{Error, Result};
use crate::params::{Policy, SystemParams, Tuning};

/// Deepest level the simulator will create.
pub const MAX_LEVELS: usize = 20;

/// How [`SimTree::bulk_load`] spreads the initial entries over the levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadShape {
    /// Every level holds the same fraction of its capacity, which is the
    /// distribution the cost model assumes.
    #[default]
    Proportional,
    /// The deepest level is filled to capacity first, then the one above it.
    BottomUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub sys: SystemParams,
    /// Deployed tuning; the size ratio is an integer.
    pub tuning: Tuning,
    /// Keys are drawn from `0..key_domain`.
    pub key_domain: u64,
    pub seed: u64,
    pub shape: LoadShape,
}

impl SimConfig {
    /// Rounds the size ratio up and uses a key domain of eight keys per entry.
    pub fn new(sys: &SystemParams, tuning: &Tuning, seed: u64) -> Result<Self> {
        sys.validate()?;
        let tuning = tuning.deployed();
        tuning.validate(sys)?;
        let cfg =
            SimConfig { sys: *sys, tuning, key_domain: 8 * sys.num_entries.max(1), seed, shape: LoadShape::default() };
        cfg.buffer_capacity()?;
        Ok(cfg)
    }

    pub fn size_ratio(&self) -> u64 {
        self.tuning.size_ratio.ceil() as u64
    }

    /// Entries that fit in the write buffer, `floor(m_buf / E)`.
    pub fn buffer_capacity(&self) -> Result<u64> {
        let cap = (self.tuning.buffer_bits(&self.sys) / self.sys.entry_size_bits).floor();
        if cap < 1.0 {
            return Err(Error::Capacity("write buffer holds no entries".into()));
        }
        Ok(cap as u64)
    }

    /// Entries level `i` (1-based) holds when full, `(T-1) * T^(i-1) * buffer`.
    pub fn level_capacity(&self, i: usize) -> u64 {
        let t = self.size_ratio();
        let buf = self.buffer_capacity().unwrap_or(1);
        (t - 1).saturating_mul(t.saturating_pow(i as u32 - 1)).saturating_mul(buf)
    }
}

/// An immutable sorted run with its filter and fence pointers.
#[derive(Debug, Clone)]
pub struct Run {
    keys: Vec<u64>,
    /// Smallest key of every page.
    fences: Vec<u64>,
    filter: Option<BloomFilter>,
    page_capacity: usize,
}

impl Run {
    fn new(mut keys: Vec<u64>, page_capacity: usize, fp_rate: f64, seed: u64) -> Self {
        keys.sort_unstable();
        let fences = keys.chunks(page_capacity).map(|p| p[0]).collect();
        let filter = BloomFilter::build(&keys, fp_rate, seed);
        Run { keys, fences, filter, page_capacity }
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn pages(&self) -> u64 {
        self.fences.len() as u64
    }

    pub fn filter(&self) -> Option<&BloomFilter> {
        self.filter.as_ref()
    }

    fn page_of(&self, key: u64) -> usize {
        self.fences.partition_point(|&f| f <= key).saturating_sub(1)
    }

    fn page(&self, p: usize) -> &[u64] {
        let start = p * self.page_capacity;
        &self.keys[start..(start + self.page_capacity).min(self.keys.len())]
    }
}

/// Page I/O caused by one write.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteIo {
    pub flush_writes: u64,
    pub compaction_reads: u64,
    pub compaction_writes: u64,
}

/// In-memory LSM tree that counts logical page I/O.
#[derive(Debug, Clone)]
pub struct SimTree {
    cfg: SimConfig,
    buffer_capacity: usize,
    buffer: Vec<u64>,
    /// `levels[i]` holds the runs of level `i + 1`, newest first.
    levels: Vec<Vec<Run>>,
    fp: Vec<f64>,
    keys: Vec<u64>,
    key_set: HashSet<u64>,
    runs_built: u64,
}

impl SimTree {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        let buffer_capacity = cfg.buffer_capacity()? as usize;
        let model_levels = level_count(&cfg.sys, &cfg.tuning);
        let fp = (1..=MAX_LEVELS as u32).map(|i| fp_rate(&cfg.sys, &cfg.tuning, model_levels, i)).collect();
        Ok(SimTree {
            cfg,
            buffer_capacity,
            buffer: Vec::new(),
            levels: Vec::new(),
            fp,
            keys: Vec::new(),
            key_set: HashSet::new(),
            runs_built: 0,
        })
    }

    /// Inserts `n` unique random keys directly into the levels. Loading costs no I/O.
    pub fn bulk_load(cfg: SimConfig, n: u64) -> Result<Self> {
        let mut tree = SimTree::new(cfg)?;
        if n == 0 {
            return Ok(tree);
        }
        let total: u64 = (1..=MAX_LEVELS).map(|i| tree.cfg.level_capacity(i)).fold(0, u64::saturating_add);
        if n > total {
            return Err(Error::Capacity(format!("{n} entries exceed the capacity of {MAX_LEVELS} levels")));
        }
        if n > tree.cfg.key_domain {
            return Err(Error::Capacity(format!("{n} entries exceed the key domain {}", tree.cfg.key_domain)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(tree.cfg.seed);
        let keys: Vec<u64> =
            sample(&mut rng, tree.cfg.key_domain as usize, n as usize).into_iter().map(|k| k as u64).collect();

        let mut depth = 1;
        while (1..=depth).map(|i| tree.cfg.level_capacity(i)).sum::<u64>() < n {
            depth += 1;
        }
        let shares = match tree.cfg.shape {
            LoadShape::Proportional => proportional_shares(&tree.cfg, depth, n),
            LoadShape::BottomUp => {
                let mut left = n;
                let mut shares = vec![0; depth];
                for i in (1..=depth).rev() {
                    shares[i - 1] = left.min(tree.cfg.level_capacity(i));
                    left -= shares[i - 1];
                }
                shares
            }
        };

        let t = tree.cfg.size_ratio() as usize;
        let mut offset = 0usize;
        for (i, &share) in shares.iter().enumerate() {
            let chunk = &keys[offset..offset + share as usize];
            offset += share as usize;
            let runs = match tree.cfg.tuning.policy {
                Policy::Leveling => 1,
                Policy::Tiering => t - 1,
            };
            let mut level = Vec::new();
            for r in 0..runs {
                let part = &chunk[r * chunk.len() / runs..(r + 1) * chunk.len() / runs];
                if !part.is_empty() {
                    level.push(tree.make_run(part.to_vec(), i + 1));
                }
            }
            tree.levels.push(level);
        }
        tree.keys = keys;
        tree.key_set = tree.keys.iter().copied().collect();
        Ok(tree)
    }

    fn make_run(&mut self, keys: Vec<u64>, level: usize) -> Run {
        self.runs_built += 1;
        let seed = splitmix64(self.cfg.seed ^ splitmix64(self.runs_built));
        Run::new(keys, self.cfg.sys.page_capacity as usize, self.fp[level - 1], seed)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn levels(&self) -> &[Vec<Run>] {
        &self.levels
    }

    /// Number of entries per level, shallowest first.
    pub fn level_sizes(&self) -> Vec<u64> {
        self.levels.iter().map(|l| l.iter().map(|r| r.len() as u64).sum()).collect()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains_key(&self, key: u64) -> bool {
        self.key_set.contains(&key)
    }

    /// All keys in insertion order (bulk-loaded keys first).
    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    /// Looks `key` up. Returns whether it was found and the pages read.
    pub fn get(&self, key: u64) -> (bool, u64) {
        if self.buffer.contains(&key) {
            return (true, 0);
        }
        let mut reads = 0;
        for run in self.levels.iter().flatten() {
            if run.is_empty() || !run.filter.as_ref().is_none_or(|f| f.may_contain(key)) {
                continue;
            }
            reads += 1;
            if run.page(run.page_of(key)).binary_search(&key).is_ok() {
                return (true, reads);
            }
        }
        (false, reads)
    }

    /// Counts keys in `lo..=hi`. Every non-empty run costs one seek plus
    /// each page holding a qualifying key.
    pub fn range(&self, lo: u64, hi: u64) -> (u64, u64) {
        let mut found = self.buffer.iter().filter(|&&k| lo <= k && k <= hi).count() as u64;
        let mut reads = 0;
        for run in self.levels.iter().flatten().filter(|r| !r.is_empty()) {
            reads += 1;
            let a = run.keys.partition_point(|&k| k < lo);
            let b = run.keys.partition_point(|&k| k <= hi);
            if b > a {
                found += (b - a) as u64;
                let pc = run.page_capacity;
                reads += ((b - 1) / pc - a / pc + 1) as u64;
            }
        }
        (found, reads)
    }

    /// Inserts a key that is not yet in the tree; flushes when the buffer fills.
    pub fn put(&mut self, key: u64) -> Result<WriteIo> {
        if !self.key_set.insert(key) {
            return Err(Error::InvalidArgument(format!("key {key} is already present")));
        }
        self.keys.push(key);
        self.buffer.push(key);
        if self.buffer.len() < self.buffer_capacity {
            return Ok(WriteIo::default());
        }
        self.flush()
    }

    fn flush(&mut self) -> Result<WriteIo> {
        let entries = std::mem::take(&mut self.buffer);
        let run = self.make_run(entries, 1);
        let mut io = WriteIo { flush_writes: run.pages(), ..WriteIo::default() };
        if self.levels.is_empty() {
            self.levels.push(Vec::new());
        }
        self.levels[0].insert(0, run);
        match self.cfg.tuning.policy {
            Policy::Leveling => self.compact_leveled(&mut io)?,
            Policy::Tiering => self.compact_tiered(&mut io)?,
        }
        Ok(io)
    }

    fn merge(&mut self, runs: Vec<Run>, level: usize, io: &mut WriteIo) -> Run {
        let mut keys = Vec::with_capacity(runs.iter().map(Run::len).sum());
        for r in runs {
            io.compaction_reads += r.pages();
            keys.extend(r.keys);
        }
        let out = self.make_run(keys, level);
        io.compaction_writes += out.pages();
        out
    }

    /// Merges the new run into level 1; a level that overflows moves down and
    /// merges with the next one.
    fn compact_leveled(&mut self, io: &mut WriteIo) -> Result<()> {
        let mut i = 0;
        loop {
            if self.levels[i].len() > 1 {
                let runs = std::mem::take(&mut self.levels[i]);
                let merged = self.merge(runs, i + 1, io);
                self.levels[i].push(merged);
            }
            let size = self.levels[i][0].len() as u64;
            if size <= self.cfg.level_capacity(i + 1) {
                return Ok(());
            }
            if i + 1 == MAX_LEVELS {
                return Err(Error::Capacity(format!("tree outgrew {MAX_LEVELS} levels")));
            }
            if self.levels.len() == i + 1 {
                self.levels.push(Vec::new());
            }
            let run = self.levels[i].pop().expect("level has a run");
            let run = if self.levels[i + 1].is_empty() { self.rebuild(run, i + 2) } else { run };
            self.levels[i + 1].insert(0, run);
            i += 1;
        }
    }

    /// A level that reaches `T` runs is merged into one run in the next level.
    fn compact_tiered(&mut self, io: &mut WriteIo) -> Result<()> {
        let t = self.cfg.size_ratio() as usize;
        let mut i = 0;
        while self.levels[i].len() >= t {
            if i + 1 == MAX_LEVELS {
                return Err(Error::Capacity(format!("tree outgrew {MAX_LEVELS} levels")));
            }
            let runs = std::mem::take(&mut self.levels[i]);
            let merged = self.merge(runs, i + 2, io);
            if self.levels.len() == i + 1 {
                self.levels.push(Vec::new());
            }
            self.levels[i + 1].insert(0, merged);
            i += 1;
        }
        Ok(())
    }

    /// Moving a run to an empty level is free; only its filter is resized
    /// for the new level.
    fn rebuild(&mut self, run: Run, level: usize) -> Run {
        self.make_run(run.keys, level)
    }

    /// Checks sortedness, per-level run limits and that filters hold every key.
    pub fn check_invariants(&self) -> Result<()> {
        let t = self.cfg.size_ratio() as usize;
        for (i, level) in self.levels.iter().enumerate() {
            let limit = match self.cfg.tuning.policy {
                Policy::Leveling => 1,
                Policy::Tiering => t,
            };
            if level.len() > limit {
                return Err(Error::Numeric(format!("level {} holds {} runs", i + 1, level.len())));
            }
            for run in level {
                if !run.keys.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::Numeric(format!("run at level {} is not strictly sorted", i + 1)));
                }
                if let Some(f) = &run.filter {
                    if run.keys.iter().any(|&k| !f.may_contain(k)) {
                        return Err(Error::Numeric("filter reports a false negative".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Splits `n` over `depth` levels in proportion to their capacities, rounding
/// by largest remainder.
fn proportional_shares(cfg: &SimConfig, depth: usize, n: u64) -> Vec<u64> {
    let caps: Vec<f64> = (1..=depth).map(|i| cfg.level_capacity(i) as f64).collect();
    let total: f64 = caps.iter().sum();
    let exact: Vec<f64> = caps.iter().map(|c| n as f64 * c / total).collect();
    let mut shares: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let mut left = n - shares.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..depth).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(b.cmp(&a)));
    for i in order {
        if left == 0 {
            break;
        }
        shares[i] += 1;
        left -= 1;
    }
    shares
}
