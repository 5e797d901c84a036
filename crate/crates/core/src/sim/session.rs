use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::SimTree;
use crate::error::{Error, Result};
use crate::params::Workload;

/// Query types in workload order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryKind {
    EmptyRead,
    NonEmptyRead,
    RangeRead,
    Write,
}

impl QueryKind {
    pub const ALL: [QueryKind; 4] =
        [QueryKind::EmptyRead, QueryKind::NonEmptyRead, QueryKind::RangeRead, QueryKind::Write];

    fn index(self) -> usize {
        self as usize
    }
}

/// Logical page I/O counted over a session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IoStats {
    /// Pages read by lookups and range scans.
    pub query_reads: u64,
    pub flush_writes: u64,
    pub compaction_reads: u64,
    pub compaction_writes: u64,
    pub queries: [u64; 4],
    /// Direct page reads per query type, and their squares, for standard errors.
    pub io_sum: [u64; 4],
    pub io_sum_sq: [u64; 4],
}

impl IoStats {
    fn record(&mut self, kind: QueryKind, io: u64) {
        let i = kind.index();
        self.queries[i] += 1;
        self.io_sum[i] += io;
        self.io_sum_sq[i] += io * io;
    }

    /// Mean direct page reads per query of `kind`.
    pub fn mean(&self, kind: QueryKind) -> Option<f64> {
        let n = self.queries[kind.index()];
        (n > 0).then(|| self.io_sum[kind.index()] as f64 / n as f64)
    }

    /// Standard error of [`IoStats::mean`].
    pub fn std_error(&self, kind: QueryKind) -> Option<f64> {
        let i = kind.index();
        let n = self.queries[i];
        if n < 2 {
            return None;
        }
        let n = n as f64;
        let mean = self.io_sum[i] as f64 / n;
        let var = ((self.io_sum_sq[i] as f64 - n * mean * mean) / (n - 1.0)).max(0.0);
        Some((var / n).sqrt())
    }

    /// Page writes weighted by `rw_asymmetry`, plus compaction reads.
    pub fn write_cost(&self, rw_asymmetry: f64) -> f64 {
        self.compaction_reads as f64 + rw_asymmetry * (self.flush_writes + self.compaction_writes) as f64
    }

    /// Flush and compaction I/O spread over the writes of the session.
    pub fn amortized_write(&self, rw_asymmetry: f64) -> Option<f64> {
        let n = self.queries[QueryKind::Write.index()];
        (n > 0).then(|| self.write_cost(rw_asymmetry) / n as f64)
    }

    /// Mean I/O per query of any type, writes amortized.
    pub fn mean_per_query(&self, rw_asymmetry: f64) -> Option<f64> {
        let n: u64 = self.queries.iter().sum();
        (n > 0).then(|| (self.query_reads as f64 + self.write_cost(rw_asymmetry)) / n as f64)
    }

    /// Per-type means with writes amortized: `[z0, z1, q, w]`.
    pub fn per_type(&self, rw_asymmetry: f64) -> [Option<f64>; 4] {
        [
            self.mean(QueryKind::EmptyRead),
            self.mean(QueryKind::NonEmptyRead),
            self.mean(QueryKind::RangeRead),
            self.amortized_write(rw_asymmetry),
        ]
    }
}

/// Share of the dominant query type(s) in a templated session.
pub const DOMINANT_SHARE: f64 = 0.8;
/// Largest KL divergence an `expected` session may have from the tuning workload.
pub const EXPECTED_MAX_KL: f64 = 0.2;

/// Named session mixes. Each non-`Expected` template gives its dominant
/// type(s) 80% of the queries and splits the rest evenly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionTemplate {
    Expected,
    EmptyRead,
    NonEmptyRead,
    Read,
    Range,
    Write,
}

impl SessionTemplate {
    pub fn as_str(&self) -> &'static str {
        match self {
            SessionTemplate::Expected => "expected",
            SessionTemplate::EmptyRead => "empty-read",
            SessionTemplate::NonEmptyRead => "non-empty-read",
            SessionTemplate::Read => "read",
            SessionTemplate::Range => "range",
            SessionTemplate::Write => "write",
        }
    }

    /// The query mix; `expected` is the workload the tree was tuned for.
    pub fn mix(&self, expected: &Workload) -> Workload {
        let dominant: &[usize] = match self {
            SessionTemplate::Expected => return *expected,
            SessionTemplate::EmptyRead => &[0],
            SessionTemplate::NonEmptyRead => &[1],
            SessionTemplate::Read => &[0, 1],
            SessionTemplate::Range => &[2],
            SessionTemplate::Write => &[3],
        };
        let rest = (1.0 - DOMINANT_SHARE) / (4 - dominant.len()) as f64;
        let mut v = [rest; 4];
        for &i in dominant {
            v[i] = DOMINANT_SHARE / dominant.len() as f64;
        }
        Workload::normalized(v).expect("template mix is a distribution")
    }
}

/// Splits `queries` by `mix` with largest-remainder rounding.
pub fn session_counts(mix: &Workload, queries: u64) -> [u64; 4] {
    let exact = mix.as_array().map(|p| p * queries as f64);
    let mut counts = exact.map(|x| x.floor() as u64);
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = queries - counts.iter().sum::<u64>();
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Draws a key of the domain that is not in the tree.
fn absent_key(tree: &SimTree, rng: &mut ChaCha8Rng) -> Result<u64> {
    let domain = tree.config().key_domain;
    for _ in 0..10_000 {
        let k = rng.gen_range(0..domain);
        if !tree.contains_key(k) {
            return Ok(k);
        }
    }
    Err(Error::Capacity("key domain is exhausted".into()))
}

/// Runs `counts` queries of each type in a seeded random interleaving.
///
/// Non-empty lookups pick a key already in the tree, empty lookups a key of
/// the domain that is not, and writes insert fresh keys. A range query covers
/// a `range_selectivity` fraction of the key domain.
pub fn run_session(tree: &mut SimTree, counts: [u64; 4], seed: u64) -> Result<IoStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ops: Vec<QueryKind> =
        QueryKind::ALL.iter().zip(counts).flat_map(|(&k, n)| std::iter::repeat_n(k, n as usize)).collect();
    ops.shuffle(&mut rng);

    let domain = tree.config().key_domain;
    let width = ((tree.config().sys.range_selectivity * domain as f64).round() as u64).clamp(1, domain);
    let mut stats = IoStats::default();
    for op in ops {
        match op {
            QueryKind::EmptyRead => {
                let k = absent_key(tree, &mut rng)?;
                let (_, io) = tree.get(k);
                stats.query_reads += io;
                stats.record(op, io);
            }
            QueryKind::NonEmptyRead => {
                if tree.is_empty() {
                    return Err(Error::InvalidArgument("non-empty lookups on an empty tree".into()));
                }
                let k = tree.keys()[rng.gen_range(0..tree.len())];
                let (found, io) = tree.get(k);
                debug_assert!(found);
                stats.query_reads += io;
                stats.record(op, io);
            }
            QueryKind::RangeRead => {
                let lo = rng.gen_range(0..=domain - width);
                let (_, io) = tree.range(lo, lo + width - 1);
                stats.query_reads += io;
                stats.record(op, io);
            }
            QueryKind::Write => {
                let k = absent_key(tree, &mut rng)?;
                let io = tree.put(k)?;
                stats.flush_writes += io.flush_writes;
                stats.compaction_reads += io.compaction_reads;
                stats.compaction_writes += io.compaction_writes;
                stats.record(op, 0);
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::cost_vector;
    use crate::params::{Policy, SystemParams, Tuning};
    use crate::sim::tree::SimConfig;

    /// 20k entries of 1 KB, 4 entries per page, a 256-entry buffer.
    fn system(filter_bits_per_entry: f64) -> (SystemParams, f64) {
        let n = 20_000u64;
        let filt = filter_bits_per_entry * n as f64;
        let sys = SystemParams {
            total_memory_bits: filt + 256.0 * 8192.0,
            entry_size_bits: 8192.0,
            page_capacity: 4,
            num_entries: n,
            rw_asymmetry: 1.0,
            range_selectivity: 1e-3,
        };
        (sys, filt)
    }

    #[test]
    fn empty_lookups_match_the_model_within_three_standard_errors() {
        let (sys, filt) = system(4.0);
        let tun = Tuning::new(4.0, filt, Policy::Leveling);
        let mut tree = SimTree::bulk_load(SimConfig::new(&sys, &tun, 1).unwrap(), sys.num_entries).unwrap();
        let stats = run_session(&mut tree, [20_000, 0, 0, 0], 2).unwrap();
        let model = cost_vector(&sys, &tun).unwrap().empty_read;
        let mean = stats.mean(QueryKind::EmptyRead).unwrap();
        let se = stats.std_error(QueryKind::EmptyRead).unwrap();
        assert!((mean - model).abs() <= 3.0 * se, "mean {mean} se {se} model {model}");
    }

    #[test]
    fn writes_below_one_buffer_cost_nothing() {
        let (sys, filt) = system(4.0);
        let tun = Tuning::new(4.0, filt, Policy::Tiering);
        let mut tree = SimTree::bulk_load(SimConfig::new(&sys, &tun, 1).unwrap(), sys.num_entries).unwrap();
        let stats = run_session(&mut tree, [0, 0, 0, 100], 3).unwrap();
        assert_eq!(stats.amortized_write(1.0), Some(0.0));
        assert_eq!(tree.len(), 20_100);
    }

    #[test]
    fn same_seed_same_stats() {
        let (sys, filt) = system(2.0);
        let tun = Tuning::new(3.0, filt, Policy::Leveling);
        let tree = SimTree::bulk_load(SimConfig::new(&sys, &tun, 9).unwrap(), sys.num_entries).unwrap();
        let mut a = tree.clone();
        let mut b = tree.clone();
        let sa = run_session(&mut a, [300, 300, 100, 2000], 4).unwrap();
        let sb = run_session(&mut b, [300, 300, 100, 2000], 4).unwrap();
        assert_eq!(sa, sb);
        assert!(sa.flush_writes > 0 && sa.compaction_reads > 0);
        a.check_invariants().unwrap();
    }

    #[test]
    fn empty_session() {
        let (sys, filt) = system(2.0);
        let tun = Tuning::new(3.0, filt, Policy::Leveling);
        let mut tree = SimTree::bulk_load(SimConfig::new(&sys, &tun, 9).unwrap(), 100).unwrap();
        let stats = run_session(&mut tree, [0; 4], 4).unwrap();
        assert_eq!(stats, IoStats::default());
        assert_eq!(stats.mean_per_query(1.0), None);
    }

    #[test]
    fn templates_follow_the_dominant_share_rule() {
        let w = Workload::new(0.1, 0.2, 0.3, 0.4).unwrap();
        assert_eq!(SessionTemplate::Expected.mix(&w), w);
        let m = SessionTemplate::Range.mix(&w).as_array();
        assert!((m[2] - 0.8).abs() < 1e-12 && (m[0] - 0.2 / 3.0).abs() < 1e-12);
        let m = SessionTemplate::Read.mix(&w).as_array();
        assert!((m[0] - 0.4).abs() < 1e-12 && (m[3] - 0.1).abs() < 1e-12);
        let c = session_counts(&SessionTemplate::Write.mix(&w), 1000);
        assert_eq!(c.iter().sum::<u64>(), 1000);
        assert_eq!(c[3], 800);
        assert_eq!(session_counts(&Workload::uniform(), 6), [2, 2, 1, 1]);
    }

    #[test]
    fn stats_arithmetic() {
        let mut s = IoStats::default();
        for io in [1, 2, 3] {
            s.record(QueryKind::NonEmptyRead, io);
        }
        s.record(QueryKind::Write, 0);
        s.query_reads = 6;
        s.flush_writes = 4;
        s.compaction_reads = 2;
        s.compaction_writes = 6;
        assert_eq!(s.mean(QueryKind::NonEmptyRead), Some(2.0));
        assert!((s.std_error(QueryKind::NonEmptyRead).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.amortized_write(2.0), Some(22.0));
        assert_eq!(s.mean_per_query(1.0), Some(4.5));
    }
}
