//! Expected workloads, KL divergence and the sampled benchmark set.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Workload;

/// Name of the generator behind [`sample_benchmark`], recorded with every set.
pub const RNG_ALGORITHM: &str = "chacha8";

/// `sum p_i ln(p_i / q_i)` in nats, with `0 ln(0/q) = 0`.
///
/// Returns `+inf` when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &Workload, q: &Workload) -> f64 {
    p.as_array()
        .iter()
        .zip(q.as_array())
        .map(|(&pi, qi)| {
            if pi == 0.0 {
                0.0
            } else if qi == 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum()
}

/// Workloads within KL radius `radius` of `center`, measured as `KL(candidate, center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRegion {
    pub center: Workload,
    pub radius: f64,
}

impl UncertaintyRegion {
    pub fn new(center: Workload, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius {radius} must be >= 0")));
        }
        Ok(UncertaintyRegion { center, radius })
    }

    pub fn contains(&self, candidate: &Workload) -> bool {
        kl_divergence(candidate, &self.center) <= self.radius
    }
}

/// Membership test for an uncertainty region.
pub fn in_region(candidate: &Workload, region: &UncertaintyRegion) -> bool {
    region.contains(candidate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Uniform,
    Unimodal,
    Bimodal,
    Trimodal,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Uniform, Category::Unimodal, Category::Bimodal, Category::Trimodal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Uniform => "uniform",
            Category::Unimodal => "unimodal",
            Category::Bimodal => "bimodal",
            Category::Trimodal => "trimodal",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub index: usize,
    pub workload: Workload,
    pub category: Category,
}

/// The fifteen expected workloads, in percent of (z0, z1, q, w).
const CATALOG: [([u32; 4], Category); 15] = [
    ([25, 25, 25, 25], Category::Uniform),
    ([97, 1, 1, 1], Category::Unimodal),
    ([1, 97, 1, 1], Category::Unimodal),
    ([1, 1, 97, 1], Category::Unimodal),
    ([1, 1, 1, 97], Category::Unimodal),
    ([49, 49, 1, 1], Category::Bimodal),
    ([49, 1, 49, 1], Category::Bimodal),
    ([49, 1, 1, 49], Category::Bimodal),
    ([1, 49, 49, 1], Category::Bimodal),
    ([1, 49, 1, 49], Category::Bimodal),
    ([1, 1, 49, 49], Category::Bimodal),
    ([33, 33, 33, 1], Category::Trimodal),
    ([33, 33, 1, 33], Category::Trimodal),
    ([33, 1, 33, 33], Category::Trimodal),
    ([1, 33, 33, 33], Category::Trimodal),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedWorkloadCatalog {
    pub entries: Vec<CatalogEntry>,
}

impl ExpectedWorkloadCatalog {
    pub fn get(&self, index: usize) -> Option<&CatalogEntry> {
        self.entries.get(index)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.iter()
    }

    /// Subset by index, keeping the requested order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let entries = indices
            .iter()
            .map(|&i| self.get(i).copied().ok_or_else(|| Error::InvalidArgument(format!("no catalog workload {i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExpectedWorkloadCatalog { entries })
    }
}

pub fn expected_catalog() -> ExpectedWorkloadCatalog {
    let entries = CATALOG
        .iter()
        .enumerate()
        .map(|(index, (pct, category))| CatalogEntry {
            index,
            workload: Workload::from_array(pct.map(|p| f64::from(p) / 100.0)).expect("catalog rows sum to 100%"),
            category: *category,
        })
        .collect();
    ExpectedWorkloadCatalog { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub counts: [u64; 4],
    pub workload: Workload,
}

/// Sampled workloads plus the raw query counts they were normalized from.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSet {
    pub seed: u64,
    pub rng: String,
    pub entries: Vec<BenchmarkEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BenchmarkRecord {
    counts: [u64; 4],
    workload: [f64; 4],
    seed: u64,
    index: usize,
}

impl BenchmarkSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn workloads(&self) -> impl Iterator<Item = &Workload> {
        self.entries.iter().map(|e| &e.workload)
    }

    /// One JSON object per line: `{counts, workload, seed, index}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (index, e) in self.entries.iter().enumerate() {
            let rec = BenchmarkRecord { counts: e.counts, workload: e.workload.as_array(), seed: self.seed, index };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses the JSON-lines form. Workloads are re-derived from the counts
    /// and must match the stored ones.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seed = None;
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidArgument(format!("read error: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: BenchmarkRecord = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidArgument(format!("benchmark line {}: {e}", lineno + 1)))?;
            if rec.index != entries.len() {
                return Err(Error::InvalidArgument(format!(
                    "benchmark line {} has index {}, expected {}",
                    lineno + 1,
                    rec.index,
                    entries.len()
                )));
            }
            let workload = Workload::from_counts(rec.counts)?;
            let stored = rec.workload;
            if workload.as_array().iter().zip(stored).any(|(a, b)| (a - b).abs() > 1e-9) {
                return Err(Error::InvalidArgument(format!(
                    "benchmark line {}: workload does not match counts",
                    lineno + 1
                )));
            }
            seed.get_or_insert(rec.seed);
            entries.push(BenchmarkEntry { counts: rec.counts, workload });
        }
        Ok(BenchmarkSet { seed: seed.unwrap_or(0), rng: RNG_ALGORITHM.to_string(), entries })
    }
}

/// Draws `n` tuples of independent uniform counts in `[1, max_count]` and
/// normalizes each into a workload. Deterministic in `seed`.
pub fn sample_benchmark(n: usize, seed: u64, max_count: u64) -> Result<BenchmarkSet> {
    if n < 1 {
        return Err(Error::InvalidArgument("benchmark needs at least one workload".into()));
    }
    if max_count < 4 {
        return Err(Error::InvalidArgument("max_count must be at least 4".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..n)
        .map(|_| {
            let counts: [u64; 4] = std::array::from_fn(|_| rng.gen_range(1..=max_count));
            let workload = Workload::from_counts(counts).expect("counts are positive");
            BenchmarkEntry { counts, workload }
        })
        .collect();
    Ok(BenchmarkSet { seed, rng: RNG_ALGORITHM.to_string(), entries })
}

/// Mean KL divergence over all ordered pairs of distinct history entries;
/// a starting point for the uncertainty radius.
pub fn rho_hint(history: &[Workload]) -> Result<f64> {
    if history.len() < 2 {
        return Err(Error::InvalidArgument("need at least two historical workloads".into()));
    }
    let mut total = 0.0;
    for (i, p) in history.iter().enumerate() {
        for (j, q) in history.iter().enumerate() {
            if i != j {
                total += kl_divergence(p, q);
            }
        }
    }
    let pairs = history.len() * (history.len() - 1);
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn wl(v: [f64; 4]) -> Workload {
        Workload::from_array(v).unwrap()
    }

    // Direct four-term summation, written independently of kl_divergence.
    fn kl_oracle(p: [f64; 4], q: [f64; 4]) -> f64 {
        let mut s = 0.0;
        for i in 0..4 {
            if p[i] > 0.0 {
                s += p[i] * (p[i].ln() - q[i].ln());
            }
        }
        s
    }

    #[test]
    fn kl_examples() {
        let u = Workload::uniform();
        assert_eq!(kl_divergence(&u, &u), 0.0);

        let skew = wl([0.97, 0.01, 0.01, 0.01]);
        let frozen = kl_oracle(skew.as_array(), [0.25; 4]);
        assert_relative_eq!(frozen, 1.2186, epsilon = 1e-4);
        assert_relative_eq!(kl_divergence(&skew, &u), frozen, max_relative = 1e-12);

        let half = wl([0.5, 0.5, 0.0, 0.0]);
        assert_relative_eq!(kl_divergence(&half, &u), std::f64::consts::LN_2, max_relative = 1e-12);
        assert_eq!(kl_divergence(&u, &half), f64::INFINITY);
    }

    #[test]
    fn kl_is_asymmetric() {
        let p = wl([0.97, 0.01, 0.01, 0.01]);
        let q = Workload::uniform();
        assert!((kl_divergence(&p, &q) - kl_divergence(&q, &p)).abs() > 0.1);
    }

    #[test]
    fn region_membership() {
        let u = Workload::uniform();
        assert!(in_region(&u, &UncertaintyRegion::new(u, 0.0).unwrap()));
        assert!(in_region(&u, &UncertaintyRegion::new(u, 3.0).unwrap()));
        let other = wl([0.3, 0.2, 0.25, 0.25]);
        assert!(!in_region(&other, &UncertaintyRegion::new(u, 0.0).unwrap()));
        let skew = wl([0.97, 0.01, 0.01, 0.01]);
        assert!(!in_region(&skew, &UncertaintyRegion::new(u, 1.0).unwrap()));
        assert!(in_region(&skew, &UncertaintyRegion::new(u, 1.3).unwrap()));
        assert!(UncertaintyRegion::new(u, -0.1).is_err());
    }

    #[test]
    fn catalog_rows() {
        let cat = expected_catalog();
        assert_eq!(cat.len(), 15);
        assert_eq!(cat.get(0).unwrap().workload.as_array(), [0.25; 4]);
        assert_eq!(cat.get(4).unwrap().workload.as_array(), [0.01, 0.01, 0.01, 0.97]);
        assert_eq!(cat.get(11).unwrap().workload.as_array(), [0.33, 0.33, 0.33, 0.01]);
        assert_eq!(cat.get(13).unwrap().workload.as_array(), [0.33, 0.01, 0.33, 0.33]);
        for e in cat.iter() {
            let sum: u32 = CATALOG[e.index].0.iter().sum();
            assert_eq!(sum, 100);
            assert!(e.workload.as_array().iter().all(|&x| x >= 0.01));
        }
        let counts = Category::ALL.map(|c| cat.iter().filter(|e| e.category == c).count());
        assert_eq!(counts, [1, 4, 6, 4]);
        assert!(cat.select(&[3, 99]).is_err());
        assert_eq!(cat.select(&[7, 2]).unwrap().entries[0].index, 7);
    }

    #[test]
    fn sampler_is_deterministic_and_normalized() {
        let a = sample_benchmark(10_000, 42, 10_000).unwrap();
        let b = sample_benchmark(10_000, 42, 10_000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10_000);
        for e in &a.entries {
            let sum: f64 = e.workload.as_array().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
            assert!(e.counts.iter().all(|&c| (1..=10_000).contains(&c)));
        }
        assert_ne!(a, sample_benchmark(10_000, 43, 10_000).unwrap());
        assert!(sample_benchmark(0, 1, 10).is_err());
        assert!(sample_benchmark(1, 1, 3).is_err());
    }

    #[test]
    fn equal_counts_normalize_to_uniform() {
        let e = BenchmarkEntry { counts: [2500; 4], workload: Workload::from_counts([2500; 4]).unwrap() };
        assert_eq!(e.workload, Workload::uniform());
    }

    #[test]
    fn sampled_workloads_have_finite_kl_to_the_catalog() {
        let bench = sample_benchmark(2000, 7, 10_000).unwrap();
        let cat = expected_catalog();
        for w in bench.workloads() {
            for e in cat.iter() {
                assert!(kl_divergence(w, &e.workload).is_finite());
                assert!(kl_divergence(&e.workload, w).is_finite());
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let bench = sample_benchmark(25, 9, 100).unwrap();
        let mut buf = Vec::new();
        bench.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 25);
        assert!(text.lines().next().unwrap().contains("\"index\":0"));
        let back = BenchmarkSet::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.seed, 9);
        assert_eq!(back.entries.len(), 25);
        for (a, b) in back.entries.iter().zip(&bench.entries) {
            assert_eq!(a.counts, b.counts);
            assert!(kl_divergence(&a.workload, &b.workload).abs() < 1e-12);
        }
        let bad = r#"{"counts":[1,1,1,1],"workload":[0.5,0.5,0,0],"seed":1,"index":0}"#;
        assert!(BenchmarkSet::read_jsonl(bad.as_bytes()).is_err());
    }

    #[test]
    fn rho_hint_examples() {
        let u = Workload::uniform();
        assert_eq!(rho_hint(&[u, u, u]).unwrap(), 0.0);
        assert!(rho_hint(&[u]).is_err());

        let p = wl([0.4, 0.3, 0.2, 0.1]);
        let q = wl([0.1, 0.2, 0.3, 0.4]);
        let pair = (kl_divergence(&p, &q) + kl_divergence(&q, &p)) / 2.0;
        assert_relative_eq!(rho_hint(&[p, q]).unwrap(), pair, max_relative = 1e-12);

        let h = [[0.30, 0.20, 0.25, 0.25], [0.25, 0.30, 0.20, 0.25], [0.25, 0.25, 0.30, 0.20]];
        let mut total = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    total += kl_oracle(h[i], h[j]);
                }
            }
        }
        let hist: Vec<_> = h.iter().map(|&v| wl(v)).collect();
        assert_relative_eq!(rho_hint(&hist).unwrap(), total / 6.0, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn gibbs_inequality(a in proptest::array::uniform4(0.001f64..1.0), b in proptest::array::uniform4(0.001f64..1.0)) {
            let p = Workload::normalized(a).unwrap();
            let q = Workload::normalized(b).unwrap();
            let d = kl_divergence(&p, &q);
            prop_assert!(d >= -1e-15);
            prop_assert!(kl_divergence(&p, &p).abs() < 1e-15);
            if p.as_array().iter().zip(q.as_array()).any(|(x, y)| (x - y).abs() > 1e-6) {
                prop_assert!(d > 0.0);
            }
        }
    }
}
