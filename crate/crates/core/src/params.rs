//! Value types shared by the cost model, tuners and simulator.
//!
//! All memory quantities are bits. [`SystemConfig`] is the on-disk JSON form
//! (bytes, optionally with unit suffixes) and converts into [`SystemParams`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BITS_PER_BYTE: f64 = 8.0;

/// Fixed environment of the tree. Not tunable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Total memory `m` shared by the write buffer and the Bloom filters, in bits.
    pub total_memory_bits: f64,
    /// Entry size `E` in bits.
    pub entry_size_bits: f64,
    /// Entries per page `B`.
    pub page_capacity: u64,
    /// Number of entries `N`.
    pub num_entries: u64,
    /// Relative cost of a page write versus a page read.
    pub rw_asymmetry: f64,
    /// Average fraction of all entries returned by a range query.
    pub range_selectivity: f64,
}

impl SystemParams {
    pub fn new(
        total_memory_bits: f64,
        entry_size_bits: f64,
        page_capacity: u64,
        num_entries: u64,
        rw_asymmetry: f64,
        range_selectivity: f64,
    ) -> Result<Self> {
        let sys = SystemParams {
            total_memory_bits,
            entry_size_bits,
            page_capacity,
            num_entries,
            rw_asymmetry,
            range_selectivity,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSystem(msg.to_string()));
        if !(self.total_memory_bits.is_finite() && self.total_memory_bits > 0.0) {
            return bad("total memory must be positive");
        }
        if !(self.entry_size_bits.is_finite() && self.entry_size_bits > 0.0) {
            return bad("entry size must be positive");
        }
        if self.page_capacity < 1 {
            return bad("page capacity must be at least one entry");
        }
        if self.num_entries < 1 {
            return bad("number of entries must be at least one");
        }
        if !(self.rw_asymmetry.is_finite() && self.rw_asymmetry >= 0.0) {
            return bad("read/write asymmetry must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.range_selectivity) {
            return bad("range selectivity must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn n(&self) -> f64 {
        self.num_entries as f64
    }

    pub fn b(&self) -> f64 {
        self.page_capacity as f64
    }

    /// Smallest legal write buffer: one full page of entries.
    pub fn min_buffer_bits(&self) -> f64 {
        self.b() * self.entry_size_bits
    }

    /// Largest filter allocation that still leaves a one-page buffer.
    pub fn max_filter_bits(&self) -> f64 {
        self.total_memory_bits - self.min_buffer_bits()
    }

    /// Size ratio beyond which the tree collapses to a single level.
    pub fn max_size_ratio(&self, filter_bits: f64) -> f64 {
        let buf = self.total_memory_bits - filter_bits;
        (self.n() * self.entry_size_bits / buf).max(2.0)
    }

    /// The model-based evaluation setup: ten million 1 KB entries, 4 KB pages
    /// and 10 GB of memory.
    pub fn model_reference() -> Self {
        SystemParams {
            total_memory_bits: 10.0 * GIB * BITS_PER_BYTE,
            entry_size_bits: 1024.0 * BITS_PER_BYTE,
            page_capacity: 4,
            num_entries: 10_000_000,
            rw_asymmetry: 1.0,
            range_selectivity: DEFAULT_SELECTIVITY,
        }
    }

    /// Same entries and pages as [`SystemParams::model_reference`] with memory
    /// limited to ten bits per entry, so the tree has several levels and the
    /// tuning problem is not trivially solved by buffering everything.
    pub fn memory_constrained() -> Self {
        SystemParams { total_memory_bits: 10.0 * 10_000_000.0, ..Self::model_reference() }
    }
}

/// Range selectivity used by the built-in setups: half a page of entries per
/// range query over ten million entries with four entries per page.
pub const DEFAULT_SELECTIVITY: f64 = 2e-7;

const KIB: f64 = 1024.0;
const MIB: f64 = KIB * 1024.0;
const GIB: f64 = MIB * 1024.0;

/// Parse a byte quantity such as `4096`, `"64MB"` or `"10 GB"` (powers of 1024).
pub fn parse_bytes(text: &str) -> Result<f64> {
    let t = text.trim();
    let split = t.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 =
        num.trim().parse().map_err(|_| Error::InvalidArgument(format!("cannot parse byte quantity {text:?}")))?;
    let scale = match unit.trim().to_ascii_uppercase().as_str() {
        "" | "B" => 1.0,
        "KB" | "K" | "KIB" => KIB,
        "MB" | "M" | "MIB" => MIB,
        "GB" | "G" | "GIB" => GIB,
        other => return Err(Error::InvalidArgument(format!("unknown unit {other:?} in {text:?}"))),
    };
    if !(value.is_finite() && value >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative or non-finite quantity {text:?}")));
    }
    Ok(value * scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ByteQuantity {
    Bytes(f64),
    Text(String),
}

impl ByteQuantity {
    pub fn bytes(&self) -> Result<f64> {
        match self {
            ByteQuantity::Bytes(b) => Ok(*b),
            ByteQuantity::Text(s) => parse_bytes(s),
        }
    }
}

/// JSON form of [`SystemParams`]. Sizes are bytes; the page capacity is
/// derived as `page_size / entry_size` with integer division.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub total_memory_bytes: ByteQuantity,
    pub entry_size_bytes: ByteQuantity,
    pub page_size_bytes: ByteQuantity,
    pub num_entries: u64,
    pub rw_asymmetry: f64,
    pub range_selectivity: f64,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSystem(format!("bad system document: {e}")))
    }

    pub fn to_params(&self) -> Result<SystemParams> {
        let memory = self.total_memory_bytes.bytes()?;
        let entry = self.entry_size_bytes.bytes()?;
        let page = self.page_size_bytes.bytes()?;
        if entry < 1.0 || entry.fract() != 0.0 || page.fract() != 0.0 {
            return Err(Error::InvalidSystem("entry and page sizes must be whole, positive byte counts".into()));
        }
        let page_capacity = (page as u64) / (entry as u64);
        if page_capacity < 1 {
            return Err(Error::InvalidSystem(format!("page of {page} bytes cannot hold an entry of {entry} bytes")));
        }
        SystemParams::new(
            memory * BITS_PER_BYTE,
            entry * BITS_PER_BYTE,
            page_capacity,
            self.num_entries,
            self.rw_asymmetry,
            self.range_selectivity,
        )
    }

    pub fn from_params(sys: &SystemParams) -> Self {
        SystemConfig {
            total_memory_bytes: ByteQuantity::Bytes(sys.total_memory_bits / BITS_PER_BYTE),
            entry_size_bytes: ByteQuantity::Bytes(sys.entry_size_bits / BITS_PER_BYTE),
            page_size_bytes: ByteQuantity::Bytes(sys.entry_size_bits / BITS_PER_BYTE * sys.page_capacity as f64),
            num_entries: sys.num_entries,
            rw_asymmetry: sys.rw_asymmetry,
            range_selectivity: sys.range_selectivity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Leveling,
    Tiering,
}

impl Policy {
    pub const ALL: [Policy; 2] = [Policy::Leveling, Policy::Tiering];

    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Leveling => "leveling",
            Policy::Tiering => "tiering",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "leveling" | "level" => Ok(Policy::Leveling),
            "tiering" | "tier" => Ok(Policy::Tiering),
            _ => Err(Error::InvalidArgument(format!("unknown policy {s:?}"))),
        }
    }
}

/// Decision variables: size ratio, Bloom filter memory (bits) and policy.
/// The buffer gets whatever memory the filters leave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub size_ratio: f64,
    pub filter_bits: f64,
    pub policy: Policy,
}

impl Tuning {
    pub fn new(size_ratio: f64, filter_bits: f64, policy: Policy) -> Self {
        Tuning { size_ratio, filter_bits, policy }
    }

    pub fn buffer_bits(&self, sys: &SystemParams) -> f64 {
        sys.total_memory_bits - self.filter_bits
    }

    pub fn validate(&self, sys: &SystemParams) -> Result<()> {
        if !(self.size_ratio.is_finite() && self.size_ratio >= 2.0) {
            return Err(Error::InvalidTuning(format!("size ratio {} must be at least 2", self.size_ratio)));
        }
        if !(self.filter_bits.is_finite() && self.filter_bits >= 0.0) {
            return Err(Error::InvalidTuning("filter memory must be non-negative".into()));
        }
        if self.filter_bits >= sys.total_memory_bits {
            return Err(Error::InvalidTuning("filter memory leaves no buffer".into()));
        }
        if self.buffer_bits(sys) < sys.min_buffer_bits() {
            return Err(Error::InvalidTuning(format!(
                "buffer of {} bits holds less than one page ({} bits)",
                self.buffer_bits(sys),
                sys.min_buffer_bits()
            )));
        }
        Ok(())
    }

    /// Integer size ratio used when deploying; the continuous optimum is rounded up.
    pub fn deployed(&self) -> Tuning {
        Tuning { size_ratio: self.size_ratio.ceil(), ..*self }
    }

    /// Filter bits per entry, `m_filt / N`.
    pub fn bits_per_entry(&self, sys: &SystemParams) -> f64 {
        self.filter_bits / sys.n()
    }
}

/// Tolerance on `sum(components) == 1`.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Proportions of empty point reads, non-empty point reads, range reads and writes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Workload([f64; 4]);

impl Workload {
    pub fn new(z0: f64, z1: f64, q: f64, w: f64) -> Result<Self> {
        Self::from_array([z0, z1, q, w])
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidWorkload(format!("components must be non-negative: {v:?}")));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidWorkload(format!("components sum to {sum}, not 1")));
        }
        Ok(Workload(v))
    }

    /// Normalizes a non-negative vector with a positive sum.
    pub fn normalized(v: [f64; 4]) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidWorkload(format!("components must be non-negative: {v:?}")));
        }
        let sum: f64 = v.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidWorkload("all components are zero".into()));
        }
        Ok(Workload(v.map(|x| x / sum)))
    }

    pub fn from_counts(counts: [u64; 4]) -> Result<Self> {
        Self::normalized(counts.map(|c| c as f64))
    }

    pub fn uniform() -> Self {
        Workload([0.25; 4])
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }

    pub fn z0(&self) -> f64 {
        self.0[0]
    }
    pub fn z1(&self) -> f64 {
        self.0[1]
    }
    pub fn q(&self) -> f64 {
        self.0[2]
    }
    pub fn w(&self) -> f64 {
        self.0[3]
    }

    pub fn dot(&self, c: &CostVector) -> f64 {
        self.0.iter().zip(c.as_array()).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<[f64; 4]> for Workload {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Workload::from_array(v)
    }
}

impl From<Workload> for [f64; 4] {
    fn from(w: Workload) -> Self {
        w.0
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "({a}, {b}, {c}, {d})")
    }
}

/// Expected I/Os per query for each query type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostVector {
    pub empty_read: f64,
    pub nonempty_read: f64,
    pub range_read: f64,
    pub write: f64,
}

impl CostVector {
    pub fn from_array(v: [f64; 4]) -> Self {
        CostVector { empty_read: v[0], nonempty_read: v[1], range_read: v[2], write: v[3] }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.empty_read, self.nonempty_read, self.range_read, self.write]
    }
}
