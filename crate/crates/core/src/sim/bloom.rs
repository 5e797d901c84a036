use std::f64::consts::LN_2;

/// Bloom filter over `u64` keys with seeded double hashing.
#[derive(Debug, Clone)]
pub struct BloomFilter {
    words: Vec<u64>,
    num_bits: u64,
    hashes: u32,
    seed: u64,
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Bits per entry for a target false positive rate, `-ln(f) / ln(2)^2`.
pub fn bits_per_entry_for(fp_rate: f64) -> f64 {
    if fp_rate >= 1.0 {
        0.0
    } else {
        -fp_rate.ln() / (LN_2 * LN_2)
    }
}

impl BloomFilter {
    /// Filter for `keys` sized for `fp_rate`. Returns `None` when the rate
    /// is 1, i.e. the level gets no filter memory.
    pub fn build(keys: &[u64], fp_rate: f64, seed: u64) -> Option<Self> {
        let bpe = bits_per_entry_for(fp_rate);
        if bpe <= 0.0 || keys.is_empty() {
            return None;
        }
        let num_bits = ((keys.len() as f64 * bpe).ceil() as u64).max(1);
        let hashes = ((LN_2 * bpe).round() as u32).max(1);
        let mut f = BloomFilter { words: vec![0; num_bits.div_ceil(64) as usize], num_bits, hashes, seed };
        for &k in keys {
            f.insert(k);
        }
        Some(f)
    }

    fn probes(&self, key: u64) -> impl Iterator<Item = u64> + '_ {
        let h1 = splitmix64(key ^ self.seed);
        let h2 = splitmix64(h1) | 1;
        (0..u64::from(self.hashes)).map(move |j| h1.wrapping_add(j.wrapping_mul(h2)) % self.num_bits)
    }

    pub fn insert(&mut self, key: u64) {
        let positions: Vec<u64> = self.probes(key).collect();
        for p in positions {
            self.words[(p / 64) as usize] |= 1 << (p % 64);
        }
    }

    pub fn may_contain(&self, key: u64) -> bool {
        self.probes(key).all(|p| self.words[(p / 64) as usize] & (1 << (p % 64)) != 0)
    }

    pub fn num_bits(&self) -> u64 {
        self.num_bits
    }

    pub fn hashes(&self) -> u32 {
        self.hashes
    }
}
