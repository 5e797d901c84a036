//! In-memory LSM tree that counts logical page I/O.
//!
//! Runs carry real Bloom filters, sized per level from the same false
//! positive rates the cost model uses, and fence pointers that narrow a
//! lookup to one page. Values are not stored; the entry size only sets the
//! buffer capacity.

mod bloom;
mod session;
mod tree;

pub use bloom::{bits_per_entry_for, BloomFilter};
pub use session::{run_session, session_counts, IoStats, QueryKind, SessionTemplate, DOMINANT_SHARE, EXPECTED_MAX_KL};
pub use tree::{LoadShape, Run, SimConfig, SimTree, WriteIo, MAX_LEVELS};
