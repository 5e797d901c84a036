use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsmtune::sim::{run_session, SimConfig, SimTree};
use lsmtune::{cost_vector, Policy, SystemParams, Tuning};

fn system(n: u64) -> SystemParams {
    // 1 KiB entries, four per page, a 256-entry buffer plus four bits per entry for filters.
    SystemParams::new(256.0 * 8192.0 + 4.0 * n as f64, 8192.0, 4, n, 1.0, 1e-3).unwrap()
}

fn tree(n: u64, t: f64, policy: Policy, seed: u64) -> SimTree {
    let sys = system(n);
    let cfg = SimConfig::new(&sys, &Tuning::new(t, 4.0 * n as f64, policy), seed).unwrap();
    SimTree::bulk_load(cfg, n).unwrap()
}

#[test]
fn point_reads_track_the_model() {
    for policy in [Policy::Leveling, Policy::Tiering] {
        for t in [3.0, 6.0] {
            let mut tree = tree(40_000, t, policy, 5);
            let model = cost_vector(&tree.config().sys, &tree.config().tuning).unwrap();
            let stats = run_session(&mut tree, [8000, 8000, 0, 0], 6).unwrap();
            let [z0, z1, _, _] = stats.per_type(1.0);
            let (z0, z1) = (z0.unwrap(), z1.unwrap());
            assert!((z0 - model.empty_read).abs() <= 0.15 * model.empty_read, "{policy:?} T={t}: {z0} vs {model:?}");
            assert!(
                (z1 - model.nonempty_read).abs() <= 0.15 * model.nonempty_read,
                "{policy:?} T={t}: {z1} vs {model:?}"
            );
        }
    }
}

#[test]
fn writes_keep_every_key_reachable() {
    for policy in [Policy::Leveling, Policy::Tiering] {
        let mut tree = tree(5000, 4.0, policy, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let domain = tree.config().key_domain;
        let mut added = Vec::new();
        while added.len() < 3000 {
            let k = rng.gen_range(0..domain);
            if !tree.contains_key(k) {
                tree.put(k).unwrap();
                added.push(k);
            }
        }
        tree.check_invariants().unwrap();
        assert_eq!(tree.len(), 8000);
        for &k in added.iter().step_by(7) {
            assert!(tree.get(k).0, "{policy:?}: lost {k}");
        }
    }
}

#[test]
fn range_counts_match_a_sorted_copy() {
    let mut tree = tree(6000, 5.0, Policy::Tiering, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let domain = tree.config().key_domain;
    for _ in 0..700 {
        let k = rng.gen_range(0..domain);
        if !tree.contains_key(k) {
            tree.put(k).unwrap();
        }
    }
    let sorted: BTreeSet<u64> = tree.keys().iter().copied().collect();
    for _ in 0..200 {
        let lo = rng.gen_range(0..domain);
        let hi = lo + rng.gen_range(0..2000);
        assert_eq!(tree.range(lo, hi).0, sorted.range(lo..=hi).count() as u64);
    }
}

#[test]
fn sessions_are_reproducible() {
    let run = || {
        let mut tree = tree(10_000, 4.0, Policy::Leveling, 9);
        run_session(&mut tree, [500, 500, 100, 2000], 10).unwrap()
    };
    assert_eq!(run(), run());
}
