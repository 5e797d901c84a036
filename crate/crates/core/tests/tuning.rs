use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsmtune::{
    cost_vector, expected_catalog, kl_divergence, tune_nominal, tune_robust, workload_cost, worst_case_cost, Policy,
    SystemParams, Tuning,
};

const RHOS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

fn systems() -> [SystemParams; 2] {
    [SystemParams::model_reference(), SystemParams::memory_constrained()]
}

#[test]
fn nominal_tuning_beats_random_feasible_tunings() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for sys in systems() {
        for e in expected_catalog().iter() {
            let best = tune_nominal(&sys, &e.workload).unwrap();
            for _ in 0..200 {
                let filter = rng.gen_range(0.0..sys.max_filter_bits());
                let t = rng.gen_range(2.0..=sys.max_size_ratio(filter).min(100.0));
                let policy = if rng.gen_bool(0.5) { Policy::Leveling } else { Policy::Tiering };
                let cost = workload_cost(&e.workload, &sys, &Tuning::new(t, filter, policy)).unwrap();
                assert!(best.objective <= cost * (1.0 + 1e-9), "w{}: {} beaten by {cost}", e.index, best.objective);
            }
        }
    }
}

#[test]
fn robust_tuning_minimizes_the_worst_case_against_the_nominal_tuning() {
    for sys in systems() {
        for e in expected_catalog().iter() {
            let nominal = tune_nominal(&sys, &e.workload).unwrap();
            let nominal_costs = cost_vector(&sys, &nominal.tuning).unwrap();
            for rho in RHOS {
                let robust = tune_robust(&sys, &e.workload, rho).unwrap();
                let nominal_worst = worst_case_cost(&nominal_costs, &e.workload, rho).unwrap().value;
                assert!(robust.objective <= nominal_worst * (1.0 + 1e-9), "w{} rho {rho}", e.index);
                assert!(robust.objective >= nominal.objective * (1.0 - 1e-9), "w{} rho {rho}", e.index);
                assert!(robust.expected_cost <= robust.objective * (1.0 + 1e-9));
                assert!(kl_divergence(&robust.worst_workload, &e.workload) <= rho + 1e-6);
            }
        }
    }
}

#[test]
fn robust_objective_grows_with_the_radius() {
    let sys = SystemParams::memory_constrained();
    for e in expected_catalog().iter() {
        let values: Vec<f64> = RHOS.iter().map(|&r| tune_robust(&sys, &e.workload, r).unwrap().objective).collect();
        assert!(values.windows(2).all(|p| p[1] >= p[0] * (1.0 - 1e-9)), "w{}: {values:?}", e.index);
    }
}

#[test]
fn robust_search_reaches_optima_where_a_level_disappears() {
    // A leveled tuning sitting exactly on the boundary where the tree loses a level.
    let sys = SystemParams::memory_constrained();
    let w5 = expected_catalog().get(5).unwrap().workload;
    let known = Tuning::new(5.5188, 11_010_494.0, Policy::Leveling);
    let known_worst = worst_case_cost(&cost_vector(&sys, &known).unwrap(), &w5, 3.0).unwrap().value;
    let tuned = tune_robust(&sys, &w5, 3.0).unwrap();
    assert!(tuned.objective <= known_worst, "tuned {} vs known {known_worst}", tuned.objective);
}

#[test]
fn zero_radius_reproduces_nominal_costs() {
    for sys in systems() {
        for e in expected_catalog().iter() {
            let nominal = tune_nominal(&sys, &e.workload).unwrap();
            let robust = tune_robust(&sys, &e.workload, 0.0).unwrap();
            let cost = workload_cost(&e.workload, &sys, &robust.tuning).unwrap();
            assert!(cost <= nominal.objective * 1.001, "w{}: {cost} vs {}", e.index, nominal.objective);
        }
    }
}
