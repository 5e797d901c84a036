//! Tuning against the worst workload in a KL-divergence ball.
//!
//! For a fixed tuning with cost vector `c`, the worst expected cost over
//! `{w' : KL(w', w) <= rho}` equals the minimum of the Lagrangian dual
//!
//! ```text
//! g(lambda, eta) = eta + rho * lambda + lambda * sum_i w_i * phi*((c_i - eta) / lambda)
//! ```
//!
//! with `phi*(s) = e^s - 1`, the convex conjugate of `t ln t - t + 1`.
//! Minimizing over `eta` in closed form leaves the one-dimensional
//!
//! ```text
//! h(lambda) = lambda * rho + lambda * ln(sum_i w_i * exp(c_i / lambda))
//! ```
//!
//! whose stationarity condition is `KL(w_lambda, w) = rho` for the tilted
//! distribution `w_lambda ∝ w * exp(c / lambda)`. That tilt is also the
//! maximizing workload. [`worst_case_cost`] solves the condition with a
//! safeguarded Newton iteration in `s = 1 / lambda`; [`solve_dual_joint`]
//! minimizes `g` over both variables numerically and is kept as a cross-check.

use serde::{Deserialize, Serialize};

use crate::cost::{cost_vector, workload_cost};
use crate::error::{Error, Result};
use crate::params::{CostVector, SystemParams, Tuning, Workload};
use crate::search::{minimize, Diagnostics, SearchOptions};

/// Numerical floor on the KL multiplier.
pub const LAMBDA_MIN: f64 = 1e-6;
/// Largest conjugate argument evaluated before reporting overflow.
pub const CONJUGATE_ARG_MAX: f64 = 700.0;

/// Convex conjugate of the KL generator, `e^s - 1`.
pub fn kl_conjugate(s: f64) -> Result<f64> {
    if s > CONJUGATE_ARG_MAX {
        return Err(Error::Numeric(format!("conjugate argument {s} overflows")));
    }
    Ok(s.exp_m1())
}

/// Lagrange multipliers of the KL constraint (`lambda`) and of normalization (`eta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualVars {
    pub lambda: f64,
    pub eta: f64,
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::InvalidArgument(format!("uncertainty radius {rho} must be >= 0")));
    }
    Ok(())
}

/// `g(lambda, eta)`. Overflowing exponentials yield `+inf`.
pub fn dual_objective(c: &CostVector, w: &Workload, rho: f64, dv: &DualVars) -> Result<f64> {
    check_rho(rho)?;
    if !(dv.lambda >= LAMBDA_MIN) {
        return Err(Error::InvalidArgument(format!("lambda {} is below the floor {LAMBDA_MIN}", dv.lambda)));
    }
    let mut sum = 0.0;
    for (wi, ci) in w.as_array().iter().zip(c.as_array()) {
        if *wi == 0.0 {
            continue;
        }
        match kl_conjugate((ci - dv.eta) / dv.lambda) {
            Ok(v) => sum += wi * v,
            Err(_) => return Ok(f64::INFINITY),
        }
    }
    let g = dv.eta + rho * dv.lambda + dv.lambda * sum;
    Ok(if g.is_finite() { g } else { f64::INFINITY })
}

/// `min_eta g(lambda, eta) = lambda * rho + lambda * ln(sum_i w_i e^(c_i / lambda))`,
/// evaluated with a max shift so it cannot overflow.
pub fn dual_objective_eliminated(c: &CostVector, w: &Workload, rho: f64, lambda: f64) -> f64 {
    let tilt = Tilt::new(c, w);
    let (log_z, _, _, _) = tilt.at(1.0 / lambda);
    lambda * rho + tilt.c_max + lambda * log_z
}

/// The inner maximum and its maximizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub value: f64,
    pub workload: Workload,
    pub dual: DualVars,
}

/// Exponential tilts of `w` by the costs, shifted by the largest cost on the support.
struct Tilt {
    w: [f64; 4],
    c: [f64; 4],
    c_max: f64,
}

impl Tilt {
    fn new(c: &CostVector, w: &Workload) -> Self {
        let w = w.as_array();
        let c = c.as_array();
        let c_max = (0..4).filter(|&i| w[i] > 0.0).map(|i| c[i]).fold(f64::NEG_INFINITY, f64::max);
        Tilt { w, c, c_max }
    }

    /// Returns `(ln Z, KL(w_s, w), E_s[c], Var_s[c])` for the tilt with inverse
    /// temperature `s`, where `Z = sum_i w_i e^(s (c_i - c_max))`.
    fn at(&self, s: f64) -> (f64, f64, f64, f64) {
        let mut z = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..4 {
            if self.w[i] == 0.0 {
                continue;
            }
            let d = self.c[i] - self.c_max;
            let p = self.w[i] * (s * d).exp();
            z += p;
            m1 += p * d;
            m2 += p * d * d;
        }
        let mean_d = m1 / z;
        let var = (m2 / z - mean_d * mean_d).max(0.0);
        let log_z = z.ln();
        let kl = (s * mean_d - log_z).max(0.0);
        (log_z, kl, self.c_max + mean_d, var)
    }

    fn tilted(&self, s: f64) -> [f64; 4] {
        let p: [f64; 4] =
            std::array::from_fn(
                |i| {
                    if self.w[i] > 0.0 {
                        self.w[i] * (s * (self.c[i] - self.c_max)).exp()
                    } else {
                        0.0
                    }
                },
            );
        let z: f64 = p.iter().sum();
        p.map(|x| x / z)
    }
}

/// Worst expected cost over the KL ball of radius `rho` around `w`.
pub fn worst_case_cost(c: &CostVector, w: &Workload, rho: f64) -> Result<WorstCase> {
    check_rho(rho)?;
    if c.as_array().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("cost vector is not finite".into()));
    }
    Ok(solve_worst_case(c, w, rho))
}

/// Value-only variant used inside the tuner's objective.
pub(crate) fn worst_case_value(c: &CostVector, w: &Workload, rho: f64) -> f64 {
    solve_worst_case(c, w, rho).value
}

fn solve_worst_case(c: &CostVector, w: &Workload, rho: f64) -> WorstCase {
    let tilt = Tilt::new(c, w);
    let mean = w.dot(c);
    let spread = (0..4).filter(|&i| tilt.w[i] > 0.0).map(|i| tilt.c[i]).fold(f64::INFINITY, f64::min);

    if rho == 0.0 {
        return WorstCase { value: mean, workload: *w, dual: DualVars { lambda: f64::INFINITY, eta: mean } };
    }
    if spread == tilt.c_max {
        // Constant costs on the support: every feasible workload costs the same.
        return WorstCase { value: mean, workload: *w, dual: DualVars { lambda: LAMBDA_MIN, eta: mean } };
    }

    // If the whole mass can move onto the costliest types, the sup is c_max.
    let top_mass: f64 = (0..4).filter(|&i| tilt.w[i] > 0.0 && tilt.c[i] == tilt.c_max).map(|i| tilt.w[i]).sum();
    if -top_mass.ln() <= rho {
        let p: [f64; 4] =
            std::array::from_fn(
                |i| {
                    if tilt.w[i] > 0.0 && tilt.c[i] == tilt.c_max {
                        tilt.w[i] / top_mass
                    } else {
                        0.0
                    }
                },
            );
        let workload = Workload::normalized(p).expect("top mass is positive");
        return WorstCase { value: tilt.c_max, workload, dual: DualVars { lambda: LAMBDA_MIN, eta: tilt.c_max } };
    }

    let s_max = 1.0 / LAMBDA_MIN;
    let s = if tilt.at(s_max).1 <= rho { s_max } else { solve_tilt(&tilt, rho, s_max) };
    let lambda = 1.0 / s;
    let (log_z, _, _, _) = tilt.at(s);
    let eta = tilt.c_max + lambda * log_z;
    let workload = Workload::normalized(tilt.tilted(s)).expect("tilt is a distribution");
    WorstCase { value: eta + rho * lambda, workload, dual: DualVars { lambda, eta } }
}

/// Solves `KL(w_s, w) = rho` for `s` in `(0, s_max)`. KL is increasing in `s`
/// with derivative `s * Var_s[c]`.
fn solve_tilt(tilt: &Tilt, rho: f64, s_max: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, s_max);
    let var0 = tilt.at(0.0).3;
    let mut s = (2.0 * rho / var0).sqrt().clamp(s_max * 1e-300, s_max);
    for _ in 0..200 {
        let (_, kl, _, var) = tilt.at(s);
        let err = kl - rho;
        if err.abs() <= 1e-14 * rho.max(1.0) {
            return s;
        }
        if err > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        if hi - lo <= 1e-15 * hi {
            return s;
        }
        let slope = s * var;
        let newton = s - err / slope;
        s = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else if lo > 0.0 {
            (lo * hi).sqrt()
        } else {
            hi / 16.0
        };
    }
    s
}

/// Minimizes `g(lambda, eta)` jointly with Nelder-Mead over `(ln lambda, eta)`.
/// Slower and less precise than [`worst_case_cost`]; kept to cross-check it.
pub fn solve_dual_joint(c: &CostVector, w: &Workload, rho: f64) -> Result<(f64, DualVars)> {
    check_rho(rho)?;
    let scale = c.as_array().iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let f = |x: [f64; 2]| -> f64 {
        let lambda = x[0].exp().max(LAMBDA_MIN);
        dual_objective(c, w, rho, &DualVars { lambda, eta: x[1] }).unwrap_or(f64::INFINITY)
    };
    let start = [scale.ln(), c.as_array().iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x))];
    let mut simplex = [start, [start[0] + 1.0, start[1]], [start[0], start[1] + 0.5 * scale]];
    let mut values = simplex.map(f);
    for _ in 0..20_000 {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);
        let size = (simplex[1][0] - simplex[0][0]).abs().max((simplex[2][0] - simplex[0][0]).abs())
            + ((simplex[1][1] - simplex[0][1]).abs().max((simplex[2][1] - simplex[0][1]).abs())) / scale;
        if size < 1e-12 {
            break;
        }
        let centroid = [(simplex[0][0] + simplex[1][0]) / 2.0, (simplex[0][1] + simplex[1][1]) / 2.0];
        let along =
            |t: f64| [centroid[0] + t * (simplex[2][0] - centroid[0]), centroid[1] + t * (simplex[2][1] - centroid[1])];
        let reflected = along(-1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let contracted = if fr < values[2] { along(-0.5) } else { along(0.5) };
            let fc = f(contracted);
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = [(simplex[0][0] + simplex[i][0]) / 2.0, (simplex[0][1] + simplex[i][1]) / 2.0];
                    values[i] = f(simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    let x = simplex[best];
    Ok((values[best], DualVars { lambda: x[0].exp().max(LAMBDA_MIN), eta: x[1] }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustResult {
    pub tuning: Tuning,
    pub rho: f64,
    /// Worst-case expected I/O per query over the uncertainty region.
    pub objective: f64,
    pub dual: DualVars,
    /// The maximizing workload at `tuning`.
    pub worst_workload: Workload,
    /// Expected I/O per query at the center workload.
    pub expected_cost: f64,
    pub costs: CostVector,
    pub diagnostics: Diagnostics,
}

/// Minimizes the worst-case expected cost over the KL ball of radius `rho`.
pub fn tune_robust(sys: &SystemParams, wkl: &Workload, rho: f64) -> Result<RobustResult> {
    tune_robust_with(sys, wkl, rho, &SearchOptions::default())
}

pub fn tune_robust_with(sys: &SystemParams, wkl: &Workload, rho: f64, opts: &SearchOptions) -> Result<RobustResult> {
    check_rho(rho)?;
    let out = minimize(sys, opts, |c| worst_case_value(c, wkl, rho))?;
    let costs = cost_vector(sys, &out.tuning)?;
    let worst = worst_case_cost(&costs, wkl, rho)?;
    Ok(RobustResult {
        tuning: out.tuning,
        rho,
        objective: worst.value,
        dual: worst.dual,
        worst_workload: worst.workload,
        expected_cost: workload_cost(wkl, sys, &out.tuning)?,
        costs,
        diagnostics: out.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::kl_divergence;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cv(v: [f64; 4]) -> CostVector {
        CostVector::from_array(v)
    }

    /// Brute-force inner maximum over the simplex discretized at `1/steps`.
    fn simplex_oracle(c: [f64; 4], w: [f64; 4], rho: f64, steps: usize) -> f64 {
        let h = 1.0 / steps as f64;
        let term = |i: usize, k: usize| {
            let p = k as f64 * h;
            let kl = if p == 0.0 { 0.0 } else { p * (p / w[i]).ln() };
            (kl, p * c[i])
        };
        let mut best = f64::NEG_INFINITY;
        for a in 0..=steps {
            for b in 0..=steps - a {
                for d in 0..=steps - a - b {
                    let e = steps - a - b - d;
                    let parts = [term(0, a), term(1, b), term(2, d), term(3, e)];
                    let kl: f64 = parts.iter().map(|x| x.0).sum();
                    if kl <= rho {
                        best = best.max(parts.iter().map(|x| x.1).sum());
                    }
                }
            }
        }
        best
    }

    #[test]
    fn conjugate_values() {
        assert_eq!(kl_conjugate(0.0).unwrap(), 0.0);
        assert_relative_eq!(kl_conjugate(1.0).unwrap(), std::f64::consts::E - 1.0);
        assert_relative_eq!(kl_conjugate(-800.0).unwrap(), -1.0);
        assert!(kl_conjugate(701.0).is_err());
    }

    #[test]
    fn dual_with_constant_costs() {
        let c = cv([1.0; 4]);
        let w = Workload::new(0.1, 0.2, 0.3, 0.4).unwrap();
        for lambda in [1e-3, 0.5, 7.0] {
            let g = dual_objective(&c, &w, 0.3, &DualVars { lambda, eta: 1.0 }).unwrap();
            assert_relative_eq!(g, 1.0 + 0.3 * lambda, max_relative = 1e-12);
        }
        assert_relative_eq!(worst_case_cost(&c, &w, 0.3).unwrap().value, 1.0);
        assert!(dual_objective(&c, &w, 0.3, &DualVars { lambda: 1e-9, eta: 1.0 }).is_err());
        assert!(dual_objective(&c, &w, -1.0, &DualVars { lambda: 1.0, eta: 1.0 }).is_err());
    }

    #[test]
    fn dual_overflow_is_infinite() {
        let c = cv([1000.0, 0.0, 0.0, 0.0]);
        let w = Workload::uniform();
        let g = dual_objective(&c, &w, 0.1, &DualVars { lambda: 1.0, eta: 0.0 }).unwrap();
        assert_eq!(g, f64::INFINITY);
    }

    #[test]
    fn zero_radius_is_the_expectation() {
        let c = cv([0.3, 1.2, 4.0, 0.7]);
        let w = Workload::new(0.1, 0.2, 0.3, 0.4).unwrap();
        let wc = worst_case_cost(&c, &w, 0.0).unwrap();
        assert_eq!(wc.value, w.dot(&c));
        assert_eq!(wc.workload, w);
        let (joint, _) = solve_dual_joint(&c, &w, 0.0).unwrap();
        assert!((joint - w.dot(&c)).abs() < 1e-3, "{joint}");
    }

    #[test]
    fn large_radius_reaches_the_costliest_type() {
        let c = cv([0.3, 1.2, 4.0, 0.7]);
        let w = Workload::new(0.1, 0.2, 0.3, 0.4).unwrap();
        let wc = worst_case_cost(&c, &w, 50.0).unwrap();
        assert_eq!(wc.value, 4.0);
        assert_eq!(wc.workload.q(), 1.0);
        // Just inside the vertex threshold the value approaches c_max from below.
        let edge = -(0.3f64).ln();
        let near = worst_case_cost(&c, &w, edge - 1e-3).unwrap();
        assert!(near.value < 4.0 && near.value > 3.9, "{}", near.value);
    }

    #[test]
    fn spec_instance_matches_brute_force() {
        let c = [1.0, 2.0, 3.0, 4.0];
        let oracle = simplex_oracle(c, [0.25; 4], 0.25, 1000);
        let wc = worst_case_cost(&cv(c), &Workload::uniform(), 0.25).unwrap();
        assert!((wc.value - oracle).abs() <= 1e-3, "{} vs {}", wc.value, oracle);
        assert!(wc.value >= oracle - 1e-12);
    }

    #[test]
    fn skewed_instance_matches_brute_force() {
        let c = [0.0, 0.0, 0.0, 10.0];
        let oracle = simplex_oracle(c, [0.25; 4], 0.5, 400);
        let wc = worst_case_cost(&cv(c), &Workload::uniform(), 0.5).unwrap();
        assert!((wc.value - oracle).abs() <= 0.005 * oracle.max(0.2), "{} vs {}", wc.value, oracle);
    }

    #[test]
    fn maximizer_is_feasible_and_attains_the_value() {
        let c = cv([0.02, 1.1, 6.0, 0.4]);
        let w = Workload::new(0.33, 0.33, 0.01, 0.33).unwrap();
        for rho in [0.05, 0.25, 1.0, 2.0] {
            let wc = worst_case_cost(&c, &w, rho).unwrap();
            let kl = kl_divergence(&wc.workload, &w);
            assert!(kl <= rho + 1e-4, "rho {rho}: kl {kl}");
            let attained = wc.workload.dot(&c);
            assert!((attained - wc.value).abs() <= 1e-4 * wc.value, "{attained} vs {}", wc.value);
        }
    }

    #[test]
    fn eliminating_eta_matches_numeric_minimization() {
        let c = cv([0.2, 1.07, 19.0, 0.5]);
        let w = Workload::new(0.3, 0.3, 0.1, 0.3).unwrap();
        let rho = 0.4;
        for lambda in [0.5, 2.0, 10.0, 50.0] {
            // Golden-section search over eta, independent of the closed form.
            let g = |eta: f64| dual_objective(&c, &w, rho, &DualVars { lambda, eta }).unwrap();
            let (mut a, mut b) = (-50.0, 50.0);
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..300 {
                let x1 = b - phi * (b - a);
                let x2 = a + phi * (b - a);
                if g(x1) < g(x2) {
                    b = x2;
                } else {
                    a = x1;
                }
            }
            let numeric = g((a + b) / 2.0);
            let closed = dual_objective_eliminated(&c, &w, rho, lambda);
            assert!((numeric - closed).abs() <= 1e-6 * closed.abs().max(1.0), "{numeric} vs {closed}");
        }
        let wc = worst_case_cost(&c, &w, rho).unwrap();
        let (joint, dv) = solve_dual_joint(&c, &w, rho).unwrap();
        assert!((joint - wc.value).abs() <= 1e-6 * wc.value, "{joint} vs {}", wc.value);
        assert!((dv.lambda - wc.dual.lambda).abs() <= 1e-3 * wc.dual.lambda);
    }

    #[test]
    fn robust_objective_bounds_the_center_cost() {
        let sys = SystemParams::memory_constrained();
        let w = Workload::new(0.33, 0.33, 0.33, 0.01).unwrap();
        let res = tune_robust(&sys, &w, 1.0).unwrap();
        assert!(res.objective >= res.expected_cost - 1e-6);
        assert!(kl_divergence(&res.worst_workload, &w) <= 1.0 + 1e-4);
        assert!(res.objective <= res.diagnostics.grid_best * (1.0 + 1e-6));
        assert!(tune_robust(&sys, &w, -0.5).is_err());
    }

    fn arb_instance() -> impl Strategy<Value = ([f64; 4], [f64; 4], f64)> {
        (proptest::array::uniform4(0.0f64..10.0), proptest::array::uniform4(0.01f64..1.0), 0.0f64..3.0)
    }

    proptest! {
        #[test]
        fn non_decreasing_in_rho((c, w, rho) in arb_instance(), extra in 0.0f64..1.0) {
            let w = Workload::normalized(w).unwrap();
            let a = worst_case_cost(&cv(c), &w, rho).unwrap().value;
            let b = worst_case_cost(&cv(c), &w, rho + extra).unwrap().value;
            prop_assert!(b >= a - 1e-9 * a.abs().max(1.0));
            let max = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a >= w.dot(&cv(c)) - 1e-9 && a <= max + 1e-9);
        }

        #[test]
        fn region_points_never_beat_the_worst_case(
            (c, w, rho) in arb_instance(), probe in proptest::array::uniform4(0.0f64..1.0)
        ) {
            let w = Workload::normalized(w).unwrap();
            let wc = worst_case_cost(&cv(c), &w, rho).unwrap();
            if let Ok(p) = Workload::normalized(probe) {
                if kl_divergence(&p, &w) <= rho {
                    prop_assert!(p.dot(&cv(c)) <= wc.value + 1e-6);
                }
            }
        }
    }
}
