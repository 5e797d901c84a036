//! Box-constrained search over (size ratio, filter memory) for each policy.
//!
//! The objective is any function of the cost vector, so the nominal and the
//! robust tuner share this code. For every policy the search
//!
//! 1. evaluates a dense grid (integer size ratios, `filter_steps + 1` filter
//!    allocations),
//! 2. runs projected descent with central finite-difference gradients from a
//!    fixed coarse set of starts and from the best grid points,
//! 3. scans, for every level count `L`, the curve of smallest size ratios
//!    that still give `L` levels. The cost jumps down when a level
//!    disappears, so optima often sit on these curves where finite
//!    differences cannot follow them,
//! 4. keeps the best point seen, so the answer is never worse than the grid.
//!
//! The size ratio at filter allocation `m_filt` is bounded by
//! `max(2, N * E / (m - m_filt))` (beyond it the tree has one level) and by
//! [`SearchOptions::size_ratio_cap`].

use std::cell::Cell;
use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::cost::{evaluate, level_count};
use crate::error::{Error, Result};
use crate::params::{CostVector, Policy, SystemParams, Tuning};

const COARSE_RATIOS: [f64; 5] = [2.0, 5.0, 10.0, 20.0, 50.0];
const COARSE_FILTER_FRACTIONS: [f64; 3] = [0.1, 0.5, 0.9];
/// Finite-difference step as a fraction of the box width.
const FD_STEP: f64 = 1e-4;
/// Objectives closer than this (relative) count as a tie between policies.
const POLICY_TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Upper bound on the size ratio regardless of memory.
    pub size_ratio_cap: f64,
    /// Number of filter-memory intervals in the verification grid.
    pub filter_steps: usize,
    /// Best grid points used as extra local-search starts, per policy.
    pub grid_starts: usize,
    /// Descent iterations per start.
    pub max_iterations: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { size_ratio_cap: 100.0, filter_steps: 64, grid_starts: 3, max_iterations: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyBest {
    pub policy: Policy,
    pub objective: f64,
    pub size_ratio: f64,
    pub filter_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Descent iterations summed over all starts and policies.
    pub iterations: usize,
    /// Local-search starts summed over policies.
    pub restarts: usize,
    /// Whether the start that produced the answer stopped on a vanishing step.
    pub converged: bool,
    pub evaluations: usize,
    pub grid_points: usize,
    /// Points evaluated on level-count boundaries, over both policies.
    pub boundary_points: usize,
    /// Best objective on the verification grid, over both policies.
    pub grid_best: f64,
    pub size_ratio_bounds: [f64; 2],
    pub filter_bits_bounds: [f64; 2],
    pub per_policy: Vec<PolicyBest>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SearchOutcome {
    pub tuning: Tuning,
    pub objective: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    t: f64,
    bits: f64,
    value: f64,
}

fn by_value(a: &Candidate, b: &Candidate) -> Ordering {
    a.value.total_cmp(&b.value).then(a.t.total_cmp(&b.t)).then(a.bits.total_cmp(&b.bits))
}

struct PolicySearch<'a, F> {
    sys: &'a SystemParams,
    policy: Policy,
    opts: &'a SearchOptions,
    objective: &'a F,
    max_bits: f64,
    t_box: f64,
    evaluations: Cell<usize>,
}

impl<F: Fn(&CostVector) -> f64> PolicySearch<'_, F> {
    fn t_limit(&self, bits: f64) -> f64 {
        self.sys.max_size_ratio(bits).min(self.opts.size_ratio_cap).max(2.0)
    }

    fn eval(&self, t: f64, bits: f64) -> f64 {
        self.evaluations.set(self.evaluations.get() + 1);
        let c = evaluate(self.sys, &Tuning::new(t, bits, self.policy));
        let v = (self.objective)(&c);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    // Normalized coordinates: u over [2, t_box], v over [0, max_bits].
    fn to_point(&self, u: f64, v: f64) -> (f64, f64) {
        let bits = v.clamp(0.0, 1.0) * self.max_bits;
        let t = (2.0 + u.clamp(0.0, 1.0) * (self.t_box - 2.0)).min(self.t_limit(bits)).max(2.0);
        (t, bits)
    }

    fn to_coords(&self, t: f64, bits: f64) -> (f64, f64) {
        let u = if self.t_box > 2.0 { (t - 2.0) / (self.t_box - 2.0) } else { 0.0 };
        (u.clamp(0.0, 1.0), (bits / self.max_bits).clamp(0.0, 1.0))
    }

    fn project(&self, u: f64, v: f64) -> (f64, f64) {
        let (t, bits) = self.to_point(u, v);
        self.to_coords(t, bits)
    }

    fn grid(&self) -> Vec<Candidate> {
        let steps = self.opts.filter_steps.max(1);
        let mut out = Vec::new();
        for k in 0..=steps {
            let bits = self.max_bits * k as f64 / steps as f64;
            let limit = self.t_limit(bits);
            let mut t = 2.0;
            while t <= limit {
                out.push(Candidate { t, bits, value: self.eval(t, bits) });
                t += 1.0;
            }
            if limit.fract() != 0.0 {
                out.push(Candidate { t: limit, bits, value: self.eval(limit, bits) });
            }
        }
        out
    }

    /// Smallest size ratio giving exactly `levels` levels at `bits`, if it is
    /// inside the box.
    fn boundary_ratio(&self, levels: u32, bits: f64) -> Option<f64> {
        let x = self.sys.n() * self.sys.entry_size_bits / (self.sys.total_memory_bits - bits) + 1.0;
        let mut t = x.powf(1.0 / f64::from(levels)).max(2.0);
        for _ in 0..8 {
            let l = level_count(self.sys, &Tuning::new(t, bits, self.policy));
            if l <= levels {
                break;
            }
            t *= 1.0 + 1e-12;
        }
        let ok = t <= self.t_limit(bits) && level_count(self.sys, &Tuning::new(t, bits, self.policy)) == levels;
        ok.then_some(t)
    }

    fn boundary_eval(&self, levels: u32, bits: f64) -> Option<Candidate> {
        self.boundary_ratio(levels, bits).map(|t| Candidate { t, bits, value: self.eval(t, bits) })
    }

    /// Best point on each level-count boundary: a fine scan over filter
    /// memory followed by golden-section refinement around the best sample.
    fn boundary(&self) -> (Vec<Candidate>, usize) {
        let steps = 4 * self.opts.filter_steps.max(1);
        let deepest = level_count(self.sys, &Tuning::new(2.0, self.max_bits, self.policy));
        let mut out = Vec::new();
        let mut points = 0;
        for levels in 1..=deepest {
            let samples: Vec<(usize, Candidate)> = (0..=steps)
                .filter_map(|k| {
                    let bits = self.max_bits * k as f64 / steps as f64;
                    self.boundary_eval(levels, bits).map(|c| (k, c))
                })
                .collect();
            points += samples.len();
            let Some(&(k, first)) = samples.iter().min_by(|a, b| by_value(&a.1, &b.1)) else {
                continue;
            };
            let h = self.max_bits / steps as f64;
            let (mut a, mut b) = ((k as f64 - 1.0).max(0.0) * h, ((k + 1) as f64 * h).min(self.max_bits));
            let at = |bits: f64| self.boundary_eval(levels, bits).map_or(f64::INFINITY, |c| c.value);
            let ratio = (5f64.sqrt() - 1.0) / 2.0;
            let mut x1 = b - ratio * (b - a);
            let mut x2 = a + ratio * (b - a);
            let (mut f1, mut f2) = (at(x1), at(x2));
            for _ in 0..60 {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - ratio * (b - a);
                    f1 = at(x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + ratio * (b - a);
                    f2 = at(x2);
                }
            }
            points += 62;
            let refined = [x1, x2].into_iter().filter_map(|bits| self.boundary_eval(levels, bits));
            let best = refined.fold(first, |cur, c| if by_value(&c, &cur) == Ordering::Less { c } else { cur });
            out.push(best);
        }
        (out, points)
    }

    fn gradient(&self, u: f64, v: f64) -> [f64; 2] {
        let mut g = [0.0; 2];
        let dims = [(self.t_box > 2.0, 0usize), (self.max_bits > 0.0, 1usize)];
        for (active, axis) in dims {
            if !active {
                continue;
            }
            let shift = |d: f64| {
                if axis == 0 {
                    self.project(u + d, v)
                } else {
                    self.project(u, v + d)
                }
            };
            let (plus, minus) = (shift(FD_STEP), shift(-FD_STEP));
            let span = if axis == 0 { plus.0 - minus.0 } else { plus.1 - minus.1 };
            if span <= 0.0 {
                continue;
            }
            let fp = {
                let (t, b) = self.to_point(plus.0, plus.1);
                self.eval(t, b)
            };
            let fm = {
                let (t, b) = self.to_point(minus.0, minus.1);
                self.eval(t, b)
            };
            if fp.is_finite() && fm.is_finite() {
                g[axis] = (fp - fm) / span;
            }
        }
        g
    }

    /// Projected normalized-gradient descent with step doubling and halving.
    fn descend(&self, start: (f64, f64)) -> (Candidate, usize, bool) {
        let (mut u, mut v) = self.to_coords(start.0, start.1);
        let (t0, b0) = self.to_point(u, v);
        let mut fx = self.eval(t0, b0);
        let mut step = 0.05;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.opts.max_iterations {
            iterations += 1;
            let g = self.gradient(u, v);
            let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if !(norm > 0.0) {
                converged = true;
                break;
            }
            let d = [-g[0] / norm, -g[1] / norm];
            let mut moved = false;
            while step >= 1e-9 {
                let (nu, nv) = self.project(u + step * d[0], v + step * d[1]);
                let (t, b) = self.to_point(nu, nv);
                let f = self.eval(t, b);
                if f < fx - 1e-13 * fx.abs() {
                    u = nu;
                    v = nv;
                    fx = f;
                    step = (step * 2.0).min(0.5);
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                converged = true;
                break;
            }
        }
        let (t, bits) = self.to_point(u, v);
        (Candidate { t, bits, value: fx }, iterations, converged)
    }
}

/// Minimizes `objective(c(tuning))` over both policies.
pub(crate) fn minimize<F>(sys: &SystemParams, opts: &SearchOptions, objective: F) -> Result<SearchOutcome>
where
    F: Fn(&CostVector) -> f64,
{
    sys.validate()?;
    let max_bits = sys.max_filter_bits();
    if !(max_bits > 0.0) {
        return Err(Error::Infeasible(format!(
            "total memory {} bits does not exceed one page of entries ({} bits)",
            sys.total_memory_bits,
            sys.min_buffer_bits()
        )));
    }
    if !(opts.size_ratio_cap >= 2.0) {
        return Err(Error::InvalidArgument("size ratio cap must be at least 2".into()));
    }

    let mut diagnostics = Diagnostics {
        iterations: 0,
        restarts: 0,
        converged: false,
        evaluations: 0,
        grid_points: 0,
        boundary_points: 0,
        grid_best: f64::INFINITY,
        size_ratio_bounds: [2.0, 2.0],
        filter_bits_bounds: [0.0, max_bits],
        per_policy: Vec::new(),
    };
    let mut best: Option<(Policy, Candidate, bool)> = None;

    for policy in Policy::ALL {
        let mut search =
            PolicySearch { sys, policy, opts, objective: &objective, max_bits, t_box: 2.0, evaluations: Cell::new(0) };
        search.t_box = search.t_limit(max_bits);
        diagnostics.size_ratio_bounds[1] = diagnostics.size_ratio_bounds[1].max(search.t_box);

        let mut grid = search.grid();
        grid.sort_by(by_value);
        diagnostics.grid_points += grid.len();
        if let Some(g) = grid.first() {
            diagnostics.grid_best = diagnostics.grid_best.min(g.value);
        }

        let mut starts: Vec<(f64, f64)> = Vec::new();
        for &frac in &COARSE_FILTER_FRACTIONS {
            let bits = (frac * sys.total_memory_bits).min(max_bits);
            for &t in &COARSE_RATIOS {
                starts.push((t.min(search.t_limit(bits)), bits));
            }
        }
        starts.extend(grid.iter().take(opts.grid_starts).map(|c| (c.t, c.bits)));

        let mut local: Option<(Candidate, bool)> = grid.first().map(|c| (*c, true));
        let (edges, edge_points) = search.boundary();
        diagnostics.boundary_points += edge_points;
        for cand in edges {
            if local.as_ref().is_none_or(|(cur, _)| by_value(&cand, cur) == Ordering::Less) {
                local = Some((cand, true));
            }
        }
        for start in starts {
            let (cand, iters, conv) = search.descend(start);
            diagnostics.iterations += iters;
            diagnostics.restarts += 1;
            let better = match &local {
                None => true,
                Some((cur, _)) => by_value(&cand, cur) == Ordering::Less,
            };
            if better {
                local = Some((cand, conv));
            }
        }
        diagnostics.evaluations += search.evaluations.get();

        let (cand, conv) = local.expect("grid is never empty");
        diagnostics.per_policy.push(PolicyBest {
            policy,
            objective: cand.value,
            size_ratio: cand.t,
            filter_bits: cand.bits,
        });
        let replace = match &best {
            None => true,
            Some((_, cur, _)) => {
                let tie = POLICY_TIE * cur.value.abs().max(1.0);
                // Policies are visited leveling first, so ties keep leveling.
                cand.value < cur.value - tie
            }
        };
        if replace {
            best = Some((policy, cand, conv));
        }
    }

    let (policy, cand, converged) = best.expect("at least one policy");
    if !cand.value.is_finite() {
        return Err(Error::Numeric("objective is not finite anywhere in the search box".into()));
    }
    diagnostics.converged = converged;
    let tuning = Tuning::new(cand.t, cand.bits, policy);
    tuning.validate(sys)?;
    Ok(SearchOutcome { tuning, objective: cand.value, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Workload;

    #[test]
    fn rejects_memory_below_one_page() {
        let sys = SystemParams {
            total_memory_bits: 4.0 * 8192.0,
            entry_size_bits: 8192.0,
            page_capacity: 4,
            num_entries: 1000,
            rw_asymmetry: 1.0,
            range_selectivity: 0.0,
        };
        let err = minimize(&sys, &SearchOptions::default(), |c| c.write).unwrap_err();
        assert!(err.is_infeasible());
    }

    #[test]
    fn never_worse_than_the_grid() {
        let sys = SystemParams::memory_constrained();
        let w = Workload::new(0.3, 0.2, 0.3, 0.2).unwrap();
        let out = minimize(&sys, &SearchOptions::default(), |c| w.dot(c)).unwrap();
        assert!(out.objective <= out.diagnostics.grid_best);
        assert_eq!(out.diagnostics.per_policy.len(), 2);
        assert_eq!(out.diagnostics.restarts, 2 * (15 + 3));
    }

    #[test]
    fn descent_improves_on_its_start() {
        let sys = SystemParams::memory_constrained();
        let w = Workload::new(0.49, 0.49, 0.01, 0.01).unwrap();
        let objective = |c: &CostVector| w.dot(c);
        let opts = SearchOptions::default();
        let search = PolicySearch {
            sys: &sys,
            policy: Policy::Leveling,
            opts: &opts,
            objective: &objective,
            max_bits: sys.max_filter_bits(),
            t_box: sys.max_size_ratio(sys.max_filter_bits()).min(100.0),
            evaluations: Cell::new(0),
        };
        let start = (10.0, 0.1 * sys.max_filter_bits());
        let f0 = search.eval(start.0, start.1);
        let (end, iters, converged) = search.descend(start);
        assert!(end.value < f0);
        assert!(iters > 0);
        assert!(converged);
    }
}
