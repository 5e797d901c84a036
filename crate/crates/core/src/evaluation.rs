//! Throughput metrics and the nominal-versus-robust comparison sweep.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{cost_vector, workload_cost};
use crate::error::{Error, Result};
use crate::nominal::tune_nominal_with;
use crate::params::{CostVector, SystemParams, Tuning, Workload};
use crate::robust::tune_robust_with;
use crate::search::SearchOptions;
use crate::workloads::{kl_divergence, BenchmarkSet, Category, ExpectedWorkloadCatalog};

fn check_cost(c: f64) -> Result<f64> {
    if c.is_finite() && c > 0.0 {
        Ok(c)
    } else {
        Err(Error::Numeric(format!("cost {c} is not a positive finite number")))
    }
}

/// Relative throughput gain of a tuning with cost `c2` over one with cost `c1`.
pub fn delta_from_costs(c1: f64, c2: f64) -> Result<f64> {
    let (c1, c2) = (check_cost(c1)?, check_cost(c2)?);
    Ok((1.0 / c2 - 1.0 / c1) * c1)
}

/// Normalized delta throughput of `t2` over `t1` on `wkl`; positive iff `t2` is faster.
pub fn delta_throughput(wkl: &Workload, sys: &SystemParams, t1: &Tuning, t2: &Tuning) -> Result<f64> {
    delta_from_costs(workload_cost(wkl, sys, t1)?, workload_cost(wkl, sys, t2)?)
}

/// Max minus min throughput over a set of costs.
pub fn range_of_costs<I: IntoIterator<Item = f64>>(costs: I) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut seen = false;
    for c in costs {
        let t = 1.0 / check_cost(c)?;
        lo = lo.min(t);
        hi = hi.max(t);
        seen = true;
    }
    if !seen {
        return Err(Error::InvalidArgument("throughput range of an empty benchmark".into()));
    }
    Ok(hi - lo)
}

/// Spread between the best and the worst throughput of `tun` across `bench`.
pub fn throughput_range(bench: &BenchmarkSet, sys: &SystemParams, tun: &Tuning) -> Result<f64> {
    let c = cost_vector(sys, tun)?;
    range_of_costs(bench.workloads().map(|w| w.dot(&c)))
}

/// `{0, 0.25, ..., 3.75}`.
pub fn default_rho_grid() -> Vec<f64> {
    (0..16).map(|k| 0.25 * k as f64).collect()
}

/// Parses `start:stop:step` (inclusive of `stop`) or a comma-separated list.
pub fn parse_rho_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("bad rho grid {text:?}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let grid: Vec<f64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| start + step * k as f64).collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if grid.is_empty() || grid.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(bad());
    }
    Ok(grid)
}

/// One benchmark workload evaluated under the nominal and the robust tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub expected_idx: usize,
    pub rho: f64,
    pub workload: Workload,
    pub cost_nominal: f64,
    pub cost_robust: f64,
    /// Delta throughput of the robust tuning over the nominal one.
    pub delta: f64,
    /// KL divergence of the benchmark workload from the expected one.
    pub kl: f64,
}

/// Aggregates for one (expected workload, rho) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub expected_idx: usize,
    pub category: Category,
    pub rho: f64,
    pub nominal: Tuning,
    pub robust: Tuning,
    pub nominal_objective: f64,
    pub robust_objective: f64,
    pub mean_delta: f64,
    pub theta_nominal: f64,
    pub theta_robust: f64,
    pub comparisons: usize,
}

/// Unweighted mean of member cells' mean delta, per category and rho.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRollup {
    pub category: Category,
    pub rho: f64,
    pub mean_delta: f64,
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Cells ordered by catalog position, then by rho grid position.
    pub cells: Vec<SweepCell>,
    pub categories: Vec<CategoryRollup>,
    /// Empty unless the sweep was asked to keep them.
    pub records: Vec<ComparisonRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub keep_records: bool,
    pub search: SearchOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { keep_records: true, search: SearchOptions::default() }
    }
}

/// Tunes each catalog workload nominally and robustly for every rho, then
/// compares both tunings over every benchmark workload.
pub fn run_sweep(
    sys: &SystemParams,
    catalog: &ExpectedWorkloadCatalog,
    rho_grid: &[f64],
    bench: &BenchmarkSet,
) -> Result<SweepReport> {
    run_sweep_with(sys, catalog, rho_grid, bench, &SweepOptions::default())
}

pub fn run_sweep_with(
    sys: &SystemParams,
    catalog: &ExpectedWorkloadCatalog,
    rho_grid: &[f64],
    bench: &BenchmarkSet,
    opts: &SweepOptions,
) -> Result<SweepReport> {
    sys.validate()?;
    if bench.is_empty() {
        return Err(Error::InvalidArgument("benchmark set is empty".into()));
    }
    if rho_grid.is_empty() {
        return Err(Error::InvalidArgument("rho grid is empty".into()));
    }
    let nominals = catalog
        .entries
        .par_iter()
        .map(|e| tune_nominal_with(sys, &e.workload, &opts.search))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..catalog.len()).flat_map(|i| (0..rho_grid.len()).map(move |j| (i, j))).collect();
    let cells = jobs
        .par_iter()
        .map(|&(i, j)| {
            let entry = &catalog.entries[i];
            let nominal = &nominals[i];
            let rho = rho_grid[j];
            let robust = tune_robust_with(sys, &entry.workload, rho, &opts.search)?;
            let (cell, records) =
                compare(entry.index, entry.category, rho, &entry.workload, nominal, &robust, bench, opts)?;
            Ok((cell, records))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report =
        SweepReport { cells: Vec::with_capacity(cells.len()), categories: Vec::new(), records: Vec::new() };
    for (cell, records) in cells {
        report.cells.push(cell);
        report.records.extend(records);
    }
    for category in Category::ALL {
        for &rho in rho_grid {
            let members: Vec<f64> =
                report.cells.iter().filter(|c| c.category == category && c.rho == rho).map(|c| c.mean_delta).collect();
            if !members.is_empty() {
                report.categories.push(CategoryRollup {
                    category,
                    rho,
                    mean_delta: members.iter().sum::<f64>() / members.len() as f64,
                    members: members.len(),
                });
            }
        }
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn compare(
    expected_idx: usize,
    category: Category,
    rho: f64,
    expected: &Workload,
    nominal: &crate::nominal::TuningResult,
    robust: &crate::robust::RobustResult,
    bench: &BenchmarkSet,
    opts: &SweepOptions,
) -> Result<(SweepCell, Vec<ComparisonRecord>)> {
    let cn: CostVector = nominal.costs;
    let cr: CostVector = robust.costs;
    let mut records = Vec::with_capacity(if opts.keep_records { bench.len() } else { 0 });
    let mut delta_sum = 0.0;
    let mut nominal_costs = Vec::with_capacity(bench.len());
    let mut robust_costs = Vec::with_capacity(bench.len());
    for w in bench.workloads() {
        let (a, b) = (w.dot(&cn), w.dot(&cr));
        let delta = delta_from_costs(a, b)?;
        delta_sum += delta;
        nominal_costs.push(a);
        robust_costs.push(b);
        if opts.keep_records {
            records.push(ComparisonRecord {
                expected_idx,
                rho,
                workload: *w,
                cost_nominal: a,
                cost_robust: b,
                delta,
                kl: kl_divergence(w, expected),
            });
        }
    }
    let cell = SweepCell {
        expected_idx,
        category,
        rho,
        nominal: nominal.tuning,
        robust: robust.tuning,
        nominal_objective: nominal.objective,
        robust_objective: robust.objective,
        mean_delta: delta_sum / bench.len() as f64,
        theta_nominal: range_of_costs(nominal_costs)?,
        theta_robust: range_of_costs(robust_costs)?,
        comparisons: bench.len(),
    };
    Ok((cell, records))
}

pub const RECORDS_HEADER: &str = "expected_idx,rho,z0,z1,q,w,cost_nominal,cost_robust,delta,kl";
pub const SUMMARY_HEADER: &str = "expected_idx,category,rho,nominal_policy,nominal_size_ratio,nominal_filter_bits,\
robust_policy,robust_size_ratio,robust_filter_bits,nominal_objective,robust_objective,mean_delta,\
theta_nominal,theta_robust,comparisons";
pub const CATEGORIES_HEADER: &str = "category,rho,mean_delta,members";

impl SweepReport {
    pub fn write_records_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{RECORDS_HEADER}")?;
        for r in &self.records {
            let [z0, z1, q, w] = r.workload.as_array();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.expected_idx, r.rho, z0, z1, q, w, r.cost_nominal, r.cost_robust, r.delta, r.kl
            )?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{SUMMARY_HEADER}")?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.expected_idx,
                c.category,
                c.rho,
                c.nominal.policy,
                c.nominal.size_ratio,
                c.nominal.filter_bits,
                c.robust.policy,
                c.robust.size_ratio,
                c.robust.filter_bits,
                c.nominal_objective,
                c.robust_objective,
                c.mean_delta,
                c.theta_nominal,
                c.theta_robust,
                c.comparisons
            )?;
        }
        Ok(())
    }

    pub fn write_categories_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CATEGORIES_HEADER}")?;
        for c in &self.categories {
            writeln!(out, "{},{},{},{}", c.category, c.rho, c.mean_delta, c.members)?;
        }
        Ok(())
    }

    pub fn cell(&self, expected_idx: usize, rho: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.expected_idx == expected_idx && c.rho == rho)
    }
}
