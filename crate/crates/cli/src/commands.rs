use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lsmtune::evaluation::{parse_rho_grid, run_sweep_with, SweepOptions};
use lsmtune::workloads::ExpectedWorkloadCatalog;
use lsmtune::{
    expected_catalog, kl_divergence, sample_benchmark, tune_nominal, tune_robust, BenchmarkSet, Diagnostics, Policy,
    SystemConfig, SystemParams, Workload,
};

use crate::manifest::{beside, RunManifest};
use crate::{BenchGenArgs, CliError, CliResult, Command, SweepArgs, TuneArgs};

/// Runs `command`. `system` replaces the system file when replaying a manifest.
pub fn run(command: &Command, system: Option<SystemConfig>) -> CliResult<()> {
    match command {
        Command::Tune(args) => tune(command, args, system),
        Command::BenchGen(args) => bench_gen(command, args),
        Command::Sweep(args) => sweep(command, args, system),
        Command::Simulate(args) => crate::simulate::simulate(command, args, system),
        Command::Replay(args) => {
            let manifest = RunManifest::read(&args.manifest)?;
            if matches!(manifest.command, Command::Replay(_)) {
                return Err(CliError::Usage("a manifest cannot replay another replay".into()));
            }
            run(&manifest.command, manifest.system)
        }
    }
}

pub fn load_system(path: &Path, replayed: Option<SystemConfig>) -> CliResult<(SystemConfig, SystemParams)> {
    let config = match replayed {
        Some(c) => c,
        None => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read system file {}: {e}", path.display())))?;
            SystemConfig::from_json(&text)?
        }
    };
    let params = config.to_params()?;
    Ok((config, params))
}

/// Parses `z0,z1,q,w`, renormalizing with a warning when the sum is off.
pub fn parse_workload(text: &str) -> CliResult<Workload> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("workload {text:?} is not four comma-separated numbers")))?;
    let v: [f64; 4] =
        parts.try_into().map_err(|_| CliError::Usage(format!("workload {text:?} needs exactly four proportions")))?;
    if let Ok(w) = Workload::from_array(v) {
        return Ok(w);
    }
    let w = Workload::normalized(v)?;
    eprintln!("warning: workload {text} does not sum to 1; using {w}");
    Ok(w)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

pub fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let mut out = create(path)?;
    body(&mut out).and_then(|_| out.flush())?;
    Ok(())
}

const BITS_PER_BYTE: f64 = 8.0;

/// Tuning document written by `tune` and read by `simulate`. Only the policy,
/// continuous size ratio, filter memory and workload are needed on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningDoc {
    pub policy: Policy,
    #[serde(rename = "T_continuous")]
    pub t_continuous: f64,
    #[serde(rename = "T_deployed", default)]
    pub t_deployed: f64,
    pub m_filt_bytes: f64,
    #[serde(default)]
    pub m_buf_bytes: f64,
    /// Worst-case cost for robust tunings, expected cost for nominal ones.
    #[serde(default)]
    pub objective: f64,
    /// `None` for nominal tunings.
    pub rho: Option<f64>,
    pub workload: Workload,
    #[serde(default)]
    pub expected_cost: f64,
    pub worst_workload: Option<Workload>,
    pub diagnostics: Option<Diagnostics>,
}

impl TuningDoc {
    pub fn tuning(&self) -> lsmtune::Tuning {
        lsmtune::Tuning::new(self.t_continuous, self.m_filt_bytes * BITS_PER_BYTE, self.policy)
    }
}

fn tune(command: &Command, args: &TuneArgs, system: Option<SystemConfig>) -> CliResult<()> {
    let (config, sys) = load_system(&args.system, system)?;
    let workload = parse_workload(&args.workload)?;
    let doc = if args.nominal {
        let r = tune_nominal(&sys, &workload)?;
        TuningDoc {
            policy: r.tuning.policy,
            t_continuous: r.tuning.size_ratio,
            t_deployed: r.tuning.deployed().size_ratio,
            m_filt_bytes: r.tuning.filter_bits / BITS_PER_BYTE,
            m_buf_bytes: r.tuning.buffer_bits(&sys) / BITS_PER_BYTE,
            objective: r.objective,
            rho: None,
            workload,
            expected_cost: r.objective,
            worst_workload: None,
            diagnostics: Some(r.diagnostics),
        }
    } else {
        let rho = args.rho.ok_or_else(|| CliError::Usage("either --rho or --nominal is required".into()))?;
        let r = tune_robust(&sys, &workload, rho)?;
        TuningDoc {
            policy: r.tuning.policy,
            t_continuous: r.tuning.size_ratio,
            t_deployed: r.tuning.deployed().size_ratio,
            m_filt_bytes: r.tuning.filter_bits / BITS_PER_BYTE,
            m_buf_bytes: r.tuning.buffer_bits(&sys) / BITS_PER_BYTE,
            objective: r.objective,
            rho: Some(rho),
            workload,
            expected_cost: r.expected_cost,
            worst_workload: Some(r.worst_workload),
            diagnostics: Some(r.diagnostics),
        }
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Usage(e.to_string()))?;
    text.push('\n');
    let mut outputs = Vec::new();
    match &args.out {
        Some(path) => {
            write_file(path, |f| f.write_all(text.as_bytes()))?;
            outputs.push(path.clone());
        }
        None => print!("{text}"),
    }
    let manifest_path = args.manifest.clone().unwrap_or_else(|| match &args.out {
        Some(p) => beside(p),
        None => PathBuf::from("lsmtune-tune.manifest.json"),
    });
    RunManifest::new(command, Some(config), Vec::new(), outputs).write(&manifest_path)
}

fn bench_gen(command: &Command, args: &BenchGenArgs) -> CliResult<()> {
    let bench = sample_benchmark(args.n, args.seed, args.max_count)?;
    write_file(&args.out, |f| bench.write_jsonl(f))?;
    let uniform = Workload::uniform();
    let mean_kl = bench.workloads().map(|w| kl_divergence(w, &uniform)).sum::<f64>() / bench.len() as f64;
    println!("n={} seed={} rng={} mean_kl_vs_uniform={mean_kl:.6}", bench.len(), bench.seed, bench.rng);
    let manifest_path = args.manifest.clone().unwrap_or_else(|| beside(&args.out));
    RunManifest::new(command, None, vec![args.seed], vec![args.out.clone()]).write(&manifest_path)
}

pub fn read_bench(path: &Path) -> CliResult<BenchmarkSet> {
    let file =
        File::open(path).map_err(|e| CliError::Usage(format!("cannot read benchmark {}: {e}", path.display())))?;
    Ok(BenchmarkSet::read_jsonl(BufReader::new(file))?)
}

fn parse_catalog(text: &str) -> CliResult<ExpectedWorkloadCatalog> {
    let all = expected_catalog();
    if text.trim() == "all" {
        return Ok(all);
    }
    let indices: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("catalog {text:?} is neither `all` nor a list of indices")))?;
    Ok(all.select(&indices)?)
}

fn sweep(command: &Command, args: &SweepArgs, system: Option<SystemConfig>) -> CliResult<()> {
    let (config, sys) = load_system(&args.system, system)?;
    let bench = read_bench(&args.bench)?;
    let grid = parse_rho_grid(&args.rho_grid)?;
    let catalog = parse_catalog(&args.catalog)?;
    let opts = SweepOptions { keep_records: !args.summary_only, ..SweepOptions::default() };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    let report = pool.install(|| run_sweep_with(&sys, &catalog, &grid, &bench, &opts))?;

    let mut outputs = Vec::new();
    if !args.summary_only {
        let path = args.out_dir.join("records.csv");
        write_file(&path, |f| report.write_records_csv(f))?;
        outputs.push(path);
    }
    let path = args.out_dir.join("summary.csv");
    write_file(&path, |f| report.write_summary_csv(f))?;
    outputs.push(path);
    let path = args.out_dir.join("categories.csv");
    write_file(&path, |f| report.write_categories_csv(f))?;
    outputs.push(path);
    eprintln!(
        "{} cells, {} comparisons written to {}",
        report.cells.len(),
        report.cells.iter().map(|c| c.comparisons).sum::<usize>(),
        args.out_dir.display()
    );
    RunManifest::new(command, Some(config), vec![bench.seed], outputs).write(&args.out_dir.join("manifest.json"))
}
