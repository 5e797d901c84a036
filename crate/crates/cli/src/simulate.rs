use std::io::Write;

use serde::Deserialize;

use lsmtune::sim::{run_session, session_counts, SessionTemplate, SimConfig, SimTree, EXPECTED_MAX_KL};
use lsmtune::{cost_vector, kl_divergence, SystemConfig, Workload};

use crate::commands::{load_system, write_file, TuningDoc};
use crate::manifest::{beside, RunManifest};
use crate::{CliError, CliResult, Command, SimulateArgs};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionEntry {
    name: Option<String>,
    template: Option<SessionTemplate>,
    queries: Option<u64>,
    /// Explicit per-type counts instead of a template.
    counts: Option<[u64; 4]>,
    /// Mix for an `expected` session; defaults to the tuning workload.
    workload: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SessionsDoc {
    List(Vec<SessionEntry>),
    Wrapped { sessions: Vec<SessionEntry> },
}

struct Session {
    name: String,
    template: String,
    counts: [u64; 4],
}

fn resolve(entry: &SessionEntry, index: usize, tuned_for: &Workload) -> CliResult<Session> {
    let name = entry.name.clone().unwrap_or_else(|| format!("session{index}"));
    let bad = |msg: &str| CliError::Usage(format!("session {name:?}: {msg}"));
    match (entry.template, entry.counts) {
        (Some(_), Some(_)) => Err(bad("give either a template or counts, not both")),
        (None, None) => Err(bad("needs a template or counts")),
        (None, Some(counts)) => {
            if entry.queries.is_some() || entry.workload.is_some() {
                return Err(bad("queries and workload only apply to templates"));
            }
            Ok(Session { name, template: "custom".into(), counts })
        }
        (Some(template), None) => {
            let queries = entry.queries.ok_or_else(|| bad("templates need a query count"))?;
            let mix = match (template, entry.workload) {
                (SessionTemplate::Expected, Some(v)) => {
                    let w = Workload::normalized(v)?;
                    let kl = kl_divergence(&w, tuned_for);
                    if !(kl < EXPECTED_MAX_KL) {
                        return Err(bad(&format!(
                            "expected sessions must stay within KL {EXPECTED_MAX_KL} of the tuning workload, got {kl}"
                        )));
                    }
                    w
                }
                (_, Some(_)) => return Err(bad("only `expected` sessions take a workload")),
                (t, None) => t.mix(tuned_for),
            };
            Ok(Session { name, template: template.as_str().into(), counts: session_counts(&mix, queries) })
        }
    }
}

fn read_sessions(path: &std::path::Path) -> CliResult<Vec<SessionEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read sessions {}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let doc: SessionsDoc = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad sessions file {}: {e}", path.display())))?;
    Ok(match doc {
        SessionsDoc::List(v) | SessionsDoc::Wrapped { sessions: v } => v,
    })
}

pub const SIM_HEADER: &str = "session,template,source,count_z0,count_z1,count_q,count_w,z0,z1,q,w,per_query,kl";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Bulk-loads a tree for the tuning and runs every session on it in order.
/// Session `i` (0-based) is seeded with `seed + 1 + i`.
pub fn simulate(command: &Command, args: &SimulateArgs, system: Option<SystemConfig>) -> CliResult<()> {
    let (config, mut sys) = load_system(&args.system, system)?;
    let text = std::fs::read_to_string(&args.tuning)
        .map_err(|e| CliError::Usage(format!("cannot read tuning {}: {e}", args.tuning.display())))?;
    let doc: TuningDoc = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad tuning file {}: {e}", args.tuning.display())))?;
    let specs = read_sessions(&args.sessions)?;
    let sessions =
        specs.iter().enumerate().map(|(i, s)| resolve(s, i, &doc.workload)).collect::<CliResult<Vec<_>>>()?;

    if let Some(n) = args.entries {
        sys.num_entries = n;
    }
    let cfg = SimConfig::new(&sys, &doc.tuning(), args.seed)?;
    let model = cost_vector(&sys, &cfg.tuning)?;
    let mut rows = Vec::new();
    if !sessions.is_empty() {
        let mut tree = SimTree::bulk_load(cfg, sys.num_entries)?;
        for (i, s) in sessions.iter().enumerate() {
            let seed = args.seed.wrapping_add(1 + i as u64);
            let stats = run_session(&mut tree, s.counts, seed)?;
            let mix = Workload::from_counts(s.counts).ok();
            let kl = mix.map(|m| kl_divergence(&m, &doc.workload));
            let c = s.counts;
            let prefix =
                |source: &str| format!("{},{},{source},{},{},{},{}", s.name, s.template, c[0], c[1], c[2], c[3]);
            let m = model.as_array();
            rows.push(format!(
                "{},{},{},{},{},{},{}",
                prefix("model"),
                m[0],
                m[1],
                m[2],
                m[3],
                cell(mix.map(|w| w.dot(&model))),
                cell(kl)
            ));
            let measured = stats.per_type(sys.rw_asymmetry);
            rows.push(format!(
                "{},{},{},{},{},{},{}",
                prefix("simulator"),
                cell(measured[0]),
                cell(measured[1]),
                cell(measured[2]),
                cell(measured[3]),
                cell(stats.mean_per_query(sys.rw_asymmetry)),
                cell(kl)
            ));
        }
    }
    write_file(&args.out, |f| {
        writeln!(f, "{SIM_HEADER}")?;
        for r in &rows {
            writeln!(f, "{r}")?;
        }
        Ok(())
    })?;
    let manifest_path = args.manifest.clone().unwrap_or_else(|| beside(&args.out));
    RunManifest::new(command, Some(config), vec![args.seed], vec![args.out.clone()]).write(&manifest_path)
}
