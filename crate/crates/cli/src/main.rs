use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use conman_core::channel::{assess, DelayTable, DwellConfig, EvalContext, HostPair, MmpIds};
use conman_core::cost::{FactorCatalog, FactorSpec};
use conman_core::netsim::{
    load_scenario, run_simulation, write_trace, Metrics, ScenarioError,
};
use conman_core::policy::document::PolicyDocument;
use conman_core::policy::{parse_policy_set, PolicyError, PolicySet};
use conman_core::{
    ChannelRequest, CostMatrix, DecisionMode, Direction, HostContextView, Pair, QoSRequirement,
    TrafficClass,
};

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "conman", version, about = "Policy-driven channel selection and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace and metrics.
    Run {
        scenario: PathBuf,
        /// Trace output, JSON Lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Metrics output, JSON.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Summary on standard output.
        #[arg(long, value_enum)]
        report: Option<Report>,
    },
    /// Check a policy or scenario file and list every problem found.
    Validate {
        path: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
    },
    /// One selection pass over a two-host context snapshot.
    Eval {
        snapshot: PathBuf,
        policies: PathBuf,
        /// e.g. "tc=real_time,dir=send"
        #[arg(long, value_parser = parse_request)]
        request: RequestSpec,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Report {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Policy,
    Scenario,
}

#[derive(Clone, Debug)]
struct RequestSpec {
    application: String,
    traffic_class: TrafficClass,
    direction: Direction,
}

fn parse_request(s: &str) -> Result<RequestSpec, String> {
    let mut tc = None;
    let mut dir = None;
    let mut app = "eval".to_owned();
    for part in s.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got {part:?}"))?;
        match k.trim() {
            "tc" => tc = Some(v.trim().parse()?),
            "dir" => dir = Some(v.trim().parse()?),
            "app" => app = v.trim().to_owned(),
            other => return Err(format!("unknown request key {other:?}")),
        }
    }
    Ok(RequestSpec {
        application: app,
        traffic_class: tc.ok_or("missing tc=")?,
        direction: dir.ok_or("missing dir=")?,
    })
}

/// Simulator failures that are not the input's fault.
#[derive(Debug)]
struct Internal(String);

impl fmt::Display for Internal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "internal error: {}", self.0)
    }
}

impl std::error::Error for Internal {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONMAN_LOG", "off")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            scenario,
            trace,
            metrics,
            report,
        } => cmd_run(&scenario, trace.as_deref(), metrics.as_deref(), report),
        Command::Validate { path, kind } => cmd_validate(&path, kind),
        Command::Eval {
            snapshot,
            policies,
            request,
        } => cmd_eval(&snapshot, &policies, &request),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<Internal>() { EXIT_INTERNAL } else { EXIT_INPUT })
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

/// Syntax and schema problems are input errors; the rest are validation
/// failures reported one per line.
fn scenario_failure(e: &ScenarioError) -> Result<u8> {
    match e {
        ScenarioError::Syntax(_) | ScenarioError::Schema(_) => Err(anyhow!("{e}")),
        _ => {
            for m in e.messages() {
                eprintln!("{m}");
            }
            Ok(EXIT_VALIDATION)
        }
    }
}

fn cmd_run(
    path: &Path,
    trace_path: Option<&Path>,
    metrics_path: Option<&Path>,
    report: Option<Report>,
) -> Result<u8> {
    let scenario = match load_scenario(&read(path)?) {
        Ok(s) => s,
        Err(e) => return scenario_failure(&e),
    };
    info!("loaded {} with {} events", path.display(), scenario.events.len());
    let out = run_simulation(&scenario).map_err(|e| Internal(e.to_string()))?;

    if let Some(p) = trace_path {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_trace(&out.trace, BufWriter::new(f)).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = metrics_path {
        let json = serde_json::to_string_pretty(&out.metrics)?;
        fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    match report {
        None => {}
        Some(Report::Json) => println!("{}", serde_json::to_string(&out.metrics)?),
        Some(Report::Text) => print_report(&out.metrics, out.trace.len())?,
    }
    Ok(EXIT_OK)
}

fn print_report(metrics: &Metrics, records: usize) -> io::Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{records} trace records")?;
    for m in &metrics.channels {
        let mean = m
            .mean_cost
            .map_or_else(|| "n/a".to_owned(), |c| format!("{c:.4}"));
        writeln!(
            out,
            "{}: {} switches, {} suspends, {} resumes; active {} ms, suspended {} ms, \
             before establishment {} ms; mean cost {}; below QoS threshold {} ms",
            m.channel,
            m.switch_count,
            m.suspend_count,
            m.resume_count,
            m.active_ms,
            m.suspended_ms,
            m.pre_establish_ms,
            mean,
            m.qos_violation_ms
        )?;
    }
    Ok(())
}

fn cmd_validate(path: &Path, kind: Kind) -> Result<u8> {
    let bytes = read(path)?;
    match kind {
        Kind::Scenario => match load_scenario(&bytes) {
            Ok(_) => Ok(EXIT_OK),
            Err(e) => scenario_failure(&e),
        },
        Kind::Policy => match parse_policy_set(&bytes) {
            Ok(_) => Ok(EXIT_OK),
            Err(PolicyError::Validation(violations)) => {
                for v in violations {
                    println!("{v}");
                }
                Ok(EXIT_VALIDATION)
            }
            Err(e) => Err(anyhow!("{e}")),
        },
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Snapshot {
    hosts: [HostContextView; 2],
    #[serde(default)]
    factors: Option<Vec<FactorSpec>>,
}

#[derive(Serialize)]
struct EvalOutput {
    status: &'static str,
    mmp: MmpIds,
    mode: DecisionMode,
    local_costs: CostMatrix,
    remote_costs: CostMatrix,
    pair: Option<Pair>,
    cost: Option<f64>,
}

/// A single policy document applies to both hosts; otherwise the file maps
/// host ids to documents and a missing host has no policies.
fn load_policies(bytes: &[u8], hosts: [&str; 2]) -> Result<std::result::Result<[PolicySet; 2], Vec<String>>> {
    let value: serde_json::Value = serde_json::from_slice(bytes).context("parsing policies")?;
    let docs: BTreeMap<String, PolicyDocument> = if value.get("policies").is_some_and(|p| p.is_array()) {
        let doc: PolicyDocument = serde_json::from_value(value).context("parsing policies")?;
        hosts.iter().map(|h| (h.to_string(), doc.clone())).collect()
    } else {
        serde_json::from_value(value).context("parsing policies")?
    };
    if let Some(unknown) = docs.keys().find(|k| !hosts.contains(&k.as_str())) {
        bail!("policies given for unknown host {unknown}");
    }
    let mut problems = Vec::new();
    let mut sets = [PolicySet::empty(), PolicySet::empty()];
    for (pos, host) in hosts.iter().enumerate() {
        let Some(doc) = docs.get(*host) else { continue };
        match doc.clone().into_set() {
            Ok(set) => sets[pos] = set,
            Err(PolicyError::Validation(v)) => {
                problems.extend(v.iter().map(|v| format!("host {host}: {v}")))
            }
            Err(e) => bail!("host {host}: {e}"),
        }
    }
    Ok(if problems.is_empty() { Ok(sets) } else { Err(problems) })
}

fn cmd_eval(snapshot_path: &Path, policies_path: &Path, spec: &RequestSpec) -> Result<u8> {
    let snapshot: Snapshot = serde_json::from_slice(&read(snapshot_path)?)
        .with_context(|| format!("parsing {}", snapshot_path.display()))?;
    for view in &snapshot.hosts {
        view.check().map_err(|e| anyhow!("snapshot: {e}"))?;
    }
    let [a, b] = &snapshot.hosts;
    let sets = match load_policies(&read(policies_path)?, [&a.host_id, &b.host_id])? {
        Ok(sets) => sets,
        Err(problems) => {
            for p in problems {
                eprintln!("{p}");
            }
            return Ok(EXIT_VALIDATION);
        }
    };
    let catalog = match snapshot.factors {
        Some(f) => FactorCatalog::new(f).map_err(|e| anyhow!("snapshot: {e}"))?,
        None => FactorCatalog::default(),
    };
    let delays = DelayTable::new(Vec::new(), true);
    let dwell = DwellConfig::default();
    let ctx = EvalContext {
        hosts: HostPair { local: a, remote: b },
        local_policies: &sets[0],
        remote_policies: &sets[1],
        catalog: &catalog,
        delays: &delays,
        dwell: &dwell,
    };
    // selection does not look at the QoS bounds
    let request = ChannelRequest {
        application_id: spec.application.clone(),
        traffic_class: spec.traffic_class,
        direction: spec.direction,
        qos: QoSRequirement {
            min_throughput: 1.0,
            max_delay: 1.0,
            max_cost_rate: 1.0,
            max_disruption: 1.0,
            min_acceptable: 1.0,
        },
    };
    let assessment = assess(&ctx, &request);
    let out = EvalOutput {
        status: if assessment.best.is_some() { "ok" } else { "no_valid_connection" },
        mode: assessment.mode,
        pair: assessment.best.map(|c| c.pair),
        cost: assessment.best.map(|c| c.cost),
        mmp: assessment.mmp,
        local_costs: assessment.local_costs,
        remote_costs: assessment.remote_costs,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(if out.pair.is_some() { EXIT_OK } else { EXIT_VALIDATION })
}
