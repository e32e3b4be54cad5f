#![allow(dead_code)]

use std::path::PathBuf;

use conman_core::netsim::{load_scenario, run_simulation, trace_to_string, Scenario, SimOutput};

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn load(name: &str) -> Scenario {
    let path = scenario_dir().join(format!("{name}.json"));
    let bytes = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    load_scenario(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn run(name: &str) -> SimOutput {
    run_simulation(&load(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Every scenario file shipped with the workspace, by stem.
pub fn all_scenarios() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .expect("scenario directory")
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(str::to_owned))?
        })
        .collect();
    names.sort();
    names
}

pub fn trace_bytes(out: &SimOutput) -> Vec<u8> {
    trace_to_string(&out.trace).into_bytes()
}

pub fn actions<'a>(out: &'a SimOutput, action: &str) -> Vec<&'a conman_core::netsim::TraceRecord> {
    out.trace.iter().filter(|r| r.action == action).collect()
}
