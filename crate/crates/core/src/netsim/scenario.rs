//! Scenario file format and load-time validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{DelayEntry, DelayTable, DwellConfig, QoSRequirement, UserDecision};
use crate::context::{parse_interface_entity, Millis, TechType, Value};
use crate::cost::{FactorCatalog, FactorSpec};
use crate::policy::document::PolicyDocument;
use crate::policy::{ChannelRequest, Direction, PolicyError, PolicySet, TrafficClass};

/// Initial readings of an interface, written at time 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialReadings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_strength: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_draw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceDef {
    pub index: u32,
    pub tech_type: TechType,
    pub max_speed: f64,
    #[serde(default = "yes")]
    pub subscribed: bool,
    #[serde(default)]
    pub initial: InitialReadings,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum E2eField {
    Rtt,
    BandwidthUp,
    BandwidthDown,
    PacketLoss,
    Jitter,
}

impl E2eField {
    pub fn feature(self) -> &'static str {
        use crate::context::feature;
        match self {
            E2eField::Rtt => feature::RTT,
            E2eField::BandwidthUp => feature::BANDWIDTH_UP,
            E2eField::BandwidthDown => feature::BANDWIDTH_DOWN,
            E2eField::PacketLoss => feature::PACKET_LOSS,
            E2eField::Jitter => feature::JITTER,
        }
    }

    /// The field as seen from the other end of the path.
    pub fn mirrored(self) -> Self {
        match self {
            E2eField::BandwidthUp => E2eField::BandwidthDown,
            E2eField::BandwidthDown => E2eField::BandwidthUp,
            other => other,
        }
    }
}

/// Path readings between the first host's `local` and the second host's
/// `remote` interface, written at time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathDef {
    pub local: u32,
    pub remote: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_up: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_down: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<f64>,
}

impl PathDef {
    pub fn fields(&self) -> impl Iterator<Item = (E2eField, f64)> + '_ {
        [
            (E2eField::Rtt, self.rtt),
            (E2eField::BandwidthUp, self.bandwidth_up),
            (E2eField::BandwidthDown, self.bandwidth_down),
            (E2eField::PacketLoss, self.packet_loss),
            (E2eField::Jitter, self.jitter),
        ]
        .into_iter()
        .filter_map(|(f, v)| v.map(|v| (f, v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostDef {
    pub id: String,
    pub interfaces: Vec<InterfaceDef>,
    /// Only meaningful on the first host.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<PathDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Application {
    pub id: String,
    pub traffic_class: TrafficClass,
    pub direction: Direction,
    pub qos: QoSRequirement,
    pub start: Millis,
    pub stop: Millis,
}

impl Application {
    pub fn request(&self) -> ChannelRequest {
        ChannelRequest {
            application_id: self.id.clone(),
            traffic_class: self.traffic_class,
            direction: self.direction,
            qos: self.qos.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    SetContext {
        entity: String,
        feature: String,
        value: Value,
    },
    InterfaceUp {
        host: String,
        index: u32,
    },
    InterfaceDown {
        host: String,
        index: u32,
    },
    /// `local` indexes the first host, `remote` the second.
    SetE2e {
        local: u32,
        remote: u32,
        field: E2eField,
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: Millis,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl SimEvent {
    pub fn describe(&self) -> String {
        match &self.kind {
            EventKind::SetContext { entity, feature, value } => {
                format!("set {entity}.{feature}={value}")
            }
            EventKind::InterfaceUp { host, index } => format!("up {host}.if{index}"),
            EventKind::InterfaceDown { host, index } => format!("down {host}.if{index}"),
            EventKind::SetE2e { local, remote, field, value } => {
                format!("e2e ({local},{remote}).{}={value}", field.feature())
            }
        }
    }
}

/// A scripted answer, valid for prompts in `[from, to]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub from: Millis,
    pub to: Millis,
    pub decision: UserDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollDef {
    pub entity: String,
    pub feature: String,
    pub interval_ms: Millis,
}

/// Seeded bounded random walk on one numeric context attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomWalkDef {
    pub entity: String,
    pub feature: String,
    pub start_value: f64,
    pub step: f64,
    pub min: f64,
    pub max: f64,
    pub interval_ms: Millis,
    pub from: Millis,
    pub to: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<FactorSpec>>,
    #[serde(default)]
    pub delays: Vec<DelayEntry>,
    #[serde(default = "yes")]
    pub use_default_delays: bool,
    #[serde(default)]
    pub dwell: DwellConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub polls: Vec<PollDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub random_walks: Vec<RandomWalkDef>,
}

impl Default for ConfigDef {
    fn default() -> Self {
        Self {
            factors: None,
            delays: Vec::new(),
            use_default_delays: true,
            dwell: DwellConfig::default(),
            polls: Vec::new(),
            random_walks: Vec::new(),
        }
    }
}

/// The scenario document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub hosts: Vec<HostDef>,
    #[serde(default)]
    pub policies: BTreeMap<String, PolicyDocument>,
    pub applications: Vec<Application>,
    #[serde(default)]
    pub events: Vec<SimEvent>,
    #[serde(default)]
    pub user_script: Vec<ScriptEntry>,
    #[serde(default)]
    pub config: ConfigDef,
    #[serde(default)]
    pub seed: u64,
}

impl PartialEq for PolicyDocument {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub catalog: FactorCatalog,
    pub delays: DelayTable,
    pub dwell: DwellConfig,
    pub polls: Vec<PollDef>,
    pub random_walks: Vec<RandomWalkDef>,
}

/// A fully validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub hosts: [HostDef; 2],
    /// Policy sets in host order; a host without policies always falls back.
    pub policies: [PolicySet; 2],
    pub applications: Vec<Application>,
    pub events: Vec<SimEvent>,
    pub user_script: Vec<ScriptEntry>,
    pub config: SimConfig,
    pub seed: u64,
}

impl Scenario {
    pub fn host_ids(&self) -> [&str; 2] {
        [&self.hosts[0].id, &self.hosts[1].id]
    }

    pub fn host_position(&self, id: &str) -> Option<usize> {
        self.hosts.iter().position(|h| h.id == id)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("reference error: {0}")]
    Reference(String),
    #[error("order error: {0}")]
    Order(String),
    #[error("{}", .0.join("\n"))]
    Validation(Vec<String>),
}

impl ScenarioError {
    /// One message per line for reporting.
    pub fn messages(&self) -> Vec<String> {
        match self {
            ScenarioError::Validation(v) => v.clone(),
            other => vec![other.to_string()],
        }
    }
}

pub fn load_scenario(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = serde_json::from_slice(bytes).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof | Category::Io => ScenarioError::Syntax(e.to_string()),
            Category::Data => ScenarioError::Schema(e.to_string()),
        }
    })?;
    validate(file)
}

fn validate(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
    let ScenarioFile {
        hosts,
        policies,
        applications,
        events,
        user_script,
        config,
        seed,
    } = file;

    let hosts: [HostDef; 2] = hosts.try_into().map_err(|h: Vec<HostDef>| {
        ScenarioError::Validation(vec![format!("exactly two hosts required, found {}", h.len())])
    })?;
    let mut problems = Vec::new();

    if hosts[0].id == hosts[1].id {
        problems.push(format!("duplicate host id {}", hosts[0].id));
    }
    let mut indices: [BTreeSet<u32>; 2] = Default::default();
    let mut techs = BTreeSet::new();
    for (pos, h) in hosts.iter().enumerate() {
        if h.id.is_empty() {
            problems.push("empty host id".into());
        }
        if h.interfaces.is_empty() {
            problems.push(format!("host {} has no interfaces", h.id));
        }
        for i in &h.interfaces {
            if !indices[pos].insert(i.index) {
                problems.push(format!("host {} has duplicate interface index {}", h.id, i.index));
            }
            if !(i.max_speed.is_finite() && i.max_speed > 0.0) {
                problems.push(format!("host {} interface {}: max_speed must be positive", h.id, i.index));
            }
            techs.insert(i.tech_type.clone());
        }
    }
    if !hosts[1].paths.is_empty() {
        problems.push(format!(
            "paths are declared on the first host only (found on {})",
            hosts[1].id
        ));
    }
    for p in &hosts[0].paths {
        if !indices[0].contains(&p.local) || !indices[1].contains(&p.remote) {
            return Err(ScenarioError::Reference(format!(
                "path ({}, {}) references an unknown interface",
                p.local, p.remote
            )));
        }
        for (f, v) in p.fields() {
            check_e2e_value(f, v, &mut problems);
        }
    }

    let mut sets: [PolicySet; 2] = Default::default();
    for (host, doc) in policies {
        let Some(pos) = hosts.iter().position(|h| h.id == host) else {
            return Err(ScenarioError::Reference(format!("policies for unknown host {host}")));
        };
        match doc.into_set() {
            Ok(set) => sets[pos] = set,
            Err(PolicyError::Validation(v)) => {
                problems.extend(v.iter().map(|v| format!("host {host}: {v}")))
            }
            Err(PolicyError::Schema(m)) | Err(PolicyError::Syntax(m)) => {
                return Err(ScenarioError::Schema(format!("host {host}: {m}")))
            }
        }
    }

    let mut app_ids = BTreeSet::new();
    for a in &applications {
        if a.id.is_empty() || !app_ids.insert(a.id.as_str()) {
            problems.push(format!("application id {:?} is empty or duplicated", a.id));
        }
        if a.start >= a.stop {
            problems.push(format!("application {}: start {} must precede stop {}", a.id, a.start, a.stop));
        }
        if let Err(e) = a.qos.validate() {
            problems.push(format!("application {}: {e}", a.id));
        }
    }

    for w in events.windows(2) {
        if w[1].time < w[0].time {
            return Err(ScenarioError::Order(format!(
                "event at {} follows event at {}",
                w[1].time, w[0].time
            )));
        }
    }
    for ev in &events {
        check_event(ev, &hosts, &indices, &mut problems)?;
    }

    for (n, s) in user_script.iter().enumerate() {
        if s.from > s.to {
            problems.push(format!("user_script entry {n}: from {} after to {}", s.from, s.to));
        }
    }

    let catalog = match config.factors {
        None => FactorCatalog::default(),
        Some(specs) => match FactorCatalog::new(specs) {
            Ok(c) => c,
            Err(e) => {
                problems.push(e.to_string());
                FactorCatalog::default()
            }
        },
    };
    let delays = DelayTable::new(config.delays, config.use_default_delays);
    if !delays.uses_defaults() {
        for from in &techs {
            for to in &techs {
                if delays.lookup(from, to).is_err() {
                    problems.push(format!("delay table lacks {from} -> {to}"));
                }
            }
        }
    }
    if let Err(e) = config.dwell.validate() {
        problems.push(e);
    }
    for p in &config.polls {
        if p.interval_ms == 0 {
            problems.push(format!("poll on {}.{}: interval must be positive", p.entity, p.feature));
        }
        if p.entity.is_empty() || p.feature.is_empty() {
            problems.push("poll entity and feature must be non-empty".into());
        }
    }
    for w in &config.random_walks {
        let ok = w.interval_ms > 0
            && w.from <= w.to
            && w.min <= w.max
            && w.step >= 0.0
            && [w.start_value, w.step, w.min, w.max].iter().all(|v| v.is_finite())
            && !w.entity.is_empty()
            && !w.feature.is_empty();
        if !ok {
            problems.push(format!("random walk on {}.{} is malformed", w.entity, w.feature));
        }
    }

    if !problems.is_empty() {
        return Err(ScenarioError::Validation(problems));
    }
    Ok(Scenario {
        hosts,
        policies: sets,
        applications,
        events,
        user_script,
        config: SimConfig {
            catalog,
            delays,
            dwell: config.dwell,
            polls: config.polls,
            random_walks: config.random_walks,
        },
        seed,
    })
}

fn check_e2e_value(field: E2eField, v: f64, problems: &mut Vec<String>) {
    let ok = match field {
        E2eField::PacketLoss => (0.0..=1.0).contains(&v),
        _ => v.is_finite() && v >= 0.0,
    };
    if !ok {
        problems.push(format!("{} value {v} out of range", field.feature()));
    }
}

fn check_event(
    ev: &SimEvent,
    hosts: &[HostDef; 2],
    indices: &[BTreeSet<u32>; 2],
    problems: &mut Vec<String>,
) -> Result<(), ScenarioError> {
    let host_pos = |id: &str| hosts.iter().position(|h| h.id == id);
    let iface = |host: &str, index: u32| -> Result<(), ScenarioError> {
        match host_pos(host) {
            Some(p) if indices[p].contains(&index) => Ok(()),
            Some(_) => Err(ScenarioError::Reference(format!(
                "event at {} references interface {index} of host {host}, which does not exist",
                ev.time
            ))),
            None => Err(ScenarioError::Reference(format!(
                "event at {} references unknown host {host}",
                ev.time
            ))),
        }
    };
    match &ev.kind {
        EventKind::SetContext { entity, feature, value } => {
            if entity.is_empty() || feature.is_empty() {
                problems.push(format!("event at {}: empty entity or feature", ev.time));
            }
            if let Value::Number(n) = value {
                if !n.is_finite() {
                    problems.push(format!("event at {}: non-finite value", ev.time));
                }
            }
            if let Some((host, index)) = parse_interface_entity(entity) {
                if host_pos(host).is_some() {
                    iface(host, index)?;
                }
            }
        }
        EventKind::InterfaceUp { host, index } | EventKind::InterfaceDown { host, index } => {
            iface(host, *index)?;
        }
        EventKind::SetE2e { local, remote, field, value } => {
            iface(&hosts[0].id, *local)?;
            iface(&hosts[1].id, *remote)?;
            check_e2e_value(*field, *value, problems);
        }
    }
    Ok(())
}
