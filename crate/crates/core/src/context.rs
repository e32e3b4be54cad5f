//! Context data model and a timestamped, latest-wins context store.
//!
//! Every piece of context is a `(entity, feature, value, time)` tuple. The
//! store keeps the full per-key history so that views can be assembled "as
//! of" any simulated instant, and supports the three access modes: explicit
//! query, periodic polling and event-driven subscriptions.
//!
//! Interface attributes live under the entity `"<host>.if<index>"`; end-to-end
//! path readings under `"<host>.if<i>-><peer>.if<j>"` as seen from `<host>`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in milliseconds.
pub type Millis = u64;

/// Feature names for per-interface attributes.
pub mod feature {
    pub const AVAILABLE: &str = "available";
    pub const SIGNAL_STRENGTH: &str = "signal_strength";
    pub const SNR: &str = "snr";
    pub const CHARGE_RATE: &str = "charge_rate";
    pub const POWER_DRAW: &str = "power_draw";
    pub const CURRENT_SPEED: &str = "current_speed";

    pub const RTT: &str = "rtt";
    pub const BANDWIDTH_UP: &str = "bandwidth_up";
    pub const BANDWIDTH_DOWN: &str = "bandwidth_down";
    pub const PACKET_LOSS: &str = "packet_loss";
    pub const JITTER: &str = "jitter";

    pub const INTERFACE: [&str; 6] = [
        AVAILABLE,
        SIGNAL_STRENGTH,
        SNR,
        CHARGE_RATE,
        POWER_DRAW,
        CURRENT_SPEED,
    ];
    pub const END_TO_END: [&str; 5] = [RTT, BANDWIDTH_UP, BANDWIDTH_DOWN, PACKET_LOSS, JITTER];
}

/// Readings used when an attribute was never written.
pub mod defaults {
    pub const AVAILABLE: bool = false;
    pub const SIGNAL_STRENGTH_DBM: f64 = -120.0;
    pub const SNR_DB: f64 = 0.0;
    pub const CHARGE_RATE: f64 = 0.0;
    pub const POWER_DRAW_MW: f64 = 0.0;
    pub const CURRENT_SPEED_KBPS: f64 = 0.0;
    /// Delay assumed for an end-to-end path whose delay was never measured
    /// while some other reading for it was.
    pub const UNKNOWN_DELAY_MS: f64 = 1.0e9;
}

/// Entity name of interface `index` on `host`.
pub fn interface_entity(host: &str, index: u32) -> String {
    format!("{host}.if{index}")
}

/// Entity name of the end-to-end path from `host`'s interface `local` to
/// `peer`'s interface `remote`, as observed by `host`.
pub fn path_entity(host: &str, local: u32, peer: &str, remote: u32) -> String {
    format!("{host}.if{local}->{peer}.if{remote}")
}

/// Splits `"<host>.if<index>"` into its parts.
pub fn parse_interface_entity(entity: &str) -> Option<(&str, u32)> {
    let (host, idx) = entity.rsplit_once(".if")?;
    if host.is_empty() || idx.is_empty() || !idx.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((host, idx.parse().ok()?))
}

/// A tagged scalar context value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Number(v)
    }
}

impl From<i32> for Value {
    fn from(v: i32) -> Self {
        Value::Number(v as f64)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Text(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextTuple {
    pub entity: String,
    pub feature: String,
    pub value: Value,
    pub time: Millis,
}

impl ContextTuple {
    pub fn new(
        entity: impl Into<String>,
        feature: impl Into<String>,
        value: impl Into<Value>,
        time: Millis,
    ) -> Self {
        Self {
            entity: entity.into(),
            feature: feature.into(),
            value: value.into(),
            time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum TechType {
    Gsm,
    Gprs,
    Wlan,
    Bluetooth,
    Other(String),
}

impl From<String> for TechType {
    fn from(s: String) -> Self {
        TechType::parse(&s)
    }
}

impl From<TechType> for String {
    fn from(t: TechType) -> Self {
        t.name().to_owned()
    }
}

impl TechType {
    /// Case-insensitive for the known technologies; anything else is `Other`.
    pub fn parse(name: &str) -> TechType {
        match name.to_ascii_uppercase().as_str() {
            "GSM" => TechType::Gsm,
            "GPRS" => TechType::Gprs,
            "WLAN" => TechType::Wlan,
            "BLUETOOTH" => TechType::Bluetooth,
            _ => TechType::Other(name.to_owned()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            TechType::Gsm => "GSM",
            TechType::Gprs => "GPRS",
            TechType::Wlan => "WLAN",
            TechType::Bluetooth => "BLUETOOTH",
            TechType::Other(s) => s,
        }
    }
}

impl fmt::Display for TechType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceDescriptor {
    pub host_id: String,
    pub index: u32,
    pub tech_type: TechType,
    /// Kilobits per second.
    pub max_speed: f64,
    /// Whether the user has access to the provider network behind it.
    pub subscribed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceSnapshot {
    pub descriptor: InterfaceDescriptor,
    pub available: bool,
    pub signal_strength: f64,
    pub snr: f64,
    pub charge_rate: f64,
    pub power_draw: f64,
    pub current_speed: f64,
}

impl InterfaceSnapshot {
    /// A snapshot carrying only defaults.
    pub fn unobserved(descriptor: InterfaceDescriptor) -> Self {
        Self {
            descriptor,
            available: defaults::AVAILABLE,
            signal_strength: defaults::SIGNAL_STRENGTH_DBM,
            snr: defaults::SNR_DB,
            charge_rate: defaults::CHARGE_RATE,
            power_draw: defaults::POWER_DRAW_MW,
            current_speed: defaults::CURRENT_SPEED_KBPS,
        }
    }

    pub fn index(&self) -> u32 {
        self.descriptor.index
    }

    /// Available and subscribed.
    pub fn usable(&self) -> bool {
        self.available && self.descriptor.subscribed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndToEndQoS {
    pub rtt: f64,
    pub bandwidth_up: f64,
    pub bandwidth_down: f64,
    pub packet_loss_rate: f64,
    pub jitter: f64,
}

impl EndToEndQoS {
    /// The same path seen from the other end.
    pub fn reversed(&self) -> Self {
        Self {
            bandwidth_up: self.bandwidth_down,
            bandwidth_down: self.bandwidth_up,
            ..self.clone()
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.rtt, self.bandwidth_up, self.bandwidth_down, self.jitter]
            .iter()
            .all(|v| *v >= 0.0)
            && (0.0..=1.0).contains(&self.packet_loss_rate)
    }
}

/// A host's view of its interfaces and end-to-end paths at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostContextView {
    pub host_id: String,
    /// Ordered by index ascending.
    pub interfaces: Vec<InterfaceSnapshot>,
    /// Keyed by (local index, remote index).
    #[serde(default, with = "e2e_entries")]
    pub e2e: BTreeMap<(u32, u32), EndToEndQoS>,
    pub as_of: Millis,
}

impl HostContextView {
    pub fn interface(&self, index: u32) -> Option<&InterfaceSnapshot> {
        self.interfaces
            .binary_search_by_key(&index, |s| s.index())
            .ok()
            .map(|pos| &self.interfaces[pos])
    }

    pub fn position_of(&self, index: u32) -> Option<usize> {
        self.interfaces
            .binary_search_by_key(&index, |s| s.index())
            .ok()
    }

    pub fn e2e(&self, local: u32, remote: u32) -> Option<&EndToEndQoS> {
        self.e2e.get(&(local, remote))
    }

    /// Checks ordering and that e2e keys reference existing local indices.
    pub fn check(&self) -> Result<(), String> {
        if self.interfaces.is_empty() {
            return Err(format!("host {} has no interfaces", self.host_id));
        }
        if !self.interfaces.windows(2).all(|w| w[0].index() < w[1].index()) {
            return Err(format!(
                "host {} interfaces are not strictly ordered by index",
                self.host_id
            ));
        }
        for (local, remote) in self.e2e.keys() {
            if self.interface(*local).is_none() {
                return Err(format!(
                    "host {} e2e entry ({local},{remote}) references unknown local interface",
                    self.host_id
                ));
            }
        }
        Ok(())
    }
}

/// JSON objects cannot have tuple keys, so the e2e map travels as a list.
mod e2e_entries {
    use super::EndToEndQoS;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        local: u32,
        remote: u32,
        #[serde(flatten)]
        qos: EndToEndQoS,
    }

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(u32, u32), EndToEndQoS>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = map
            .iter()
            .map(|((local, remote), qos)| Entry {
                local: *local,
                remote: *remote,
                qos: qos.clone(),
            })
            .collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<(u32, u32), EndToEndQoS>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries
            .into_iter()
            .map(|e| ((e.local, e.remote), e.qos))
            .collect())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("invalid tuple: {0}")]
    InvalidTuple(String),
    #[error("time regression on ({entity}, {feature}): {time} < latest {latest}")]
    TimeRegression {
        entity: String,
        feature: String,
        time: Millis,
        latest: Millis,
    },
    #[error("poll interval must be positive")]
    InvalidInterval,
    #[error("unknown host {0}")]
    UnknownHost(String),
    #[error("duplicate interface index {index} on host {host}")]
    DuplicateInterface { host: String, index: u32 },
    #[error("interface max_speed must be positive (host {host}, index {index})")]
    InvalidDescriptor { host: String, index: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubscriptionId(pub u64);

/// What a subscriber receives.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub subscription: SubscriptionId,
    /// Tick time for polls, tuple time for events.
    pub at: Millis,
    /// `None` when a poll tick finds nothing stored yet.
    pub tuple: Option<ContextTuple>,
}

pub type Sink = Box<dyn FnMut(&Delivery) + Send>;
pub type Predicate = Box<dyn Fn(&ContextTuple) -> bool + Send + Sync>;

pub enum SubscriptionMode {
    Poll { interval_ms: Millis },
    Event(Predicate),
}

impl fmt::Debug for SubscriptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubscriptionMode::Poll { interval_ms } => write!(f, "Poll({interval_ms})"),
            SubscriptionMode::Event(_) => f.write_str("Event(..)"),
        }
    }
}

struct Subscription {
    id: SubscriptionId,
    entity: String,
    feature: String,
    kind: SubscriptionKind,
    sink: Sink,
}

enum SubscriptionKind {
    Poll { interval: Millis, next_tick: Millis },
    Event(Predicate),
}

type Key = (String, String);

/// Latest-wins context storage with query, poll and event access.
///
/// Writes take `&mut self` and reads `&self`, so wrapping the store in a
/// `RwLock` gives serialized writes with concurrent consistent reads.
#[derive(Default)]
pub struct ContextStore {
    history: BTreeMap<Key, Vec<ContextTuple>>,
    hosts: BTreeMap<String, BTreeMap<u32, InterfaceDescriptor>>,
    subscriptions: Vec<Subscription>,
    next_subscription: u64,
    clock: Millis,
}

impl fmt::Debug for ContextStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContextStore")
            .field("keys", &self.history.len())
            .field("hosts", &self.hosts.keys().collect::<Vec<_>>())
            .field("subscriptions", &self.subscriptions.len())
            .field("clock", &self.clock)
            .finish()
    }
}

impl ContextStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_interface(&mut self, descriptor: InterfaceDescriptor) -> Result<(), ContextError> {
        if descriptor.max_speed.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(ContextError::InvalidDescriptor {
                host: descriptor.host_id,
                index: descriptor.index,
            });
        }
        let host = self.hosts.entry(descriptor.host_id.clone()).or_default();
        if host.contains_key(&descriptor.index) {
            return Err(ContextError::DuplicateInterface {
                host: descriptor.host_id,
                index: descriptor.index,
            });
        }
        host.insert(descriptor.index, descriptor);
        Ok(())
    }

    pub fn put(&mut self, tuple: ContextTuple) -> Result<(), ContextError> {
        if tuple.entity.is_empty() || tuple.feature.is_empty() {
            return Err(ContextError::InvalidTuple(
                "entity and feature must be non-empty".into(),
            ));
        }
        if let Value::Number(n) = tuple.value {
            if !n.is_finite() {
                return Err(ContextError::InvalidTuple(format!(
                    "non-finite value for ({}, {})",
                    tuple.entity, tuple.feature
                )));
            }
        }
        let key = (tuple.entity.clone(), tuple.feature.clone());
        let slot = self.history.entry(key).or_default();
        if let Some(latest) = slot.last() {
            if tuple.time < latest.time {
                return Err(ContextError::TimeRegression {
                    entity: tuple.entity,
                    feature: tuple.feature,
                    time: tuple.time,
                    latest: latest.time,
                });
            }
        }
        slot.push(tuple.clone());

        for sub in &mut self.subscriptions {
            if let SubscriptionKind::Event(pred) = &sub.kind {
                if sub.entity == tuple.entity && sub.feature == tuple.feature && pred(&tuple) {
                    (sub.sink)(&Delivery {
                        subscription: sub.id,
                        at: tuple.time,
                        tuple: Some(tuple.clone()),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn query_latest(&self, entity: &str, feature: &str) -> Option<&ContextTuple> {
        self.history
            .get(&(entity.to_owned(), feature.to_owned()))
            .and_then(|h| h.last())
    }

    /// Latest tuple with `time <= at`.
    pub fn query_at(&self, entity: &str, feature: &str, at: Millis) -> Option<&ContextTuple> {
        let h = self.history.get(&(entity.to_owned(), feature.to_owned()))?;
        let n = h.partition_point(|t| t.time <= at);
        n.checked_sub(1).map(|i| &h[i])
    }

    pub fn now(&self) -> Millis {
        self.clock
    }

    /// Registers a subscription. Poll ticks fall at `now + k * interval`.
    pub fn subscribe(
        &mut self,
        mode: SubscriptionMode,
        entity: &str,
        feature: &str,
        sink: Sink,
    ) -> Result<SubscriptionId, ContextError> {
        let kind = match mode {
            SubscriptionMode::Poll { interval_ms: 0 } => return Err(ContextError::InvalidInterval),
            SubscriptionMode::Poll { interval_ms } => SubscriptionKind::Poll {
                interval: interval_ms,
                next_tick: self.clock + interval_ms,
            },
            SubscriptionMode::Event(pred) => SubscriptionKind::Event(pred),
        };
        let id = SubscriptionId(self.next_subscription);
        self.next_subscription += 1;
        self.subscriptions.push(Subscription {
            id,
            entity: entity.to_owned(),
            feature: feature.to_owned(),
            kind,
            sink,
        });
        Ok(id)
    }

    pub fn unsubscribe(&mut self, id: SubscriptionId) -> bool {
        let before = self.subscriptions.len();
        self.subscriptions.retain(|s| s.id != id);
        before != self.subscriptions.len()
    }

    /// Earliest pending poll tick.
    pub fn next_poll_due(&self) -> Option<Millis> {
        self.subscriptions
            .iter()
            .filter_map(|s| match s.kind {
                SubscriptionKind::Poll { next_tick, .. } => Some(next_tick),
                SubscriptionKind::Event(_) => None,
            })
            .min()
    }

    /// Moves the clock forward, firing every poll tick `<= to` in time
    /// order (ties by subscription id). Returns the number of deliveries.
    pub fn advance_to(&mut self, to: Millis) -> usize {
        let mut delivered = 0;
        while let Some(due) = self.next_poll_due().filter(|d| *d <= to) {
            for i in 0..self.subscriptions.len() {
                let (entity, feature, hit) = {
                    let sub = &self.subscriptions[i];
                    match sub.kind {
                        SubscriptionKind::Poll { next_tick, .. } if next_tick == due => {
                            (sub.entity.clone(), sub.feature.clone(), true)
                        }
                        _ => (String::new(), String::new(), false),
                    }
                };
                if !hit {
                    continue;
                }
                let tuple = self.query_at(&entity, &feature, due).cloned();
                let sub = &mut self.subscriptions[i];
                if let SubscriptionKind::Poll { interval, next_tick } = &mut sub.kind {
                    *next_tick += *interval;
                }
                (sub.sink)(&Delivery {
                    subscription: sub.id,
                    at: due,
                    tuple,
                });
                delivered += 1;
            }
        }
        self.clock = self.clock.max(to);
        delivered
    }

    pub fn hosts(&self) -> impl Iterator<Item = &str> {
        self.hosts.keys().map(String::as_str)
    }

    pub fn interfaces(&self, host: &str) -> Option<impl Iterator<Item = &InterfaceDescriptor>> {
        self.hosts.get(host).map(|m| m.values())
    }

    /// Assembles `host`'s view from the latest tuples at or before `at`.
    pub fn snapshot_host(&self, host: &str, at: Millis) -> Result<HostContextView, ContextError> {
        let ifaces = self
            .hosts
            .get(host)
            .filter(|m| !m.is_empty())
            .ok_or_else(|| ContextError::UnknownHost(host.to_owned()))?;

        let interfaces = ifaces
            .values()
            .map(|d| {
                let entity = interface_entity(host, d.index);
                let num = |f: &str, default: f64| {
                    self.query_at(&entity, f, at)
                        .and_then(|t| t.value.as_f64())
                        .unwrap_or(default)
                };
                InterfaceSnapshot {
                    descriptor: d.clone(),
                    available: self
                        .query_at(&entity, feature::AVAILABLE, at)
                        .and_then(|t| t.value.as_bool())
                        .unwrap_or(defaults::AVAILABLE),
                    signal_strength: num(feature::SIGNAL_STRENGTH, defaults::SIGNAL_STRENGTH_DBM),
                    snr: num(feature::SNR, defaults::SNR_DB),
                    charge_rate: num(feature::CHARGE_RATE, defaults::CHARGE_RATE),
                    power_draw: num(feature::POWER_DRAW, defaults::POWER_DRAW_MW),
                    current_speed: num(feature::CURRENT_SPEED, defaults::CURRENT_SPEED_KBPS),
                }
            })
            .collect();

        Ok(HostContextView {
            host_id: host.to_owned(),
            interfaces,
            e2e: self.e2e_for(host, ifaces, at),
            as_of: at,
        })
    }

    fn e2e_for(
        &self,
        host: &str,
        ifaces: &BTreeMap<u32, InterfaceDescriptor>,
        at: Millis,
    ) -> BTreeMap<(u32, u32), EndToEndQoS> {
        let mut out = BTreeMap::new();
        for &local in ifaces.keys() {
            let prefix = format!("{}->", interface_entity(host, local));
            let lo = (prefix.clone(), String::new());
            let mut seen: BTreeMap<String, u32> = BTreeMap::new();
            for ((entity, _), _) in self.history.range(lo..) {
                let Some(rest) = entity.strip_prefix(&prefix) else {
                    break;
                };
                if let Some((_, remote)) = parse_interface_entity(rest) {
                    seen.insert(entity.clone(), remote);
                }
            }
            for (entity, remote) in seen {
                let read = |f: &str| self.query_at(&entity, f, at).and_then(|t| t.value.as_f64());
                let fields = [
                    read(feature::RTT),
                    read(feature::BANDWIDTH_UP),
                    read(feature::BANDWIDTH_DOWN),
                    read(feature::PACKET_LOSS),
                    read(feature::JITTER),
                ];
                if fields.iter().all(Option::is_none) {
                    continue;
                }
                out.insert(
                    (local, remote),
                    EndToEndQoS {
                        rtt: fields[0].unwrap_or(defaults::UNKNOWN_DELAY_MS),
                        bandwidth_up: fields[1].unwrap_or(0.0),
                        bandwidth_down: fields[2].unwrap_or(0.0),
                        packet_loss_rate: fields[3].unwrap_or(1.0),
                        jitter: fields[4].unwrap_or(defaults::UNKNOWN_DELAY_MS),
                    },
                );
            }
        }
        out
    }
}
