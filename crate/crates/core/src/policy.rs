//! Policy algebra `(traffic class, requirement condition, evaluation item)`,
//! the JSON policy document, and the most-matching-policy traverse.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::QoSRequirement;
use crate::context::{InterfaceSnapshot, TechType};

/// Tolerance on the sum of weights of a weight policy.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficClass {
    BulkTransfer,
    PriorityTraffic,
    Interactive,
    Responsive,
    RealTime,
    BandwidthIntensive,
    NetworkControl,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 7] = [
        TrafficClass::BulkTransfer,
        TrafficClass::PriorityTraffic,
        TrafficClass::Interactive,
        TrafficClass::Responsive,
        TrafficClass::RealTime,
        TrafficClass::BandwidthIntensive,
        TrafficClass::NetworkControl,
    ];
}

impl FromStr for TrafficClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| format!("unknown traffic class {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Send,
    Receive,
    Bidirectional,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Send, Direction::Receive, Direction::Bidirectional];
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| format!("unknown direction {s:?}"))
    }
}

/// Transmission metric a requirement predicate can constrain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RttMs,
    BandwidthUpKbps,
    BandwidthDownKbps,
    PacketLoss,
    SignalDbm,
    ChargeRate,
    SpeedKbps,
}

impl Metric {
    pub fn is_end_to_end(self) -> bool {
        matches!(
            self,
            Metric::RttMs | Metric::BandwidthUpKbps | Metric::BandwidthDownKbps | Metric::PacketLoss
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predicate {
    pub metric: Metric,
    pub cmp: Comparator,
    pub bound: f64,
}

impl Predicate {
    pub fn holds(&self, reading: f64) -> bool {
        match self.cmp {
            Comparator::Le => reading <= self.bound,
            Comparator::Ge => reading >= self.bound,
        }
    }
}

/// Conjunction of predicates; empty is vacuously true.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequirementCondition {
    pub predicates: Vec<Predicate>,
}

impl RequirementCondition {
    pub fn is_end_to_end(&self) -> bool {
        self.predicates.iter().any(|p| p.metric.is_end_to_end())
    }
}

/// Factor a weight policy can score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorName {
    #[serde(alias = "cost")]
    ChargeRate,
    #[serde(alias = "rtt")]
    RttMs,
    PacketLoss,
    SignalDbm,
    BandwidthKbps,
    PowerMw,
    SpeedKbps,
}

impl FactorName {
    pub const ALL: [FactorName; 7] = [
        FactorName::ChargeRate,
        FactorName::RttMs,
        FactorName::PacketLoss,
        FactorName::SignalDbm,
        FactorName::BandwidthKbps,
        FactorName::PowerMw,
        FactorName::SpeedKbps,
    ];

    /// Whether the reading comes from an end-to-end path rather than the
    /// local interface.
    pub fn is_end_to_end(self) -> bool {
        matches!(
            self,
            FactorName::RttMs | FactorName::PacketLoss | FactorName::BandwidthKbps
        )
    }
}

/// Interface designation inside a policy: `"index:N"` or a technology name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Index(u32),
    Tech(TechType),
}

impl Target {
    pub fn matches(&self, iface: &InterfaceSnapshot) -> bool {
        match self {
            Target::Index(i) => iface.descriptor.index == *i,
            Target::Tech(t) => iface.descriptor.tech_type == *t,
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(idx) = s.strip_prefix("index:") {
            return idx
                .parse()
                .map(Target::Index)
                .map_err(|_| format!("bad interface index in target {s:?}"));
        }
        if s.is_empty() {
            return Err("empty target".into());
        }
        Ok(Target::Tech(TechType::parse(s)))
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Index(i) => write!(f, "index:{i}"),
            Target::Tech(t) => write!(f, "{t}"),
        }
    }
}

impl Serialize for Target {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvaluationItem {
    Use(Target),
    Default(Target),
    /// Lower value is preferred.
    Priority(Vec<(Target, i64)>),
    Weight(Vec<(FactorName, f64)>),
}

impl EvaluationItem {
    pub fn kind(&self) -> &'static str {
        match self {
            EvaluationItem::Use(_) => "use",
            EvaluationItem::Default(_) => "default",
            EvaluationItem::Priority(_) => "priority",
            EvaluationItem::Weight(_) => "weight",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Channel,
    Application,
    Device,
}

impl Scope {
    /// Scan order of the traverse, most specific first.
    pub const SCAN_ORDER: [Scope; 3] = [Scope::Channel, Scope::Application, Scope::Device];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndType {
    Master,
    Slave,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub id: String,
    pub scope: Scope,
    pub traffic_class: Option<TrafficClass>,
    pub direction: Option<Direction>,
    pub rc: Option<RequirementCondition>,
    pub ei: EvaluationItem,
    pub end_type: EndType,
    /// Declaration index; earlier wins ties.
    pub order: usize,
}

impl Policy {
    /// Whether the requirement condition or a weight factor needs
    /// end-to-end readings.
    pub fn references_end_to_end(&self, factor_is_e2e: impl Fn(FactorName) -> bool) -> bool {
        let rc = self.rc.as_ref().is_some_and(RequirementCondition::is_end_to_end);
        let ei = match &self.ei {
            EvaluationItem::Weight(entries) => entries.iter().any(|(f, _)| factor_is_e2e(*f)),
            _ => false,
        };
        rc || ei
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRequest {
    pub application_id: String,
    pub traffic_class: TrafficClass,
    pub direction: Direction,
    pub qos: QoSRequirement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub policy_id: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "policy {}: {}", self.policy_id, self.message)
    }
}

pub fn validate_policy(policy: &Policy) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut push = |message: String| {
        out.push(Violation {
            policy_id: policy.id.clone(),
            message,
        })
    };

    if policy.id.is_empty() {
        push("empty policy id".into());
    }
    if let Some(rc) = &policy.rc {
        for p in &rc.predicates {
            if !p.bound.is_finite() {
                push(format!("non-finite bound on {:?}", p.metric));
            }
        }
    }
    match &policy.ei {
        EvaluationItem::Use(_) | EvaluationItem::Default(_) => {}
        EvaluationItem::Priority(entries) => {
            let mut seen = BTreeSet::new();
            for (target, value) in entries {
                if *value < 0 {
                    push(format!("negative priority {value} for {target}"));
                }
                if !seen.insert(target) {
                    push(format!("duplicate target {target}"));
                }
            }
        }
        EvaluationItem::Weight(entries) => {
            if entries.is_empty() {
                push("weight policy has no factors".into());
            }
            for (factor, w) in entries {
                if !w.is_finite() || *w < 0.0 {
                    push(format!("weight {w} for {factor:?} is not a non-negative number"));
                }
            }
            let sum: f64 = entries.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                push(format!("weights sum to {sum} ≠ 1"));
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Specificity of `policy` for `request`: the number of specified selectors
/// that match exactly, or `None` when a specified selector conflicts.
///
/// A bidirectional policy accepts any request direction but only scores on
/// a bidirectional request.
pub fn matching_value(policy: &Policy, request: &ChannelRequest) -> Option<u32> {
    let mut mv = 0;
    if let Some(tc) = policy.traffic_class {
        if tc != request.traffic_class {
            return None;
        }
        mv += 1;
    }
    if let Some(dir) = policy.direction {
        if dir == request.direction {
            mv += 1;
        } else if dir != Direction::Bidirectional {
            return None;
        }
    }
    Some(mv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Traverse<'a> {
    Mmp(&'a Policy),
    /// Nothing matched; the platform picks the lowest-index usable interface.
    OsFallback,
}

impl<'a> Traverse<'a> {
    pub fn policy(&self) -> Option<&'a Policy> {
        match self {
            Traverse::Mmp(p) => Some(p),
            Traverse::OsFallback => None,
        }
    }
}

/// Validated, ordered set of policies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicySet {
    policies: Vec<Policy>,
}

impl PolicySet {
    pub fn new(policies: Vec<Policy>) -> Result<Self, Vec<Violation>> {
        let mut violations = Vec::new();
        let mut orders = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for p in &policies {
            if let Err(v) = validate_policy(p) {
                violations.extend(v);
            }
            if !orders.insert(p.order) {
                violations.push(Violation {
                    policy_id: p.id.clone(),
                    message: format!("duplicate order {}", p.order),
                });
            }
            if !ids.insert(p.id.as_str()) {
                violations.push(Violation {
                    policy_id: p.id.clone(),
                    message: "duplicate policy id".into(),
                });
            }
        }
        if violations.is_empty() {
            Ok(Self { policies })
        } else {
            Err(violations)
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Policy> {
        self.policies.iter().find(|p| p.id == id)
    }
}

/// Finds the most matching policy. Scopes are scanned channel, application,
/// device; the first scope with any match decides, by highest matching value
/// and then lowest declaration order.
pub fn traverse_policies<'a>(set: &'a PolicySet, request: &ChannelRequest) -> Traverse<'a> {
    for scope in Scope::SCAN_ORDER {
        let best = set
            .policies
            .iter()
            .filter(|p| p.scope == scope)
            .filter_map(|p| matching_value(p, request).map(|mv| (mv, p)))
            .max_by(|(mv_a, a), (mv_b, b)| mv_a.cmp(mv_b).then(b.order.cmp(&a.order)));
        if let Some((_, p)) = best {
            return Traverse::Mmp(p);
        }
    }
    Traverse::OsFallback
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{}", join_violations(.0))]
    Validation(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}

impl PolicyError {
    pub(crate) fn from_json(e: serde_json::Error) -> Self {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof | Category::Io => PolicyError::Syntax(e.to_string()),
            Category::Data => PolicyError::Schema(e.to_string()),
        }
    }
}

pub mod document {
    //! Wire format of policy documents.

    use super::*;

    #[derive(Debug, Clone, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct PolicyDocument {
        pub policies: Vec<PolicyEntry>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct PriorityEntry {
        pub target: Target,
        pub value: i64,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct WeightEntry {
        pub factor: FactorName,
        pub w: f64,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct PolicyEntry {
        pub id: String,
        pub scope: Scope,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub traffic_class: Option<TrafficClass>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub direction: Option<Direction>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub rc: Option<Vec<Predicate>>,
        pub end_type: EndType,
        #[serde(default, rename = "use", skip_serializing_if = "Option::is_none")]
        pub use_: Option<Target>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub default: Option<Target>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub priority: Option<Vec<PriorityEntry>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub weight: Option<Vec<WeightEntry>>,
    }

    impl PolicyEntry {
        pub fn into_policy(self, order: usize) -> Result<Policy, PolicyError> {
            let mut items = Vec::new();
            if let Some(t) = self.use_ {
                items.push(EvaluationItem::Use(t));
            }
            if let Some(t) = self.default {
                items.push(EvaluationItem::Default(t));
            }
            if let Some(p) = self.priority {
                items.push(EvaluationItem::Priority(
                    p.into_iter().map(|e| (e.target, e.value)).collect(),
                ));
            }
            if let Some(w) = self.weight {
                items.push(EvaluationItem::Weight(
                    w.into_iter().map(|e| (e.factor, e.w)).collect(),
                ));
            }
            if items.len() != 1 {
                return Err(PolicyError::Schema(format!(
                    "policy {} must have exactly one of use/default/priority/weight, found {}",
                    self.id,
                    items.len()
                )));
            }
            Ok(Policy {
                id: self.id,
                scope: self.scope,
                traffic_class: self.traffic_class,
                direction: self.direction,
                rc: self.rc.map(|predicates| RequirementCondition { predicates }),
                ei: items.pop().expect("one item"),
                end_type: self.end_type,
                order,
            })
        }

        pub fn from_policy(p: &Policy) -> Self {
            let mut e = PolicyEntry {
                id: p.id.clone(),
                scope: p.scope,
                traffic_class: p.traffic_class,
                direction: p.direction,
                rc: p.rc.as_ref().map(|rc| rc.predicates.clone()),
                end_type: p.end_type,
                use_: None,
                default: None,
                priority: None,
                weight: None,
            };
            match &p.ei {
                EvaluationItem::Use(t) => e.use_ = Some(t.clone()),
                EvaluationItem::Default(t) => e.default = Some(t.clone()),
                EvaluationItem::Priority(v) => {
                    e.priority = Some(
                        v.iter()
                            .map(|(target, value)| PriorityEntry {
                                target: target.clone(),
                                value: *value,
                            })
                            .collect(),
                    )
                }
                EvaluationItem::Weight(v) => {
                    e.weight = Some(
                        v.iter()
                            .map(|(factor, w)| WeightEntry { factor: *factor, w: *w })
                            .collect(),
                    )
                }
            }
            e
        }
    }

    impl PolicyDocument {
        pub fn into_set(self) -> Result<PolicySet, PolicyError> {
            let policies = self
                .policies
                .into_iter()
                .enumerate()
                .map(|(order, e)| e.into_policy(order))
                .collect::<Result<Vec<_>, _>>()?;
            PolicySet::new(policies).map_err(PolicyError::Validation)
        }

        pub fn from_set(set: &PolicySet) -> Self {
            Self {
                policies: set.policies().iter().map(PolicyEntry::from_policy).collect(),
            }
        }
    }
}

/// Parses and validates a JSON policy document. `order` is the array
/// position of each policy.
pub fn parse_policy_set(bytes: &[u8]) -> Result<PolicySet, PolicyError> {
    let doc: document::PolicyDocument =
        serde_json::from_slice(bytes).map_err(PolicyError::from_json)?;
    doc.into_set()
}
