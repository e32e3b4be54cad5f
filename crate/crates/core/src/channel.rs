//! Channel selection and switching.
//!
//! Both ends compute their cost structures; the XOR of their channel end
//! types picks master-slave or peer-to-peer selection. After establishment,
//! every event re-runs selection and decides whether to stay, switch, ask the
//! user about cost, or suspend. Switches are damped by a dwell time and a
//! stability count.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{HostContextView, Millis, TechType};
use crate::cost::{compute_cost_matrix, os_fallback_costs, Cost, CostMatrix, FactorCatalog};
use crate::policy::{traverse_policies, ChannelRequest, Direction, EndType, PolicySet, Traverse};

/// Per-application QoS bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoSRequirement {
    /// kbit/s
    pub min_throughput: f64,
    /// ms
    pub max_delay: f64,
    /// currency per MB
    pub max_cost_rate: f64,
    /// Tolerable switching outage, ms.
    pub max_disruption: f64,
    /// Fraction of `min_throughput` below which the current channel is
    /// no longer of acceptable quality.
    pub min_acceptable: f64,
}

impl QoSRequirement {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("min_throughput", self.min_throughput),
            ("max_delay", self.max_delay),
            ("max_cost_rate", self.max_cost_rate),
            ("max_disruption", self.max_disruption),
            ("min_acceptable", self.min_acceptable),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.min_acceptable > 1.0 {
            return Err(format!("min_acceptable must be at most 1, got {}", self.min_acceptable));
        }
        Ok(())
    }

    /// Throughput below which the running channel is unacceptable.
    pub fn threshold(&self) -> f64 {
        self.min_acceptable * self.min_throughput
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    MasterSlave,
    PeerToPeer,
}

/// Same end types give peer-to-peer, different ones master-slave.
pub fn decision_mode(a: EndType, b: EndType) -> DecisionMode {
    if a == b {
        DecisionMode::PeerToPeer
    } else {
        DecisionMode::MasterSlave
    }
}

/// Interface indices of a connection: `local` on the first host, `remote` on
/// the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Pair {
    pub local: u32,
    pub remote: u32,
}

impl Pair {
    pub fn new(local: u32, remote: u32) -> Self {
        Self { local, remote }
    }
}

impl From<[u32; 2]> for Pair {
    fn from([local, remote]: [u32; 2]) -> Self {
        Self { local, remote }
    }
}

impl From<Pair> for [u32; 2] {
    fn from(p: Pair) -> Self {
        [p.local, p.remote]
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.local, self.remote)
    }
}

/// Result of a selection over positional matrix indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub row: usize,
    pub col: usize,
    /// Master-side cost for master-slave, pair sum for peer-to-peer.
    pub cost: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("no valid connection")]
    NoValidConnection,
    #[error("shape mismatch: {0}x{1} against {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
}

/// Broadcasts vectors and checks that `a` is `m × n` and `b` is `n × m`.
pub fn align(a: &CostMatrix, b: &CostMatrix) -> Result<(CostMatrix, CostMatrix), SelectError> {
    let a = a.broadcast(b.rows());
    let b = b.broadcast(a.rows());
    if a.rows() != b.cols() || a.cols() != b.rows() {
        return Err(SelectError::ShapeMismatch(a.rows(), a.cols(), b.rows(), b.cols()));
    }
    Ok((a, b))
}

/// Master-slave selection.
///
/// A pair is feasible when both ends rate it finite. The master collects the
/// feasible pairs of minimal master cost; a unique one is returned directly,
/// otherwise the slave picks the candidate it rates cheapest, ties broken by
/// its own `(row, col)` order.
pub fn select_master_slave(
    c_m: &CostMatrix,
    c_s: &CostMatrix,
) -> Result<Selection, SelectError> {
    let (c_m, c_s) = align(c_m, c_s)?;
    let mut best: Option<f64> = None;
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for x in 0..c_m.rows() {
        for y in 0..c_m.cols() {
            let (Cost::Finite(v), true) = (c_m.get(x, y), c_s.get(y, x).is_finite()) else {
                continue;
            };
            match best {
                Some(b) if v > b => {}
                Some(b) if v == b => candidates.push((x, y)),
                _ => {
                    best = Some(v);
                    candidates.clear();
                    candidates.push((x, y));
                }
            }
        }
    }
    let cost = best.ok_or(SelectError::NoValidConnection)?;
    if let [(row, col)] = candidates[..] {
        return Ok(Selection { row, col, cost });
    }
    // slave side, over exchanged pairs
    let (y, x) = candidates
        .iter()
        .map(|&(x, y)| (y, x))
        .min_by(|&(y1, x1), &(y2, x2)| {
            c_s.get(y1, x1)
                .cmp(&c_s.get(y2, x2))
                .then((y1, x1).cmp(&(y2, x2)))
        })
        .expect("non-empty candidate set");
    Ok(Selection { row: x, col: y, cost })
}

/// Peer-to-peer selection: minimal `c_a[i][j] + c_b[j][i]` over pairs finite
/// on both sides, ties broken by `(i, j)`.
pub fn select_peer_to_peer(
    c_a: &CostMatrix,
    c_b: &CostMatrix,
) -> Result<Selection, SelectError> {
    let (c_a, c_b) = align(c_a, c_b)?;
    let mut best: Option<Selection> = None;
    for i in 0..c_a.rows() {
        for j in 0..c_a.cols() {
            if let Cost::Finite(s) = c_a.get(i, j) + c_b.get(j, i) {
                if best.is_none_or(|b| s < b.cost) {
                    best = Some(Selection { row: i, col: j, cost: s });
                }
            }
        }
    }
    best.ok_or(SelectError::NoValidConnection)
}

/// Switching delay between technologies, in ms.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTable {
    entries: BTreeMap<(TechType, TechType), Millis>,
    use_defaults: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayEntry {
    pub from: TechType,
    pub to: TechType,
    pub delay_ms: Millis,
}

impl DelayTable {
    pub const DEFAULT_INTRA_MS: Millis = 50;
    pub const DEFAULT_VERTICAL_MS: Millis = 1000;

    pub fn new(entries: Vec<DelayEntry>, use_defaults: bool) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|e| ((e.from, e.to), e.delay_ms))
                .collect(),
            use_defaults,
        }
    }

    pub fn entries(&self) -> Vec<DelayEntry> {
        self.entries
            .iter()
            .map(|((from, to), delay_ms)| DelayEntry {
                from: from.clone(),
                to: to.clone(),
                delay_ms: *delay_ms,
            })
            .collect()
    }

    pub fn uses_defaults(&self) -> bool {
        self.use_defaults
    }

    pub fn lookup(&self, from: &TechType, to: &TechType) -> Result<Millis, ChannelError> {
        if let Some(d) = self.entries.get(&(from.clone(), to.clone())) {
            return Ok(*d);
        }
        match (self.use_defaults, from == to) {
            (true, true) => Ok(Self::DEFAULT_INTRA_MS),
            (true, false) => Ok(Self::DEFAULT_VERTICAL_MS),
            (false, _) => Err(ChannelError::UnknownTechPair(from.clone(), to.clone())),
        }
    }
}

impl Default for DelayTable {
    fn default() -> Self {
        Self::new(Vec::new(), true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwellConfig {
    /// Minimum time between switches.
    #[serde(default = "DwellConfig::default_t_dwell")]
    pub t_dwell: Millis,
    /// Consecutive evaluations a new candidate must stay best.
    #[serde(default = "DwellConfig::default_k_stable")]
    pub k_stable: u32,
}

impl DwellConfig {
    fn default_t_dwell() -> Millis {
        5000
    }

    fn default_k_stable() -> u32 {
        3
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k_stable < 1 {
            return Err("k_stable must be at least 1".into());
        }
        Ok(())
    }
}

impl Default for DwellConfig {
    fn default() -> Self {
        Self {
            t_dwell: Self::default_t_dwell(),
            k_stable: Self::default_k_stable(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEstimate {
    pub switch_delay: Millis,
    pub projected_throughput: f64,
    pub projected_delay: f64,
    pub cost_rate: f64,
    pub acceptable_qos: bool,
    pub acceptable_cost: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("no switching delay known for {0} -> {1}")]
    UnknownTechPair(TechType, TechType),
    #[error("unknown interface {1} on host {0}")]
    UnknownInterface(String, u32),
    #[error("illegal transition: {action} in state {state}")]
    IllegalTransition { state: String, action: String },
}

/// The two hosts' views; `local` is the host whose indices come first in a
/// [`Pair`].
#[derive(Debug, Clone, Copy)]
pub struct HostPair<'a> {
    pub local: &'a HostContextView,
    pub remote: &'a HostContextView,
}

impl HostPair<'_> {
    fn ifaces(
        &self,
        pair: Pair,
    ) -> Result<(&crate::context::InterfaceSnapshot, &crate::context::InterfaceSnapshot), ChannelError>
    {
        let a = self
            .local
            .interface(pair.local)
            .ok_or_else(|| ChannelError::UnknownInterface(self.local.host_id.clone(), pair.local))?;
        let b = self
            .remote
            .interface(pair.remote)
            .ok_or_else(|| ChannelError::UnknownInterface(self.remote.host_id.clone(), pair.remote))?;
        Ok((a, b))
    }

    /// Expected throughput of a connection: the measured path bandwidth in
    /// the request's direction, or the slower interface speed when the path
    /// was never measured. Zero when either end is unusable.
    pub fn throughput(&self, pair: Pair, direction: Direction) -> f64 {
        let Ok((a, b)) = self.ifaces(pair) else {
            return 0.0;
        };
        if !(a.usable() && b.usable()) {
            return 0.0;
        }
        match self.local.e2e(pair.local, pair.remote) {
            Some(q) => match direction {
                Direction::Send => q.bandwidth_up,
                Direction::Receive => q.bandwidth_down,
                Direction::Bidirectional => q.bandwidth_up.min(q.bandwidth_down),
            },
            None => a.current_speed.min(b.current_speed),
        }
    }

    /// Whether both interfaces of `pair` are up and subscribed.
    pub fn link_up(&self, pair: Pair) -> bool {
        self.ifaces(pair).is_ok_and(|(a, b)| a.usable() && b.usable())
    }

    /// Path RTT, or 0 when never measured.
    pub fn delay(&self, pair: Pair) -> f64 {
        self.local.e2e(pair.local, pair.remote).map_or(0.0, |q| q.rtt)
    }

    /// Charge of both ends together.
    pub fn cost_rate(&self, pair: Pair) -> f64 {
        self.ifaces(pair)
            .map_or(f64::INFINITY, |(a, b)| a.charge_rate + b.charge_rate)
    }
}

/// Estimates the impact of moving from `current` to `candidate`.
///
/// The outage is the slower of the two ends' technology crossings; an end
/// keeping its interface contributes nothing, and initial establishment
/// has no outage.
pub fn estimate_switch(
    current: Option<Pair>,
    candidate: Pair,
    hosts: HostPair<'_>,
    request: &ChannelRequest,
    delays: &DelayTable,
) -> Result<SwitchEstimate, ChannelError> {
    let (new_a, new_b) = hosts.ifaces(candidate)?;
    let switch_delay = match current {
        None => 0,
        Some(cur) => {
            let (old_a, old_b) = hosts.ifaces(cur)?;
            let local = if cur.local == candidate.local {
                0
            } else {
                delays.lookup(&old_a.descriptor.tech_type, &new_a.descriptor.tech_type)?
            };
            let remote = if cur.remote == candidate.remote {
                0
            } else {
                delays.lookup(&old_b.descriptor.tech_type, &new_b.descriptor.tech_type)?
            };
            local.max(remote)
        }
    };
    let q = &request.qos;
    let projected_throughput = hosts.throughput(candidate, request.direction);
    let projected_delay = hosts.delay(candidate);
    let cost_rate = hosts.cost_rate(candidate);
    Ok(SwitchEstimate {
        switch_delay,
        projected_throughput,
        projected_delay,
        cost_rate,
        acceptable_qos: switch_delay as f64 <= q.max_disruption
            && projected_throughput >= q.min_throughput
            && projected_delay <= q.max_delay,
        acceptable_cost: cost_rate <= q.max_cost_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserDecision {
    Accept,
    Reject,
}

/// Asked when a candidate's cost exceeds what the user accepts.
pub trait UserDecisionOracle {
    fn decide(&mut self, channel: &str, cost_rate: f64, now: Millis) -> UserDecision;
}

impl<F> UserDecisionOracle for F
where
    F: FnMut(&str, f64, Millis) -> UserDecision,
{
    fn decide(&mut self, channel: &str, cost_rate: f64, now: Millis) -> UserDecision {
        self(channel, cost_rate, now)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "pair", rename_all = "snake_case")]
pub enum ChannelState {
    Establishing,
    Active(Pair),
    Suspended,
    Terminated,
}

impl fmt::Display for ChannelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelState::Establishing => f.write_str("ESTABLISHING"),
            ChannelState::Active(p) => write!(f, "ACTIVE{p}"),
            ChannelState::Suspended => f.write_str("SUSPENDED"),
            ChannelState::Terminated => f.write_str("TERMINATED"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stay,
    Establish(Pair),
    Switch { from: Pair, to: Pair },
    Suspend,
    Resume(Pair),
    Terminate,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Stay => "stay",
            Action::Establish(_) => "establish",
            Action::Switch { .. } => "switch",
            Action::Suspend => "suspend",
            Action::Resume(_) => "resume",
            Action::Terminate => "terminate",
        }
    }

    /// The pair the channel runs on afterwards, if the action sets one.
    pub fn new_pair(&self) -> Option<Pair> {
        match self {
            Action::Establish(p) | Action::Resume(p) | Action::Switch { to: p, .. } => Some(*p),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Establish(p) | Action::Resume(p) => write!(f, "{}{p}", self.name()),
            Action::Switch { from, to } => write!(f, "switch{from}->{to}"),
            _ => f.write_str(self.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Cause {
    Establish,
    ContextEvent,
    QosGuard,
    CostPrompt,
    NoCandidate,
}

/// Candidate-stability bookkeeping for hysteresis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stability {
    pub candidate: Option<Pair>,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub id: String,
    pub request: ChannelRequest,
    pub state: ChannelState,
    pub last_switch_time: Option<Millis>,
    pub stability: Stability,
}

impl Channel {
    pub fn new(id: impl Into<String>, request: ChannelRequest) -> Self {
        Self {
            id: id.into(),
            request,
            state: ChannelState::Establishing,
            last_switch_time: None,
            stability: Stability::default(),
        }
    }

    pub fn current_pair(&self) -> Option<Pair> {
        match self.state {
            ChannelState::Active(p) => Some(p),
            _ => None,
        }
    }

    /// Applies an evaluation's action and its stability bookkeeping.
    pub fn commit(&mut self, eval: &Evaluation, now: Millis) -> Result<(), ChannelError> {
        *self = apply_transition(self, &eval.action, now)?;
        if eval.action == Action::Stay {
            self.stability = eval.stability;
        }
        Ok(())
    }
}

/// Moves a channel through its lifecycle. Establishing, switching and
/// resuming stamp `last_switch_time` and clear the stability counter.
pub fn apply_transition(
    channel: &Channel,
    action: &Action,
    now: Millis,
) -> Result<Channel, ChannelError> {
    use ChannelState::*;
    let illegal = || ChannelError::IllegalTransition {
        state: channel.state.to_string(),
        action: action.to_string(),
    };
    let mut next = channel.clone();
    match (channel.state, action) {
        (Terminated, _) => return Err(illegal()),
        (_, Action::Stay) => {}
        (Establishing, Action::Establish(p)) | (Suspended, Action::Resume(p)) => {
            next.state = Active(*p);
            next.last_switch_time = Some(now);
            next.stability = Stability::default();
        }
        (Active(cur), Action::Switch { from, to }) if cur == *from => {
            next.state = Active(*to);
            next.last_switch_time = Some(now);
            next.stability = Stability::default();
        }
        (Establishing | Active(_), Action::Suspend) => {
            next.state = Suspended;
            next.stability = Stability::default();
        }
        (Active(_) | Suspended, Action::Terminate) => next.state = Terminated,
        _ => return Err(illegal()),
    }
    Ok(next)
}

/// Everything an evaluation reads besides the channel itself.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub hosts: HostPair<'a>,
    pub local_policies: &'a PolicySet,
    pub remote_policies: &'a PolicySet,
    pub catalog: &'a FactorCatalog,
    pub delays: &'a DelayTable,
    pub dwell: &'a DwellConfig,
}

/// Identifier reported for a traverse that fell back to the platform.
pub const OS_FALLBACK_ID: &str = "os";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmpIds {
    pub local: String,
    pub remote: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub pair: Pair,
    pub cost: f64,
}

/// One traverse → cost → select pass for a request, with no hysteresis.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub mmp: MmpIds,
    pub local_end: EndType,
    pub remote_end: EndType,
    pub mode: DecisionMode,
    /// Local host's cost structure as computed (`m × n` or `m`).
    pub local_costs: CostMatrix,
    /// Remote host's cost structure as computed (`n × m` or `n`).
    pub remote_costs: CostMatrix,
    pub best: Option<Candidate>,
}

impl Assessment {
    /// Combined cost of `pair` under the decision mode, `None` when either
    /// side rates it infinite or an index is unknown.
    pub fn pair_cost(&self, hosts: HostPair<'_>, pair: Pair) -> Option<f64> {
        let i = hosts.local.position_of(pair.local)?;
        let j = hosts.remote.position_of(pair.remote)?;
        let a = self.local_costs.get(i, j);
        let b = self.remote_costs.get(j, i);
        if !(a.is_finite() && b.is_finite()) {
            return None;
        }
        match (self.mode, self.local_end) {
            (DecisionMode::PeerToPeer, _) => (a + b).value(),
            (DecisionMode::MasterSlave, EndType::Master) => a.value(),
            (DecisionMode::MasterSlave, EndType::Slave) => b.value(),
        }
    }
}

fn side_costs(
    policies: &PolicySet,
    request: &ChannelRequest,
    view: &HostContextView,
    peer: &HostContextView,
    catalog: &FactorCatalog,
) -> (String, EndType, CostMatrix) {
    let peer_indices: Vec<u32> = peer.interfaces.iter().map(|s| s.index()).collect();
    match traverse_policies(policies, request) {
        Traverse::Mmp(p) => {
            let costs = compute_cost_matrix(p, view, Some(&peer_indices), catalog)
                .expect("remote indices are supplied");
            (p.id.clone(), p.end_type, costs)
        }
        Traverse::OsFallback => (OS_FALLBACK_ID.to_owned(), EndType::Slave, os_fallback_costs(view)),
    }
}

pub fn assess(ctx: &EvalContext<'_>, request: &ChannelRequest) -> Assessment {
    let HostPair { local, remote } = ctx.hosts;
    let (local_id, local_end, local_costs) =
        side_costs(ctx.local_policies, request, local, remote, ctx.catalog);
    let (remote_id, remote_end, remote_costs) =
        side_costs(ctx.remote_policies, request, remote, local, ctx.catalog);
    let mode = decision_mode(local_end, remote_end);

    let selection = match (mode, local_end) {
        (DecisionMode::PeerToPeer, _) => select_peer_to_peer(&local_costs, &remote_costs),
        (DecisionMode::MasterSlave, EndType::Master) => {
            select_master_slave(&local_costs, &remote_costs)
        }
        (DecisionMode::MasterSlave, EndType::Slave) => {
            select_master_slave(&remote_costs, &local_costs).map(|s| Selection {
                row: s.col,
                col: s.row,
                cost: s.cost,
            })
        }
    };
    let best = match selection {
        Ok(s) => Some(Candidate {
            pair: Pair::new(local.interfaces[s.row].index(), remote.interfaces[s.col].index()),
            cost: s.cost,
        }),
        Err(SelectError::NoValidConnection) => None,
        Err(e @ SelectError::ShapeMismatch(..)) => {
            unreachable!("cost structures are built from the same views: {e}")
        }
    };
    Assessment {
        mmp: MmpIds {
            local: local_id,
            remote: remote_id,
        },
        local_end,
        remote_end,
        mode,
        local_costs,
        remote_costs,
        best,
    }
}

/// Outcome of evaluating one channel at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub action: Action,
    pub cause: Cause,
    pub assessment: Assessment,
    /// Combined cost of the pair running before the evaluation.
    pub current_cost: Option<f64>,
    pub current_throughput: Option<f64>,
    pub estimate: Option<SwitchEstimate>,
    pub user_decision: Option<UserDecision>,
    /// An interface of the running pair went down, so hysteresis was bypassed.
    pub forced: bool,
    /// Stability state to keep when the action is `Stay`.
    pub stability: Stability,
}

impl Evaluation {
    /// Cost of the pair the channel runs on after this evaluation.
    pub fn resulting_cost(&self) -> Option<f64> {
        match self.action {
            Action::Establish(_) | Action::Resume(_) | Action::Switch { .. } => {
                self.assessment.best.map(|c| c.cost)
            }
            Action::Stay => self.current_cost,
            Action::Suspend | Action::Terminate => None,
        }
    }
}

fn estimate_or_blocked(
    current: Option<Pair>,
    candidate: Pair,
    hosts: HostPair<'_>,
    request: &ChannelRequest,
    delays: &DelayTable,
) -> SwitchEstimate {
    estimate_switch(current, candidate, hosts, request, delays).unwrap_or_else(|_| {
        // unknown crossing: treat the outage as unbounded
        SwitchEstimate {
            switch_delay: Millis::MAX,
            projected_throughput: hosts.throughput(candidate, request.direction),
            projected_delay: hosts.delay(candidate),
            cost_rate: hosts.cost_rate(candidate),
            acceptable_qos: false,
            acceptable_cost: hosts.cost_rate(candidate) <= request.qos.max_cost_rate,
        }
    })
}

/// Decides what `channel` should do at `now` given fresh context.
pub fn evaluate_event(
    channel: &Channel,
    now: Millis,
    ctx: &EvalContext<'_>,
    oracle: &mut dyn UserDecisionOracle,
) -> Evaluation {
    let request = &channel.request;
    let assessment = assess(ctx, request);
    let best = assessment.best;
    let mut eval = Evaluation {
        action: Action::Stay,
        cause: Cause::ContextEvent,
        current_cost: None,
        current_throughput: None,
        estimate: None,
        user_decision: None,
        forced: false,
        stability: channel.stability,
        assessment,
    };

    match channel.state {
        ChannelState::Terminated => {}
        ChannelState::Establishing | ChannelState::Suspended => {
            let establishing = channel.state == ChannelState::Establishing;
            let Some(best) = best else {
                eval.cause = Cause::NoCandidate;
                if establishing {
                    eval.action = Action::Suspend;
                }
                return eval;
            };
            let start = if establishing {
                Action::Establish(best.pair)
            } else {
                Action::Resume(best.pair)
            };
            let est = estimate_or_blocked(None, best.pair, ctx.hosts, request, ctx.delays);
            eval.cause = if establishing { Cause::Establish } else { Cause::ContextEvent };
            if est.acceptable_cost {
                eval.action = start;
            } else {
                eval.cause = Cause::CostPrompt;
                let d = oracle.decide(&channel.id, est.cost_rate, now);
                eval.user_decision = Some(d);
                eval.action = match (d, establishing) {
                    (UserDecision::Accept, _) => start,
                    (UserDecision::Reject, true) => Action::Suspend,
                    (UserDecision::Reject, false) => Action::Stay,
                };
            }
            eval.estimate = Some(est);
        }
        ChannelState::Active(current) => {
            eval.current_cost = eval.assessment.pair_cost(ctx.hosts, current);
            let current_tp = if eval.current_cost.is_some() {
                ctx.hosts.throughput(current, request.direction)
            } else {
                0.0
            };
            eval.current_throughput = Some(current_tp);

            let Some(best) = best else {
                eval.action = Action::Suspend;
                eval.cause = Cause::NoCandidate;
                return eval;
            };
            if best.pair == current {
                eval.stability = Stability::default();
                return eval;
            }

            let count = match channel.stability.candidate {
                Some(p) if p == best.pair => channel.stability.count + 1,
                _ => 1,
            };
            eval.stability = Stability {
                candidate: Some(best.pair),
                count,
            };
            eval.forced = !ctx.hosts.link_up(current);
            let dwelling = channel
                .last_switch_time
                .is_some_and(|t| now.saturating_sub(t) < ctx.dwell.t_dwell);
            if !eval.forced && (count < ctx.dwell.k_stable || dwelling) {
                return eval;
            }

            let est = estimate_or_blocked(Some(current), best.pair, ctx.hosts, request, ctx.delays);
            let above_threshold = current_tp >= request.qos.threshold();
            let switch = Action::Switch {
                from: current,
                to: best.pair,
            };
            if !est.acceptable_qos && above_threshold {
                eval.cause = Cause::QosGuard;
            } else if est.acceptable_cost {
                eval.action = switch;
            } else {
                eval.cause = Cause::CostPrompt;
                let d = oracle.decide(&channel.id, est.cost_rate, now);
                eval.user_decision = Some(d);
                eval.action = match d {
                    UserDecision::Accept => switch,
                    UserDecision::Reject => Action::Suspend,
                };
            }
            eval.estimate = Some(est);
        }
    }
    eval
}
