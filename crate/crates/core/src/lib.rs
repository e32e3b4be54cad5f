//! Connection management for hosts with several network interfaces.
//!
//! Context is kept as timestamped tuples in [`context::ContextStore`].
//! Per-host policies ([`policy`]) turn a channel request into a cost
//! structure ([`cost`]); the two ends' costs pick an interface pair and a
//! state machine decides when to switch ([`channel`]). [`netsim`] replays
//! scenarios through all of it.

pub mod channel;
pub mod context;
pub mod cost;
pub mod netsim;
pub mod policy;

pub use channel::{
    assess, decision_mode, evaluate_event, select_master_slave, select_peer_to_peer, Action,
    Cause, Channel, ChannelState, DecisionMode, DelayTable, DwellConfig, EvalContext, Evaluation,
    HostPair, Pair, QoSRequirement, SelectError, Selection, UserDecision, UserDecisionOracle,
};
pub use context::{
    ContextStore, ContextTuple, EndToEndQoS, HostContextView, InterfaceSnapshot, Millis, TechType,
    Value,
};
pub use cost::{compute_cost_matrix, Cost, CostMatrix, FactorCatalog, Shape};
pub use policy::{
    parse_policy_set, traverse_policies, ChannelRequest, Direction, EndType, EvaluationItem,
    Policy, PolicySet, Scope, TrafficClass, Traverse,
};
