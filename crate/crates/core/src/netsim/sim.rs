//! The discrete-event loop.
//!
//! Queue items are ordered by time, then application events before context
//! events, then generated events, then input order. Poll ticks at time `t`
//! run after every queue item at `t`.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use log::{debug, trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{
    evaluate_event, Action, Cause, Channel, ChannelError, ChannelState, EvalContext, Evaluation,
    HostPair, UserDecision, UserDecisionOracle,
};
use crate::context::{
    feature, interface_entity, path_entity, ContextError, ContextStore, ContextTuple, Delivery,
    HostContextView, InterfaceDescriptor, Millis, SubscriptionMode, Value,
};

use super::scenario::{EventKind, Scenario, ScriptEntry, SimEvent};
use super::trace::{ChannelMetrics, Detail, Metrics, TraceRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("context store: {0}")]
    Context(#[from] ContextError),
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
}

/// Replays scripted user answers in order. A prompt before the next
/// entry's window is rejected without consuming it; entries whose window
/// has passed are discarded; an empty script rejects.
#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    entries: VecDeque<ScriptEntry>,
}

impl ScriptedOracle {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.entries.len()
    }
}

impl UserDecisionOracle for ScriptedOracle {
    fn decide(&mut self, channel: &str, cost_rate: f64, now: Millis) -> UserDecision {
        while self.entries.front().is_some_and(|e| e.to < now) {
            self.entries.pop_front();
        }
        let d = match self.entries.front() {
            Some(e) if e.from <= now => {
                let d = e.decision;
                self.entries.pop_front();
                d
            }
            _ => UserDecision::Reject,
        };
        debug!("user prompt for {channel} at {now}: cost rate {cost_rate} -> {d:?}");
        d
    }
}

/// Context side of the simulation: the store plus the two host ids.
pub struct SimState {
    pub store: ContextStore,
    hosts: [String; 2],
}

impl SimState {
    /// Registers both hosts' interfaces and writes their initial readings and
    /// paths at time 0.
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let mut store = ContextStore::new();
        for h in &scenario.hosts {
            for i in &h.interfaces {
                store.register_interface(InterfaceDescriptor {
                    host_id: h.id.clone(),
                    index: i.index,
                    tech_type: i.tech_type.clone(),
                    max_speed: i.max_speed,
                    subscribed: i.subscribed,
                })?;
                let entity = interface_entity(&h.id, i.index);
                let init = &i.initial;
                let readings: [(&str, Option<Value>); 6] = [
                    (feature::AVAILABLE, init.available.map(Value::Bool)),
                    (feature::SIGNAL_STRENGTH, init.signal_strength.map(Value::Number)),
                    (feature::SNR, init.snr.map(Value::Number)),
                    (feature::CHARGE_RATE, init.charge_rate.map(Value::Number)),
                    (feature::POWER_DRAW, init.power_draw.map(Value::Number)),
                    (feature::CURRENT_SPEED, init.current_speed.map(Value::Number)),
                ];
                for (f, v) in readings {
                    if let Some(v) = v {
                        store.put(ContextTuple::new(entity.clone(), f, v, 0))?;
                    }
                }
            }
        }
        let mut state = Self {
            store,
            hosts: [scenario.hosts[0].id.clone(), scenario.hosts[1].id.clone()],
        };
        for p in &scenario.hosts[0].paths {
            for (field, value) in p.fields() {
                state.apply_sim_event(&SimEvent {
                    time: 0,
                    kind: EventKind::SetE2e {
                        local: p.local,
                        remote: p.remote,
                        field,
                        value,
                    },
                })?;
            }
        }
        Ok(state)
    }

    /// Turns a scenario event into context writes. Path readings are stored
    /// from both ends, with the bandwidth directions swapped for the second.
    pub fn apply_sim_event(&mut self, ev: &SimEvent) -> Result<(), SimError> {
        let t = ev.time;
        match &ev.kind {
            EventKind::SetContext { entity, feature, value } => {
                self.store
                    .put(ContextTuple::new(entity.clone(), feature.clone(), value.clone(), t))?;
            }
            EventKind::InterfaceUp { host, index } | EventKind::InterfaceDown { host, index } => {
                let up = matches!(ev.kind, EventKind::InterfaceUp { .. });
                self.store
                    .put(ContextTuple::new(interface_entity(host, *index), feature::AVAILABLE, up, t))?;
            }
            EventKind::SetE2e { local, remote, field, value } => {
                let [a, b] = &self.hosts;
                self.store.put(ContextTuple::new(
                    path_entity(a, *local, b, *remote),
                    field.feature(),
                    *value,
                    t,
                ))?;
                self.store.put(ContextTuple::new(
                    path_entity(b, *remote, a, *local),
                    field.mirrored().feature(),
                    *value,
                    t,
                ))?;
            }
        }
        Ok(())
    }

    pub fn views(&self, at: Millis) -> Result<[HostContextView; 2], SimError> {
        Ok([
            self.store.snapshot_host(&self.hosts[0], at)?,
            self.store.snapshot_host(&self.hosts[1], at)?,
        ])
    }
}

#[derive(Debug, Clone)]
enum Item {
    Start(usize),
    Stop(usize),
    Context(SimEvent),
}

/// Expands the scenario's random walks with its seed.
pub fn generate_walk_events(scenario: &Scenario) -> Vec<SimEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut out = Vec::new();
    for w in &scenario.config.random_walks {
        let mut value = w.start_value.clamp(w.min, w.max);
        let mut t = w.from;
        while t <= w.to {
            out.push(SimEvent {
                time: t,
                kind: EventKind::SetContext {
                    entity: w.entity.clone(),
                    feature: w.feature.clone(),
                    value: Value::Number(value),
                },
            });
            let delta = if w.step > 0.0 { rng.gen_range(-w.step..=w.step) } else { 0.0 };
            value = (value + delta).clamp(w.min, w.max);
            t += w.interval_ms;
        }
    }
    // stable: walks keep their declaration order at equal times
    out.sort_by_key(|e| e.time);
    out
}

struct Accounting {
    start: Millis,
    seg_start: Millis,
    state: ChannelState,
    cost: Option<f64>,
    below: bool,
    cost_integral: f64,
    m: ChannelMetrics,
}

impl Accounting {
    fn new(id: &str, start: Millis, stop: Millis) -> Self {
        Self {
            start,
            seg_start: start,
            state: ChannelState::Establishing,
            cost: None,
            below: false,
            cost_integral: 0.0,
            m: ChannelMetrics {
                channel: id.to_owned(),
                window_ms: stop - start,
                ..Default::default()
            },
        }
    }

    fn advance(&mut self, now: Millis) {
        let dt = now - self.seg_start;
        match self.state {
            ChannelState::Establishing => self.m.pre_establish_ms += dt,
            ChannelState::Active(_) => {
                self.m.active_ms += dt;
                if let Some(c) = self.cost {
                    self.cost_integral += c * dt as f64;
                }
                if self.below {
                    self.m.qos_violation_ms += dt;
                }
            }
            ChannelState::Suspended => self.m.suspended_ms += dt,
            ChannelState::Terminated => {}
        }
        self.seg_start = now;
    }

    fn finish(mut self) -> ChannelMetrics {
        debug_assert_eq!(
            self.m.pre_establish_ms + self.m.active_ms + self.m.suspended_ms,
            self.seg_start - self.start
        );
        if self.m.active_ms > 0 {
            self.m.mean_cost = Some(self.cost_integral / self.m.active_ms as f64);
        }
        self.m
    }
}

struct Live {
    channel: Channel,
    acct: Accounting,
}

/// Trace and metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub trace: Vec<TraceRecord>,
    pub metrics: Metrics,
}

pub fn run_simulation(scenario: &Scenario) -> Result<SimOutput, SimError> {
    let mut state = SimState::new(scenario)?;
    let mut oracle = ScriptedOracle::new(scenario.user_script.iter().cloned());

    let polled: Arc<Mutex<Vec<Delivery>>> = Arc::default();
    for p in &scenario.config.polls {
        let sink = polled.clone();
        state.store.subscribe(
            SubscriptionMode::Poll {
                interval_ms: p.interval_ms,
            },
            &p.entity,
            &p.feature,
            Box::new(move |d: &Delivery| sink.lock().expect("poll sink").push(d.clone())),
        )?;
    }

    // (time, class, seq, item)
    let mut queue: Vec<(Millis, u8, usize, Item)> = Vec::new();
    for (n, app) in scenario.applications.iter().enumerate() {
        queue.push((app.start, 0, 2 * n, Item::Start(n)));
        queue.push((app.stop, 0, 2 * n + 1, Item::Stop(n)));
    }
    for (n, ev) in scenario.events.iter().enumerate() {
        queue.push((ev.time, 1, n, Item::Context(ev.clone())));
    }
    for (n, ev) in generate_walk_events(scenario).into_iter().enumerate() {
        queue.push((ev.time, 2, n, Item::Context(ev)));
    }
    queue.sort_by_key(|(t, class, seq, _)| (*t, *class, *seq));
    let mut queue: VecDeque<_> = queue.into();
    let horizon = scenario.applications.iter().map(|a| a.stop).max().unwrap_or(0);

    let mut sim = Runner {
        scenario,
        state,
        oracle: &mut oracle,
        live: (0..scenario.applications.len()).map(|_| None).collect(),
        finished: Vec::new(),
        trace: Vec::new(),
    };

    loop {
        let next_item = queue.front().map(|(t, ..)| *t);
        let next_poll = sim.state.store.next_poll_due().filter(|t| *t <= horizon);
        match (next_item, next_poll) {
            (None, None) => break,
            (Some(ti), Some(tp)) if tp < ti => sim.poll(tp)?,
            (None, Some(tp)) => sim.poll(tp)?,
            _ => {
                let (t, _, _, item) = queue.pop_front().expect("peeked");
                match item {
                    Item::Start(n) => sim.start(n, t)?,
                    Item::Stop(n) => sim.stop(n, t)?,
                    Item::Context(ev) => {
                        sim.state.apply_sim_event(&ev)?;
                        sim.evaluate_all(t, &ev.describe())?;
                    }
                }
            }
        }
        let drained: Vec<Delivery> = std::mem::take(&mut *polled.lock().expect("poll sink"));
        for d in drained {
            trace!("poll delivery {d:?}");
        }
    }

    let mut channels = sim.finished;
    channels.sort_by_key(|(n, _)| *n);
    Ok(SimOutput {
        trace: sim.trace,
        metrics: Metrics {
            channels: channels.into_iter().map(|(_, m)| m).collect(),
        },
    })
}

struct Runner<'s, 'o> {
    scenario: &'s Scenario,
    state: SimState,
    oracle: &'o mut ScriptedOracle,
    live: Vec<Option<Live>>,
    finished: Vec<(usize, ChannelMetrics)>,
    trace: Vec<TraceRecord>,
}

impl Runner<'_, '_> {
    fn poll(&mut self, at: Millis) -> Result<(), SimError> {
        self.state.store.advance_to(at);
        let subs: Vec<String> = self
            .scenario
            .config
            .polls
            .iter()
            .filter(|p| at.is_multiple_of(p.interval_ms))
            .map(|p| format!("poll {}.{}", p.entity, p.feature))
            .collect();
        self.evaluate_all(at, &subs.join(";"))
    }

    fn start(&mut self, n: usize, t: Millis) -> Result<(), SimError> {
        let app = &self.scenario.applications[n];
        let channel = Channel::new(app.id.clone(), app.request());
        self.live[n] = Some(Live {
            channel,
            acct: Accounting::new(&app.id, app.start, app.stop),
        });
        self.evaluate(n, t, "app_start")
    }

    fn stop(&mut self, n: usize, t: Millis) -> Result<(), SimError> {
        let Some(mut live) = self.live[n].take() else {
            return Ok(());
        };
        live.acct.advance(t);
        let old_pair = live.channel.current_pair();
        live.channel = crate::channel::apply_transition(&live.channel, &Action::Terminate, t)?;
        live.acct.state = live.channel.state;
        self.trace.push(TraceRecord {
            time: t,
            channel: live.channel.id.clone(),
            cause: Cause::ContextEvent,
            action: Action::Terminate.name().to_owned(),
            old_pair,
            new_pair: None,
            mmp: None,
            cost: None,
            event: "app_stop".into(),
            detail: None,
        });
        debug!("{} terminated at {t}", live.channel.id);
        self.finished.push((n, live.acct.finish()));
        Ok(())
    }

    fn evaluate_all(&mut self, t: Millis, event: &str) -> Result<(), SimError> {
        for n in 0..self.live.len() {
            if self.live[n].is_some() {
                self.evaluate(n, t, event)?;
            }
        }
        Ok(())
    }

    fn evaluate(&mut self, n: usize, t: Millis, event: &str) -> Result<(), SimError> {
        let [a, b] = self.state.views(t)?;
        let config = &self.scenario.config;
        let ctx = EvalContext {
            hosts: HostPair {
                local: &a,
                remote: &b,
            },
            local_policies: &self.scenario.policies[0],
            remote_policies: &self.scenario.policies[1],
            catalog: &config.catalog,
            delays: &config.delays,
            dwell: &config.dwell,
        };
        let live = self.live[n].as_mut().expect("live channel");
        let eval = evaluate_event(&live.channel, t, &ctx, self.oracle);
        let old_pair = live.channel.current_pair();
        live.acct.advance(t);
        live.channel.commit(&eval, t)?;

        let request = &live.channel.request;
        let new_pair = live.channel.current_pair();
        live.acct.state = live.channel.state;
        if let Some(c) = eval.resulting_cost() {
            live.acct.cost = Some(c);
        }
        live.acct.below = new_pair
            .is_some_and(|p| ctx.hosts.throughput(p, request.direction) < request.qos.threshold());
        match eval.action {
            Action::Switch { .. } => live.acct.m.switch_count += 1,
            Action::Suspend => live.acct.m.suspend_count += 1,
            Action::Resume(_) => live.acct.m.resume_count += 1,
            _ => {}
        }

        let record = record_for(&live.channel, &eval, t, event, old_pair, new_pair);
        if eval.action != Action::Stay {
            debug!(
                "{t} {}: {} ({:?}) mmp {}/{}",
                record.channel, eval.action, eval.cause, eval.assessment.mmp.local, eval.assessment.mmp.remote
            );
        }
        self.trace.push(record);
        Ok(())
    }
}

fn record_for(
    channel: &Channel,
    eval: &Evaluation,
    t: Millis,
    event: &str,
    old_pair: Option<crate::channel::Pair>,
    new_pair: Option<crate::channel::Pair>,
) -> TraceRecord {
    TraceRecord {
        time: t,
        channel: channel.id.clone(),
        cause: eval.cause,
        action: eval.action.name().to_owned(),
        old_pair,
        new_pair,
        mmp: Some(eval.assessment.mmp.clone()),
        cost: eval.resulting_cost(),
        event: event.to_owned(),
        detail: Some(Detail {
            mode: Some(eval.assessment.mode),
            best: eval.assessment.best,
            current_cost: eval.current_cost,
            current_throughput: eval.current_throughput,
            threshold: channel.request.qos.threshold(),
            estimate: eval.estimate.clone(),
            user_decision: eval.user_decision,
            forced: eval.forced,
            stability_count: eval.stability.count,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::scenario::load_scenario;

    fn entry(from: Millis, to: Millis, decision: UserDecision) -> ScriptEntry {
        ScriptEntry { from, to, decision }
    }

    #[test]
    fn script_is_consumed_in_order() {
        let mut o = ScriptedOracle::new([
            entry(0, 100, UserDecision::Accept),
            entry(200, 300, UserDecision::Accept),
            entry(400, 500, UserDecision::Reject),
        ]);
        assert_eq!(o.decide("c", 2.0, 50), UserDecision::Accept);
        // before the next window: rejected, entry kept
        assert_eq!(o.decide("c", 2.0, 150), UserDecision::Reject);
        assert_eq!(o.remaining(), 2);
        // past the second window: it is discarded
        assert_eq!(o.decide("c", 2.0, 450), UserDecision::Reject);
        assert_eq!(o.remaining(), 0);
        assert_eq!(o.decide("c", 2.0, 460), UserDecision::Reject);
    }

    const TWO_IFACE: &str = r#"{
        "hosts": [
            {"id": "A", "interfaces": [
                {"index": 0, "tech_type": "WLAN", "max_speed": 11000,
                 "initial": {"available": true, "current_speed": 5000, "charge_rate": 0.1}},
                {"index": 1, "tech_type": "GPRS", "max_speed": 40,
                 "initial": {"available": true, "current_speed": 40, "charge_rate": 0.5}}]},
            {"id": "B", "interfaces": [{"index": 0, "tech_type": "WLAN", "max_speed": 11000,
                "initial": {"available": true, "current_speed": 5000}}]}
        ],
        "policies": {
            "A": {"policies": [{"id": "cheap", "scope": "device", "end_type": "master",
                                "weight": [{"factor": "charge_rate", "w": 1.0}]}]}
        },
        "applications": [{"id": "app", "traffic_class": "interactive", "direction": "send",
            "qos": {"min_throughput": 32, "max_delay": 200, "max_cost_rate": 1,
                    "max_disruption": 2000, "min_acceptable": 0.5},
            "start": 0, "stop": 10000}],
        "events": [
            {"time": 2000, "kind": "interface_down", "host": "A", "index": 0},
            {"time": 2000, "kind": "set_e2e", "local": 1, "remote": 0, "field": "bandwidth_up", "value": 10}
        ]
    }"#;

    #[test]
    fn sim_events_write_the_store() {
        let s = load_scenario(TWO_IFACE.as_bytes()).unwrap();
        let mut st = SimState::new(&s).unwrap();
        for ev in &s.events {
            st.apply_sim_event(ev).unwrap();
        }
        let [a, b] = st.views(2000).unwrap();
        assert!(!a.interfaces[0].available);
        assert_eq!(a.e2e(1, 0).unwrap().bandwidth_up, 10.0);
        assert_eq!(b.e2e(0, 1).unwrap().bandwidth_down, 10.0);
        let [a, _] = st.views(1999).unwrap();
        assert!(a.interfaces[0].available);
    }

    #[test]
    fn dead_interface_forces_handoff() {
        let s = load_scenario(TWO_IFACE.as_bytes()).unwrap();
        let out = run_simulation(&s).unwrap();
        let actions: Vec<_> = out.trace.iter().map(|r| (r.time, r.action.as_str())).collect();
        assert_eq!(
            actions,
            vec![(0, "establish"), (2000, "switch"), (2000, "stay"), (10000, "terminate")]
        );
        let m = out.metrics.channel("app").unwrap();
        assert_eq!(m.switch_count, 1);
        assert_eq!(m.active_ms, 10000);
        // the path then carries 10 kbit/s, under half of the 32 requested
        assert_eq!(m.qos_violation_ms, 8000);
        // mean cost: 0.01 for 2 s, 0.05 for 8 s
        assert!((m.mean_cost.unwrap() - (0.01 * 2.0 + 0.05 * 8.0) / 10.0).abs() < 1e-12);
    }

    #[test]
    fn polls_drive_evaluations() {
        let mut v: serde_json::Value = serde_json::from_str(TWO_IFACE).unwrap();
        v["events"] = serde_json::json!([]);
        v["config"] = serde_json::json!({"polls": [{"entity": "A.if0", "feature": "available", "interval_ms": 2500}]});
        let s = load_scenario(&serde_json::to_vec(&v).unwrap()).unwrap();
        let out = run_simulation(&s).unwrap();
        let times: Vec<_> = out.trace.iter().map(|r| r.time).collect();
        // ticks at 2500, 5000, 7500 and 10000; the last runs after the stop
        assert_eq!(times, vec![0, 2500, 5000, 7500, 10000]);
        assert!(out.trace[1].event.starts_with("poll"));
    }

    #[test]
    fn random_walks_are_seeded() {
        let mut v: serde_json::Value = serde_json::from_str(TWO_IFACE).unwrap();
        v["events"] = serde_json::json!([]);
        v["config"] = serde_json::json!({"random_walks": [{"entity": "A.if1", "feature": "charge_rate",
            "start_value": 0.5, "step": 0.2, "min": 0.0, "max": 1.0, "interval_ms": 500, "from": 500, "to": 9500}]});
        v["seed"] = serde_json::json!(7);
        let s = load_scenario(&serde_json::to_vec(&v).unwrap()).unwrap();
        let a = generate_walk_events(&s);
        assert_eq!(a.len(), 19);
        assert_eq!(a, generate_walk_events(&s));
        v["seed"] = serde_json::json!(8);
        let s2 = load_scenario(&serde_json::to_vec(&v).unwrap()).unwrap();
        assert_ne!(a, generate_walk_events(&s2));
        assert_eq!(run_simulation(&s).unwrap(), run_simulation(&s).unwrap());
    }
}
