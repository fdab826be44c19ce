//! Event-driven droplet transport through a solved network.
//!
//! Droplets are point tracers. Each one moves at the mean velocity `Q/A` of
//! the channel it occupies, is routed by [`route_streamline`] when it reaches
//! a junction, passes straight through two-channel interior nodes, and is
//! recorded when it reaches a terminal.
//!
//! With `droplet_resistance = 0` the flow field is solved once and droplets
//! do not disturb it. A positive value multiplies each channel's resistance by
//! `1 + ρ·n` for `n` droplets inside it and re-solves on every occupancy change.

use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::junction::{
    partition_flows, route_streamline, FluxThreshold, JunctionError, JunctionLayout, JunctionPartition,
};
use crate::network::{solve_flow_weighted, FlowSolution, Network, NetworkError, NodeKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Junction(#[from] JunctionError),
    #[error("unknown input terminal `{0}`")]
    UnknownInput(String),
    #[error("invalid injection schedule for `{label}`: {reason}")]
    InvalidSchedule { label: String, reason: String },
    #[error("input `{0}` is not active")]
    InactiveInput(String),
    #[error("streamline from `{start}` revisits channel `{channel}`")]
    Cycle { start: String, channel: String },
    #[error("streamline from `{start}` stops in channel `{channel}`: no flow")]
    NoFlow { start: String, channel: String },
    #[error("invalid simulation parameter: {0}")]
    InvalidParams(String),
}

/// Injection times for one input terminal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduledInput {
    pub label: String,
    pub terminal: String,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InjectionSchedule {
    inputs: Vec<ScheduledInput>,
}

impl InjectionSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        label: impl Into<String>,
        terminal: impl Into<String>,
        times: Vec<f64>,
    ) -> Result<(), SimError> {
        let label = label.into();
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(SimError::InvalidSchedule { label, reason: "times must be finite and non-negative".into() });
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(SimError::InvalidSchedule { label, reason: "times must be sorted".into() });
        }
        self.inputs.push(ScheduledInput { label, terminal: terminal.into(), times });
        Ok(())
    }

    pub fn inputs(&self) -> &[ScheduledInput] {
        &self.inputs
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.iter().all(|i| i.times.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimParams {
    /// Streamline fraction droplets ride at every junction.
    pub fraction: f64,
    /// Stop time in seconds; `None` picks a default from the flow field.
    pub t_max: Option<f64>,
    /// Occupancy resistance factor ρ.
    pub droplet_resistance: f64,
    pub threshold: FluxThreshold,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { fraction: 0.5, t_max: None, droplet_resistance: 0.0, threshold: FluxThreshold::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Injected,
    EnteredChannel,
    RoutedAtJunction,
    ArrivedAtTerminal,
    Stalled,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Injected => "injected",
            EventKind::EnteredChannel => "entered-channel",
            EventKind::RoutedAtJunction => "routed-at-junction",
            EventKind::ArrivedAtTerminal => "arrived-at-terminal",
            EventKind::Stalled => "stalled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub time: f64,
    pub droplet: usize,
    pub kind: EventKind,
    /// Terminal, channel or junction id, depending on `kind`.
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropletInfo {
    pub id: usize,
    pub label: String,
    pub terminal: String,
    pub injected_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Arrival {
    pub droplet: usize,
    pub label: String,
    pub terminal: String,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceLog {
    pub droplets: Vec<DropletInfo>,
    pub events: Vec<TraceEvent>,
    /// The run stopped at `t_max` with droplets still in flight.
    pub truncated: bool,
    pub t_max: f64,
}

impl TraceLog {
    pub fn arrivals(&self) -> Vec<Arrival> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::ArrivedAtTerminal)
            .map(|e| Arrival {
                droplet: e.droplet,
                label: self.droplets[e.droplet].label.clone(),
                terminal: e.location.clone(),
                time: e.time,
            })
            .collect()
    }

    pub fn stalled(&self) -> Vec<&TraceEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::Stalled).collect()
    }

    /// Droplets that neither arrived nor stalled.
    pub fn unfinished(&self) -> Vec<usize> {
        let finished: BTreeSet<usize> = self
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::ArrivedAtTerminal | EventKind::Stalled))
            .map(|e| e.droplet)
            .collect();
        self.droplets.iter().map(|d| d.id).filter(|id| !finished.contains(id)).collect()
    }

    /// `time,droplet,event,location` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,droplet,event,location\n");
        for e in &self.events {
            out.push_str(&format!("{:e},{},{},{}\n", e.time, e.droplet, e.kind, e.location));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Pending,
    /// `s` is measured from the channel's `from` node at time `since`.
    InChannel {
        channel: usize,
        s: f64,
        since: f64,
    },
    Done,
}

struct Droplet {
    phase: Phase,
    terminal: usize,
    inject_at: f64,
}

struct FlowState {
    sol: FlowSolution,
    eps: f64,
    partitions: HashMap<usize, JunctionPartition>,
}

struct Engine<'a> {
    net: &'a Network,
    active: Vec<bool>,
    params: SimParams,
    layouts: HashMap<usize, JunctionLayout>,
    flow: FlowState,
    droplets: Vec<Droplet>,
    events: Vec<TraceEvent>,
}

fn flow_eps(sol: &FlowSolution, threshold: &FluxThreshold) -> f64 {
    threshold.eps_for(sol.flows())
}

impl<'a> Engine<'a> {
    fn occupancy_multipliers(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.net.channels().len()];
        for d in &self.droplets {
            if let Phase::InChannel { channel, .. } = d.phase {
                counts[channel] += 1;
            }
        }
        counts.iter().map(|&n| 1.0 + self.params.droplet_resistance * n as f64).collect()
    }

    fn solve(&self) -> Result<FlowState, SimError> {
        let sol = if self.params.droplet_resistance > 0.0 {
            solve_flow_weighted(self.net, &self.active, Some(&self.occupancy_multipliers()))?
        } else {
            solve_flow_weighted(self.net, &self.active, None)?
        };
        let eps = flow_eps(&sol, &self.params.threshold);
        Ok(FlowState { sol, eps, partitions: HashMap::new() })
    }

    fn velocity(&self, channel: usize) -> f64 {
        let q = self.flow.sol.flow(channel);
        if q.abs() < self.flow.eps {
            0.0
        } else {
            q / self.net.channel(channel).geometry.area()
        }
    }

    fn next_arrival(&self, id: usize) -> Option<f64> {
        match self.droplets[id].phase {
            Phase::Pending => Some(self.droplets[id].inject_at),
            Phase::InChannel { channel, s, since } => {
                let v = self.velocity(channel);
                let len = self.net.channel(channel).geometry.length();
                if v > 0.0 {
                    Some(since + (len - s) / v)
                } else if v < 0.0 {
                    Some(since + s / -v)
                } else {
                    None
                }
            }
            Phase::Done => None,
        }
    }

    fn log(&mut self, time: f64, droplet: usize, kind: EventKind, location: &str) {
        self.events.push(TraceEvent { time, droplet, kind, location: location.to_string() });
    }

    fn partition(&mut self, junction: usize) -> Result<&JunctionPartition, SimError> {
        if !self.flow.partitions.contains_key(&junction) {
            if !self.layouts.contains_key(&junction) {
                self.layouts.insert(junction, JunctionLayout::from_network(self.net, junction)?);
            }
            let p = partition_flows(self.net, &self.layouts[&junction], &self.flow.sol, self.params.threshold)?;
            self.flow.partitions.insert(junction, p);
        }
        Ok(&self.flow.partitions[&junction])
    }

    /// Put a droplet into `channel` at `node`; stalls it if the flow does not
    /// carry it away from `node`.
    fn enter(&mut self, id: usize, channel: usize, node: usize, time: f64) {
        let ch = self.net.channel(channel);
        let (from, _) = self.net.endpoints(channel);
        let s = if node == from { 0.0 } else { ch.geometry.length() };
        let ch_id = ch.id.clone();
        self.droplets[id].phase = Phase::InChannel { channel, s, since: time };
        self.log(time, id, EventKind::EnteredChannel, &ch_id);
        let v = self.velocity(channel);
        let away = if node == from { v > 0.0 } else { v < 0.0 };
        if !away {
            self.droplets[id].phase = Phase::Done;
            self.log(time, id, EventKind::Stalled, &ch_id);
        }
    }

    /// Advance every in-flight droplet to `time` under the current flow.
    fn advance_all(&mut self, time: f64) {
        for id in 0..self.droplets.len() {
            if let Phase::InChannel { channel, s, since } = self.droplets[id].phase {
                let v = self.velocity(channel);
                let len = self.net.channel(channel).geometry.length();
                let s = (s + v * (time - since)).clamp(0.0, len);
                self.droplets[id].phase = Phase::InChannel { channel, s, since: time };
            }
        }
    }

    fn resolve_if_coupled(&mut self, time: f64) -> Result<(), SimError> {
        if self.params.droplet_resistance > 0.0 {
            self.advance_all(time);
            self.flow = self.solve()?;
            // Droplets whose channel stopped flowing cannot move any further.
            for id in 0..self.droplets.len() {
                if let Phase::InChannel { channel, .. } = self.droplets[id].phase {
                    if self.velocity(channel) == 0.0 {
                        self.droplets[id].phase = Phase::Done;
                        let ch_id = self.net.channel(channel).id.clone();
                        self.log(time, id, EventKind::Stalled, &ch_id);
                    }
                }
            }
        }
        Ok(())
    }

    fn handle(&mut self, id: usize, time: f64) -> Result<(), SimError> {
        match self.droplets[id].phase {
            Phase::Pending => {
                let term = self.droplets[id].terminal;
                let term_id = self.net.node(term).id.clone();
                self.log(time, id, EventKind::Injected, &term_id);
                let channel = self.net.incident(term)[0];
                self.enter(id, channel, term, time);
            }
            Phase::InChannel { channel, .. } => {
                let v = self.velocity(channel);
                let (from, to) = self.net.endpoints(channel);
                let node = if v > 0.0 { to } else { from };
                let node_ref = self.net.node(node);
                let node_id = node_ref.id.clone();
                match node_ref.kind {
                    NodeKind::Terminal => {
                        self.droplets[id].phase = Phase::Done;
                        self.log(time, id, EventKind::ArrivedAtTerminal, &node_id);
                    }
                    NodeKind::Interior => {
                        let next = self.net.incident(node).iter().copied().find(|&c| c != channel).unwrap_or(channel);
                        self.enter(id, next, node, time);
                    }
                    NodeKind::Junction => {
                        let f = self.params.fraction;
                        let routed = self.partition(node).and_then(|p| Ok(route_streamline(p, channel, f)?));
                        match routed {
                            Ok(next) => {
                                self.log(time, id, EventKind::RoutedAtJunction, &node_id);
                                self.enter(id, next, node, time);
                            }
                            Err(SimError::Junction(JunctionError::InactiveInflow(_))) => {
                                self.droplets[id].phase = Phase::Done;
                                self.log(time, id, EventKind::Stalled, &node_id);
                            }
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
            Phase::Done => {}
        }
        Ok(())
    }
}

/// Slowest single-channel transit time `L·A/|Q|` among flowing channels.
pub fn slowest_transit(net: &Network, sol: &FlowSolution, threshold: &FluxThreshold) -> f64 {
    let eps = flow_eps(sol, threshold);
    (0..net.channels().len())
        .filter(|&c| sol.flow(c).abs() >= eps)
        .map(|c| {
            let g = &net.channel(c).geometry;
            g.length() * g.area() / sol.flow(c).abs()
        })
        .fold(0.0, f64::max)
}

/// Run droplets from `schedule` through `net` with the `active` source
/// terminals switched on.
pub fn run_simulation(
    net: &Network,
    active: &BTreeSet<String>,
    schedule: &InjectionSchedule,
    params: SimParams,
) -> Result<TraceLog, SimError> {
    if !(0.0..=1.0).contains(&params.fraction) {
        return Err(SimError::InvalidParams(format!("fraction {} outside [0, 1]", params.fraction)));
    }
    if !(params.droplet_resistance.is_finite() && params.droplet_resistance >= 0.0) {
        return Err(SimError::InvalidParams(format!(
            "droplet resistance {} must be finite and non-negative",
            params.droplet_resistance
        )));
    }
    let mask = net.resolve_active(active)?;

    let mut injections: Vec<(f64, usize, &ScheduledInput)> = Vec::new();
    for (order, input) in schedule.inputs().iter().enumerate() {
        let term = net
            .node_index(&input.terminal)
            .filter(|&i| net.node(i).kind == NodeKind::Terminal)
            .ok_or_else(|| SimError::UnknownInput(input.terminal.clone()))?;
        let _ = term;
        for &t in &input.times {
            injections.push((t, order, input));
        }
    }
    injections.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.label.cmp(&b.2.label)).then(a.1.cmp(&b.1)));

    let droplets_info: Vec<DropletInfo> = injections
        .iter()
        .enumerate()
        .map(|(id, (t, _, input))| DropletInfo {
            id,
            label: input.label.clone(),
            terminal: input.terminal.clone(),
            injected_at: *t,
        })
        .collect();
    let droplets: Vec<Droplet> = droplets_info
        .iter()
        .map(|d| Droplet {
            phase: Phase::Pending,
            terminal: net.node_index(&d.terminal).expect("checked above"),
            inject_at: d.injected_at,
        })
        .collect();

    let mut engine = Engine {
        net,
        active: mask,
        params,
        layouts: HashMap::new(),
        flow: FlowState { sol: FlowSolution::from_parts(vec![], vec![], vec![]), eps: 0.0, partitions: HashMap::new() },
        droplets,
        events: Vec::new(),
    };
    engine.flow = engine.solve()?;

    let last_injection = droplets_info.iter().map(|d| d.injected_at).fold(0.0, f64::max);
    let t_max = params
        .t_max
        .unwrap_or_else(|| last_injection + 10.0 * slowest_transit(net, &engine.flow.sol, &params.threshold));

    let mut truncated = false;
    loop {
        let next = (0..engine.droplets.len())
            .filter_map(|id| engine.next_arrival(id).map(|t| (t, id)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some((time, id)) = next else { break };
        if time > t_max {
            truncated = true;
            break;
        }
        let was_pending = engine.droplets[id].phase == Phase::Pending;
        let before = engine.droplets[id].phase;
        engine.handle(id, time)?;
        let occupancy_changed = was_pending
            || matches!((before, engine.droplets[id].phase),
                (Phase::InChannel { channel: a, .. }, Phase::InChannel { channel: b, .. }) if a != b)
            || matches!((before, engine.droplets[id].phase), (Phase::InChannel { .. }, Phase::Done));
        if occupancy_changed {
            engine.resolve_if_coupled(time)?;
        }
    }

    Ok(TraceLog { droplets: droplets_info, events: engine.events, truncated, t_max })
}

/// Channels followed by the streamline at fraction `f` from a source terminal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamlinePath {
    pub channels: Vec<String>,
    pub terminal: String,
}

/// Trace the streamline from `start` through an already solved flow.
pub fn trace_streamline_in(
    net: &Network,
    sol: &FlowSolution,
    start: &str,
    f: f64,
    threshold: FluxThreshold,
) -> Result<StreamlinePath, SimError> {
    let term = net
        .node_index(start)
        .filter(|&i| net.node(i).kind == NodeKind::Terminal)
        .ok_or_else(|| SimError::UnknownInput(start.to_string()))?;
    if !sol.is_active_source(term) {
        return Err(SimError::InactiveInput(start.to_string()));
    }
    let eps = flow_eps(sol, &threshold);
    let mut layouts: HashMap<usize, JunctionPartition> = HashMap::new();
    let mut visited = BTreeSet::new();
    let mut channels = Vec::new();
    let mut node = term;
    let mut channel = net.incident(term)[0];
    loop {
        let ch_id = net.channel(channel).id.clone();
        if !visited.insert(channel) {
            return Err(SimError::Cycle { start: start.to_string(), channel: ch_id });
        }
        let outward = -sol.flow_into(net, channel, node);
        if outward < eps {
            return Err(SimError::NoFlow { start: start.to_string(), channel: ch_id });
        }
        channels.push(ch_id);
        node = net.other_end(channel, node);
        match net.node(node).kind {
            NodeKind::Terminal => {
                return Ok(StreamlinePath { channels, terminal: net.node(node).id.clone() });
            }
            NodeKind::Interior => {
                channel = net.incident(node).iter().copied().find(|&c| c != channel).unwrap_or(channel);
            }
            NodeKind::Junction => {
                let partition = match layouts.entry(node) {
                    Entry::Occupied(e) => e.into_mut(),
                    Entry::Vacant(e) => {
                        let layout = JunctionLayout::from_network(net, node)?;
                        e.insert(partition_flows(net, &layout, sol, threshold)?)
                    }
                };
                channel = route_streamline(partition, channel, f)?;
            }
        }
    }
}

/// Solve the flow for `active` and trace the streamline from `start`.
pub fn trace_streamline_path(
    net: &Network,
    active: &BTreeSet<String>,
    start: &str,
    f: f64,
) -> Result<StreamlinePath, SimError> {
    let mask = net.resolve_active(active)?;
    let sol = solve_flow_weighted(net, &mask, None)?;
    trace_streamline_in(net, &sol, start, f, FluxThreshold::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydraulics::{ChannelGeometry, FluidProperties};
    use crate::network::{build_network, BoundaryCondition, BoundaryKind, Channel, Node};

    fn chain() -> Network {
        let g = |l| ChannelGeometry::new(l, 0.8e-3, 0.8e-3).unwrap();
        build_network(
            vec![
                Node::new("in", (0.0, 0.0), NodeKind::Terminal),
                Node::new("mid", (0.01, 0.0), NodeKind::Interior),
                Node::new("out", (0.03, 0.0), NodeKind::Terminal),
            ],
            vec![Channel::new("c1", "in", "mid", g(0.01)), Channel::new("c2", "out", "mid", g(0.02))],
            FluidProperties::new(1e-3).unwrap(),
            vec![
                BoundaryCondition::new("in", BoundaryKind::PressureSource(500.0)),
                BoundaryCondition::new("out", BoundaryKind::Outlet(0.0)),
            ],
        )
        .unwrap()
    }

    fn on(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn chain_transit_times() {
        let net = chain();
        let mut sched = InjectionSchedule::new();
        sched.add("A", "in", vec![0.0]).unwrap();
        let log = run_simulation(&net, &on(&["in"]), &sched, SimParams::default()).unwrap();
        let arrivals = log.arrivals();
        assert_eq!(arrivals.len(), 1);
        assert_eq!(arrivals[0].terminal, "out");
        // Series resistance 3 × 7.8125e8, Q = 500 / that.
        let q = 500.0 / (3.0 * 7.8125e8);
        let expected = 0.03 * 6.4e-7 / q;
        assert!(((arrivals[0].time - expected) / expected).abs() < 1e-9);
        let kinds: Vec<EventKind> = log.events.iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                EventKind::Injected,
                EventKind::EnteredChannel,
                EventKind::EnteredChannel,
                EventKind::ArrivedAtTerminal
            ]
        );
        assert!(!log.truncated);
    }

    #[test]
    fn inactive_source_stalls() {
        let net = chain();
        let mut sched = InjectionSchedule::new();
        sched.add("A", "in", vec![0.0]).unwrap();
        let log = run_simulation(&net, &BTreeSet::new(), &sched, SimParams::default()).unwrap();
        assert!(log.arrivals().is_empty());
        assert_eq!(log.stalled().len(), 1);
    }

    #[test]
    fn short_t_max_truncates() {
        let net = chain();
        let mut sched = InjectionSchedule::new();
        sched.add("A", "in", vec![0.0]).unwrap();
        let params = SimParams { t_max: Some(1e-3), ..SimParams::default() };
        let log = run_simulation(&net, &on(&["in"]), &sched, params).unwrap();
        assert!(log.truncated);
        assert_eq!(log.unfinished(), vec![0]);
    }

    #[test]
    fn schedule_validation() {
        let mut sched = InjectionSchedule::new();
        assert!(sched.add("A", "in", vec![1.0, 0.5]).is_err());
        assert!(sched.add("A", "in", vec![-1.0]).is_err());
        assert!(sched.add("A", "in", vec![0.0, 0.0, 2.0]).is_ok());
    }

    #[test]
    fn csv_header_and_rows() {
        let net = chain();
        let mut sched = InjectionSchedule::new();
        sched.add("A", "in", vec![0.0]).unwrap();
        let log = run_simulation(&net, &on(&["in"]), &sched, SimParams::default()).unwrap();
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("time,droplet,event,location"));
        assert_eq!(lines.next(), Some("0e0,0,injected,in"));
        assert_eq!(csv.lines().count(), 1 + log.events.len());
    }

    #[test]
    fn single_channel_trace() {
        let net = chain();
        let path = trace_streamline_path(&net, &on(&["in"]), "in", 0.5).unwrap();
        assert_eq!(path.channels, vec!["c1", "c2"]);
        assert_eq!(path.terminal, "out");
        assert!(matches!(trace_streamline_path(&net, &BTreeSet::new(), "in", 0.5), Err(SimError::InactiveInput(_))));
    }

    #[test]
    fn occupancy_resistance_slows_droplets() {
        let net = chain();
        let mut sched = InjectionSchedule::new();
        sched.add("A", "in", vec![0.0]).unwrap();
        let free = run_simulation(&net, &on(&["in"]), &sched, SimParams::default()).unwrap();
        let params = SimParams { droplet_resistance: 1.0, ..SimParams::default() };
        let loaded = run_simulation(&net, &on(&["in"]), &sched, params).unwrap();
        assert_eq!(loaded.arrivals()[0].terminal, "out");
        assert!(loaded.arrivals()[0].time > free.arrivals()[0].time);
    }
}
