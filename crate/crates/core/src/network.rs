//! Channel networks and steady-flow nodal analysis.
//!
//! A [`Network`] is a validated graph of nodes joined by channels, each
//! channel carrying a precomputed fluidic resistance. [`solve_flow`] enforces
//! `ΔP = Q·R` on every channel and conservation of volumetric flow at every
//! node that is not held at a fixed pressure.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::hydraulics::{fluidic_resistance, ChannelGeometry, FluidProperties};

/// Relative pivot magnitude below which the conductance matrix is singular.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

/// Relative nodal residual accepted by [`ConservationReport::is_conservative`].
pub const CONSERVATION_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Interior,
    Junction,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub id: String,
    /// Position in metres.
    pub position: (f64, f64),
    pub kind: NodeKind,
}

impl Node {
    pub fn new(id: impl Into<String>, position: (f64, f64), kind: NodeKind) -> Self {
        Self { id: id.into(), position, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Channel {
    pub id: String,
    pub from: String,
    pub to: String,
    pub geometry: ChannelGeometry,
}

impl Channel {
    pub fn new(
        id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        geometry: ChannelGeometry,
    ) -> Self {
        Self { id: id.into(), from: from.into(), to: to.into(), geometry }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Switchable inlet held at the given pressure (Pa) while active.
    PressureSource(f64),
    /// Switchable inlet injecting the given flow (m³/s) while active.
    FlowSource(f64),
    /// Always-open outlet at a reference pressure (Pa).
    Outlet(f64),
    /// Sealed terminal.
    DeadEnd,
}

impl BoundaryKind {
    pub fn is_source(&self) -> bool {
        matches!(self, BoundaryKind::PressureSource(_) | BoundaryKind::FlowSource(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryCondition {
    pub node: String,
    pub kind: BoundaryKind,
}

impl BoundaryCondition {
    pub fn new(node: impl Into<String>, kind: BoundaryKind) -> Self {
        Self { node: node.into(), kind }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("invalid network: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("singular flow system: {0}")]
    Singular(String),
    #[error("solver produced a non-finite value at {0}")]
    NonFinite(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
}

/// A validated, immutable channel network.
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
    channels: Vec<Channel>,
    fluid: FluidProperties,
    boundaries: Vec<Option<BoundaryKind>>,
    resistances: Vec<f64>,
    endpoints: Vec<(usize, usize)>,
    incident: Vec<Vec<usize>>,
    node_index: HashMap<String, usize>,
    channel_index: HashMap<String, usize>,
}

/// Validate the parts and assemble a [`Network`].
///
/// All structural problems are collected and reported together.
pub fn build_network(
    nodes: Vec<Node>,
    channels: Vec<Channel>,
    fluid: FluidProperties,
    boundaries: Vec<BoundaryCondition>,
) -> Result<Network, NetworkError> {
    let mut issues = Vec::new();

    let mut node_index = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if node_index.insert(n.id.clone(), i).is_some() {
            issues.push(format!("duplicate node id `{}`", n.id));
        }
        if !(n.position.0.is_finite() && n.position.1.is_finite()) {
            issues.push(format!("node `{}` has a non-finite position", n.id));
        }
    }

    let mut channel_index = HashMap::new();
    let mut endpoints = Vec::with_capacity(channels.len());
    let mut incident = vec![Vec::new(); nodes.len()];
    let mut resistances = Vec::with_capacity(channels.len());
    for (i, c) in channels.iter().enumerate() {
        if channel_index.insert(c.id.clone(), i).is_some() {
            issues.push(format!("duplicate channel id `{}`", c.id));
        }
        let from = node_index.get(&c.from).copied();
        let to = node_index.get(&c.to).copied();
        if from.is_none() {
            issues.push(format!("channel `{}` references missing node `{}`", c.id, c.from));
        }
        if to.is_none() && c.to != c.from {
            issues.push(format!("channel `{}` references missing node `{}`", c.id, c.to));
        }
        if c.from == c.to {
            issues.push(format!("channel `{}` starts and ends at the same node", c.id));
        }
        let r = fluidic_resistance(&c.geometry, &fluid);
        if !(r.is_finite() && r > 0.0) {
            issues.push(format!("channel `{}` has non-finite resistance", c.id));
        }
        resistances.push(r);
        let (f, t) = (from.unwrap_or(usize::MAX), to.unwrap_or(usize::MAX));
        if f != usize::MAX && t != usize::MAX && f != t {
            incident[f].push(i);
            incident[t].push(i);
        }
        endpoints.push((f, t));
    }

    let mut bounds: Vec<Option<BoundaryKind>> = vec![None; nodes.len()];
    for b in &boundaries {
        let Some(&i) = node_index.get(&b.node) else {
            issues.push(format!("boundary condition on missing node `{}`", b.node));
            continue;
        };
        if nodes[i].kind != NodeKind::Terminal {
            issues.push(format!("boundary condition on non-terminal node `{}`", b.node));
        }
        if bounds[i].is_some() {
            issues.push(format!("node `{}` has more than one boundary condition", b.node));
        }
        let value_ok = match b.kind {
            BoundaryKind::PressureSource(v) | BoundaryKind::FlowSource(v) | BoundaryKind::Outlet(v) => v.is_finite(),
            BoundaryKind::DeadEnd => true,
        };
        if !value_ok {
            issues.push(format!("boundary condition on `{}` has a non-finite value", b.node));
        }
        bounds[i] = Some(b.kind);
    }

    for (i, n) in nodes.iter().enumerate() {
        let degree = incident[i].len();
        match n.kind {
            NodeKind::Terminal => {
                if degree != 1 {
                    issues.push(format!("terminal `{}` has {degree} channels, expected 1", n.id));
                }
                if bounds[i].is_none() {
                    issues.push(format!("terminal `{}` has no boundary condition", n.id));
                }
            }
            NodeKind::Junction if degree < 3 => {
                issues.push(format!("junction `{}` has {degree} channels, expected at least 3", n.id));
            }
            NodeKind::Interior if degree != 2 => {
                issues.push(format!("interior node `{}` has {degree} channels, expected 2", n.id));
            }
            _ => {}
        }
    }

    // Every connected component holding a source needs a pressure reference.
    let mut component = vec![usize::MAX; nodes.len()];
    let mut next = 0;
    for start in 0..nodes.len() {
        if component[start] != usize::MAX {
            continue;
        }
        let members = flood(start, &incident, &endpoints, &mut component, next);
        next += 1;
        let has_source = members.iter().any(|&m| bounds[m].is_some_and(|b| b.is_source()));
        let has_reference = members
            .iter()
            .any(|&m| matches!(bounds[m], Some(BoundaryKind::PressureSource(_)) | Some(BoundaryKind::Outlet(_))));
        if has_source && !has_reference {
            let mut ids: Vec<&str> = members.iter().map(|&m| nodes[m].id.as_str()).collect();
            ids.sort_unstable();
            issues.push(format!("component {{{}}} contains a source but no pressure reference", ids.join(", ")));
        }
    }

    if !issues.is_empty() {
        return Err(NetworkError::Validation(issues));
    }

    Ok(Network {
        nodes,
        channels,
        fluid,
        boundaries: bounds,
        resistances,
        endpoints,
        incident,
        node_index,
        channel_index,
    })
}

fn flood(
    start: usize,
    incident: &[Vec<usize>],
    endpoints: &[(usize, usize)],
    component: &mut [usize],
    label: usize,
) -> Vec<usize> {
    let mut members = vec![start];
    component[start] = label;
    let mut queue = VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        for &c in &incident[n] {
            let (a, b) = endpoints[c];
            let other = if a == n { b } else { a };
            if component[other] == usize::MAX {
                component[other] = label;
                members.push(other);
                queue.push_back(other);
            }
        }
    }
    members
}

impl Network {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn fluid(&self) -> &FluidProperties {
        &self.fluid
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn channel_index(&self, id: &str) -> Option<usize> {
        self.channel_index.get(id).copied()
    }

    pub fn node(&self, index: usize) -> &Node {
        &self.nodes[index]
    }

    pub fn channel(&self, index: usize) -> &Channel {
        &self.channels[index]
    }

    pub fn boundary(&self, node: usize) -> Option<BoundaryKind> {
        self.boundaries[node]
    }

    /// Resistance of a channel in Pa·s/m³.
    pub fn resistance(&self, channel: usize) -> f64 {
        self.resistances[channel]
    }

    /// `(from, to)` node indices of a channel.
    pub fn endpoints(&self, channel: usize) -> (usize, usize) {
        self.endpoints[channel]
    }

    /// Channels touching a node.
    pub fn incident(&self, node: usize) -> &[usize] {
        &self.incident[node]
    }

    /// The endpoint of `channel` that is not `node`.
    pub fn other_end(&self, channel: usize, node: usize) -> usize {
        let (a, b) = self.endpoints[channel];
        if a == node {
            b
        } else {
            a
        }
    }

    /// Node ids of every switchable source terminal, in declaration order.
    pub fn source_nodes(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .zip(&self.boundaries)
            .filter(|(_, b)| b.is_some_and(|b| b.is_source()))
            .map(|(n, _)| n.id.as_str())
            .collect()
    }

    /// Copy of the network with every source value multiplied by `k`.
    pub fn with_source_scale(&self, k: f64) -> Network {
        let mut net = self.clone();
        for b in net.boundaries.iter_mut().flatten() {
            match b {
                BoundaryKind::PressureSource(p) => *p *= k,
                BoundaryKind::FlowSource(q) => *q *= k,
                _ => {}
            }
        }
        net
    }

    /// Resolve source node ids to indices, rejecting unknown or non-source ids.
    pub fn resolve_active(&self, active: &BTreeSet<String>) -> Result<Vec<bool>, NetworkError> {
        let mut mask = vec![false; self.nodes.len()];
        for id in active {
            let i = self.node_index(id).ok_or_else(|| NetworkError::UnknownNode(id.clone()))?;
            if !self.boundaries[i].is_some_and(|b| b.is_source()) {
                return Err(NetworkError::UnknownNode(format!("{id} (not a source terminal)")));
            }
            mask[i] = true;
        }
        Ok(mask)
    }
}

/// Node pressures and signed channel flows for one boundary configuration.
///
/// Vectors are indexed like [`Network::nodes`] and [`Network::channels`].
/// A positive flow runs from the channel's `from` node to its `to` node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSolution {
    pressures: Vec<f64>,
    flows: Vec<f64>,
    active_sources: Vec<bool>,
}

impl FlowSolution {
    pub fn pressures(&self) -> &[f64] {
        &self.pressures
    }

    pub fn flows(&self) -> &[f64] {
        &self.flows
    }

    pub fn pressure(&self, node: usize) -> f64 {
        self.pressures[node]
    }

    pub fn flow(&self, channel: usize) -> f64 {
        self.flows[channel]
    }

    pub fn is_active_source(&self, node: usize) -> bool {
        self.active_sources[node]
    }

    /// Signed flow of `channel` counted positive when it enters `node`.
    pub fn flow_into(&self, net: &Network, channel: usize, node: usize) -> f64 {
        let (_, to) = net.endpoints(channel);
        if to == node {
            self.flows[channel]
        } else {
            -self.flows[channel]
        }
    }

    /// Build a solution by hand. Used to check [`validate_conservation`]
    /// against externally produced data.
    pub fn from_parts(pressures: Vec<f64>, flows: Vec<f64>, active_sources: Vec<bool>) -> Self {
        Self { pressures, flows, active_sources }
    }
}

/// Solve steady flow with the listed source terminals switched on.
///
/// Sources not in `active` behave as dead ends.
pub fn solve_flow(net: &Network, active: &BTreeSet<String>) -> Result<FlowSolution, NetworkError> {
    let mask = net.resolve_active(active)?;
    solve_with_mask(net, &mask, None)
}

/// Like [`solve_flow`] with a per-channel resistance multiplier.
pub fn solve_flow_weighted(
    net: &Network,
    active: &[bool],
    multipliers: Option<&[f64]>,
) -> Result<FlowSolution, NetworkError> {
    solve_with_mask(net, active, multipliers)
}

fn solve_with_mask(net: &Network, active: &[bool], multipliers: Option<&[f64]>) -> Result<FlowSolution, NetworkError> {
    let n = net.nodes.len();
    let resistance = |c: usize| net.resistances[c] * multipliers.map_or(1.0, |m| m[c]);

    let fixed: Vec<Option<f64>> = (0..n)
        .map(|i| match net.boundaries[i] {
            Some(BoundaryKind::PressureSource(p)) if active[i] => Some(p),
            Some(BoundaryKind::Outlet(p)) => Some(p),
            _ => None,
        })
        .collect();
    let injection: Vec<f64> = (0..n)
        .map(|i| match net.boundaries[i] {
            Some(BoundaryKind::FlowSource(q)) if active[i] => q,
            _ => 0.0,
        })
        .collect();

    // Sealed terminals and the branches that lead only to them carry no flow.
    let mut dead: Vec<bool> = (0..n)
        .map(|i| match net.boundaries[i] {
            Some(BoundaryKind::DeadEnd) => true,
            Some(b) if b.is_source() => !active[i],
            _ => false,
        })
        .collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            if dead[i] || fixed[i].is_some() || injection[i] != 0.0 {
                continue;
            }
            let live = net.incident[i].iter().filter(|&&c| !dead[net.other_end(c, i)]).count();
            if live <= 1 {
                dead[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let channel_live = |c: usize| -> bool {
        let (a, b) = net.endpoints[c];
        !dead[a] && !dead[b]
    };

    // Live components without a pressure reference are either undriven
    // (all flows zero) or singular.
    let mut component = vec![usize::MAX; n];
    let mut floating = vec![false; n];
    let mut label = 0;
    for start in 0..n {
        if dead[start] || component[start] != usize::MAX {
            continue;
        }
        let mut members = vec![start];
        component[start] = label;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &c in &net.incident[u] {
                if !channel_live(c) {
                    continue;
                }
                let v = net.other_end(c, u);
                if component[v] == usize::MAX {
                    component[v] = label;
                    members.push(v);
                    queue.push_back(v);
                }
            }
        }
        label += 1;
        if members.iter().all(|&m| fixed[m].is_none()) {
            if let Some(&m) = members.iter().find(|&&m| injection[m] != 0.0) {
                return Err(NetworkError::Singular(format!(
                    "flow source `{}` has no reachable pressure reference",
                    net.nodes[m].id
                )));
            }
            for m in members {
                floating[m] = true;
            }
        }
    }

    let unknowns: Vec<usize> = (0..n).filter(|&i| !dead[i] && !floating[i] && fixed[i].is_none()).collect();
    let mut slot = vec![usize::MAX; n];
    for (k, &i) in unknowns.iter().enumerate() {
        slot[i] = k;
    }

    let mut pressures = vec![0.0; n];
    for i in 0..n {
        if let Some(p) = fixed[i] {
            pressures[i] = p;
        }
    }

    if !unknowns.is_empty() {
        let m = unknowns.len();
        let mut g = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for (k, &i) in unknowns.iter().enumerate() {
            rhs[k] = injection[i];
        }
        for c in 0..net.channels.len() {
            if !channel_live(c) {
                continue;
            }
            let cond = 1.0 / resistance(c);
            let (a, b) = net.endpoints[c];
            for (u, v) in [(a, b), (b, a)] {
                if slot[u] == usize::MAX {
                    continue;
                }
                g[(slot[u], slot[u])] += cond;
                if slot[v] != usize::MAX {
                    g[(slot[u], slot[v])] -= cond;
                } else if let Some(p) = fixed[v] {
                    rhs[slot[u]] += cond * p;
                }
            }
        }
        let scale = g.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let lu = g.lu();
        let u = lu.u();
        if let Some(k) = (0..m).find(|&k| u[(k, k)].abs() <= PIVOT_TOLERANCE * scale) {
            return Err(NetworkError::Singular(format!("pivot {k} below {PIVOT_TOLERANCE:e} of matrix scale")));
        }
        let x = lu.solve(&rhs).ok_or_else(|| NetworkError::Singular("LU solve failed".into()))?;
        for (k, &i) in unknowns.iter().enumerate() {
            pressures[i] = x[k];
        }
    }

    // Dead branches sit at the pressure of the live node they hang from.
    let mut assigned: Vec<bool> = (0..n).map(|i| !dead[i]).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| assigned[i]).collect();
    while let Some(u) = queue.pop_front() {
        for &c in &net.incident[u] {
            let v = net.other_end(c, u);
            if !assigned[v] {
                assigned[v] = true;
                pressures[v] = pressures[u];
                queue.push_back(v);
            }
        }
    }

    let mut flows = vec![0.0; net.channels.len()];
    for (c, q) in flows.iter_mut().enumerate() {
        if channel_live(c) {
            let (a, b) = net.endpoints[c];
            *q = (pressures[a] - pressures[b]) / resistance(c);
        }
    }

    if let Some(i) = pressures.iter().position(|p| !p.is_finite()) {
        return Err(NetworkError::NonFinite(format!("node `{}`", net.nodes[i].id)));
    }
    if let Some(c) = flows.iter().position(|q| !q.is_finite()) {
        return Err(NetworkError::NonFinite(format!("channel `{}`", net.channels[c].id)));
    }

    Ok(FlowSolution { pressures, flows, active_sources: active.to_vec() })
}

/// Worst nodal flow imbalance of a solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationReport {
    /// Largest `|Σ Q|` over checked nodes, divided by `total_inflow` when
    /// that is non-zero.
    pub residual: f64,
    pub worst_node: Option<String>,
    pub total_inflow: f64,
}

impl ConservationReport {
    pub fn is_conservative(&self) -> bool {
        self.residual <= CONSERVATION_TOLERANCE
    }
}

impl fmt::Display for ConservationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.worst_node {
            Some(n) => write!(f, "residual {:e} at `{n}`", self.residual),
            None => write!(f, "residual {:e}", self.residual),
        }
    }
}

/// Check flow conservation at every node not held by an active source or outlet.
pub fn validate_conservation(sol: &FlowSolution, net: &Network) -> ConservationReport {
    let mut total_inflow = 0.0;
    let mut worst = 0.0;
    let mut worst_node = None;
    for (i, node) in net.nodes.iter().enumerate() {
        let net_in: f64 = net.incident[i].iter().map(|&c| sol.flow_into(net, c, i)).sum();
        let held = match net.boundaries[i] {
            Some(BoundaryKind::Outlet(_)) => true,
            Some(b) if b.is_source() => sol.active_sources.get(i).copied().unwrap_or(false),
            _ => false,
        };
        if held {
            if net.boundaries[i].is_some_and(|b| b.is_source()) && net_in < 0.0 {
                total_inflow += -net_in;
            }
            continue;
        }
        if net_in.abs() > worst {
            worst = net_in.abs();
            worst_node = Some(node.id.clone());
        }
    }
    let residual = if total_inflow > 0.0 { worst / total_inflow } else { worst };
    ConservationReport { residual, worst_node, total_inflow }
}
