//! Streamline routing at junction nodes.
//!
//! In two-dimensional creeping flow the streamlines entering a junction cannot
//! cross one another, so the way inflow is shared among the outflows is fixed
//! by the circular order of the ports alone. The model here lays the signed
//! port fluxes out on a cumulative "level" axis:
//!
//! 1. fluxes are listed in ascending port angle, positive into the junction;
//! 2. the circle is cut just after the minimum circular prefix sum, so the
//!    walk that follows never dips below zero;
//! 3. each inflow raises the level by its flux, each outflow lowers it;
//! 4. a level inside an inflow's rising interval belongs to the first later
//!    outflow whose falling interval crosses it.
//!
//! Step 4 is parenthesis matching, and the resulting transport is the unique
//! one whose chords (drawn between ports on a circle) do not cross.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::Serialize;
use thiserror::Error;

use crate::network::{FlowSolution, Network, NodeKind};

/// Allowed relative mismatch between total inflow and outflow at a junction.
pub const BALANCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JunctionError {
    #[error("node `{0}` is not a junction")]
    NotAJunction(String),
    #[error("junction `{0}` has fewer than three ports")]
    TooFewPorts(String),
    #[error("junction `{node}`: channels `{a}` and `{b}` leave at the same angle")]
    DuplicateAngle { node: String, a: String, b: String },
    #[error("port fluxes do not balance: inflow {inflow:e}, outflow {outflow:e}")]
    Imbalance { inflow: f64, outflow: f64 },
    #[error("`{0}` is not an active inflow at this junction")]
    InactiveInflow(String),
    #[error("streamline fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("cutting before port {0} makes the level walk negative")]
    InvalidCut(usize),
}

/// Flux magnitude below which a port is treated as closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxThreshold {
    /// m³/s
    pub absolute: f64,
    /// Fraction of the largest port flux.
    pub relative: f64,
}

impl Default for FluxThreshold {
    fn default() -> Self {
        Self { absolute: 1e-15, relative: 1e-9 }
    }
}

impl FluxThreshold {
    pub fn eps_for(&self, fluxes: &[f64]) -> f64 {
        let max = fluxes.iter().fold(0.0f64, |m, f| m.max(f.abs()));
        self.absolute + self.relative * max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Port {
    pub channel: usize,
    pub channel_id: String,
    /// Direction of the channel as it leaves the junction, in `[0, 2π)`.
    pub angle: f64,
}

/// The ports of a junction in ascending angular order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JunctionLayout {
    pub node: usize,
    pub node_id: String,
    pub ports: Vec<Port>,
}

impl JunctionLayout {
    pub fn from_network(net: &Network, node: usize) -> Result<Self, JunctionError> {
        let n = net.node(node);
        if n.kind != NodeKind::Junction {
            return Err(JunctionError::NotAJunction(n.id.clone()));
        }
        let (x0, y0) = n.position;
        let mut ports: Vec<Port> = net
            .incident(node)
            .iter()
            .map(|&c| {
                let (x, y) = net.node(net.other_end(c, node)).position;
                Port {
                    channel: c,
                    channel_id: net.channel(c).id.clone(),
                    angle: (y - y0).atan2(x - x0).rem_euclid(TAU),
                }
            })
            .collect();
        if ports.len() < 3 {
            return Err(JunctionError::TooFewPorts(n.id.clone()));
        }
        ports.sort_by(|a, b| a.angle.total_cmp(&b.angle));
        for w in ports.windows(2) {
            if (w[1].angle - w[0].angle).abs() < 1e-12 {
                return Err(JunctionError::DuplicateAngle {
                    node: n.id.clone(),
                    a: w[0].channel_id.clone(),
                    b: w[1].channel_id.clone(),
                });
            }
        }
        Ok(Self { node, node_id: n.id.clone(), ports })
    }

    /// Signed fluxes in port order, positive into the junction.
    pub fn port_fluxes(&self, net: &Network, sol: &FlowSolution) -> Vec<f64> {
        self.ports.iter().map(|p| sol.flow_into(net, p.channel, self.node)).collect()
    }
}

/// One port's span on the level axis. Inflows rise (`start < end`), outflows
/// fall (`start > end`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelInterval {
    pub port: usize,
    pub start: f64,
    pub end: f64,
}

impl LevelInterval {
    pub fn is_inflow(&self) -> bool {
        self.end > self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transfer {
    pub from_port: usize,
    pub to_port: usize,
    pub flux: f64,
}

/// Non-crossing assignment of inflow to outflow at one junction, expressed
/// in port indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortPartition {
    /// Thresholded signed fluxes, outflows rescaled to balance the inflows.
    pub fluxes: Vec<f64>,
    /// Port at which the level walk begins.
    pub start: usize,
    /// Active ports in walk order.
    pub intervals: Vec<LevelInterval>,
    pub transfers: Vec<Transfer>,
}

fn threshold_and_balance(fluxes: &[f64], eps: f64) -> Result<Vec<f64>, JunctionError> {
    let mut f: Vec<f64> = fluxes.iter().map(|&x| if x.abs() < eps { 0.0 } else { x }).collect();
    let inflow: f64 = f.iter().filter(|&&x| x > 0.0).sum();
    let outflow: f64 = -f.iter().filter(|&&x| x < 0.0).sum::<f64>();
    let throughput = inflow.max(outflow);
    if (inflow - outflow).abs() > BALANCE_TOLERANCE * throughput + eps * fluxes.len() as f64
        || (throughput > 0.0 && (inflow == 0.0 || outflow == 0.0))
    {
        return Err(JunctionError::Imbalance { inflow, outflow });
    }
    if outflow > 0.0 {
        let k = inflow / outflow;
        for x in f.iter_mut().filter(|x| **x < 0.0) {
            *x *= k;
        }
    }
    Ok(f)
}

/// Partition raw port fluxes (in circular port order, positive inflow).
pub fn partition_fluxes(fluxes: &[f64], eps: f64) -> Result<PortPartition, JunctionError> {
    let f = threshold_and_balance(fluxes, eps)?;
    let n = f.len();
    let mut prefix = 0.0;
    let mut min = f64::INFINITY;
    let mut cut = 0;
    for (i, x) in f.iter().enumerate() {
        prefix += x;
        if prefix < min {
            min = prefix;
            cut = i;
        }
    }
    let start = if n == 0 { 0 } else { (cut + 1) % n };
    Ok(walk(f, start))
}

/// Partition starting the level walk at a caller-chosen port.
///
/// Fails if the walk would go negative from there; any start where it stays
/// non-negative yields the same transport.
pub fn partition_fluxes_from(fluxes: &[f64], eps: f64, start: usize) -> Result<PortPartition, JunctionError> {
    let f = threshold_and_balance(fluxes, eps)?;
    let n = f.len();
    let scale: f64 = f.iter().map(|x| x.abs()).sum();
    let mut level = 0.0;
    for k in 0..n {
        level += f[(start + k) % n];
        if level < -1e-12 * scale {
            return Err(JunctionError::InvalidCut(start));
        }
    }
    Ok(walk(f, start))
}

fn walk(fluxes: Vec<f64>, start: usize) -> PortPartition {
    let n = fluxes.len();
    let mut intervals = Vec::new();
    let mut level = 0.0;
    for k in 0..n {
        let port = (start + k) % n;
        let q = fluxes[port];
        if q != 0.0 {
            intervals.push(LevelInterval { port, start: level, end: level + q });
            level += q;
        }
    }

    let mut open: Vec<(usize, f64)> = Vec::new();
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut order: Vec<(usize, usize)> = Vec::new();
    for iv in &intervals {
        let q = iv.end - iv.start;
        if q > 0.0 {
            open.push((iv.port, q));
            continue;
        }
        let mut need = -q;
        while need > 0.0 {
            let Some(top) = open.last_mut() else { break };
            let take = top.1.min(need);
            let key = (top.0, iv.port);
            if !acc.contains_key(&key) {
                order.push(key);
            }
            *acc.entry(key).or_insert(0.0) += take;
            top.1 -= take;
            need -= take;
            if top.1 <= 0.0 {
                open.pop();
            }
        }
    }
    let transfers =
        order.into_iter().map(|key| Transfer { from_port: key.0, to_port: key.1, flux: acc[&key] }).collect();

    PortPartition { fluxes, start, intervals, transfers }
}

impl PortPartition {
    /// Outflow port receiving the streamline at fraction `f` of `in_port`'s flux.
    ///
    /// Falling intervals are lower-exclusive and upper-inclusive, so a level on
    /// the boundary between two outflows goes to the later one. `f = 0` is
    /// taken as the limit from inside the inflow.
    pub fn route_port(&self, in_port: usize, f: f64) -> Result<usize, JunctionError> {
        if !(0.0..=1.0).contains(&f) {
            return Err(JunctionError::FractionOutOfRange(f));
        }
        let k = self
            .intervals
            .iter()
            .position(|iv| iv.port == in_port && iv.is_inflow())
            .ok_or_else(|| JunctionError::InactiveInflow(format!("port {in_port}")))?;
        let iv = self.intervals[k];
        let h = iv.start + f * (iv.end - iv.start);
        let later = self.intervals[k + 1..].iter().filter(|o| !o.is_inflow());
        let hit = if f == 0.0 {
            later.clone().find(|o| o.end <= h && h < o.start)
        } else {
            later.clone().find(|o| o.end < h && h <= o.start)
        };
        if let Some(o) = hit {
            return Ok(o.port);
        }
        // Only reachable through rounding at the extreme levels.
        later
            .min_by(|a, b| {
                let da = (a.end - h).max(h - a.start).max(0.0);
                let db = (b.end - h).max(h - b.start).max(0.0);
                da.total_cmp(&db)
            })
            .map(|o| o.port)
            .ok_or_else(|| JunctionError::InactiveInflow(format!("port {in_port}")))
    }
}

/// A [`PortPartition`] bound to the channels of a junction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JunctionPartition {
    pub layout: JunctionLayout,
    pub ports: PortPartition,
}

impl JunctionPartition {
    /// Flux from `in_channel` to `out_channel` (channel indices).
    pub fn transfer(&self, in_channel: usize, out_channel: usize) -> f64 {
        self.ports
            .transfers
            .iter()
            .filter(|t| {
                self.layout.ports[t.from_port].channel == in_channel
                    && self.layout.ports[t.to_port].channel == out_channel
            })
            .map(|t| t.flux)
            .sum()
    }

    /// All transfers as `(in channel id, out channel id, flux)`.
    pub fn transfers_by_id(&self) -> Vec<(&str, &str, f64)> {
        self.ports
            .transfers
            .iter()
            .map(|t| {
                (
                    self.layout.ports[t.from_port].channel_id.as_str(),
                    self.layout.ports[t.to_port].channel_id.as_str(),
                    t.flux,
                )
            })
            .collect()
    }

    fn port_of(&self, channel: usize) -> Option<usize> {
        self.layout.ports.iter().position(|p| p.channel == channel)
    }
}

/// Partition the solved flow at a junction.
pub fn partition_flows(
    net: &Network,
    layout: &JunctionLayout,
    sol: &FlowSolution,
    threshold: FluxThreshold,
) -> Result<JunctionPartition, JunctionError> {
    let fluxes = layout.port_fluxes(net, sol);
    let eps = threshold.eps_for(&fluxes);
    let ports = partition_fluxes(&fluxes, eps)?;
    Ok(JunctionPartition { layout: layout.clone(), ports })
}

/// Channel (index) taken by the streamline at fraction `f` of `in_channel`.
pub fn route_streamline(partition: &JunctionPartition, in_channel: usize, f: f64) -> Result<usize, JunctionError> {
    let port = partition
        .port_of(in_channel)
        .ok_or_else(|| JunctionError::InactiveInflow(format!("channel index {in_channel}")))?;
    let out = partition.ports.route_port(port, f).map_err(|e| match e {
        JunctionError::InactiveInflow(_) => {
            JunctionError::InactiveInflow(partition.layout.ports[port].channel_id.clone())
        }
        other => other,
    })?;
    Ok(partition.layout.ports[out].channel)
}
