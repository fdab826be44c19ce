//! Text format for fluidic networks.
//!
//! ```text
//! # comment
//! fluid <id> viscosity=<Pa·s>
//! node <id> x=<mm> y=<mm> [junction]
//! channel <id> <nodeA> <nodeB> width=<mm> depth=<mm> [length=<mm>]
//! input <label> node=<id> pressure=<Pa>      # or flow=<ml/hr>
//! outlet <label> node=<id>
//! drain node=<id>
//! inject <label> t=<s>[,<s>...]
//! expect <label> <boolean expression>
//! ```
//!
//! A document keeps values in the units they are written in; conversion to SI
//! happens in [`NetlistDocument::to_design`]. Declarations are stored keyed by
//! id, so serialization is canonical and byte-stable.

mod builtin;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::expr::BoolExpr;
use crate::hydraulics::{ChannelGeometry, FluidProperties};
use crate::logic::{InputPort, LogicPortMap};
use crate::network::{build_network, BoundaryCondition, BoundaryKind, Channel, Network, NetworkError, Node, NodeKind};

pub use builtin::{builtin_design, DesignProfile, BUILTIN_NAMES};
pub use parse::parse_netlist;

/// Stand-in carrier-oil viscosity used when a document declares no fluid.
pub const DEFAULT_VISCOSITY: f64 = 0.065;

/// m³/s per ml/hr.
pub const ML_PER_HOUR: f64 = 1e-6 / 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// 1-based.
    pub line: usize,
    /// 1-based, in characters.
    pub column: usize,
    pub message: String,
    pub token: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}:{}: {sev}: {}", self.line, self.column, self.message)?;
        if !self.token.is_empty() {
            write!(f, " (`{}`)", self.token)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetlistError {
    #[error("netlist has {} error(s):\n{}", .0.iter().filter(|d| d.severity == Severity::Error).count(), render(.0))]
    Diagnostics(Vec<Diagnostic>),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("unknown builtin design `{0}`")]
    UnknownBuiltin(String),
}

fn render(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidDecl {
    pub id: String,
    /// Pa·s
    pub viscosity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDecl {
    /// mm
    pub x: f64,
    /// mm
    pub y: f64,
    pub junction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelDecl {
    pub from: String,
    pub to: String,
    /// mm
    pub width: f64,
    /// mm
    pub depth: f64,
    /// mm; defaults to the distance between the endpoints.
    pub length: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Drive {
    /// Pa
    Pressure(f64),
    /// ml/hr
    Flow(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDecl {
    pub node: String,
    pub drive: Drive,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetlistDocument {
    pub fluid: Option<FluidDecl>,
    pub nodes: BTreeMap<String, NodeDecl>,
    pub channels: BTreeMap<String, ChannelDecl>,
    pub inputs: BTreeMap<String, InputDecl>,
    /// label → node
    pub outlets: BTreeMap<String, String>,
    /// drain node ids
    pub drains: BTreeSet<String>,
    /// input label → injection times in s
    pub injections: BTreeMap<String, Vec<f64>>,
    /// output label → expected function of the inputs
    pub expectations: BTreeMap<String, BoolExpr>,
}

/// Shortest text that parses back to exactly `x`.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let a = x.abs();
    if x.fract() == 0.0 && a < 1e15 {
        format!("{}", x as i64)
    } else if (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl NetlistDocument {
    /// Canonical text: kinds in a fixed order, ids sorted within a kind.
    pub fn serialize(&self) -> String {
        let mut sections: Vec<String> = Vec::new();
        let mut s = String::new();
        if let Some(f) = &self.fluid {
            writeln!(s, "fluid {} viscosity={}", f.id, format_number(f.viscosity)).unwrap();
            sections.push(std::mem::take(&mut s));
        }
        for (id, n) in &self.nodes {
            write!(s, "node {id} x={} y={}", format_number(n.x), format_number(n.y)).unwrap();
            s.push_str(if n.junction { " junction\n" } else { "\n" });
        }
        sections.push(std::mem::take(&mut s));
        for (id, c) in &self.channels {
            write!(
                s,
                "channel {id} {} {} width={} depth={}",
                c.from,
                c.to,
                format_number(c.width),
                format_number(c.depth)
            )
            .unwrap();
            if let Some(l) = c.length {
                write!(s, " length={}", format_number(l)).unwrap();
            }
            s.push('\n');
        }
        sections.push(std::mem::take(&mut s));
        for (label, i) in &self.inputs {
            match i.drive {
                Drive::Pressure(p) => writeln!(s, "input {label} node={} pressure={}", i.node, format_number(p)),
                Drive::Flow(q) => writeln!(s, "input {label} node={} flow={}", i.node, format_number(q)),
            }
            .unwrap();
        }
        for (label, node) in &self.outlets {
            writeln!(s, "outlet {label} node={node}").unwrap();
        }
        for node in &self.drains {
            writeln!(s, "drain node={node}").unwrap();
        }
        sections.push(std::mem::take(&mut s));
        for (label, times) in &self.injections {
            let ts: Vec<String> = times.iter().map(|&t| format_number(t)).collect();
            writeln!(s, "inject {label} t={}", ts.join(",")).unwrap();
        }
        sections.push(std::mem::take(&mut s));
        for (label, e) in &self.expectations {
            writeln!(s, "expect {label} {e}").unwrap();
        }
        sections.push(s);
        sections.retain(|s| !s.is_empty());
        sections.join("\n")
    }

    /// Terminal node ids: everything named by an input, outlet or drain.
    pub fn terminals(&self) -> BTreeSet<&str> {
        self.inputs
            .values()
            .map(|i| i.node.as_str())
            .chain(self.outlets.values().map(String::as_str))
            .chain(self.drains.iter().map(String::as_str))
            .collect()
    }

    /// Channel length in mm, explicit or from node coordinates.
    pub fn channel_length(&self, id: &str) -> Option<f64> {
        let c = self.channels.get(id)?;
        c.length.or_else(|| {
            let a = self.nodes.get(&c.from)?;
            let b = self.nodes.get(&c.to)?;
            Some((a.x - b.x).hypot(a.y - b.y))
        })
    }

    pub fn viscosity(&self) -> f64 {
        self.fluid.as_ref().map_or(DEFAULT_VISCOSITY, |f| f.viscosity)
    }

    /// Build the SI-unit network and the logic port map.
    pub fn to_design(&self) -> Result<(Network, LogicPortMap), NetlistError> {
        let mut issues = Vec::new();
        let fluid = FluidProperties::new(self.viscosity())
            .map_err(|e| NetworkError::Validation(vec![format!("fluid: {e}")]))?;
        let terminals = self.terminals();
        let nodes: Vec<Node> = self
            .nodes
            .iter()
            .map(|(id, n)| {
                let kind = if n.junction {
                    NodeKind::Junction
                } else if terminals.contains(id.as_str()) {
                    NodeKind::Terminal
                } else {
                    NodeKind::Interior
                };
                Node::new(id.clone(), (n.x * 1e-3, n.y * 1e-3), kind)
            })
            .collect();
        let mut channels = Vec::new();
        for (id, c) in &self.channels {
            let length = self.channel_length(id).unwrap_or(0.0);
            match ChannelGeometry::new(length * 1e-3, c.width * 1e-3, c.depth * 1e-3) {
                Ok(g) => channels.push(Channel::new(id.clone(), c.from.clone(), c.to.clone(), g)),
                Err(e) => issues.push(format!("channel `{id}`: {e}")),
            }
        }
        for id in &terminals {
            if self.nodes.get(*id).is_some_and(|n| n.junction) {
                issues.push(format!("node `{id}` is both a junction and a terminal"));
            }
        }
        let mut boundaries = Vec::new();
        for i in self.inputs.values() {
            let kind = match i.drive {
                Drive::Pressure(p) => BoundaryKind::PressureSource(p),
                Drive::Flow(q) => BoundaryKind::FlowSource(q * ML_PER_HOUR),
            };
            boundaries.push(BoundaryCondition::new(i.node.clone(), kind));
        }
        for node in self.outlets.values().chain(&self.drains) {
            boundaries.push(BoundaryCondition::new(node.clone(), BoundaryKind::Outlet(0.0)));
        }
        if !issues.is_empty() {
            return Err(NetworkError::Validation(issues).into());
        }
        let net = build_network(nodes, channels, fluid, boundaries)?;

        let inputs = self
            .inputs
            .iter()
            .map(|(label, i)| {
                let true_value = match i.drive {
                    Drive::Pressure(p) => p,
                    Drive::Flow(q) => q * ML_PER_HOUR,
                };
                (label.clone(), InputPort { terminal: i.node.clone(), true_value })
            })
            .collect();
        let portmap = LogicPortMap::new(inputs, self.outlets.clone(), self.drains.clone())
            .map_err(|e| NetworkError::Validation(vec![e]))?;
        Ok((net, portmap))
    }
}
