//! Bundled half-adder and full-adder designs.
//!
//! Channels are 0.8 mm deep and mostly 0.8 mm wide. Sum channels are
//! 1.0 mm wide and the full adder's detour is 1.8 mm wide.
//! Lengths were calibrated by sweeping them through the solver and router
//! until every input combination decodes correctly, then rounded. Each
//! length is written explicitly, so node coordinates only fix the port
//! angles at the junctions.

use crate::expr::BoolExpr;

use super::{ChannelDecl, Drive, FluidDecl, InputDecl, NetlistDocument, NetlistError, NodeDecl};

pub const BUILTIN_NAMES: [&str; 2] = ["half_adder", "full_adder"];

/// Drive levels and fluid for a bundled design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignProfile {
    /// Pressure applied to a TRUE `A`/`B` input, Pa.
    pub input_pressure: f64,
    /// Carry-in pressure as a fraction of `input_pressure` (full adder only).
    pub carry_in_ratio: f64,
    /// Pa·s
    pub viscosity: f64,
}

impl Default for DesignProfile {
    fn default() -> Self {
        Self { input_pressure: 500.0, carry_in_ratio: 0.5, viscosity: super::DEFAULT_VISCOSITY }
    }
}

impl DesignProfile {
    /// Same profile with every drive pressure multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self { input_pressure: self.input_pressure * k, ..*self }
    }
}

const DEPTH: f64 = 0.8;
const NARROW: f64 = 0.8;
const SUM_WIDTH: f64 = 1.0;

struct Builder {
    doc: NetlistDocument,
}

impl Builder {
    fn new(viscosity: f64) -> Self {
        let fluid = Some(FluidDecl { id: "oil".into(), viscosity });
        Self { doc: NetlistDocument { fluid, ..Default::default() } }
    }

    fn node(&mut self, id: &str, x: f64, y: f64, junction: bool) -> &mut Self {
        self.doc.nodes.insert(id.into(), NodeDecl { x, y, junction });
        self
    }

    fn channel(&mut self, id: &str, from: &str, to: &str, width: f64, length: f64) -> &mut Self {
        self.doc.channels.insert(
            id.into(),
            ChannelDecl { from: from.into(), to: to.into(), width, depth: DEPTH, length: Some(length) },
        );
        self
    }

    fn input(&mut self, label: &str, node: &str, pressure: f64) -> &mut Self {
        self.doc.inputs.insert(label.into(), InputDecl { node: node.into(), drive: Drive::Pressure(pressure) });
        self
    }

    fn outlet(&mut self, label: &str, node: &str) -> &mut Self {
        self.doc.outlets.insert(label.into(), node.into());
        self
    }

    fn drain(&mut self, node: &str) -> &mut Self {
        self.doc.drains.insert(node.into());
        self
    }

    fn expect(&mut self, label: &str, expr: &str) -> &mut Self {
        self.doc.expectations.insert(label.into(), BoolExpr::parse(expr).expect("builtin expression"));
        self
    }
}

/// Five channels meeting at one junction. Inputs enter from below; carry
/// leaves to the upper left, sum straight up, drain to the upper right.
fn half_adder(p: &DesignProfile) -> NetlistDocument {
    let mut b = Builder::new(p.viscosity);
    b.node("j", 0.0, 0.0, true)
        .node("a_in", -5.0, -8.66, false)
        .node("b_in", 5.0, -8.66, false)
        .node("c_out", -8.66, 5.0, false)
        .node("s_out", 0.0, 12.0, false)
        .node("drain_out", 8.66, 5.0, false)
        .channel("ch_a", "a_in", "j", NARROW, 10.0)
        .channel("ch_b", "b_in", "j", NARROW, 10.0)
        .channel("ch_c", "j", "c_out", NARROW, 10.0)
        .channel("ch_s", "j", "s_out", SUM_WIDTH, 12.0)
        .channel("ch_drain", "j", "drain_out", NARROW, 10.0)
        .input("A", "a_in", p.input_pressure)
        .input("B", "b_in", p.input_pressure)
        .outlet("S", "s_out")
        .outlet("C", "c_out")
        .drain("drain_out")
        .expect("S", "A^B")
        .expect("C", "A*B");
    b.doc
}

/// Two cascaded junctions. The first takes `A` and `B`; its central output
/// and a wide detour from its left side both feed the second junction, which
/// also takes `C_in` from the left. Each junction has its own drain.
fn full_adder(p: &DesignProfile) -> NetlistDocument {
    let mut b = Builder::new(p.viscosity);
    b.node("j1", 0.0, 0.0, true)
        .node("j2", 0.0, 11.5, true)
        .node("k_bend", -15.466, 5.75, false)
        .node("a_in", -31.0, -53.694, false)
        .node("b_in", 30.0, -51.962, false)
        .node("drain1_out", 12.124, 7.0, false)
        .node("cin_in", -16.5, 11.5, false)
        .node("cout_out", -9.526, 17.0, false)
        .node("s_out", 0.0, 33.5, false)
        .node("drain2_out", 67.55, 50.5, false)
        .channel("ch_a", "a_in", "j1", NARROW, 62.0)
        .channel("ch_b", "b_in", "j1", NARROW, 60.0)
        .channel("ch_drain1", "j1", "drain1_out", NARROW, 14.0)
        .channel("ch_mid", "j1", "j2", SUM_WIDTH, 11.5)
        .channel("ch_k1", "j1", "k_bend", 1.8, 16.5)
        .channel("ch_k2", "k_bend", "j2", 1.8, 16.5)
        .channel("ch_cin", "cin_in", "j2", NARROW, 16.5)
        .channel("ch_s", "j2", "s_out", SUM_WIDTH, 22.0)
        .channel("ch_cout", "j2", "cout_out", NARROW, 11.0)
        .channel("ch_drain2", "j2", "drain2_out", NARROW, 78.0)
        .input("A", "a_in", p.input_pressure)
        .input("B", "b_in", p.input_pressure)
        .input("C_in", "cin_in", p.input_pressure * p.carry_in_ratio)
        .outlet("S", "s_out")
        .outlet("C_out", "cout_out")
        .drain("drain1_out")
        .drain("drain2_out")
        .expect("S", "A^B^C_in")
        .expect("C_out", "A*B+C_in*(A^B)");
    b.doc
}

/// A bundled design by name.
pub fn builtin_design(name: &str, profile: &DesignProfile) -> Result<NetlistDocument, NetlistError> {
    match name {
        "half_adder" => Ok(half_adder(profile)),
        "full_adder" => Ok(full_adder(profile)),
        other => Err(NetlistError::UnknownBuiltin(other.to_string())),
    }
}
