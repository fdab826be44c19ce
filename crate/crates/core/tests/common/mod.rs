//! Random instance generators shared by the property and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use droplet_logic::expr::BoolExpr;
use droplet_logic::hydraulics::{ChannelGeometry, FluidProperties};
use droplet_logic::netlist::{ChannelDecl, Drive, FluidDecl, InputDecl, NetlistDocument, NodeDecl};
use droplet_logic::network::{build_network, BoundaryCondition, BoundaryKind, Channel, Network, Node, NodeKind};

/// Series-parallel composition of channels.
#[derive(Debug, Clone)]
pub enum Sp {
    Leaf { length: f64, width: f64, depth: f64 },
    Series(Box<Sp>, Box<Sp>),
    Parallel(Box<Sp>, Box<Sp>),
}

fn leaf(rng: &mut StdRng) -> Sp {
    Sp::Leaf {
        length: rng.random_range(1e-3..5e-2),
        width: rng.random_range(1e-4..2e-3),
        depth: rng.random_range(1e-4..2e-3),
    }
}

pub fn random_sp(rng: &mut StdRng, leaves: usize) -> Sp {
    if leaves <= 1 {
        return leaf(rng);
    }
    let left = rng.random_range(1..leaves);
    let a = Box::new(random_sp(rng, left));
    let b = Box::new(random_sp(rng, leaves - left));
    if rng.random_bool(0.5) {
        Sp::Series(a, b)
    } else {
        Sp::Parallel(a, b)
    }
}

/// Rectangular-duct resistance written out from first principles, reduced
/// by the series and parallel rules.
pub fn oracle_resistance(sp: &Sp, mu: f64) -> f64 {
    match sp {
        Sp::Leaf { length, width, depth } => {
            let dh = 2.0 * width * depth / (width + depth);
            32.0 * mu * length / (dh * dh * width * depth)
        }
        Sp::Series(a, b) => oracle_resistance(a, mu) + oracle_resistance(b, mu),
        Sp::Parallel(a, b) => 1.0 / (1.0 / oracle_resistance(a, mu) + 1.0 / oracle_resistance(b, mu)),
    }
}

pub struct SpCase {
    pub net: Network,
    /// Lead-in, body and lead-out in series.
    pub resistance: f64,
    pub drive: BoundaryKind,
}

fn place(sp: &Sp, a: usize, b: usize, next_node: &mut usize, edges: &mut Vec<(usize, usize, ChannelGeometry)>) {
    match sp {
        Sp::Leaf { length, width, depth } => {
            edges.push((a, b, ChannelGeometry::new(*length, *width, *depth).unwrap()));
        }
        Sp::Series(x, y) => {
            let mid = *next_node;
            *next_node += 1;
            place(x, a, mid, next_node, edges);
            place(y, mid, b, next_node, edges);
        }
        Sp::Parallel(x, y) => {
            place(x, a, b, next_node, edges);
            place(y, a, b, next_node, edges);
        }
    }
}

/// A source terminal and an outlet joined through `body` by two lead channels.
pub fn sp_network(rng: &mut StdRng, body: &Sp) -> SpCase {
    let mu = rng.random_range(1e-3..0.1);
    let lead = leaf(rng);
    let lead2 = leaf(rng);
    let mut edges = Vec::new();
    // 0 = source, 1 = outlet, 2 and 3 = body ends.
    let mut next = 4;
    place(&lead, 0, 2, &mut next, &mut edges);
    place(body, 2, 3, &mut next, &mut edges);
    place(&lead2, 3, 1, &mut next, &mut edges);

    let mut degree = vec![0usize; next];
    for &(a, b, _) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let nodes: Vec<Node> = (0..next)
        .map(|i| {
            let kind = match degree[i] {
                1 => NodeKind::Terminal,
                2 => NodeKind::Interior,
                _ => NodeKind::Junction,
            };
            Node::new(format!("n{i}"), (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)), kind)
        })
        .collect();
    let channels: Vec<Channel> = edges
        .into_iter()
        .enumerate()
        .map(|(k, (a, b, g))| {
            // Random orientation exercises both signs of the channel flow.
            let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            Channel::new(format!("c{k}"), format!("n{a}"), format!("n{b}"), g)
        })
        .collect();
    let drive = if rng.random_bool(0.5) {
        BoundaryKind::PressureSource(rng.random_range(10.0..1000.0))
    } else {
        BoundaryKind::FlowSource(rng.random_range(1e-10..1e-8))
    };
    let net = build_network(
        nodes,
        channels,
        FluidProperties::new(mu).unwrap(),
        vec![BoundaryCondition::new("n0", drive), BoundaryCondition::new("n1", BoundaryKind::Outlet(0.0))],
    )
    .unwrap();
    let resistance = oracle_resistance(&lead, mu) + oracle_resistance(body, mu) + oracle_resistance(&lead2, mu);
    SpCase { net, resistance, drive }
}

/// Signed port fluxes around a junction, positive into it, summing to zero
/// up to rounding. Some ports are closed.
pub fn random_port_fluxes(rng: &mut StdRng) -> Vec<f64> {
    loop {
        let n = rng.random_range(3..=8);
        // Device flows are around 1e-9 m³/s; stay well above the absolute floor
        // even after the smallest scale factor.
        let scale = 10f64.powf(rng.random_range(-9.0..-5.0));
        let mut f: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    let mag = scale * rng.random_range(0.05..1.0);
                    if rng.random_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                }
            })
            .collect();
        let inflow: f64 = f.iter().filter(|&&x| x > 0.0).sum();
        let outflow: f64 = -f.iter().filter(|&&x| x < 0.0).sum::<f64>();
        if inflow == 0.0 || outflow == 0.0 {
            continue;
        }
        for x in f.iter_mut().filter(|x| **x < 0.0) {
            *x *= inflow / outflow;
        }
        return f;
    }
}

fn number(rng: &mut StdRng, lo: f64, hi: f64) -> f64 {
    // Mix short decimals with full-precision values.
    let x = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        (x * 1000.0).round() / 1000.0
    } else {
        x
    }
}

fn positive(rng: &mut StdRng, lo: f64, hi: f64) -> f64 {
    loop {
        let x = number(rng, lo, hi);
        if x > 0.0 {
            return x;
        }
    }
}

fn random_expr(rng: &mut StdRng, vars: &[String], depth: usize) -> BoolExpr {
    if depth == 0 || rng.random_bool(0.3) {
        return match rng.random_range(0..10) {
            0 => BoolExpr::Const(rng.random_bool(0.5)),
            _ => BoolExpr::Var(vars.choose(rng).unwrap().clone()),
        };
    }
    let a = Box::new(random_expr(rng, vars, depth - 1));
    let b = Box::new(random_expr(rng, vars, depth - 1));
    match rng.random_range(0..3) {
        0 => BoolExpr::And(a, b),
        1 => BoolExpr::Xor(a, b),
        _ => BoolExpr::Or(a, b),
    }
}

/// Syntactically and referentially valid document; not necessarily a
/// solvable network.
pub fn random_document(rng: &mut StdRng) -> NetlistDocument {
    let mut doc = NetlistDocument::default();
    if rng.random_bool(0.8) {
        doc.fluid = Some(FluidDecl { id: "oil".into(), viscosity: positive(rng, 1e-4, 1.0) });
    }
    let n_nodes = rng.random_range(2..12);
    let ids: Vec<String> = (0..n_nodes).map(|i| format!("n{i}")).collect();
    for id in &ids {
        doc.nodes.insert(
            id.clone(),
            NodeDecl { x: number(rng, -100.0, 100.0), y: number(rng, -100.0, 100.0), junction: rng.random_bool(0.2) },
        );
    }
    for k in 0..rng.random_range(1..15) {
        let from = ids.choose(rng).unwrap().clone();
        let to = ids.choose(rng).unwrap().clone();
        let length = rng.random_bool(0.5).then(|| positive(rng, 0.1, 100.0));
        doc.channels.insert(
            format!("ch{k}"),
            ChannelDecl { from, to, width: positive(rng, 0.01, 5.0), depth: positive(rng, 0.01, 5.0), length },
        );
    }

    let mut free = ids.clone();
    free.shuffle(rng);
    let mut take = || free.pop();
    let mut input_labels = Vec::new();
    for k in 0..rng.random_range(0..4) {
        let Some(node) = take() else { break };
        let drive = if rng.random_bool(0.7) {
            Drive::Pressure(number(rng, 0.0, 2000.0))
        } else {
            Drive::Flow(number(rng, 0.0, 20.0))
        };
        let label = format!("IN{k}");
        input_labels.push(label.clone());
        doc.inputs.insert(label, InputDecl { node, drive });
    }
    let mut output_labels = Vec::new();
    for k in 0..rng.random_range(0..3) {
        let Some(node) = take() else { break };
        let label = format!("OUT{k}");
        output_labels.push(label.clone());
        doc.outlets.insert(label, node);
    }
    for _ in 0..rng.random_range(0..3) {
        let Some(node) = take() else { break };
        doc.drains.insert(node);
    }
    for label in &input_labels {
        if rng.random_bool(0.5) {
            let mut times: Vec<f64> = (0..rng.random_range(1..4)).map(|_| number(rng, 0.0, 50.0)).collect();
            times.sort_by(f64::total_cmp);
            doc.injections.insert(label.clone(), times);
        }
    }
    if !input_labels.is_empty() {
        for label in &output_labels {
            if rng.random_bool(0.7) {
                doc.expectations.insert(label.clone(), random_expr(rng, &input_labels, 3));
            }
        }
    }
    doc
}

/// Every input label mapped to a bool, from the bits of `row` (first label most significant).
pub fn assignment(labels: &[String], row: usize) -> BTreeMap<String, bool> {
    let n = labels.len();
    labels.iter().enumerate().map(|(k, l)| (l.clone(), row >> (n - 1 - k) & 1 == 1)).collect()
}

use droplet_logic::droplet_sim::{trace_streamline_path, SimParams};
use droplet_logic::junction::{partition_fluxes, partition_fluxes_from, FluxThreshold, PortPartition};
use droplet_logic::logic::evaluate_inputs;
use droplet_logic::netlist::{builtin_design, DesignProfile};
use droplet_logic::network::{solve_flow, validate_conservation};

/// Relative error of the solved total flow against the reduction oracle,
/// and the nodal conservation residual of the solve.
pub fn check_sp(case: &SpCase) -> (f64, f64) {
    let active = ["n0".to_string()].into_iter().collect();
    let sol = solve_flow(&case.net, &active).unwrap();
    let residual = validate_conservation(&sol, &case.net).residual;
    let src = case.net.node_index("n0").unwrap();
    let lead = case.net.incident(src)[0];
    let q = -sol.flow_into(&case.net, lead, src);
    let err = match case.drive {
        BoundaryKind::PressureSource(p) => {
            let want = p / case.resistance;
            (q - want).abs() / want
        }
        BoundaryKind::FlowSource(qs) => {
            let want = qs * case.resistance;
            ((q - qs).abs() / qs).max((sol.pressure(src) - want).abs() / want)
        }
        _ => unreachable!(),
    };
    (err, residual)
}

fn chords_cross(a: (usize, usize), b: (usize, usize)) -> bool {
    let inside = |x: usize, (lo, hi): (usize, usize)| {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        lo < x && x < hi
    };
    let shared = a.0 == b.0 || a.0 == b.1 || a.1 == b.0 || a.1 == b.1;
    !shared && inside(b.0, a) != inside(b.1, a)
}

fn transfer_map(p: &PortPartition) -> BTreeMap<(usize, usize), f64> {
    p.transfers.iter().map(|t| ((t.from_port, t.to_port), t.flux)).collect()
}

/// Scale factors applied in the routing-invariance check.
pub const FLUX_SCALES: [f64; 5] = [1e-3, 0.5, 2.0, 7.3, 1e4];

/// Conservation, planarity, cut independence and scale invariance of one
/// junction partition. Returns the first violation.
pub fn check_junction(fluxes: &[f64], rng: &mut StdRng) -> Result<(), String> {
    let eps = FluxThreshold::default().eps_for(fluxes);
    let p = partition_fluxes(fluxes, eps).map_err(|e| format!("partition failed: {e}"))?;
    let throughput: f64 = p.fluxes.iter().filter(|&&x| x > 0.0).sum();
    let tol = 1e-12 * throughput;

    for (port, &q) in p.fluxes.iter().enumerate() {
        let out: f64 = p.transfers.iter().filter(|t| t.from_port == port).map(|t| t.flux).sum();
        let inn: f64 = p.transfers.iter().filter(|t| t.to_port == port).map(|t| t.flux).sum();
        let want = if q > 0.0 { (q, 0.0) } else { (0.0, -q) };
        if (out - want.0).abs() > tol || (inn - want.1).abs() > tol {
            return Err(format!("port {port} flux {q:e} carries out {out:e} in {inn:e}"));
        }
    }
    if p.transfers.iter().any(|t| t.flux < 0.0) {
        return Err("negative transfer".into());
    }

    for (i, a) in p.transfers.iter().enumerate() {
        for b in &p.transfers[i + 1..] {
            if chords_cross((a.from_port, a.to_port), (b.from_port, b.to_port)) {
                return Err(format!("chords {a:?} and {b:?} cross"));
            }
        }
    }

    let base = transfer_map(&p);
    let mut valid_starts = 0;
    for start in 0..fluxes.len() {
        let Ok(q) = partition_fluxes_from(fluxes, eps, start) else { continue };
        valid_starts += 1;
        let other = transfer_map(&q);
        let keys_match = base.keys().eq(other.keys());
        if !keys_match || base.iter().any(|(k, v)| (v - other[k]).abs() > tol) {
            return Err(format!("cut at {start} gives {other:?}, default cut gives {base:?}"));
        }
    }
    if valid_starts == 0 {
        return Err("no valid cut".into());
    }

    let inflows: Vec<usize> = (0..p.fluxes.len()).filter(|&i| p.fluxes[i] > 0.0).collect();
    for &port in &inflows {
        for _ in 0..8 {
            let f: f64 = rng.random_range(0.0..=1.0);
            let to = p.route_port(port, f).map_err(|e| e.to_string())?;
            if base.get(&(port, to)).is_none_or(|&q| q <= 0.0) {
                return Err(format!("port {port} at f={f} routed to {to} with no transfer"));
            }
            for s in FLUX_SCALES {
                let scaled: Vec<f64> = fluxes.iter().map(|x| x * s).collect();
                let eps_s = FluxThreshold::default().eps_for(&scaled);
                let ps = partition_fluxes(&scaled, eps_s).map_err(|e| e.to_string())?;
                let to_s = ps.route_port(port, f).map_err(|e| e.to_string())?;
                if to_s != to {
                    return Err(format!("port {port} at f={f}: {to} unscaled, {to_s} at scale {s}"));
                }
            }
        }
    }
    Ok(())
}

/// For each row of each builtin, the event simulation and the streamline
/// tracer send every droplet to the same terminal. Returns the number of
/// disagreements.
pub fn mode_disagreements() -> usize {
    let mut bad = 0;
    for name in ["half_adder", "full_adder"] {
        let doc = builtin_design(name, &DesignProfile::default()).unwrap();
        let (net, ports) = doc.to_design().unwrap();
        let labels: Vec<String> = ports.inputs().keys().cloned().collect();
        for row in 0..1usize << labels.len() {
            let assignment = assignment(&labels, row);
            let eval = evaluate_inputs(&net, &ports, &assignment, SimParams::default()).unwrap();
            let active: BTreeSet<String> =
                assignment.iter().filter(|(_, &on)| on).map(|(l, _)| ports.inputs()[l].terminal.clone()).collect();
            for a in &eval.arrivals {
                let path = trace_streamline_path(&net, &active, &ports.inputs()[&a.input].terminal, 0.5).unwrap();
                if path.terminal != a.terminal {
                    bad += 1;
                }
            }
        }
    }
    bad
}

/// Replace one token of one statement line with junk.
pub fn corrupt(text: &str, rng: &mut StdRng) -> (String, usize) {
    let lines: Vec<&str> = text.lines().collect();
    let candidates: Vec<usize> = (0..lines.len()).filter(|&i| !lines[i].trim().is_empty()).collect();
    let target = candidates[rng.random_range(0..candidates.len())];
    let tokens: Vec<&str> = lines[target].split_whitespace().collect();
    let k = rng.random_range(0..tokens.len());
    let junk = ["@@", "width=-1", "x=abc", "t=2,1", "frobnicate"][rng.random_range(0..5)];
    let mut tokens: Vec<String> = tokens.iter().map(|s| s.to_string()).collect();
    tokens[k] = if k == 0 { "frobnicate".into() } else { junk.into() };
    let mut out: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
    out[target] = tokens.join(" ");
    (out.join("\n"), target + 1)
}
