//! Boolean evaluation of fluidic circuits.
//!
//! A TRUE input is a switched-on source that injects one droplet at `t = 0`;
//! a FALSE input is sealed. An output reads TRUE when at least one droplet
//! arrives at its terminal. Carrier flow alone never asserts an output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::droplet_sim::{run_simulation, InjectionSchedule, SimError, SimParams, TraceLog};
use crate::expr::BoolExpr;
use crate::network::Network;

/// Largest input count accepted by [`truth_table`].
pub const MAX_INPUTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogicError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("assignment is missing input `{0}`")]
    MissingInput(String),
    #[error("unknown terminal `{0}` in port map")]
    UnknownTerminal(String),
    #[error("droplet from `{label}` stalled at `{location}`")]
    Stalled { label: String, location: String },
    #[error("droplet from `{label}` did not arrive before t_max = {t_max:e} s")]
    Timeout { label: String, t_max: f64 },
    #[error("droplet from `{label}` reached `{terminal}`, which is neither an output nor a drain")]
    StrayArrival { label: String, terminal: String },
    #[error("{0} inputs exceed the limit of {MAX_INPUTS}")]
    TooManyInputs(usize),
    #[error("expected function for `{0}` names no output")]
    UnknownOutput(String),
    #[error("expected function for `{output}` uses unknown input `{input}`")]
    UnknownVariable { output: String, input: String },
    #[error("inputs {combination}: {source}")]
    Row { combination: String, source: Box<LogicError> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputPort {
    pub terminal: String,
    /// Source value applied when the input is TRUE (Pa, or m³/s for flow inputs).
    pub true_value: f64,
}

/// Maps logic labels onto network terminals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogicPortMap {
    inputs: BTreeMap<String, InputPort>,
    outputs: BTreeMap<String, String>,
    drains: BTreeSet<String>,
}

impl LogicPortMap {
    pub fn new(
        inputs: BTreeMap<String, InputPort>,
        outputs: BTreeMap<String, String>,
        drains: BTreeSet<String>,
    ) -> Result<Self, String> {
        if let Some(l) = inputs.keys().find(|l| outputs.contains_key(*l)) {
            return Err(format!("label `{l}` is both an input and an output"));
        }
        let mut seen = BTreeSet::new();
        for t in inputs.values().map(|i| &i.terminal).chain(outputs.values()).chain(&drains) {
            if !seen.insert(t) {
                return Err(format!("terminal `{t}` has more than one logic role"));
            }
        }
        Ok(Self { inputs, outputs, drains })
    }

    /// Inputs in label order; the first is the most significant bit of a row.
    pub fn inputs(&self) -> &BTreeMap<String, InputPort> {
        &self.inputs
    }

    pub fn input(&self, label: &str) -> Option<&InputPort> {
        self.inputs.get(label)
    }

    pub fn outputs(&self) -> &BTreeMap<String, String> {
        &self.outputs
    }

    pub fn drains(&self) -> &BTreeSet<String> {
        &self.drains
    }

    fn check_terminals(&self, net: &Network) -> Result<(), LogicError> {
        for t in self.inputs.values().map(|i| &i.terminal).chain(self.outputs.values()).chain(&self.drains) {
            if net.node_index(t).is_none() {
                return Err(LogicError::UnknownTerminal(t.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Output(String),
    Drain,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodedArrival {
    pub input: String,
    pub terminal: String,
    pub role: Role,
    pub time: f64,
}

/// Result of one input assignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub assignment: BTreeMap<String, bool>,
    pub outputs: BTreeMap<String, bool>,
    /// Drain terminals that received a droplet, one entry per droplet.
    pub drains: Vec<String>,
    pub arrivals: Vec<DecodedArrival>,
    pub trace: TraceLog,
}

/// Drive the circuit with one assignment and decode the droplet arrivals.
pub fn evaluate_inputs(
    net: &Network,
    portmap: &LogicPortMap,
    assignment: &BTreeMap<String, bool>,
    params: SimParams,
) -> Result<Evaluation, LogicError> {
    portmap.check_terminals(net)?;
    let mut active = BTreeSet::new();
    let mut schedule = InjectionSchedule::new();
    for (label, port) in &portmap.inputs {
        let on = *assignment.get(label).ok_or_else(|| LogicError::MissingInput(label.clone()))?;
        if on {
            active.insert(port.terminal.clone());
            schedule.add(label.clone(), port.terminal.clone(), vec![0.0])?;
        }
    }

    let trace = run_simulation(net, &active, &schedule, params)?;
    if let Some(e) = trace.stalled().first() {
        return Err(LogicError::Stalled {
            label: trace.droplets[e.droplet].label.clone(),
            location: e.location.clone(),
        });
    }
    if let Some(&d) = trace.unfinished().first() {
        return Err(LogicError::Timeout { label: trace.droplets[d].label.clone(), t_max: trace.t_max });
    }

    let by_terminal: BTreeMap<&str, &str> =
        portmap.outputs.iter().map(|(label, t)| (t.as_str(), label.as_str())).collect();
    let mut outputs: BTreeMap<String, bool> = portmap.outputs.keys().map(|l| (l.clone(), false)).collect();
    let mut drains = Vec::new();
    let mut arrivals = Vec::new();
    for a in trace.arrivals() {
        let role = if let Some(label) = by_terminal.get(a.terminal.as_str()) {
            outputs.insert(label.to_string(), true);
            Role::Output(label.to_string())
        } else if portmap.drains.contains(&a.terminal) {
            drains.push(a.terminal.clone());
            Role::Drain
        } else {
            return Err(LogicError::StrayArrival { label: a.label, terminal: a.terminal });
        };
        arrivals.push(DecodedArrival { input: a.label, terminal: a.terminal, role, time: a.time });
    }
    drains.sort();

    Ok(Evaluation {
        assignment: portmap.inputs.keys().map(|l| (l.clone(), assignment[l])).collect(),
        outputs,
        drains,
        arrivals,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthRow {
    /// Input values in label order.
    pub inputs: Vec<bool>,
    pub outputs: BTreeMap<String, bool>,
    pub expected: BTreeMap<String, bool>,
    pub drains: Vec<String>,
    pub arrivals: Vec<DecodedArrival>,
    pub mismatches: Vec<String>,
    pub pass: bool,
}

impl TruthRow {
    pub fn any_drain(&self) -> bool {
        !self.drains.is_empty()
    }

    pub fn bits(&self) -> String {
        self.inputs.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Outcome of every input combination, in binary counting order with the
/// first input label as the most significant bit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthTableReport {
    pub design: String,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
    pub rows: Vec<TruthRow>,
    pub pass: bool,
}

fn bit(b: bool) -> char {
    if b {
        '1'
    } else {
        '0'
    }
}

impl TruthTableReport {
    pub fn mismatched_rows(&self) -> Vec<&TruthRow> {
        self.rows.iter().filter(|r| !r.pass).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> =
            self.input_labels.iter().chain(&self.output_labels).map(String::as_str).chain(["drain", "pass"]).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<char> = r
                .inputs
                .iter()
                .copied()
                .chain(self.output_labels.iter().map(|l| r.outputs[l]))
                .chain([r.any_drain(), r.pass])
                .map(bit)
                .collect();
            let cells: Vec<String> = cells.iter().map(char::to_string).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let inputs: serde_json::Map<String, Value> =
                    self.input_labels.iter().zip(&r.inputs).map(|(l, &v)| (l.clone(), json!(v))).collect();
                json!({
                    "inputs": inputs,
                    "outputs": r.outputs,
                    "drains": r.drains,
                    "pass": r.pass,
                    "arrivals": r.arrivals.iter().map(|a| json!({
                        "input": a.input,
                        "terminal": a.terminal,
                        "time": a.time,
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({ "design": self.design, "rows": rows, "pass": self.pass })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "design: {}", self.design).unwrap();
        let ins = self.input_labels.join(" ");
        let outs = self.output_labels.join(" ");
        writeln!(out, "{ins} | {outs} | drain | result").unwrap();
        for r in &self.rows {
            let i: Vec<String> =
                self.input_labels.iter().zip(&r.inputs).map(|(l, &v)| format!("{:>w$}", bit(v), w = l.len())).collect();
            let o: Vec<String> =
                self.output_labels.iter().map(|l| format!("{:>w$}", bit(r.outputs[l]), w = l.len())).collect();
            let result = if r.pass { "ok".to_string() } else { format!("MISMATCH {}", r.mismatches.join(",")) };
            writeln!(out, "{} | {} | {:>5} | {result}", i.join(" "), o.join(" "), bit(r.any_drain())).unwrap();
        }
        let passed = self.rows.iter().filter(|r| r.pass).count();
        writeln!(out, "{passed}/{} rows pass", self.rows.len()).unwrap();
        out
    }
}

/// Evaluate every input combination and compare with `expected`.
pub fn truth_table(
    design: &str,
    net: &Network,
    portmap: &LogicPortMap,
    expected: &BTreeMap<String, BoolExpr>,
    params: SimParams,
) -> Result<TruthTableReport, LogicError> {
    let labels: Vec<String> = portmap.inputs.keys().cloned().collect();
    let n = labels.len();
    if n > MAX_INPUTS {
        return Err(LogicError::TooManyInputs(n));
    }
    for (out, e) in expected {
        if !portmap.outputs.contains_key(out) {
            return Err(LogicError::UnknownOutput(out.clone()));
        }
        if let Some(v) = e.variables().into_iter().find(|v| !portmap.inputs.contains_key(v)) {
            return Err(LogicError::UnknownVariable { output: out.clone(), input: v });
        }
    }

    let rows: Vec<Result<TruthRow, LogicError>> = (0..1usize << n)
        .into_par_iter()
        .map(|index| {
            let inputs: Vec<bool> = (0..n).map(|k| index >> (n - 1 - k) & 1 == 1).collect();
            let assignment: BTreeMap<String, bool> = labels.iter().cloned().zip(inputs.iter().copied()).collect();
            let eval = evaluate_inputs(net, portmap, &assignment, params).map_err(|e| LogicError::Row {
                combination: labels
                    .iter()
                    .zip(&inputs)
                    .map(|(l, &v)| format!("{l}={}", bit(v)))
                    .collect::<Vec<_>>()
                    .join(","),
                source: Box::new(e),
            })?;
            let expected_row: BTreeMap<String, bool> =
                expected.iter().map(|(l, e)| (l.clone(), e.eval(&assignment).expect("variables checked"))).collect();
            let mismatches: Vec<String> =
                expected_row.iter().filter(|(l, v)| eval.outputs[*l] != **v).map(|(l, _)| l.clone()).collect();
            Ok(TruthRow {
                inputs,
                outputs: eval.outputs,
                expected: expected_row,
                drains: eval.drains,
                arrivals: eval.arrivals,
                pass: mismatches.is_empty(),
                mismatches,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let pass = rows.iter().all(|r| r.pass);
    Ok(TruthTableReport {
        design: design.to_string(),
        input_labels: labels,
        output_labels: portmap.outputs.keys().cloned().collect(),
        rows,
        pass,
    })
}

/// Per row: did any droplet reach a drain?
pub fn drain_function(report: &TruthTableReport) -> Vec<bool> {
    report.rows.iter().map(TruthRow::any_drain).collect()
}
