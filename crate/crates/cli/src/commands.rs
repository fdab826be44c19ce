use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use serde_json::json;
use thiserror::Error;

use droplet_logic::droplet_sim::{run_simulation, trace_streamline_in, InjectionSchedule, SimError, SimParams};
use droplet_logic::expr::BoolExpr;
use droplet_logic::logic::{truth_table, LogicError, LogicPortMap};
use droplet_logic::netlist::{
    builtin_design, parse_netlist, DesignProfile, NetlistDocument, NetlistError, ML_PER_HOUR,
};
use droplet_logic::network::{solve_flow, validate_conservation, FlowSolution, Network, NetworkError};
use droplet_logic::render::{render_svg, PathOverlay, RenderOptions};

use crate::{Format, Run};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read `{}`: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write `{}`: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Logic(#[from] LogicError),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(2)
    }
}

type CmdResult = Result<ExitCode, CliError>;

struct Design {
    name: String,
    doc: NetlistDocument,
    net: Network,
    ports: LogicPortMap,
}

fn load(run: &Run) -> Result<Design, CliError> {
    let (name, doc) = match (&run.source.builtin, &run.source.netlist) {
        (Some(name), _) => (name.clone(), builtin_design(name, &DesignProfile::default())?),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.clone(), source })?;
            let parsed = match parse_netlist(&text) {
                Ok(p) => p,
                Err(diags) => {
                    for d in &diags {
                        eprintln!("{}:{d}", path.display());
                    }
                    return Err(CliError::Usage(format!("{} has {} error(s)", path.display(), diags.len())));
                }
            };
            for w in &parsed.warnings {
                eprintln!("{}:{w}", path.display());
            }
            let name = path.file_stem().map_or_else(|| "netlist".into(), |s| s.to_string_lossy().into_owned());
            (name, parsed.document)
        }
        (None, None) => return Err(CliError::Usage("give a netlist file or --builtin".into())),
    };
    let (net, ports) = doc.to_design()?;
    let k = run.pressure_scale;
    if !(k.is_finite() && k > 0.0) {
        return Err(CliError::Usage(format!("--pressure-scale must be positive, got {k}")));
    }
    let net = if k == 1.0 { net } else { net.with_source_scale(k) };
    Ok(Design { name, doc, net, ports })
}

fn format(run: &Run, allowed: &[Format]) -> Result<Format, CliError> {
    match run.format {
        None => Ok(allowed[0]),
        Some(f) if allowed.contains(&f) => Ok(f),
        Some(f) => Err(CliError::Usage(format!("format {f:?} is not available for this command").to_lowercase())),
    }
}

fn reject(run: &Run, inputs: bool, expect: bool) -> Result<(), CliError> {
    if inputs && run.inputs.is_some() {
        return Err(CliError::Usage("--inputs does not apply to this command".into()));
    }
    if expect && !run.expect.is_empty() {
        return Err(CliError::Usage("--expect only applies to truthtable".into()));
    }
    Ok(())
}

fn params(run: &Run) -> SimParams {
    SimParams {
        fraction: run.fraction,
        t_max: run.t_max,
        droplet_resistance: run.droplet_resistance,
        ..SimParams::default()
    }
}

/// Input assignment from `--inputs`; every input is TRUE when the flag is absent.
fn assignment(run: &Run, ports: &LogicPortMap) -> Result<BTreeMap<String, bool>, CliError> {
    let Some(spec) = &run.inputs else {
        return Ok(ports.inputs().keys().map(|l| (l.clone(), true)).collect());
    };
    let mut out: BTreeMap<String, bool> = ports.inputs().keys().map(|l| (l.clone(), false)).collect();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (label, value) =
            item.split_once('=').ok_or_else(|| CliError::Usage(format!("--inputs entry `{item}` is not label=0|1")))?;
        let slot =
            out.get_mut(label.trim()).ok_or_else(|| CliError::Usage(format!("unknown input `{}`", label.trim())))?;
        *slot = match value.trim() {
            "1" => true,
            "0" => false,
            v => return Err(CliError::Usage(format!("input `{label}` must be 0 or 1, got `{v}`"))),
        };
    }
    Ok(out)
}

fn active_terminals(ports: &LogicPortMap, assignment: &BTreeMap<String, bool>) -> BTreeSet<String> {
    assignment.iter().filter(|(_, &on)| on).map(|(label, _)| ports.inputs()[label].terminal.clone()).collect()
}

fn describe(assignment: &BTreeMap<String, bool>) -> String {
    assignment.iter().map(|(l, &v)| format!("{l}={}", u8::from(v))).collect::<Vec<_>>().join(" ")
}

fn emit(run: &Run, text: &str) -> Result<(), CliError> {
    match &run.out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Write { path: path.clone(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn solve(run: &Run) -> CmdResult {
    reject(run, false, true)?;
    let fmt = format(run, &[Format::Text, Format::Json, Format::Csv])?;
    let d = load(run)?;
    let assignment = assignment(run, &d.ports)?;
    let sol = solve_flow(&d.net, &active_terminals(&d.ports, &assignment))?;
    let conservation = validate_conservation(&sol, &d.net);
    let net = &d.net;

    let text = match fmt {
        Format::Json => {
            let channels: Vec<_> = net
                .channels()
                .iter()
                .enumerate()
                .map(|(c, ch)| {
                    json!({
                        "id": ch.id, "from": ch.from, "to": ch.to,
                        "flow_m3_per_s": sol.flow(c), "flow_ml_per_hr": sol.flow(c) / ML_PER_HOUR,
                    })
                })
                .collect();
            let nodes: Vec<_> = net
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, n)| json!({ "id": n.id, "pressure_pa": sol.pressure(i) }))
                .collect();
            let v = json!({
                "design": d.name, "inputs": assignment, "channels": channels, "nodes": nodes,
                "conservation_residual": conservation.residual,
            });
            serde_json::to_string_pretty(&v).expect("json") + "\n"
        }
        Format::Csv => {
            let mut out = String::from("kind,id,quantity,value\n");
            for (c, ch) in net.channels().iter().enumerate() {
                writeln!(out, "channel,{},flow_m3_per_s,{:e}", ch.id, sol.flow(c)).unwrap();
                writeln!(out, "channel,{},flow_ml_per_hr,{:e}", ch.id, sol.flow(c) / ML_PER_HOUR).unwrap();
            }
            for (i, n) in net.nodes().iter().enumerate() {
                writeln!(out, "node,{},pressure_pa,{:e}", n.id, sol.pressure(i)).unwrap();
            }
            out
        }
        _ => solve_text(&d, &assignment, &sol, conservation.residual),
    };
    emit(run, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn solve_text(d: &Design, assignment: &BTreeMap<String, bool>, sol: &FlowSolution, residual: f64) -> String {
    let net = &d.net;
    let mut out = format!("design: {}\ninputs: {}\n\n", d.name, describe(assignment));
    let mut rows = vec![vec!["channel".into(), "from".into(), "to".into(), "Q [ml/hr]".into(), "Q [m3/s]".into()]];
    for (c, ch) in net.channels().iter().enumerate() {
        let q = sol.flow(c);
        rows.push(vec![
            ch.id.clone(),
            ch.from.clone(),
            ch.to.clone(),
            format!("{:.6}", q / ML_PER_HOUR),
            format!("{q:.6e}"),
        ]);
    }
    out.push_str(&table(&rows));
    out.push('\n');
    let mut rows = vec![vec!["node".into(), "pressure [Pa]".into()]];
    for (i, n) in net.nodes().iter().enumerate() {
        rows.push(vec![n.id.clone(), format!("{:.6}", sol.pressure(i))]);
    }
    out.push_str(&table(&rows));
    writeln!(out, "\nconservation residual: {residual:.3e}").unwrap();
    out
}

pub fn trace(run: &Run) -> CmdResult {
    reject(run, false, true)?;
    let fmt = format(run, &[Format::Text, Format::Json, Format::Csv])?;
    let d = load(run)?;
    let assignment = assignment(run, &d.ports)?;
    let active = active_terminals(&d.ports, &assignment);

    let mut schedule = InjectionSchedule::new();
    if d.doc.injections.is_empty() {
        for (label, _) in assignment.iter().filter(|(_, &on)| on) {
            schedule.add(label.clone(), d.ports.inputs()[label].terminal.clone(), vec![0.0])?;
        }
    } else {
        for (label, times) in &d.doc.injections {
            schedule.add(label.clone(), d.ports.inputs()[label].terminal.clone(), times.clone())?;
        }
    }
    let log = run_simulation(&d.net, &active, &schedule, params(run))?;

    let text = match fmt {
        Format::Json => serde_json::to_string_pretty(&log).expect("json") + "\n",
        Format::Csv => log.to_csv(),
        _ => {
            let mut out = format!("design: {}\ninputs: {}\n\n", d.name, describe(&assignment));
            let mut rows = vec![vec!["time [s]".into(), "droplet".into(), "event".into(), "location".into()]];
            for e in &log.events {
                let who = format!("{} ({})", e.droplet, log.droplets[e.droplet].label);
                rows.push(vec![format!("{:.6e}", e.time), who, e.kind.to_string(), e.location.clone()]);
            }
            out.push_str(&table(&rows));
            out.push('\n');
            for a in log.arrivals() {
                writeln!(out, "{} ({}) -> {} at {:.6e} s", a.droplet, a.label, a.terminal, a.time).unwrap();
            }
            for e in log.stalled() {
                writeln!(out, "{} ({}) stalled at {}", e.droplet, log.droplets[e.droplet].label, e.location).unwrap();
            }
            if log.truncated {
                writeln!(out, "stopped at t_max = {:.6e} s with droplets in flight", log.t_max).unwrap();
            }
            out
        }
    };
    emit(run, &text)?;
    Ok(ExitCode::SUCCESS)
}

pub fn truthtable(run: &Run) -> CmdResult {
    reject(run, true, false)?;
    let fmt = format(run, &[Format::Text, Format::Json, Format::Csv])?;
    let d = load(run)?;
    let mut expected = d.doc.expectations.clone();
    for item in &run.expect {
        let (label, src) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--expect `{item}` is not label=expression")))?;
        let e = BoolExpr::parse(src).map_err(|e| CliError::Usage(format!("--expect {label}: {e}")))?;
        expected.insert(label.trim().to_string(), e);
    }
    if expected.is_empty() {
        return Err(CliError::Usage("no expected functions: add `expect` lines or --expect".into()));
    }
    let report = truth_table(&d.name, &d.net, &d.ports, &expected, params(run))?;
    let text = match fmt {
        Format::Json => serde_json::to_string_pretty(&report.to_json()).expect("json") + "\n",
        Format::Csv => report.to_csv(),
        _ => report.to_text(),
    };
    emit(run, &text)?;
    if report.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        let rows: Vec<String> = report.mismatched_rows().iter().map(|r| r.bits()).collect();
        eprintln!("mismatch on rows {}", rows.join(", "));
        Ok(ExitCode::from(1))
    }
}

pub fn render(run: &Run) -> CmdResult {
    reject(run, false, true)?;
    format(run, &[Format::Svg])?;
    let d = load(run)?;
    let assignment = assignment(run, &d.ports)?;
    let sol = solve_flow(&d.net, &active_terminals(&d.ports, &assignment))?;
    let p = params(run);
    if !(0.0..=1.0).contains(&p.fraction) {
        return Err(CliError::Usage(format!("--fraction must lie in [0, 1], got {}", p.fraction)));
    }
    let mut overlays = Vec::new();
    for (label, _) in assignment.iter().filter(|(_, &on)| on) {
        let start = d.ports.inputs()[label].terminal.clone();
        match trace_streamline_in(&d.net, &sol, &start, p.fraction, p.threshold) {
            Ok(path) => overlays.push(PathOverlay { label: label.clone(), start, path }),
            Err(e) => eprintln!("warning: no path drawn for `{label}`: {e}"),
        }
    }
    emit(run, &render_svg(&d.net, &sol, &overlays, &RenderOptions::default()))?;
    Ok(ExitCode::SUCCESS)
}

pub fn netlist(run: &Run) -> CmdResult {
    reject(run, true, true)?;
    format(run, &[Format::Text])?;
    let d = load(run)?;
    emit(run, &d.doc.serialize())?;
    Ok(ExitCode::SUCCESS)
}
