//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! lines always reach the test log in order.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use droplet_logic::droplet_sim::SimParams;
use droplet_logic::expr::BoolExpr;
use droplet_logic::hydraulics::{
    fluidic_resistance, hydraulic_diameter, poiseuille_pressure_drop, pressure_drop, ChannelGeometry, FluidProperties,
};
use droplet_logic::logic::{drain_function, truth_table, TruthTableReport};
use droplet_logic::netlist::{builtin_design, parse_netlist, DesignProfile, Drive, Severity, BUILTIN_NAMES};
use droplet_logic::network::{solve_flow, validate_conservation};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Rows where decoded outputs or the drain column disagree with the
/// reference functions.
fn table_mismatches(report: &TruthTableReport, drain: &BoolExpr) -> usize {
    let drains = drain_function(report);
    report
        .rows
        .iter()
        .zip(drains)
        .filter(|(row, any_drain)| {
            let env: BTreeMap<String, bool> =
                report.input_labels.iter().cloned().zip(row.inputs.iter().copied()).collect();
            !row.pass || drain.eval(&env).unwrap() != *any_drain
        })
        .count()
}

fn adder_table(name: &str, scale: f64) -> TruthTableReport {
    let doc = builtin_design(name, &DesignProfile::default()).unwrap();
    let (net, ports) = doc.to_design().unwrap();
    let net = net.with_source_scale(scale);
    // Reference functions are restated here rather than taken from the design.
    let expected: BTreeMap<String, BoolExpr> = match name {
        "half_adder" => [("S", "A^B"), ("C", "A*B")],
        _ => [("S", "A^B^C_in"), ("C_out", "A*B+C_in*(A^B)")],
    }
    .iter()
    .map(|(l, e)| (l.to_string(), BoolExpr::parse(e).unwrap()))
    .collect();
    truth_table(name, &net, &ports, &expected, SimParams::default()).unwrap()
}

fn drain_reference(name: &str) -> BoolExpr {
    BoolExpr::parse(if name == "half_adder" { "A*B" } else { "A*B+A*C_in+B*C_in" }).unwrap()
}

fn criterion_1() -> Outcome {
    let r = adder_table("half_adder", 1.0);
    let bad = table_mismatches(&r, &drain_reference("half_adder"));
    outcome(
        bad == 0 && r.rows.len() == 4,
        format!("half adder S=A^B, C=A*B, drain=A*B: {bad} mismatches over {} rows (required 0)", r.rows.len()),
    )
}

fn criterion_2() -> Outcome {
    let r = adder_table("full_adder", 1.0);
    let bad = table_mismatches(&r, &drain_reference("full_adder"));
    let doc = builtin_design("full_adder", &DesignProfile::default()).unwrap();
    let pressure = |label: &str| match doc.inputs[label].drive {
        Drive::Pressure(p) => p,
        Drive::Flow(_) => f64::NAN,
    };
    outcome(
        bad == 0 && r.rows.len() == 8,
        format!(
            "full adder S, C_out, drain=majority with C_in at {} Pa, A and B at {} Pa: {bad} mismatches over {} rows (required 0)",
            pressure("C_in"),
            pressure("A"),
            r.rows.len()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for k in [0.5, 1.0, 2.0] {
        let bad: usize = ["half_adder", "full_adder"]
            .iter()
            .map(|name| table_mismatches(&adder_table(name, k), &drain_reference(name)))
            .sum();
        pass &= bad == 0;
        parts.push(format!("k={k}: {bad}"));
    }
    outcome(pass, format!("adder tables under drive scaling, mismatches {} (required 0 each)", parts.join(", ")))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_4() -> Outcome {
    let mm = 1e-3;
    // 4·(1.0·0.8)/(2·1.8) mm = 8/9 mm, quoted as 0.8889 mm.
    let dh = hydraulic_diameter(&ChannelGeometry::new(10.0 * mm, 1.0 * mm, 0.8 * mm).unwrap());
    let dh_err = rel(dh, 8.0 / 9.0 * mm);
    let r = fluidic_resistance(
        &ChannelGeometry::new(10.0 * mm, 0.8 * mm, 0.8 * mm).unwrap(),
        &FluidProperties::new(1e-3).unwrap(),
    );
    let r_err = rel(r, 7.8125e8);
    let mut rng = StdRng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let g = ChannelGeometry::new(
            rng.random_range(1e-4..0.1),
            rng.random_range(1e-6..5e-3),
            rng.random_range(1e-6..5e-3),
        )
        .unwrap();
        let f = FluidProperties::new(rng.random_range(1e-4..1.0)).unwrap();
        let q = rng.random_range(1e-13..1e-6);
        worst = worst.max(rel(poiseuille_pressure_drop(&g, &f, q), pressure_drop(&g, &f, q)));
    }
    outcome(
        dh_err <= 1e-6 && r_err <= 1e-9 && worst <= 1e-12,
        format!(
            "D_h={:.7} mm (rel err {dh_err:.1e}, tol 1e-6); R={r:.6e} Pa·s/m³ (rel err {r_err:.1e}, tol 1e-9); \
             ohmic vs Poiseuille worst {worst:.1e} over 1000 samples (tol 1e-12)",
            dh / mm
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let mut worst_err = 0.0f64;
    let mut worst_residual = 0.0f64;
    let mut max_channels = 0;
    for _ in 0..200 {
        let leaves = rng.random_range(1..=6);
        let body = common::random_sp(&mut rng, leaves);
        let case = common::sp_network(&mut rng, &body);
        max_channels = max_channels.max(case.net.channels().len());
        let (err, residual) = common::check_sp(&case);
        worst_err = worst_err.max(err);
        worst_residual = worst_residual.max(residual);
    }
    // Every flow solve of the bundled designs is also checked.
    for name in BUILTIN_NAMES {
        let doc = builtin_design(name, &DesignProfile::default()).unwrap();
        let (net, ports) = doc.to_design().unwrap();
        let terminals: Vec<String> = ports.inputs().values().map(|p| p.terminal.clone()).collect();
        for row in 0..1usize << terminals.len() {
            let active: BTreeSet<String> =
                terminals.iter().enumerate().filter(|(k, _)| row >> k & 1 == 1).map(|(_, t)| t.clone()).collect();
            let sol = solve_flow(&net, &active).unwrap();
            worst_residual = worst_residual.max(validate_conservation(&sol, &net).residual);
        }
    }
    outcome(
        worst_err <= 1e-9 && worst_residual <= 1e-10 && max_channels <= 8,
        format!(
            "200 series-parallel networks (≤ {max_channels} channels): worst total-flow rel err {worst_err:.1e} (tol 1e-9), \
             worst conservation residual {worst_residual:.1e} (tol 1e-10)"
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let mut violations = Vec::new();
    for _ in 0..500 {
        let fluxes = common::random_port_fluxes(&mut rng);
        if let Err(e) = common::check_junction(&fluxes, &mut rng) {
            violations.push(e);
        }
    }
    let first = violations.first().map(|e| format!("; first: {e}")).unwrap_or_default();
    outcome(
        violations.is_empty(),
        format!(
            "500 junction configurations: {} violations of conservation (tol 1e-12), planarity, cut independence \
             or scale invariance (required 0){first}",
            violations.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let bad = common::mode_disagreements();
    outcome(
        bad == 0,
        format!("event simulation vs streamline tracing, both adders, all rows: {bad} disagreements (required 0)"),
    )
}

fn criterion_8() -> Outcome {
    let mut failures = Vec::new();
    for name in BUILTIN_NAMES {
        let doc = builtin_design(name, &DesignProfile::default()).unwrap();
        match parse_netlist(&doc.serialize()) {
            Ok(p) if p.document == doc => {}
            _ => failures.push(format!("builtin {name}")),
        }
    }
    let mut rng = StdRng::seed_from_u64(8);
    let mut rejected = 0;
    for k in 0..100 {
        let doc = common::random_document(&mut rng);
        let text = doc.serialize();
        match parse_netlist(&text) {
            Ok(p) if p.document == doc && p.document.serialize() == text => {}
            _ => failures.push(format!("random document {k}")),
        }
        let (bad, _) = common::corrupt(&text, &mut rng);
        if let Err(diags) = parse_netlist(&bad) {
            rejected += 1;
            let n = bad.lines().count();
            let positioned = diags.iter().any(|d| d.severity == Severity::Error)
                && diags.iter().all(|d| (1..=n).contains(&d.line) && d.column >= 1);
            if !positioned {
                failures.push(format!("corrupted document {k}"));
            }
        }
    }
    let fixed = ["node a x=1\n", "node a x=0 y=0\nchannel c a missing width=1 depth=1\n", "frobnicate\n"];
    for (k, text) in fixed.iter().enumerate() {
        match parse_netlist(text) {
            Err(d) if d.iter().any(|d| d.severity == Severity::Error && d.line >= 1 && d.column >= 1) => {}
            _ => failures.push(format!("malformed document {k}")),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "round trip of 2 builtins and 100 random documents, positioned diagnostics on {rejected} corrupted and \
             {} malformed documents: {} failures (required 0){}",
            fixed.len(),
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_droplogic")).args(args).output().expect("run droplogic")
}

fn criterion_9() -> Outcome {
    let dir = std::env::temp_dir().join(format!("droplogic-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad_file = dir.join("bad.net");
    std::fs::write(&bad_file, "node a x=0 y=0\nchannel c a ghost width=0.8 depth=0.8\n").unwrap();
    let bad_path = bad_file.to_str().unwrap();

    let cases: [(&[&str], i32); 5] = [
        (&["truthtable", "--builtin", "half_adder"], 0),
        (&["truthtable", "--builtin", "full_adder"], 0),
        (&["truthtable", "--builtin", "half_adder", "--expect", "S=A*B"], 1),
        (&["solve", bad_path], 2),
        (&["solve", "--builtin", "half_adder", "--inputs", "Q=1"], 2),
    ];
    let mut failures = Vec::new();
    for (args, want) in cases {
        let got = cli(args).status.code();
        if got != Some(want) {
            failures.push(format!("`{}` exited {got:?}, expected {want}", args.join(" ")));
        }
    }
    let stderr = String::from_utf8_lossy(&cli(&["solve", bad_path]).stderr).into_owned();
    if !stderr.contains(":2:") {
        failures.push(format!("diagnostic lacks a line number: {stderr}"));
    }

    let render = ["render", "--builtin", "half_adder", "--inputs", "A=1,B=1"];
    let a = cli(&render).stdout;
    let b = cli(&render).stdout;
    if a.is_empty() || a != b {
        failures.push("render output differs between identical invocations".into());
    }
    std::fs::remove_dir_all(&dir).ok();
    outcome(
        failures.is_empty(),
        format!(
            "exit codes 0/1/2 on {} invocations, positioned diagnostic, byte-stable SVG ({} bytes): {} failures{}",
            cases.len(),
            a.len(),
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut failed = 0;
    for (n, check) in criteria {
        let o = check();
        println!("criterion {n}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/{} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
