use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "droplogic", version, about = "Simulate droplet-based fluidic logic circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the steady flow field and report channel flows and node pressures.
    Solve(Run),
    /// Run the event-driven droplet simulation and print the event trace.
    Trace(Run),
    /// Evaluate every input combination against the expected functions.
    Truthtable(Run),
    /// Draw the flow field as SVG with droplet paths overlaid.
    Render(Run),
    /// Print the design in canonical netlist form.
    Netlist(Run),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
    Svg,
}

/// Exactly one design source.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Netlist file.
    netlist: Option<PathBuf>,
    /// Bundled design instead of a file.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(droplet_logic::netlist::BUILTIN_NAMES))]
    builtin: Option<String>,
}

#[derive(Debug, Args)]
struct Run {
    #[command(flatten)]
    source: Source,
    /// Input values as `label=0|1,...`; unlisted inputs are FALSE. Default: all TRUE.
    #[arg(long)]
    inputs: Option<String>,
    /// Multiply every source value by this factor.
    #[arg(long, default_value_t = 1.0)]
    pressure_scale: f64,
    /// Streamline fraction droplets follow at junctions.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    /// Per-droplet channel resistance factor.
    #[arg(long, default_value_t = 0.0)]
    droplet_resistance: f64,
    /// Simulation stop time in seconds.
    #[arg(long)]
    t_max: Option<f64>,
    /// Expected output function `label=expression`; repeatable.
    #[arg(long = "expect", value_name = "LABEL=EXPR")]
    expect: Vec<String>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(run) => commands::solve(run),
        Command::Trace(run) => commands::trace(run),
        Command::Truthtable(run) => commands::truthtable(run),
        Command::Render(run) => commands::render(run),
        Command::Netlist(run) => commands::netlist(run),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
