//! Simulation of droplet-based fluidic logic.
//!
//! Channel networks are modelled as hydraulic resistance graphs and solved
//! for steady laminar flow. Droplets follow the flow and are routed at
//! junctions by a non-crossing streamline model; the arrival pattern of
//! droplets at the outlets encodes the logic outputs.

pub mod droplet_sim;
pub mod expr;
pub mod hydraulics;
pub mod junction;
pub mod logic;
pub mod netlist;
pub mod network;
pub mod render;
