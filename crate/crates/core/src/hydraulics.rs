//! Laminar-flow relations for rectangular channels.
//!
//! Everything here is in SI units: metres, pascals, pascal-seconds and
//! cubic metres per second. Values are validated when constructed, so the
//! formula functions themselves cannot fail.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HydraulicsError {
    #[error("channel {dimension} must be finite and positive, got {value}")]
    InvalidDimension { dimension: &'static str, value: f64 },
    #[error("viscosity must be finite and positive, got {0}")]
    InvalidViscosity(f64),
}

/// Newtonian fluid, characterised by its dynamic viscosity in Pa·s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluidProperties {
    viscosity: f64,
}

impl FluidProperties {
    pub fn new(viscosity: f64) -> Result<Self, HydraulicsError> {
        if !(viscosity.is_finite() && viscosity > 0.0) {
            return Err(HydraulicsError::InvalidViscosity(viscosity));
        }
        Ok(Self { viscosity })
    }

    pub fn viscosity(&self) -> f64 {
        self.viscosity
    }
}

/// Straight channel of rectangular cross-section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelGeometry {
    length: f64,
    width: f64,
    depth: f64,
}

fn check_dimension(dimension: &'static str, value: f64) -> Result<f64, HydraulicsError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(HydraulicsError::InvalidDimension { dimension, value })
    }
}

impl ChannelGeometry {
    pub fn new(length: f64, width: f64, depth: f64) -> Result<Self, HydraulicsError> {
        Ok(Self {
            length: check_dimension("length", length)?,
            width: check_dimension("width", width)?,
            depth: check_dimension("depth", depth)?,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    /// Cross-sectional area `w·d`.
    pub fn area(&self) -> f64 {
        self.width * self.depth
    }

    /// Wetted perimeter `2(w+d)`.
    pub fn wetted_perimeter(&self) -> f64 {
        2.0 * (self.width + self.depth)
    }

    /// Same cross-section, different length.
    pub fn with_length(&self, length: f64) -> Result<Self, HydraulicsError> {
        Self::new(length, self.width, self.depth)
    }
}

/// Hydraulic diameter `4A/p`.
pub fn hydraulic_diameter(geom: &ChannelGeometry) -> f64 {
    4.0 * geom.area() / geom.wetted_perimeter()
}

/// Fluidic resistance `32·μ·L / (D_h²·A)` in Pa·s/m³.
pub fn fluidic_resistance(geom: &ChannelGeometry, fluid: &FluidProperties) -> f64 {
    let dh = hydraulic_diameter(geom);
    32.0 * fluid.viscosity() * geom.length() / (dh * dh * geom.area())
}

/// Pressure drop `Q·R` along the channel. Signed like `flow`.
pub fn pressure_drop(geom: &ChannelGeometry, fluid: &FluidProperties, flow: f64) -> f64 {
    flow * fluidic_resistance(geom, fluid)
}

/// Pressure drop written in terms of the mean velocity, `32·U·μ·L / D_h²`.
///
/// Algebraically identical to [`pressure_drop`]; kept separate so the two
/// forms can be checked against each other.
pub fn poiseuille_pressure_drop(geom: &ChannelGeometry, fluid: &FluidProperties, flow: f64) -> f64 {
    let dh = hydraulic_diameter(geom);
    32.0 * mean_velocity(geom, flow) * fluid.viscosity() * geom.length() / (dh * dh)
}

/// Mean velocity `Q/A` in m/s.
pub fn mean_velocity(geom: &ChannelGeometry, flow: f64) -> f64 {
    flow / geom.area()
}
