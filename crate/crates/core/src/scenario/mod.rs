//! Scenario configuration and drivers.
//!
//! A scenario file is TOML with a top-level `scenario` tag selecting one of
//! the experiment kinds; every other key is optional and falls back to the
//! documented defaults. Unknown keys are rejected.

pub mod evacuation;
pub mod material_flow;
pub mod toy;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::micro::{jitter, Placement};
use crate::optim::DescentConfig;
use crate::{Error, Result};

pub use evacuation::{EvacuationConfig, EvacuationReport, EvacuationRow};
pub use material_flow::{MaterialFlowConfig, MaterialFlowReport, MaterialFlowRow};
pub use toy::{ToyConfig, ToyReport, ToyRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "kebab-case")]
pub enum ScenarioConfig {
    Toy(ToyConfig),
    Evacuation(EvacuationConfig),
    MaterialFlow(MaterialFlowConfig),
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScenarioConfig::Toy(c) => c.validate(),
            ScenarioConfig::Evacuation(c) => c.validate(),
            ScenarioConfig::MaterialFlow(c) => c.validate(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ScenarioConfig::Toy(_) => "toy",
            ScenarioConfig::Evacuation(_) => "evacuation",
            ScenarioConfig::MaterialFlow(_) => "material-flow",
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ScenarioConfig::Toy(c) => c.seed = seed,
            ScenarioConfig::Evacuation(c) => c.seed = seed,
            ScenarioConfig::MaterialFlow(c) => c.seed = seed,
        }
    }
}

/// Adjoint gradient next to a central finite difference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub adjoint: f64,
    pub finite_difference: f64,
}

impl GradCheck {
    pub fn relative_error(&self) -> f64 {
        let scale = self.adjoint.abs().max(self.finite_difference.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.adjoint - self.finite_difference).abs() / scale
        }
    }
}

pub fn write_gradchecks<W: Write>(checks: &[GradCheck], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["name", "adjoint", "finite_difference", "relative_error"])?;
    for c in checks {
        w.serialize((&c.name, c.adjoint, c.finite_difference, c.relative_error()))?;
    }
    w.flush()?;
    Ok(())
}

/// Central difference of `f` at `u` along coordinate `axis`.
pub fn central_difference(f: impl Fn(&[f64]) -> Result<f64>, u: &[f64], axis: usize, h: f64) -> Result<f64> {
    let mut up = u.to_vec();
    let mut down = u.to_vec();
    up[axis] += h;
    down[axis] -= h;
    Ok((f(&up)? - f(&down)?) / (2.0 * h))
}

pub(crate) fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("`{name}` must be positive, got {v}")))
    }
}

/// Number of steps of size `dt` covering `horizon`; errors unless it divides evenly.
pub(crate) fn step_count(name: &str, horizon: f64, dt: f64) -> Result<usize> {
    require_positive(name, dt)?;
    let n = (horizon / dt).round();
    if !(n >= 1.0) || ((n * dt - horizon).abs() > 1e-9 * horizon.max(1.0)) {
        return Err(Error::Config(format!(
            "`{name}` = {dt} does not divide the horizon {horizon}"
        )));
    }
    Ok(n as usize)
}

/// Initial positions of all placements, optionally jittered.
pub fn crowd_positions(crowd: &[Placement], jitter_amplitude: f64, seed: u64) -> Result<Vec<Vec2>> {
    let mut x = Vec::new();
    for p in crowd {
        x.extend(p.positions()?);
    }
    if jitter_amplitude > 0.0 {
        jitter(&mut x, jitter_amplitude, seed);
    }
    Ok(x)
}

pub(crate) fn descent(c1: f64, c2: f64, tol: f64, max_iters: usize) -> DescentConfig {
    DescentConfig::new(c1, c2, tol, max_iters)
}
