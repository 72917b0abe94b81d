//! Fine model: explicit time stepping of the interacting particle system
//!
//! ```text
//! x_i^{s+1} = x_i^s + Δt v_i^s
//! v_i^{s+1} = v_i^s + (Δt/m) (G(x_i^s, v_i^s) + A Σ_{j≠i} F(x_i^s − x_j^s) + F_obst(x_i^s))
//! ```
//!
//! with velocity selection `G = −(v − v̄(x))/τ`.

mod boundary;
mod field;
mod placement;

use serde::{Deserialize, Serialize};

pub use boundary::{obstacle_force, reflect_particle, BoundaryMode, ReflectionFailure};
pub use field::{GriddedField, VelocityField};
pub use placement::{hex_cluster, hex_rectangle, jitter, Placement};

use crate::geom::{Mat2, Rect, Vec2};
use crate::par::Parallelism;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InteractionLaw {
    /// `b_F (‖Δ‖ − 2R)² Δ/‖Δ‖`
    QuadraticOverlap { b_f: f64 },
    /// `c_m (2R − ‖Δ‖) Δ/‖Δ‖`
    LinearOverlap { c_m: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroParams {
    pub radius: f64,
    pub mass: f64,
    /// Relaxation time of the velocity selection; `f64::INFINITY` switches
    /// the selection force off.
    pub tau: f64,
    /// Interaction scale `A`.
    pub interaction_scale: f64,
    pub law: InteractionLaw,
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub boundary: BoundaryMode,
    /// Particles whose first coordinate exceeds this value leave the system
    /// and are frozen in place.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outflow_x: Option<f64>,
}

impl MicroParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("radius", self.radius), ("mass", self.mass), ("dt", self.dt)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("micro parameter `{name}` must be positive, got {v}")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("micro parameter `tau` must be positive, got {}", self.tau)));
        }
        if !(self.interaction_scale >= 0.0) {
            return Err(Error::Config(format!(
                "interaction scale must be nonnegative, got {}",
                self.interaction_scale
            )));
        }
        match self.law {
            InteractionLaw::QuadraticOverlap { b_f: k } | InteractionLaw::LinearOverlap { c_m: k } if !(k > 0.0) => {
                return Err(Error::Config(format!("interaction stiffness must be positive, got {k}")))
            }
            _ => {}
        }
        if let BoundaryMode::SoftObstacle { c_obst, .. } = self.boundary {
            if !(c_obst > 0.0) {
                return Err(Error::Config(format!("c_obst must be positive, got {c_obst}")));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }
}

/// Pairwise repulsion acting on particle `i` from particle `j`.
pub fn pair_force(xi: Vec2, xj: Vec2, radius: f64, law: InteractionLaw) -> Vec2 {
    let d = xi - xj;
    let dist_sq = d.norm_sq();
    let reach = 2.0 * radius;
    if dist_sq > reach * reach {
        return Vec2::ZERO;
    }
    let dist = dist_sq.sqrt();
    if dist == 0.0 {
        log::debug!("coincident particles at ({}, {}); pair force set to zero", xi.x, xi.y);
        return Vec2::ZERO;
    }
    let magnitude = match law {
        InteractionLaw::QuadraticOverlap { b_f } => b_f * (dist - reach) * (dist - reach),
        InteractionLaw::LinearOverlap { c_m } => c_m * (reach - dist),
    };
    d * (magnitude / dist)
}

/// Jacobian `∂F/∂Δ` of the pair force.
///
/// Both laws have the form `F = h(d) Δ` with `d = ‖Δ‖`, so the Jacobian is
/// `h I + (h'(d)/d) Δ Δᵀ`. Quadratic: `h = b (d − 2R)²/d`,
/// `h' = b (d − 2R)(d + 2R)/d²`. Linear: `h = c (2R/d − 1)`, `h' = −2Rc/d²`.
pub fn pair_force_jacobian(delta: Vec2, radius: f64, law: InteractionLaw) -> Mat2 {
    let dist_sq = delta.norm_sq();
    let reach = 2.0 * radius;
    if dist_sq >= reach * reach || dist_sq == 0.0 {
        return Mat2::ZERO;
    }
    let d = dist_sq.sqrt();
    let (h, dh) = match law {
        InteractionLaw::QuadraticOverlap { b_f } => (
            b_f * (d - reach) * (d - reach) / d,
            b_f * (d - reach) * (d + reach) / (d * d),
        ),
        InteractionLaw::LinearOverlap { c_m } => (c_m * (reach / d - 1.0), -c_m * reach / (d * d)),
    };
    let w = dh / d;
    Mat2([
        [h + w * delta.x * delta.x, w * delta.x * delta.y],
        [w * delta.y * delta.x, h + w * delta.y * delta.y],
    ])
}

/// `G = −(v − v̄(x))/τ`
pub fn velocity_selection(x: Vec2, v: Vec2, field: &VelocityField, tau: f64) -> Vec2 {
    if tau == f64::INFINITY {
        return Vec2::ZERO;
    }
    (v - field.evaluate(x)) * (-1.0 / tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub x: Vec<Vec2>,
    pub v: Vec<Vec2>,
    /// `false` once a particle has left through the outflow.
    pub active: Vec<bool>,
}

impl ParticleState {
    pub fn at_rest(x: Vec<Vec2>) -> Self {
        let n = x.len();
        Self {
            x,
            v: vec![Vec2::ZERO; n],
            active: vec![true; n],
        }
    }

    pub fn new(x: Vec<Vec2>, v: Vec<Vec2>) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::Config(format!(
                "{} positions but {} velocities",
                x.len(),
                v.len()
            )));
        }
        let n = x.len();
        Ok(Self {
            x,
            v,
            active: vec![true; n],
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn momentum(&self, mass: f64) -> Vec2 {
        self.v.iter().fold(Vec2::ZERO, |s, v| s + *v) * mass
    }
}

/// Sum of pair forces on every particle, `Σ_{j≠i} F(x_i − x_j)` (unscaled by `A`).
pub fn interaction_sums(state: &ParticleState, radius: f64, law: InteractionLaw, par: Parallelism) -> Vec<Vec2> {
    let n = state.len();
    let mut out = vec![Vec2::ZERO; n];
    par.fill(&mut out, |i| {
        if !state.active[i] {
            return Vec2::ZERO;
        }
        let xi = state.x[i];
        let mut acc = Vec2::ZERO;
        for j in 0..n {
            if j != i && state.active[j] {
                acc += pair_force(xi, state.x[j], radius, law);
            }
        }
        acc
    });
    out
}

/// One explicit step from `state` (step index `s`) to `s + 1`.
pub fn step(
    state: &ParticleState,
    params: &MicroParams,
    field: &VelocityField,
    s: usize,
    par: Parallelism,
) -> Result<ParticleState> {
    let n = state.len();
    let sums = if params.interaction_scale != 0.0 {
        interaction_sums(state, params.radius, params.law, par)
    } else {
        vec![Vec2::ZERO; n]
    };
    let dt = params.dt;
    let inv_m = 1.0 / params.mass;
    let mut next = state.clone();
    for i in 0..n {
        if !state.active[i] {
            continue;
        }
        let (x, v) = (state.x[i], state.v[i]);
        let mut force = velocity_selection(x, v, field, params.tau) + sums[i] * params.interaction_scale;
        if let BoundaryMode::SoftObstacle { walls, c_obst } = &params.boundary {
            force += obstacle_force(x, walls, params.radius, *c_obst);
        }
        let mut xn = x + v * dt;
        let mut vn = v + force * (dt * inv_m);
        if let BoundaryMode::Reflect { domain, obstacles } = &params.boundary {
            (xn, vn) = reflect_particle(x, xn, vn, domain, obstacles).map_err(|f| Error::Reflection {
                step: s,
                particle: i,
                position: f.position.to_array(),
            })?;
        }
        if !(xn.is_finite() && vn.is_finite()) {
            return Err(Error::Blowup { step: s });
        }
        if let Some(x_out) = params.outflow_x {
            if xn.x > x_out {
                next.active[i] = false;
                vn = Vec2::ZERO;
            }
        }
        next.x[i] = xn;
        next.v[i] = vn;
    }
    Ok(next)
}

/// Stored trajectories `x_i^s, v_i^s`, `s = 0..=n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub states: Vec<ParticleState>,
}

impl ParticleEnsemble {
    pub fn initial(&self) -> &ParticleState {
        &self.states[0]
    }

    pub fn last(&self) -> &ParticleState {
        self.states.last().expect("ensemble always holds the initial state")
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// Runs the full horizon and returns the final state.
pub fn simulate(
    initial: &ParticleState,
    params: &MicroParams,
    field: &VelocityField,
    par: Parallelism,
) -> Result<ParticleState> {
    params.validate()?;
    let mut state = initial.clone();
    for s in 0..params.n_steps {
        state = step(&state, params, field, s, par)?;
    }
    Ok(state)
}

/// Runs the full horizon keeping every intermediate state.
pub fn simulate_trajectory(
    initial: &ParticleState,
    params: &MicroParams,
    field: &VelocityField,
    par: Parallelism,
) -> Result<ParticleEnsemble> {
    params.validate()?;
    let mut states = Vec::with_capacity(params.n_steps + 1);
    states.push(initial.clone());
    for s in 0..params.n_steps {
        let next = step(&states[s], params, field, s, par)?;
        states.push(next);
    }
    Ok(ParticleEnsemble { states })
}

/// Mean squared distance to `center`: `(1/N) Σ ⟨x_i − c, x_i − c⟩`.
pub fn observable_spread(x: &[Vec2], center: Vec2) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|p| (*p - center).norm_sq()).sum::<f64>() / x.len() as f64
}

/// Number of particles inside `region` (closed).
pub fn count_inside(x: &[Vec2], region: &Rect) -> f64 {
    x.iter().filter(|p| region.contains(**p)).count() as f64
}

/// `Σ 1{x_i ∈ Ω} − ω*`
pub fn observable_count(x: &[Vec2], region: &Rect, omega_star: f64) -> f64 {
    count_inside(x, region) - omega_star
}

/// Trajectory dump rows `step, particle_id, x1, x2, v1, v2`.
pub fn write_trajectory_csv<W: std::io::Write>(ensemble: &ParticleEnsemble, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "particle_id", "x1", "x2", "v1", "v2"])?;
    for (s, st) in ensemble.states.iter().enumerate() {
        for i in 0..st.len() {
            w.serialize((s, i, st.x[i].x, st.x[i].y, st.v[i].x, st.v[i].y))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_params(a: f64) -> MicroParams {
        MicroParams {
            radius: 0.2,
            mass: 1.0,
            tau: 1.0,
            interaction_scale: a,
            law: InteractionLaw::QuadraticOverlap { b_f: 0.2f64.powi(-5) },
            dt: 0.1,
            n_steps: 1,
            boundary: BoundaryMode::None,
            outflow_x: None,
        }
    }

    #[test]
    fn pair_force_examples() {
        let law = InteractionLaw::QuadraticOverlap { b_f: 3125.0 };
        let f = pair_force(Vec2::new(0.0, 0.0), Vec2::new(0.2, 0.0), 0.2, law);
        assert!((f.x + 125.0).abs() < 1e-9 && f.y == 0.0);
        assert_eq!(pair_force(Vec2::ZERO, Vec2::new(0.4, 0.0), 0.2, law), Vec2::ZERO);
        assert_eq!(pair_force(Vec2::ZERO, Vec2::new(0.5, 0.0), 0.2, law), Vec2::ZERO);
        assert_eq!(pair_force(Vec2::ZERO, Vec2::ZERO, 0.2, law), Vec2::ZERO);
        let lin = InteractionLaw::LinearOverlap { c_m: 200.0 };
        let g = pair_force(Vec2::new(0.1, 0.0), Vec2::ZERO, 0.12, lin);
        assert!((g.x - 200.0 * 0.14).abs() < 1e-12);
    }

    #[test]
    fn pair_force_jacobian_matches_finite_differences() {
        let r = 0.2;
        let delta = Vec2::new(0.17, -0.09);
        for law in [
            InteractionLaw::QuadraticOverlap { b_f: 3125.0 },
            InteractionLaw::LinearOverlap { c_m: 200.0 },
        ] {
            let jac = pair_force_jacobian(delta, r, law).0;
            let h = 1e-7;
            for l in 0..2 {
                let e = Vec2::unit(l) * h;
                let fp = pair_force(delta + e, Vec2::ZERO, r, law);
                let fm = pair_force(delta - e, Vec2::ZERO, r, law);
                let col = (fp - fm) * (0.5 / h);
                for k in 0..2 {
                    assert!((col[k] - jac[k][l]).abs() < 1e-5 * (1.0 + jac[k][l].abs()), "{law:?} k={k} l={l}");
                }
            }
        }
    }

    #[test]
    fn velocity_selection_examples() {
        let toy = VelocityField::Radial {
            center: Vec2::ZERO,
            rate: 1.0,
        };
        let x = Vec2::new(1.0, 0.0);
        assert_eq!(velocity_selection(x, Vec2::new(-1.0, 0.0), &toy, 1.0), Vec2::ZERO);
        assert_eq!(velocity_selection(x, Vec2::ZERO, &toy, 1.0), Vec2::new(-1.0, 0.0));
        let belt = VelocityField::Uniform(Vec2::new(0.5, 0.0));
        let g = velocity_selection(x, Vec2::new(0.5, 0.2), &belt, 1.0);
        assert!(g.x.abs() < 1e-15 && (g.y + 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_particle_step_by_hand() {
        let field = VelocityField::Radial {
            center: Vec2::ZERO,
            rate: 1.0,
        };
        let s0 = ParticleState::at_rest(vec![Vec2::new(1.0, 0.0)]);
        let s1 = step(&s0, &toy_params(0.0), &field, 0, Parallelism::Sequential).unwrap();
        assert_eq!(s1.x[0], Vec2::new(1.0, 0.0));
        assert!((s1.v[0].x + 0.1).abs() < 1e-15 && s1.v[0].y == 0.0);
    }

    #[test]
    fn separated_pairs_ignore_interaction_scale() {
        let field = VelocityField::Radial {
            center: Vec2::ZERO,
            rate: 1.0,
        };
        let s0 = ParticleState::at_rest(vec![Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.3)]);
        let a = step(&s0, &toy_params(0.0), &field, 0, Parallelism::Sequential).unwrap();
        let b = step(&s0, &toy_params(7.5), &field, 0, Parallelism::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn observables() {
        assert_eq!(observable_spread(&[Vec2::new(2.0, 0.0)], Vec2::ZERO), 4.0);
        assert_eq!(observable_spread(&[Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)], Vec2::ZERO), 1.0);
        assert_eq!(observable_spread(&[Vec2::new(3.0, 4.0); 3], Vec2::new(3.0, 4.0)), 0.0);
        let belt = Rect::new(Vec2::new(0.0, 0.0), Vec2::new(0.65, 0.4));
        let inside = vec![Vec2::new(0.3, 0.2); 100];
        assert_eq!(observable_count(&inside, &belt, 25.0), 75.0);
        let outside = vec![Vec2::new(0.9, 0.2); 100];
        assert_eq!(observable_count(&outside, &belt, 25.0), -25.0);
        let mut mixed = outside.clone();
        mixed[..25].fill(Vec2::new(0.1, 0.1));
        assert_eq!(observable_count(&mixed, &belt, 25.0), 0.0);
    }

    #[test]
    fn nonpositive_parameters_are_rejected() {
        let mut p = toy_params(1.0);
        p.tau = 0.0;
        assert!(p.validate().is_err());
        let mut p = toy_params(-1.0);
        p.interaction_scale = -1.0;
        assert!(p.validate().is_err());
    }
}
