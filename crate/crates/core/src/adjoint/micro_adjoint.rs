//! Backward sweep of the explicit particle scheme.
//!
//! Position multipliers `μ` (components `μ`, `μ̃`) and velocity multipliers
//! `μ̄` (components `μ̄`, `μ̂`) satisfy, for `s = N_t − 1, …, 1`,
//!
//! ```text
//! μ_i^{s−1} = −Δt ∂J/∂x_i^s + μ_i^s
//!             + (Δt/m) ( ∂_x G_iᵀ μ̄_i^s + A Σ_j ∂F(x_i − x_j)ᵀ (μ̄_i^s − μ̄_j^s) )
//! μ̄_i^{s−1} = μ̄_i^s (1 − Δt/(mτ)) + Δt μ_i^s
//! ```
//!
//! from `μ^{N_t−1} = −Δt ∂J/∂x^{N_t}`, `μ̄^{N_t−1} = 0`, and
//! `∂J/∂A = −(1/m) Σ_s Σ_i μ̄_i^s · Σ_j F(x_i^s − x_j^s)`.

use crate::geom::Vec2;
use crate::micro::{interaction_sums, pair_force_jacobian, BoundaryMode, MicroParams, ParticleEnsemble, VelocityField};
use crate::par::Parallelism;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MicroAdjoint {
    /// Position multipliers `(μ, μ̃)` per step `s = 0..N_t`, per particle.
    pub mu: Vec<Vec<Vec2>>,
    /// Velocity multipliers `(μ̄, μ̂)` per step `s = 0..N_t`, per particle.
    pub mu_bar: Vec<Vec<Vec2>>,
}

/// Partials of `½ (j^f − ω*)²` with `j^f` the mean squared distance to `center`:
/// `(j^f − ω*) · 2 (x_i − c)/N`.
pub fn spread_objective_partials(x: &[Vec2], center: Vec2, omega_star: f64) -> Vec<Vec2> {
    let n = x.len() as f64;
    let j = crate::micro::observable_spread(x, center);
    x.iter().map(|p| (*p - center) * ((j - omega_star) * 2.0 / n)).collect()
}

fn exchange_terms(x: &[Vec2], mu_bar: &[Vec2], params: &MicroParams, par: Parallelism) -> Vec<Vec2> {
    let n = x.len();
    let mut out = vec![Vec2::ZERO; n];
    par.fill(&mut out, |i| {
        let mut acc = Vec2::ZERO;
        for j in 0..n {
            if j != i {
                let jac = pair_force_jacobian(x[i] - x[j], params.radius, params.law);
                acc += jac.apply_transpose(mu_bar[i] - mu_bar[j]);
            }
        }
        acc
    });
    out
}

/// Backward sweep for an objective of the final positions only, plus the
/// gradient with respect to the interaction scale `A`.
pub fn backward_sweep_micro(
    ensemble: &ParticleEnsemble,
    params: &MicroParams,
    field: &VelocityField,
    terminal: &[Vec2],
    par: Parallelism,
) -> Result<(MicroAdjoint, f64)> {
    if params.boundary != BoundaryMode::None || params.outflow_x.is_some() {
        return Err(Error::Config(
            "the particle adjoint is only available for unbounded domains without outflow".into(),
        ));
    }
    let n_t = ensemble.n_steps();
    if n_t == 0 {
        return Ok((
            MicroAdjoint {
                mu: Vec::new(),
                mu_bar: Vec::new(),
            },
            0.0,
        ));
    }
    let dt = params.dt;
    let (m, tau, a) = (params.mass, params.tau, params.interaction_scale);
    let damping = 1.0 - dt / (m * tau);
    let np = ensemble.initial().len();
    let mut mu = vec![Vec::new(); n_t];
    let mut mu_bar = vec![Vec::new(); n_t];
    mu[n_t - 1] = terminal.iter().map(|d| *d * -dt).collect();
    mu_bar[n_t - 1] = vec![Vec2::ZERO; np];
    let mut grad_a = 0.0;
    for s in (1..n_t).rev() {
        let x = &ensemble.states[s].x;
        let exchange = if a != 0.0 {
            exchange_terms(x, &mu_bar[s], params, par)
        } else {
            vec![Vec2::ZERO; np]
        };
        let (mu_s, mu_bar_s) = (&mu[s], &mu_bar[s]);
        let next_mu: Vec<Vec2> = (0..np)
            .map(|i| {
                let dg = field.jacobian(x[i]).scaled(1.0 / tau);
                mu_s[i] + (dg.apply_transpose(mu_bar_s[i]) + exchange[i] * a) * (dt / m)
            })
            .collect();
        let next_bar: Vec<Vec2> = (0..np).map(|i| mu_bar_s[i] * damping + mu_s[i] * dt).collect();
        mu[s - 1] = next_mu;
        mu_bar[s - 1] = next_bar;
    }
    for s in 0..n_t {
        let sums = interaction_sums(&ensemble.states[s], params.radius, params.law, par);
        grad_a -= mu_bar[s].iter().zip(&sums).map(|(mb, f)| mb.dot(*f)).sum::<f64>() / m;
    }
    Ok((MicroAdjoint { mu, mu_bar }, grad_a))
}
