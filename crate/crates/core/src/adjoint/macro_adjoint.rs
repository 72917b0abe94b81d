//! Backward sweep of the coarse scheme.
//!
//! Multipliers follow the Lagrangian scaling: `μ^s` belongs to the x-sweep,
//! `μ̃^s` to the y-sweep and `μ̄^s` to the implicit diffusion stage of step
//! `s`. Going backward,
//!
//! ```text
//! (I − κ K(ρ^s) L) μ̄^{s−1} = −Δt ∂J/∂ρ^s + X_sᵀ μ^s
//! μ̃^{s−1} = μ̄^{s−1}
//! μ^{s−1} = Yᵀ μ̃^{s−1}
//! ```
//!
//! with `μ^{N_t} = 0`, `X`, `Y` the linear sweep operators and `K = diag k(ρ)`.

use crate::geom::Vec2;
use crate::grid::Grid;
use crate::macroscopic::{diffusion_jacobian, for_each_face, stencil, upwind_face, DensityHistory, MacroParams};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct MacroAdjoint {
    /// `μ^s`, `s = 0..N_t`.
    pub mu: Vec<Vec<f64>>,
    /// `μ̃^s`, `s = 0..N_t`.
    pub mu_tilde: Vec<Vec<f64>>,
    /// `μ̄^s`, `s = 0..N_t`.
    pub mu_bar: Vec<Vec<f64>>,
}

/// `Sᵀ μ` for the upwind sweep `S` along `axis`.
pub fn sweep_transpose(grid: &Grid, velocity: &[Vec2], axis: usize, mu: &[f64]) -> Vec<f64> {
    let lambda = grid.lambda()[axis];
    let mut out = mu.to_vec();
    for_each_face(grid, axis, |l, r| {
        if let Some((up, v)) = upwind_face(grid, l, r, velocity[l][axis]) {
            out[up] += lambda * v * (mu[r] - mu[l]);
        }
    });
    out
}

/// Runs the backward sweep. `partials(s)` returns `∂J/∂ρ^s` or `None` when the
/// objective does not depend on step `s`.
pub fn backward_sweep(
    grid: &Grid,
    params: &MacroParams,
    velocity: &[Vec2],
    hist: &DensityHistory,
    partials: impl Fn(usize) -> Option<Vec<f64>>,
) -> Result<MacroAdjoint> {
    let n = hist.n_steps();
    let len = grid.len();
    let dt = grid.dt();
    let mut mu = vec![Vec::new(); n];
    let mut mu_tilde = vec![Vec::new(); n];
    let mut mu_bar = vec![Vec::new(); n];
    for s in (1..=n).rev() {
        let mut rhs = if s < n {
            sweep_transpose(grid, velocity, 0, &mu[s])
        } else {
            vec![0.0; len]
        };
        if let Some(p) = partials(s) {
            for (r, d) in rhs.iter_mut().zip(&p) {
                *r -= dt * d;
            }
        }
        if params.c != 0.0 {
            let mut jac = diffusion_jacobian(grid, params, &hist.rho[s]);
            jac.factor()?;
            jac.solve_transpose(&mut rhs);
        }
        mu[s - 1] = sweep_transpose(grid, velocity, 1, &rhs);
        mu_tilde[s - 1] = rhs.clone();
        mu_bar[s - 1] = rhs;
    }
    Ok(MacroAdjoint { mu, mu_tilde, mu_bar })
}

/// Backward sweep for an objective of the final density only.
pub fn backward_sweep_terminal(
    grid: &Grid,
    params: &MacroParams,
    velocity: &[Vec2],
    hist: &DensityHistory,
    terminal: &[f64],
) -> Result<MacroAdjoint> {
    let n = hist.n_steps();
    backward_sweep(grid, params, velocity, hist, |s| (s == n).then(|| terminal.to_vec()))
}

/// `∂J/∂C = −Σ_s μ̄^s · (L b̂(ρ^{s+1}))/(Δx¹Δx²)` where `b = C b̂`. Written with
/// `b̂` directly so that `C = 0` needs no special case.
pub fn gradient_wrt_c(grid: &Grid, params: &MacroParams, hist: &DensityHistory, adj: &MacroAdjoint) -> f64 {
    let unit = params.with_c(1.0);
    let area = grid.cell_area();
    let mut g = 0.0;
    for (s, mu_bar) in adj.mu_bar.iter().enumerate() {
        let b: Vec<f64> = hist.rho[s + 1].iter().map(|&r| unit.b(r)).collect();
        let lb = stencil(grid, &b);
        g -= mu_bar.iter().zip(&lb).map(|(m, l)| m * l).sum::<f64>() / area;
    }
    g
}

/// Directional derivative of `J` for a perturbation `dv` of the cell velocity
/// field; upwind directions are frozen at `velocity`.
pub fn gradient_wrt_velocity(
    grid: &Grid,
    velocity: &[Vec2],
    hist: &DensityHistory,
    adj: &MacroAdjoint,
    dv: &[Vec2],
) -> f64 {
    let dx = grid.dx();
    let mut g = 0.0;
    for s in 0..adj.mu.len() {
        let (rho, rho_tilde) = (&hist.rho[s], &hist.rho_tilde[s]);
        let (mu, mu_tilde) = (&adj.mu[s], &adj.mu_tilde[s]);
        for_each_face(grid, 0, |l, r| {
            if let Some((up, _)) = upwind_face(grid, l, r, velocity[l].x) {
                g += rho[up] * dv[l].x / dx[0] * (mu[l] - mu[r]);
            }
        });
        for_each_face(grid, 1, |l, r| {
            if let Some((up, _)) = upwind_face(grid, l, r, velocity[l].y) {
                g += rho_tilde[up] * dv[l].y / dx[1] * (mu_tilde[l] - mu_tilde[r]);
            }
        });
    }
    g
}

/// `∂J/∂v_T¹` for the belt field `v̄ = (v_T¹, 0)` on interior cells.
pub fn gradient_wrt_belt(grid: &Grid, velocity: &[Vec2], hist: &DensityHistory, adj: &MacroAdjoint) -> f64 {
    let dv: Vec<Vec2> = (0..grid.len())
        .map(|k| if grid.is_interior(k) { Vec2::new(1.0, 0.0) } else { Vec2::ZERO })
        .collect();
    gradient_wrt_velocity(grid, velocity, hist, adj, &dv)
}

/// Flux part of `∂J/∂x_s`, given the source-derivative fields for both axes.
/// Any explicit dependence of the objective on `x_s` must be added by the caller.
pub fn gradient_wrt_source(
    grid: &Grid,
    velocity: &[Vec2],
    hist: &DensityHistory,
    adj: &MacroAdjoint,
    derivative_fields: [&[Vec2]; 2],
) -> Vec2 {
    Vec2::new(
        gradient_wrt_velocity(grid, velocity, hist, adj, derivative_fields[0]),
        gradient_wrt_velocity(grid, velocity, hist, adj, derivative_fields[1]),
    )
}
