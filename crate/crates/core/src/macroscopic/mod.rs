//! Coarse model: finite volumes for `ρ_t + ∇·(ρ v̄) = ∇·(k(ρ)∇ρ)`.
//!
//! One step is an upwind x-sweep, an upwind y-sweep and an implicit
//! diffusion solve
//!
//! ```text
//! ρ̃ = ρ − λ_x (F⁺ − F⁻)
//! ρ̄ = ρ̃ − λ_y (G⁺ − G⁻)
//! ρ' − Δt/(Δx¹Δx²) · L b(ρ') = ρ̄
//! ```
//!
//! where `L` is the five-point stencil over interior cells with mirrored
//! (zero-flux) values at walls and obstacles.

mod banded;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use banded::BandMatrix;

use crate::geom::{Rect, Vec2};
use crate::grid::{CellKind, Grid};
use crate::{Error, Result};

fn default_rho_crit() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    0.1
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iters() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroParams {
    /// Diffusion scale `C`.
    pub c: f64,
    #[serde(default = "default_rho_crit")]
    pub rho_crit: f64,
    /// Half width of the smoothed Heaviside band.
    #[serde(default = "default_eps")]
    pub eps_h: f64,
    /// Max-norm residual tolerance of the implicit diffusion solve.
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_max_iters")]
    pub solver_max_iters: usize,
}

impl MacroParams {
    pub fn new(c: f64) -> Self {
        Self {
            c,
            rho_crit: default_rho_crit(),
            eps_h: default_eps(),
            solver_tol: default_tol(),
            solver_max_iters: default_max_iters(),
        }
    }

    pub fn with_c(&self, c: f64) -> Self {
        Self { c, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("diffusion scale C must be nonnegative, got {}", self.c)));
        }
        if !(self.rho_crit > 0.0) || !(self.eps_h > 0.0) || self.eps_h >= self.rho_crit {
            return Err(Error::Config(format!(
                "need 0 < eps_h < rho_crit, got eps_h = {}, rho_crit = {}",
                self.eps_h, self.rho_crit
            )));
        }
        if !(self.solver_tol > 0.0) || self.solver_max_iters == 0 {
            return Err(Error::Config("diffusion solver tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    /// `b(ρ) = C·b̂(ρ)`
    pub fn b(&self, rho: f64) -> f64 {
        self.c * b_hat(rho, self.rho_crit, self.eps_h)
    }

    /// `k(ρ) = b'(ρ)`
    pub fn k(&self, rho: f64) -> f64 {
        self.c * k_hat(rho, self.rho_crit, self.eps_h)
    }
}

/// `∫₀^ρ z H_ε(z − ρ_c) dz` with the cubic smoothstep `H_ε` on `[ρ_c − ε, ρ_c + ε]`.
pub fn b_hat(rho: f64, rho_crit: f64, eps: f64) -> f64 {
    let a = rho_crit - eps;
    let w = 2.0 * eps;
    if rho <= a {
        0.0
    } else if rho < rho_crit + eps {
        let t = (rho - a) / w;
        let t3 = t * t * t;
        let t4 = t3 * t;
        w * (a * (t3 - 0.5 * t4) + w * (0.75 * t4 - 0.4 * t4 * t))
    } else {
        let top = rho_crit + eps;
        eps * a + 1.4 * eps * eps + 0.5 * (rho * rho - top * top)
    }
}

/// `ρ H_ε(ρ − ρ_c)`, the exact derivative of [`b_hat`].
pub fn k_hat(rho: f64, rho_crit: f64, eps: f64) -> f64 {
    let a = rho_crit - eps;
    if rho <= a {
        0.0
    } else if rho < rho_crit + eps {
        let t = (rho - a) / (2.0 * eps);
        rho * t * t * (3.0 - 2.0 * t)
    } else {
        rho
    }
}

/// Discrete Gaussian used to mollify the initial particle histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianFilter {
    /// Standard deviation in cells.
    pub sigma: f64,
    /// Truncation radius in cells.
    pub radius: usize,
}

impl Default for GaussianFilter {
    fn default() -> Self {
        Self { sigma: 1.0, radius: 4 }
    }
}

/// Cell histogram of `positions` scaled by `πR²/(Δx¹Δx²)`, optionally
/// mollified. Each source cell's mass is spread over the non-wall cells in
/// its kernel window and renormalized, so the total mass is `N πR²`.
pub fn init_density(grid: &Grid, positions: &[Vec2], radius: f64, filter: Option<GaussianFilter>) -> Result<Vec<f64>> {
    let unit = std::f64::consts::PI * radius * radius / grid.cell_area();
    let mut hist = vec![0.0; grid.len()];
    for p in positions {
        let (i, j) = grid
            .cell_of(*p)
            .ok_or_else(|| Error::Domain(format!("particle at ({}, {}) lies outside the grid", p.x, p.y)))?;
        hist[grid.index(i, j)] += unit;
    }
    let Some(filter) = filter else {
        return Ok(hist);
    };
    if !(filter.sigma > 0.0) {
        return Err(Error::Config(format!("filter width must be positive, got {}", filter.sigma)));
    }
    let [n1, n2] = grid.n();
    let r = filter.radius as isize;
    let mut out = vec![0.0; grid.len()];
    let mut targets = Vec::new();
    for (k, &mass) in hist.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let (i, j) = grid.coords(k);
        targets.clear();
        let mut total = 0.0;
        for di in -r..=r {
            for dj in -r..=r {
                if di * di + dj * dj > r * r {
                    continue;
                }
                let (ti, tj) = (i as isize + di, j as isize + dj);
                if ti < 0 || tj < 0 || ti >= n1 as isize || tj >= n2 as isize {
                    continue;
                }
                let t = grid.index(ti as usize, tj as usize);
                if grid.is_boundary(t) {
                    continue;
                }
                let w = (-((di * di + dj * dj) as f64) / (2.0 * filter.sigma * filter.sigma)).exp();
                total += w;
                targets.push((t, w));
            }
        }
        if targets.is_empty() {
            return Err(Error::Domain(format!(
                "no open cell within {} cells of wall cell ({i}, {j}) holding particles",
                filter.radius
            )));
        }
        for &(t, w) in &targets {
            out[t] += mass * w / total;
        }
    }
    Ok(out)
}

/// Samples `field` at cell centers; walls, obstacles and sinks get `v̄ = 0`.
pub fn sample_velocity(grid: &Grid, field: impl Fn(Vec2) -> Vec2) -> Vec<Vec2> {
    (0..grid.len())
        .map(|k| if grid.is_interior(k) { field(grid.center_of(k)) } else { Vec2::ZERO })
        .collect()
}

/// Upwind flux across the face between `left` and `right` cells, using the
/// velocity component stored at the left (lower) cell. Returns the upwind cell
/// and the face velocity, or `None` if the face is closed.
#[inline]
pub fn upwind_face(grid: &Grid, left: usize, right: usize, v: f64) -> Option<(usize, f64)> {
    if v >= 0.0 {
        (!grid.is_boundary(right)).then_some((left, v))
    } else {
        (!grid.is_boundary(left)).then_some((right, v))
    }
}

/// Scalar flux `F(ρ_left, ρ_right)` for the face.
pub fn upwind_flux(grid: &Grid, left: usize, right: usize, rho_left: f64, rho_right: f64, v: f64) -> f64 {
    match upwind_face(grid, left, right, v) {
        Some((up, v)) => v * if up == left { rho_left } else { rho_right },
        None => 0.0,
    }
}

/// Visits every face normal to `axis` as `(left, right)` flat indices.
pub fn for_each_face(grid: &Grid, axis: usize, mut f: impl FnMut(usize, usize)) {
    let [n1, n2] = grid.n();
    match axis {
        0 => {
            for i in 0..n1 - 1 {
                for j in 0..n2 {
                    f(grid.index(i, j), grid.index(i + 1, j));
                }
            }
        }
        _ => {
            for i in 0..n1 {
                for j in 0..n2 - 1 {
                    f(grid.index(i, j), grid.index(i, j + 1));
                }
            }
        }
    }
}

/// One upwind sweep along `axis`.
pub fn sweep(grid: &Grid, rho: &[f64], velocity: &[Vec2], axis: usize) -> Vec<f64> {
    let lambda = grid.lambda()[axis];
    let mut out = rho.to_vec();
    for_each_face(grid, axis, |l, r| {
        if let Some((up, v)) = upwind_face(grid, l, r, velocity[l][axis]) {
            let flux = lambda * v * rho[up];
            out[l] -= flux;
            out[r] += flux;
        }
    });
    out
}

/// Interior neighbors of an interior cell.
pub(crate) fn open_neighbors(grid: &Grid, k: usize) -> impl Iterator<Item = usize> + '_ {
    let (i, j) = grid.coords(k);
    let [n1, n2] = grid.n();
    let cand = [
        (i > 0).then(|| grid.index(i - 1, j)),
        (i + 1 < n1).then(|| grid.index(i + 1, j)),
        (j > 0).then(|| grid.index(i, j - 1)),
        (j + 1 < n2).then(|| grid.index(i, j + 1)),
    ];
    cand.into_iter().flatten().filter(move |&m| grid.is_interior(m))
}

/// `(L b)_c = Σ_n (b_n − b_c)` over interior neighbors; zero off the interior.
pub fn stencil(grid: &Grid, b: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .map(|k| {
            if !grid.is_interior(k) {
                return 0.0;
            }
            open_neighbors(grid, k).map(|m| b[m] - b[k]).sum()
        })
        .collect()
}

/// Jacobian `I − κ L K` of the implicit diffusion operator at `rho`.
pub fn diffusion_jacobian(grid: &Grid, params: &MacroParams, rho: &[f64]) -> BandMatrix {
    let kappa = grid.dt() / grid.cell_area();
    let mut jac = BandMatrix::zeros(grid.len(), grid.n()[1]);
    for c in 0..grid.len() {
        jac.add(c, c, 1.0);
        if !grid.is_interior(c) {
            continue;
        }
        let kc = params.k(rho[c]);
        for m in open_neighbors(grid, c) {
            jac.add(c, c, kappa * kc);
            jac.add(c, m, -kappa * params.k(rho[m]));
        }
    }
    jac
}

fn diffusion_residual(grid: &Grid, params: &MacroParams, rho: &[f64], rho_bar: &[f64]) -> Vec<f64> {
    let kappa = grid.dt() / grid.cell_area();
    let b: Vec<f64> = rho.iter().map(|&r| params.b(r)).collect();
    let lb = stencil(grid, &b);
    (0..rho.len()).map(|k| rho[k] - kappa * lb[k] - rho_bar[k]).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves the implicit diffusion stage by damped Newton iteration started at
/// `ρ̄`. Every Newton correction has zero sum, so mass is conserved exactly.
pub fn diffuse(grid: &Grid, params: &MacroParams, rho_bar: &[f64], step: usize) -> Result<Vec<f64>> {
    let mut rho = rho_bar.to_vec();
    if params.c == 0.0 {
        return Ok(rho);
    }
    let mut res = diffusion_residual(grid, params, &rho, rho_bar);
    let mut norm = max_abs(&res);
    let mut iterations = 0;
    while norm > params.solver_tol {
        if iterations == params.solver_max_iters {
            return Err(Error::Diffusion {
                step,
                residual: norm,
                iterations,
            });
        }
        iterations += 1;
        let mut jac = diffusion_jacobian(grid, params, &rho);
        jac.factor()?;
        let mut delta: Vec<f64> = res.iter().map(|r| -r).collect();
        jac.solve(&mut delta);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = rho.iter().zip(&delta).map(|(r, d)| r + t * d).collect();
            let trial_res = diffusion_residual(grid, params, &trial, rho_bar);
            let trial_norm = max_abs(&trial_res);
            if trial_norm < norm || t < 1e-3 {
                rho = trial;
                res = trial_res;
                norm = trial_norm;
                break;
            }
            t *= 0.5;
        }
    }
    Ok(rho)
}

/// Forward states of a coarse solve, kept for the adjoint sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityHistory {
    /// `ρ^s`, `s = 0..=N_t`.
    pub rho: Vec<Vec<f64>>,
    /// `ρ̃^s`, `s = 0..N_t`.
    pub rho_tilde: Vec<Vec<f64>>,
    /// `ρ̄^s`, `s = 0..N_t`.
    pub rho_bar: Vec<Vec<f64>>,
}

impl DensityHistory {
    pub fn initial(&self) -> &[f64] {
        &self.rho[0]
    }

    pub fn last(&self) -> &[f64] {
        self.rho.last().expect("history holds the initial density")
    }

    pub fn n_steps(&self) -> usize {
        self.rho.len() - 1
    }
}

/// `Σ ρ Δx¹Δx²`
pub fn mass(grid: &Grid, rho: &[f64]) -> f64 {
    rho.iter().sum::<f64>() * grid.cell_area()
}

pub fn check_cfl(grid: &Grid, velocity: &[Vec2]) -> Result<()> {
    let limit = grid.cfl_limit(velocity);
    if grid.dt() > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt: grid.dt(), limit });
    }
    Ok(())
}

/// One full step `ρ^s → (ρ̃^s, ρ̄^s, ρ^{s+1})`.
pub fn advance(
    grid: &Grid,
    params: &MacroParams,
    velocity: &[Vec2],
    rho: &[f64],
    step: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let tilde = sweep(grid, rho, velocity, 0);
    let bar = sweep(grid, &tilde, velocity, 1);
    let next = diffuse(grid, params, &bar, step)?;
    Ok((tilde, bar, next))
}

/// Runs `grid.n_steps()` steps from `rho0` in the stationary field `velocity`.
pub fn solve(grid: &Grid, params: &MacroParams, velocity: &[Vec2], rho0: &[f64]) -> Result<DensityHistory> {
    params.validate()?;
    if velocity.len() != grid.len() || rho0.len() != grid.len() {
        return Err(Error::Config("velocity/density size does not match the grid".into()));
    }
    check_cfl(grid, velocity)?;
    let n = grid.n_steps();
    let mut hist = DensityHistory {
        rho: Vec::with_capacity(n + 1),
        rho_tilde: Vec::with_capacity(n),
        rho_bar: Vec::with_capacity(n),
    };
    hist.rho.push(rho0.to_vec());
    for s in 0..n {
        let (tilde, bar, next) = advance(grid, params, velocity, &hist.rho[s], s)?;
        hist.rho_tilde.push(tilde);
        hist.rho_bar.push(bar);
        hist.rho.push(next);
    }
    Ok(hist)
}

fn require_mass(m0: f64) -> Result<()> {
    if !(m0 > 0.0) {
        return Err(Error::Domain("initial density has zero mass".into()));
    }
    Ok(())
}

/// `(1/M) Σ ρ Δx¹Δx² ‖x − c‖²`
pub fn spread(grid: &Grid, rho: &[f64], center: Vec2, m0: f64) -> Result<f64> {
    require_mass(m0)?;
    let area = grid.cell_area();
    Ok((0..grid.len())
        .map(|k| rho[k] * area * (grid.center_of(k) - center).norm_sq())
        .sum::<f64>()
        / m0)
}

/// `∂/∂ρ` of [`spread`].
pub fn spread_partials(grid: &Grid, center: Vec2, m0: f64) -> Vec<f64> {
    let area = grid.cell_area();
    (0..grid.len())
        .map(|k| area * (grid.center_of(k) - center).norm_sq() / m0)
        .collect()
}

/// `∂/∂c` of [`spread`] for fixed `ρ`.
pub fn spread_center_derivative(grid: &Grid, rho: &[f64], center: Vec2, m0: f64) -> Vec2 {
    let area = grid.cell_area();
    (0..grid.len()).fold(Vec2::ZERO, |acc, k| acc + (grid.center_of(k) - center) * (-2.0 * rho[k] * area / m0))
}

/// `(N/M) Σ_{x_ij ∈ Ω} ρ Δx¹Δx²`, the particle count in `region`.
pub fn count(grid: &Grid, rho: &[f64], region: &Rect, n_particles: f64, m0: f64) -> Result<f64> {
    require_mass(m0)?;
    let area = grid.cell_area();
    Ok((0..grid.len())
        .filter(|&k| region.contains(grid.center_of(k)))
        .map(|k| rho[k] * area)
        .sum::<f64>()
        * n_particles
        / m0)
}

/// `∂/∂ρ` of [`count`].
pub fn count_partials(grid: &Grid, region: &Rect, n_particles: f64, m0: f64) -> Vec<f64> {
    let w = n_particles * grid.cell_area() / m0;
    (0..grid.len())
        .map(|k| if region.contains(grid.center_of(k)) { w } else { 0.0 })
        .collect()
}

/// Writes one density snapshot: a `n1,n2,dx1,dx2,step` header record
/// followed by `n1` rows of `n2` values.
pub fn write_density_csv<W: Write>(grid: &Grid, rho: &[f64], step: usize, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    let [n1, n2] = grid.n();
    let [dx1, dx2] = grid.dx();
    w.write_record(["n1", "n2", "dx1", "dx2", "step"])?;
    w.serialize((n1, n2, dx1, dx2, step))?;
    for i in 0..n1 {
        w.serialize(&rho[i * n2..(i + 1) * n2])?;
    }
    w.flush()?;
    Ok(())
}

/// Cell kinds as a sanity summary: `(interior, boundary, outflow)` counts.
pub fn kind_counts(grid: &Grid) -> (usize, usize, usize) {
    grid.kinds().iter().fold((0, 0, 0), |(a, b, c), k| match k {
        CellKind::Interior => (a + 1, b, c),
        CellKind::Boundary => (a, b + 1, c),
        CellKind::Outflow => (a, b, c + 1),
    })
}
