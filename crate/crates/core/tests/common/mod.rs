#![allow(dead_code)]

use spacemap::adjoint::{backward_sweep_micro, backward_sweep_terminal, gradient_wrt_belt, gradient_wrt_c};
use spacemap::adjoint::spread_objective_partials;
use spacemap::macroscopic::{self, init_density, MacroParams};
use spacemap::micro::{
    hex_cluster, jitter, observable_spread, simulate, simulate_trajectory, BoundaryMode, InteractionLaw, MicroParams,
    ParticleState, VelocityField,
};
use spacemap::{Grid, Parallelism, Vec2};

pub fn rel_err(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Ten overlapping particles pulled to the origin, `n_steps` fine steps.
pub struct MicroCase {
    pub initial: ParticleState,
    pub params: MicroParams,
    pub field: VelocityField,
    pub omega_star: f64,
}

impl MicroCase {
    pub fn new(seed: u64, n_steps: usize) -> Self {
        let mut x = hex_cluster(Vec2::new(0.3, -0.2), 10, 0.3).unwrap();
        jitter(&mut x, 0.05, seed);
        let params = MicroParams {
            radius: 0.2,
            mass: 1.0,
            tau: 1.0 / 15.0,
            interaction_scale: 0.9,
            law: InteractionLaw::QuadraticOverlap { b_f: 0.2f64.powi(-5) },
            dt: 0.00125,
            n_steps,
            boundary: BoundaryMode::None,
            outflow_x: None,
        };
        Self {
            initial: ParticleState::at_rest(x),
            params,
            field: VelocityField::Radial {
                center: Vec2::ZERO,
                rate: 1.0,
            },
            omega_star: 0.05,
        }
    }

    pub fn objective(&self, a: f64) -> f64 {
        let mut p = self.params.clone();
        p.interaction_scale = a;
        let last = simulate(&self.initial, &p, &self.field, Parallelism::Sequential).unwrap();
        let j = observable_spread(&last.x, Vec2::ZERO);
        0.5 * (j - self.omega_star).powi(2)
    }

    /// Adjoint `dJ/dA` at the configured interaction scale.
    pub fn adjoint_gradient(&self) -> f64 {
        let ens = simulate_trajectory(&self.initial, &self.params, &self.field, Parallelism::Sequential).unwrap();
        let terminal = spread_objective_partials(&ens.last().x, Vec2::ZERO, self.omega_star);
        backward_sweep_micro(&ens, &self.params, &self.field, &terminal, Parallelism::Sequential)
            .unwrap()
            .1
    }

    pub fn central_difference(&self, h: f64) -> f64 {
        let a = self.params.interaction_scale;
        (self.objective(a + h) - self.objective(a - h)) / (2.0 * h)
    }
}

/// 20×20 cells, a dense blob drifting right on a belt field.
pub struct MacroCase {
    pub grid: Grid,
    pub rho0: Vec<f64>,
    pub m0: f64,
    pub c: f64,
    pub belt: f64,
}

impl MacroCase {
    pub fn new(n_steps: usize) -> Self {
        let grid = Grid::new(Vec2::new(-4.75, -4.75), [0.5, 0.5], [20, 20], 0.05, n_steps).unwrap();
        let x = hex_cluster(Vec2::new(-1.0, 0.3), 120, 0.3).unwrap();
        let rho0 = init_density(&grid, &x, 0.2, None).unwrap();
        let m0 = macroscopic::mass(&grid, &rho0);
        Self {
            grid,
            rho0,
            m0,
            c: 0.9,
            belt: 0.8,
        }
    }

    pub fn params(&self, c: f64) -> MacroParams {
        let mut p = MacroParams::new(c);
        p.solver_tol = 1e-14;
        p
    }

    pub fn velocity(&self, belt: f64) -> Vec<Vec2> {
        (0..self.grid.len())
            .map(|k| if self.grid.is_interior(k) { Vec2::new(belt, 0.0) } else { Vec2::ZERO })
            .collect()
    }

    /// `J = j^c`, the spread of the final density around the origin.
    pub fn objective(&self, c: f64, belt: f64) -> f64 {
        let hist = macroscopic::solve(&self.grid, &self.params(c), &self.velocity(belt), &self.rho0).unwrap();
        macroscopic::spread(&self.grid, hist.last(), Vec2::ZERO, self.m0).unwrap()
    }

    /// Adjoint `(dJ/dC, dJ/dv_T)`.
    pub fn adjoint_gradient(&self) -> (f64, f64) {
        let params = self.params(self.c);
        let v = self.velocity(self.belt);
        let hist = macroscopic::solve(&self.grid, &params, &v, &self.rho0).unwrap();
        let terminal = macroscopic::spread_partials(&self.grid, Vec2::ZERO, self.m0);
        let adj = backward_sweep_terminal(&self.grid, &params, &v, &hist, &terminal).unwrap();
        (
            gradient_wrt_c(&self.grid, &params, &hist, &adj),
            gradient_wrt_belt(&self.grid, &v, &hist, &adj),
        )
    }

    pub fn central_differences(&self, h: f64) -> (f64, f64) {
        let dc = (self.objective(self.c + h, self.belt) - self.objective(self.c - h, self.belt)) / (2.0 * h);
        let dv = (self.objective(self.c, self.belt + h) - self.objective(self.c, self.belt - h)) / (2.0 * h);
        (dc, dv)
    }
}

/// Hyperbolic adjoint built from dense sweep matrices: each column is the
/// forward sweep of a unit vector, and the recursion is run on the
/// transposes. Returns `μ̄^s` for `s = 0..N_t`.
pub fn dense_hyperbolic_adjoint(grid: &Grid, velocity: &[Vec2], n_steps: usize, terminal: &[f64]) -> Vec<Vec<f64>> {
    let n = grid.len();
    let columns = |axis: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                macroscopic::sweep(grid, &e, velocity, axis)
            })
            .collect()
    };
    let (xc, yc) = (columns(0), columns(1));
    // (Mᵀ μ)_k = column_k · μ
    let transpose_apply = |cols: &[Vec<f64>], mu: &[f64]| -> Vec<f64> {
        cols.iter().map(|c| c.iter().zip(mu).map(|(a, b)| a * b).sum()).collect()
    };
    let dt = grid.dt();
    let mut mu = vec![0.0; n];
    let mut out = vec![Vec::new(); n_steps];
    for s in (1..=n_steps).rev() {
        let mut rhs = if s < n_steps {
            transpose_apply(&xc, &mu)
        } else {
            vec![0.0; n]
        };
        if s == n_steps {
            for (r, t) in rhs.iter_mut().zip(terminal) {
                *r -= dt * t;
            }
        }
        mu = transpose_apply(&yc, &rhs);
        out[s - 1] = rhs;
    }
    out
}
