//! Unbounded toy problem: two particle groups drawn to the origin by
//! `v̄(x) = −x`, controlled through the interaction scale `A` (fine) and the
//! diffusion constant `C = A·C̄·τ` (coarse). The observable is the spread
//! around the origin at the final time.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{central_difference, crowd_positions, descent, require_positive, step_count, GradCheck};
use crate::adjoint::{backward_sweep_micro, backward_sweep_terminal, gradient_wrt_c, spread_objective_partials};
use crate::geom::Vec2;
use crate::grid::Grid;
use crate::macroscopic::{self, init_density, sample_velocity, DensityHistory, GaussianFilter, MacroParams};
use crate::micro::{
    observable_spread, simulate, simulate_trajectory, BoundaryMode, InteractionLaw, MicroParams,
    ParticleEnsemble, ParticleState, Placement, VelocityField,
};
use crate::optim::{ncg_minimize, Bounds, DescentConfig, Minimization, Objective};
use crate::par::Parallelism;
use crate::spacemap::{asm_optimize, AsmConfig, AsmResult, AsmStatus, CoarseModel, FineModel, ModelPair};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub seed: u64,
    /// Final time `T`.
    pub horizon: f64,
    pub radius: f64,
    pub mass: f64,
    /// Macroscopic diffusion constant `C̄`.
    pub c_bar: f64,
    /// Relaxation time; `1/C̄` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Force stiffness; `1/R⁵` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_f: Option<f64>,
    pub dt_fine: f64,
    pub dt_coarse: f64,
    /// Center of cell `(0, 0)`.
    pub grid_origin: Vec2,
    pub dx: f64,
    pub cells: [usize; 2],
    pub crowd: Vec<Placement>,
    /// Uniform jitter amplitude applied to the lattice positions (seeded).
    pub jitter: f64,
    pub smoothing: bool,
    pub filter: GaussianFilter,
    pub omega_star: Vec<f64>,
    pub u0: f64,
    pub bounds: [f64; 2],
    /// Direct fine-model optimization.
    pub ac: DescentConfig,
    /// Coarse optimum `u_*^c`.
    pub optimum: DescentConfig,
    pub extraction: DescentConfig,
    pub asm: AsmConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let cluster = |x: f64| Placement::HexCluster {
            center: Vec2::new(x, 0.0),
            count: 100,
            spacing: 0.4,
        };
        let mut extraction = descent(0.01, 0.9, 1e-12, 100);
        extraction.grad_tol = Some(1e-14);
        let mut optimum = extraction.clone();
        optimum.tol = 1e-10;
        Self {
            seed: 0,
            horizon: 3.0,
            radius: 0.2,
            mass: 1.0,
            c_bar: 15.0,
            tau: None,
            b_f: None,
            dt_fine: 0.00125,
            dt_coarse: 0.05,
            grid_origin: Vec2::new(-4.75, -4.75),
            dx: 0.5,
            cells: [20, 20],
            crowd: vec![cluster(-2.5), cluster(2.5)],
            jitter: 0.0,
            smoothing: true,
            filter: GaussianFilter::default(),
            omega_star: vec![1.0, 2.0, 3.0],
            u0: 8.0,
            bounds: [0.0, 10.0],
            ac: descent(0.01, 0.9, 1e-7, 50),
            optimum,
            extraction,
            asm: AsmConfig {
                tolerance: 1e-8,
                fine_tolerance: Some(1e-7),
                max_iters: 10,
                max_halvings: 10,
            },
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("horizon", self.horizon),
            ("radius", self.radius),
            ("mass", self.mass),
            ("c_bar", self.c_bar),
            ("dx", self.dx),
        ] {
            require_positive(name, v)?;
        }
        if let Some(t) = self.tau {
            require_positive("tau", t)?;
        }
        if let Some(b) = self.b_f {
            require_positive("b_f", b)?;
        }
        step_count("dt_fine", self.horizon, self.dt_fine)?;
        step_count("dt_coarse", self.horizon, self.dt_coarse)?;
        if self.crowd.is_empty() {
            return Err(Error::Config("the crowd needs at least one placement".into()));
        }
        if !(self.bounds[0] <= self.u0 && self.u0 <= self.bounds[1]) {
            return Err(Error::Config(format!("u0 = {} lies outside {:?}", self.u0, self.bounds)));
        }
        if !(self.bounds[0] >= 0.0) {
            return Err(Error::Config("the interaction scale cannot be negative".into()));
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(1.0 / self.c_bar)
    }

    pub fn b_f(&self) -> f64 {
        self.b_f.unwrap_or(self.radius.powi(-5))
    }
}

/// Assembled toy problem shared by the fine and coarse models.
#[derive(Debug, Clone)]
pub struct Toy {
    pub config: ToyConfig,
    pub grid: Grid,
    pub initial: ParticleState,
    pub rho0: Vec<f64>,
    m0: f64,
    velocity: Vec<Vec2>,
    field: VelocityField,
    n_fine: usize,
    pub par: Parallelism,
}

impl Toy {
    pub fn new(config: ToyConfig, par: Parallelism) -> Result<Self> {
        config.validate()?;
        let n_fine = step_count("dt_fine", config.horizon, config.dt_fine)?;
        let n_coarse = step_count("dt_coarse", config.horizon, config.dt_coarse)?;
        let grid = Grid::new(config.grid_origin, [config.dx; 2], config.cells, config.dt_coarse, n_coarse)?;
        let x0 = crowd_positions(&config.crowd, config.jitter, config.seed)?;
        let filter = config.smoothing.then_some(config.filter);
        let rho0 = init_density(&grid, &x0, config.radius, filter)?;
        let m0 = macroscopic::mass(&grid, &rho0);
        let field = VelocityField::Radial {
            center: Vec2::ZERO,
            rate: 1.0,
        };
        let velocity = sample_velocity(&grid, |x| field.evaluate(x));
        macroscopic::check_cfl(&grid, &velocity)?;
        Ok(Self {
            initial: ParticleState::at_rest(x0),
            config,
            grid,
            rho0,
            m0,
            velocity,
            field,
            n_fine,
            par,
        })
    }

    pub fn micro_params(&self, a: f64) -> MicroParams {
        MicroParams {
            radius: self.config.radius,
            mass: self.config.mass,
            tau: self.config.tau(),
            interaction_scale: a,
            law: InteractionLaw::QuadraticOverlap { b_f: self.config.b_f() },
            dt: self.config.dt_fine,
            n_steps: self.n_fine,
            boundary: BoundaryMode::None,
            outflow_x: None,
        }
    }

    /// `C = A·C̄·τ`
    pub fn diffusion_scale(&self) -> f64 {
        self.config.c_bar * self.config.tau()
    }

    pub fn macro_params(&self, u: f64) -> MacroParams {
        MacroParams::new(u * self.diffusion_scale())
    }

    pub fn velocity_field(&self) -> &VelocityField {
        &self.field
    }

    pub fn cell_velocity(&self) -> &[Vec2] {
        &self.velocity
    }

    pub fn simulate_micro(&self, a: f64) -> Result<ParticleEnsemble> {
        simulate_trajectory(&self.initial, &self.micro_params(a), &self.field, self.par)
    }

    /// `j^f(A)`
    pub fn fine_spread(&self, a: f64) -> Result<f64> {
        let last = simulate(&self.initial, &self.micro_params(a), &self.field, self.par)?;
        Ok(observable_spread(&last.x, Vec2::ZERO))
    }

    /// `(J^f, ∂J^f/∂A)` with `J^f = ½ (j^f − ω*)²`.
    pub fn fine_objective(&self, a: f64, omega_star: f64) -> Result<(f64, f64)> {
        let params = self.micro_params(a);
        let ens = simulate_trajectory(&self.initial, &params, &self.field, self.par)?;
        let x = &ens.last().x;
        let j = observable_spread(x, Vec2::ZERO);
        let terminal = spread_objective_partials(x, Vec2::ZERO, omega_star);
        let (_, grad) = backward_sweep_micro(&ens, &params, &self.field, &terminal, self.par)?;
        Ok((0.5 * (j - omega_star).powi(2), grad))
    }

    pub fn simulate_macro(&self, u: f64) -> Result<DensityHistory> {
        macroscopic::solve(&self.grid, &self.macro_params(u), &self.velocity, &self.rho0)
    }

    /// `(j^c, ∂j^c/∂u)` where the coarse model runs with `C = u·C̄·τ`.
    pub fn coarse_spread(&self, u: f64) -> Result<(f64, f64)> {
        let params = self.macro_params(u);
        let hist = macroscopic::solve(&self.grid, &params, &self.velocity, &self.rho0)?;
        let j = macroscopic::spread(&self.grid, hist.last(), Vec2::ZERO, self.m0)?;
        let terminal = macroscopic::spread_partials(&self.grid, Vec2::ZERO, self.m0);
        let adj = backward_sweep_terminal(&self.grid, &params, &self.velocity, &hist, &terminal)?;
        let dc = gradient_wrt_c(&self.grid, &params, &hist, &adj);
        Ok((j, dc * self.diffusion_scale()))
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::scalar(self.config.bounds[0], self.config.bounds[1])
    }

    /// Adjoint vs central differences for `∂J^f/∂A` and `∂j^c/∂u` at `u`.
    pub fn gradcheck(&self, u: f64, omega_star: f64, h: f64) -> Result<Vec<GradCheck>> {
        let (_, fine) = self.fine_objective(u, omega_star)?;
        let fine_fd = central_difference(
            |v| {
                let j = self.fine_spread(v[0])?;
                Ok(0.5 * (j - omega_star).powi(2))
            },
            &[u],
            0,
            h,
        )?;
        let (_, coarse) = self.coarse_spread(u)?;
        let coarse_fd = central_difference(|v| Ok(self.coarse_spread(v[0])?.0), &[u], 0, h)?;
        Ok(vec![
            GradCheck {
                name: "dJf/dA".into(),
                adjoint: fine,
                finite_difference: fine_fd,
            },
            GradCheck {
                name: "dJc/dC".into(),
                adjoint: coarse,
                finite_difference: coarse_fd,
            },
        ])
    }

    /// Direct optimization of the fine model with the particle adjoint.
    pub fn optimize_ac(&self, omega_star: f64) -> Result<Minimization> {
        let obj = FineObjective { toy: self, omega_star };
        ncg_minimize(&obj, &[self.config.u0], &self.bounds()?, &self.config.ac, None)
    }

    pub fn optimize_asm(&self, omega_star: f64) -> Result<AsmResult> {
        let fine = ToyFine(self);
        let coarse = ToyCoarse(self);
        let pair = ModelPair::new(
            &fine,
            &coarse,
            self.bounds()?,
            omega_star,
            self.config.optimum.clone(),
            self.config.extraction.clone(),
        );
        asm_optimize(&pair, &[self.config.u0], &self.config.asm)
    }

    /// AC and ASM for every configured target.
    pub fn run(&self) -> Result<ToyReport> {
        let targets = self.config.omega_star.clone();
        let results = self.par.map_tasks(targets.len(), |k| -> Result<_> {
            let omega = targets[k];
            let ac = self.optimize_ac(omega)?;
            log::info!("omega* = {omega}: AC finished at u = {:.6}, J = {:.3e}", ac.u[0], ac.value);
            let asm = self.optimize_asm(omega)?;
            log::info!("omega* = {omega}: ASM finished at u = {:.6} after {} iterations", asm.u[0], asm.iterations());
            Ok((omega, ac, asm))
        });
        let mut rows = Vec::new();
        let mut runs = Vec::new();
        for r in results {
            let (omega, ac, asm) = r?;
            let last = asm.records.last().expect("ASM records the first extraction");
            rows.push(ToyRow {
                omega_star: omega,
                u_ac: ac.u[0],
                j_fine_ac: ac.value,
                ac_iterations: ac.trace.records.len().saturating_sub(1),
                ac_converged: ac.status.is_success(),
                u_coarse: asm.u_star_coarse()[0],
                j_coarse: asm.coarse_optimum.value,
                u_asm: asm.u[0],
                j_fine_asm: 0.5 * (last.fine_response - omega).powi(2),
                asm_iterations: asm.iterations(),
                asm_converged: asm.status == AsmStatus::Converged,
                asm_iterates: asm.records.iter().map(|r| r.u[0]).collect(),
                fine_evaluations: asm.fine_evaluations,
            });
            runs.push((omega, ac, asm));
        }
        Ok(ToyReport { rows, runs })
    }
}

struct FineObjective<'a> {
    toy: &'a Toy,
    omega_star: f64,
}

impl Objective for FineObjective<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (j, g) = self.toy.fine_objective(u[0], self.omega_star)?;
        Ok((j, vec![g]))
    }
}

/// `A ↦ j^f(A)`
pub struct ToyFine<'a>(pub &'a Toy);

impl FineModel for ToyFine<'_> {
    fn response(&self, u: &[f64]) -> Result<f64> {
        self.0.fine_spread(u[0])
    }
}

/// `u ↦ j^c(u·C̄·τ)`
pub struct ToyCoarse<'a>(pub &'a Toy);

impl CoarseModel for ToyCoarse<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn response_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (j, g) = self.0.coarse_spread(u[0])?;
        Ok((j, vec![g]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyRow {
    pub omega_star: f64,
    pub u_ac: f64,
    /// `J^f(u_*^AC)`
    pub j_fine_ac: f64,
    pub ac_iterations: usize,
    pub ac_converged: bool,
    pub u_coarse: f64,
    /// `J^c(u_*^c)`
    pub j_coarse: f64,
    pub u_asm: f64,
    /// `J^f(u_*^ASM)`
    pub j_fine_asm: f64,
    pub asm_iterations: usize,
    pub asm_converged: bool,
    pub asm_iterates: Vec<f64>,
    pub fine_evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct ToyReport {
    pub rows: Vec<ToyRow>,
    /// `(ω*, AC run, ASM run)` per target.
    pub runs: Vec<(f64, Minimization, AsmResult)>,
}

impl ToyReport {
    /// One row per target; the ASM iterates are `;`-separated.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "omega_star",
            "u_ac",
            "J_fine_ac",
            "ac_iterations",
            "u_coarse",
            "J_coarse",
            "u_asm",
            "J_fine_asm",
            "asm_iterations",
            "asm_iterates",
            "fine_evaluations",
        ])?;
        for r in &self.rows {
            let iterates: Vec<String> = r.asm_iterates.iter().map(|u| format!("{u:.6}")).collect();
            w.write_record([
                r.omega_star.to_string(),
                r.u_ac.to_string(),
                r.j_fine_ac.to_string(),
                r.ac_iterations.to_string(),
                r.u_coarse.to_string(),
                r.j_coarse.to_string(),
                r.u_asm.to_string(),
                r.j_fine_asm.to_string(),
                r.asm_iterations.to_string(),
                iterates.join(";"),
                r.fine_evaluations.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn converged(&self) -> bool {
        self.rows.iter().all(|r| r.ac_converged && r.asm_converged)
    }
}
