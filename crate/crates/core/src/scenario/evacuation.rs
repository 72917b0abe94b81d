//! Evacuation with an internal wall: the control is the gathering point
//! `x_s`, the crowd follows the eikonal steering field towards it, and the
//! observable is the spread around `x_s` at the final time. The coarse
//! obstacle and initial density are shifted by `gap` in `x²`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{central_difference, crowd_positions, require_positive, step_count, GradCheck};
use crate::adjoint::{backward_sweep_terminal, gradient_wrt_source};
use crate::eikonal::{source_derivative, steering_for_source};
use crate::geom::{Rect, Vec2};
use crate::grid::{Grid, ObstacleSpec};
use crate::macroscopic::{self, init_density, DensityHistory, GaussianFilter, MacroParams};
use crate::micro::{
    observable_spread, simulate, simulate_trajectory, BoundaryMode, GriddedField, InteractionLaw, MicroParams,
    ParticleEnsemble, ParticleState, Placement, VelocityField,
};
use crate::optim::{Bounds, DescentConfig};
use crate::par::Parallelism;
use crate::spacemap::{asm_optimize, AsmConfig, AsmResult, AsmStatus, CoarseModel, FineModel, ModelPair, WarmStart};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvacuationConfig {
    pub seed: u64,
    pub horizon: f64,
    pub radius: f64,
    pub mass: f64,
    pub c_bar: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_f: Option<f64>,
    /// Interaction scale `A` of the particle model.
    pub interaction: f64,
    /// Diffusion constant `C` of the density model.
    pub diffusion: f64,
    pub dt_fine: f64,
    pub dt_coarse: f64,
    pub domain: Rect,
    /// Coarse cell size.
    pub dx: f64,
    /// The particle steering field is computed on a grid `refinement` times finer.
    pub refinement: usize,
    /// Wall inside the domain (particle model position).
    pub obstacle: Rect,
    pub crowd: Vec<Placement>,
    pub jitter: f64,
    pub smoothing: bool,
    pub filter: GaussianFilter,
    /// Shifts of the coarse obstacle and initial density in `x²`.
    pub gaps: Vec<f64>,
    pub omega_star: f64,
    pub u0: Vec2,
    /// Start each gap from `u0 + [0, gap]`.
    pub shift_start: bool,
    pub lower: Vec2,
    pub upper: Vec2,
    pub optimum: DescentConfig,
    pub extraction: DescentConfig,
    pub warm_start: WarmStart,
    pub asm: AsmConfig,
}

impl Default for EvacuationConfig {
    fn default() -> Self {
        let mut search = DescentConfig::new(0.0, 0.9, 1e-5, 50);
        search.grad_tol = Some(1e-12);
        Self {
            seed: 0,
            horizon: 5.0,
            radius: 0.2,
            mass: 1.0,
            c_bar: 15.0,
            tau: None,
            b_f: None,
            interaction: 0.87,
            diffusion: 0.87,
            dt_fine: 0.00125,
            dt_coarse: 0.05,
            domain: Rect::new(Vec2::new(-8.0, -8.0), Vec2::new(8.0, 8.0)),
            dx: 0.5,
            refinement: 4,
            obstacle: Rect::new(Vec2::new(2.0, 1.0), Vec2::new(3.0, 8.0)),
            // one group on each side of the wall, both below its lower end
            crowd: vec![
                Placement::HexCluster {
                    center: Vec2::new(-2.0, -0.5),
                    count: 50,
                    spacing: 0.4,
                },
                Placement::HexCluster {
                    center: Vec2::new(5.0, -0.5),
                    count: 50,
                    spacing: 0.4,
                },
            ],
            jitter: 0.0,
            smoothing: true,
            filter: GaussianFilter::default(),
            gaps: vec![0.0, 1.0, 2.0, 3.0],
            omega_star: 0.0,
            u0: Vec2::new(-4.0, -4.0),
            shift_start: true,
            lower: Vec2::new(-8.0, -8.0),
            upper: Vec2::new(2.0, 8.0),
            optimum: search.clone(),
            extraction: search,
            warm_start: WarmStart::CoarseOptimum,
            asm: AsmConfig {
                tolerance: 1e-5,
                fine_tolerance: None,
                max_iters: 10,
                max_halvings: 10,
            },
        }
    }
}

impl EvacuationConfig {
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
        if !(self.interaction >= 0.0 && self.diffusion >= 0.0) {
            return Err(Error::Config("interaction and diffusion must be nonnegative".into()));
        }
        if self.refinement == 0 {
            return Err(Error::Config("refinement must be at least 1".into()));
        }
        step_count("dt_fine", self.horizon, self.dt_fine)?;
        step_count("dt_coarse", self.horizon, self.dt_coarse)?;
        if !self.domain.is_valid() || !self.obstacle.is_valid() {
            return Err(Error::Config("domain and obstacle must be nonempty rectangles".into()));
        }
        if self.crowd.is_empty() {
            return Err(Error::Config("the crowd needs at least one placement".into()));
        }
        for g in &self.gaps {
            let cells = g / self.dx;
            if !(*g >= 0.0) || (cells - cells.round()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "gap {g} must be a nonnegative multiple of the cell size {}",
                    self.dx
                )));
            }
        }
        Bounds::planar(self.lower, self.upper)?;
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(1.0 / self.c_bar)
    }

    pub fn b_f(&self) -> f64 {
        self.b_f.unwrap_or(self.radius.powi(-5))
    }
}

/// Density model for one gap.
#[derive(Debug, Clone)]
pub struct EvacuationCoarse {
    pub gap: f64,
    pub grid: Grid,
    pub params: MacroParams,
    pub rho0: Vec<f64>,
    m0: f64,
}

impl EvacuationCoarse {
    fn source(&self, u: &[f64]) -> Result<Vec2> {
        self.grid.project_to_cell_center(Vec2::new(u[0], u[1]))
    }

    pub fn simulate(&self, u: &[f64]) -> Result<DensityHistory> {
        let velocity = steering_for_source(&self.grid, self.source(u)?)?;
        macroscopic::solve(&self.grid, &self.params, &velocity, &self.rho0)
    }

    /// `j^c(x_s)`; the steering field uses the projected source, the spread
    /// is measured around `x_s` itself.
    pub fn spread(&self, u: &[f64]) -> Result<f64> {
        let hist = self.simulate(u)?;
        macroscopic::spread(&self.grid, hist.last(), Vec2::new(u[0], u[1]), self.m0)
    }
}

impl CoarseModel for EvacuationCoarse {
    fn dim(&self) -> usize {
        2
    }

    fn response_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let xs = Vec2::new(u[0], u[1]);
        let src = self.source(u)?;
        let velocity = steering_for_source(&self.grid, src)?;
        let hist = macroscopic::solve(&self.grid, &self.params, &velocity, &self.rho0)?;
        let j = macroscopic::spread(&self.grid, hist.last(), xs, self.m0)?;
        let terminal = macroscopic::spread_partials(&self.grid, xs, self.m0);
        let adj = backward_sweep_terminal(&self.grid, &self.params, &velocity, &hist, &terminal)?;
        let d1 = source_derivative(&self.grid, src, 0)?;
        let d2 = source_derivative(&self.grid, src, 1)?;
        let g = gradient_wrt_source(&self.grid, &velocity, &hist, &adj, [&d1, &d2])
            + macroscopic::spread_center_derivative(&self.grid, hist.last(), xs, self.m0);
        Ok((j, vec![g.x, g.y]))
    }
}

/// Particle model with reflecting walls.
#[derive(Debug, Clone)]
pub struct EvacuationFine {
    pub grid: Grid,
    pub params: MicroParams,
    pub initial: ParticleState,
    par: Parallelism,
}

impl EvacuationFine {
    pub fn field(&self, u: &[f64]) -> Result<VelocityField> {
        let src = self.grid.project_to_cell_center(Vec2::new(u[0], u[1]))?;
        let values = steering_for_source(&self.grid, src)?;
        Ok(VelocityField::Gridded(GriddedField::from_grid(&self.grid, values)))
    }

    pub fn simulate(&self, u: &[f64]) -> Result<ParticleEnsemble> {
        simulate_trajectory(&self.initial, &self.params, &self.field(u)?, self.par)
    }
}

impl FineModel for EvacuationFine {
    fn response(&self, u: &[f64]) -> Result<f64> {
        let last = simulate(&self.initial, &self.params, &self.field(u)?, self.par)?;
        Ok(observable_spread(&last.x, Vec2::new(u[0], u[1])))
    }
}

#[derive(Debug, Clone)]
pub struct Evacuation {
    pub config: EvacuationConfig,
    pub fine: EvacuationFine,
    pub par: Parallelism,
}

impl Evacuation {
    pub fn new(config: EvacuationConfig, par: Parallelism) -> Result<Self> {
        config.validate()?;
        let n_fine = step_count("dt_fine", config.horizon, config.dt_fine)?;
        let h = config.dx / config.refinement as f64;
        let grid = Grid::covering(config.domain.lo, config.domain.hi, [h, h], config.dt_coarse, 0)?
            .rasterize(&[rect_obstacle(config.obstacle)])?;
        let x0 = crowd_positions(&config.crowd, config.jitter, config.seed)?;
        for p in &x0 {
            if !config.domain.contains_open(*p) || config.obstacle.contains(*p) {
                return Err(Error::Config(format!("initial position ({}, {}) is not feasible", p.x, p.y)));
            }
        }
        let params = MicroParams {
            radius: config.radius,
            mass: config.mass,
            tau: config.tau(),
            interaction_scale: config.interaction,
            law: InteractionLaw::QuadraticOverlap { b_f: config.b_f() },
            dt: config.dt_fine,
            n_steps: n_fine,
            boundary: BoundaryMode::Reflect {
                domain: config.domain,
                obstacles: vec![config.obstacle],
            },
            outflow_x: None,
        };
        params.validate()?;
        Ok(Self {
            fine: EvacuationFine {
                grid,
                params,
                initial: ParticleState::at_rest(x0),
                par,
            },
            config,
            par,
        })
    }

    /// Density model whose obstacle and initial density are shifted by `gap`.
    pub fn coarse(&self, gap: f64) -> Result<EvacuationCoarse> {
        let c = &self.config;
        let n_coarse = step_count("dt_coarse", c.horizon, c.dt_coarse)?;
        let shift = Vec2::new(0.0, gap);
        let grid = Grid::covering(c.domain.lo, c.domain.hi, [c.dx, c.dx], c.dt_coarse, n_coarse)?
            .rasterize(&[rect_obstacle(c.obstacle.translated(shift))])?;
        let x0: Vec<Vec2> = self.fine.initial.x.iter().map(|p| *p + shift).collect();
        let rho0 = init_density(&grid, &x0, c.radius, c.smoothing.then_some(c.filter))?;
        let m0 = macroscopic::mass(&grid, &rho0);
        Ok(EvacuationCoarse {
            gap,
            grid,
            params: MacroParams::new(c.diffusion),
            rho0,
            m0,
        })
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::planar(self.config.lower, self.config.upper)
    }

    pub fn start(&self, gap: f64) -> Vec<f64> {
        let u = self.config.u0 + Vec2::new(0.0, if self.config.shift_start { gap } else { 0.0 });
        vec![u.x, u.y]
    }

    pub fn pair<'a>(&self, fine: &'a EvacuationFine, coarse: &'a EvacuationCoarse) -> Result<ModelPair<'a>> {
        Ok(ModelPair::new(
            fine,
            coarse,
            self.bounds()?,
            self.config.omega_star,
            self.config.optimum.clone(),
            self.config.extraction.clone(),
        )
        .with_grid(coarse.grid.clone())
        .with_warm_start(self.config.warm_start))
    }

    pub fn optimize_asm(&self, gap: f64) -> Result<AsmResult> {
        let coarse = self.coarse(gap)?;
        let pair = self.pair(&self.fine, &coarse)?;
        asm_optimize(&pair, &self.start(gap), &self.config.asm)
    }

    /// Adjoint vs central differences (step one cell) of `j^c` at `u`.
    pub fn gradcheck(&self, gap: f64, u: &[f64]) -> Result<Vec<GradCheck>> {
        let coarse = self.coarse(gap)?;
        let (_, g) = coarse.response_and_gradient(u)?;
        let h = self.config.dx;
        (0..2)
            .map(|l| {
                Ok(GradCheck {
                    name: format!("dJc/dxs{}", l + 1),
                    adjoint: g[l],
                    finite_difference: central_difference(|v| coarse.spread(v), u, l, h)?,
                })
            })
            .collect()
    }

    pub fn run(&self) -> Result<EvacuationReport> {
        let gaps = self.config.gaps.clone();
        let results = self.par.map_tasks(gaps.len(), |k| self.optimize_asm(gaps[k]));
        let mut runs = Vec::new();
        for (gap, r) in gaps.into_iter().zip(results) {
            runs.push((gap, r?));
        }
        Ok(EvacuationReport { runs })
    }
}

fn rect_obstacle(r: Rect) -> ObstacleSpec {
    ObstacleSpec::Rectangle { lo: r.lo, hi: r.hi }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvacuationRow {
    pub gap: f64,
    pub k: usize,
    pub u: [f64; 2],
    pub j_fine: f64,
    pub extracted: [f64; 2],
    pub j_coarse: f64,
}

#[derive(Debug, Clone)]
pub struct EvacuationReport {
    pub runs: Vec<(f64, AsmResult)>,
}

impl EvacuationReport {
    pub fn rows(&self) -> Vec<EvacuationRow> {
        let mut rows = Vec::new();
        for (gap, run) in &self.runs {
            for r in &run.records {
                rows.push(EvacuationRow {
                    gap: *gap,
                    k: r.k,
                    u: [r.u[0], r.u[1]],
                    j_fine: r.fine_response,
                    extracted: [r.extracted[0], r.extracted[1]],
                    j_coarse: r.coarse_response,
                });
            }
        }
        rows
    }

    /// One row per ASM iterate: `gap, k, u1, u2, j_fine, T1, T2, j_coarse`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["gap", "k", "u1", "u2", "j_fine", "T1", "T2", "j_coarse"])?;
        for r in self.rows() {
            w.serialize((r.gap, r.k, r.u[0], r.u[1], r.j_fine, r.extracted[0], r.extracted[1], r.j_coarse))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn converged(&self) -> bool {
        self.runs.iter().all(|(_, r)| r.status == AsmStatus::Converged)
    }
}
