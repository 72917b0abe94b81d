//! Conveyor belt with a deflector: parts ride the belt `(v_T, 0)` and leave
//! past the downstream edge; the observable is the number still on the belt
//! at the final time minus the target.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{central_difference, crowd_positions, require_positive, step_count, GradCheck};
use crate::adjoint::{backward_sweep_terminal, gradient_wrt_belt};
use crate::geom::{Rect, Segment, Vec2};
use crate::grid::{Grid, ObstacleSpec};
use crate::macroscopic::{self, init_density, DensityHistory, GaussianFilter, MacroParams};
use crate::micro::{
    count_inside, simulate, simulate_trajectory, BoundaryMode, InteractionLaw, MicroParams, ParticleEnsemble,
    ParticleState, Placement, VelocityField,
};
use crate::optim::{Bounds, DescentConfig};
use crate::par::Parallelism;
use crate::spacemap::{asm_optimize, AsmConfig, AsmResult, AsmStatus, CoarseModel, FineModel, ModelPair, WarmStart};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialFlowConfig {
    pub seed: u64,
    pub horizon: f64,
    pub radius: f64,
    pub mass: f64,
    pub tau: f64,
    /// Stiffness of the part–part force.
    pub c_m: f64,
    /// Stiffness of the wall force.
    pub c_obst: f64,
    pub dt_fine: f64,
    pub dt_coarse: f64,
    pub dx: f64,
    /// Counting region `Ω`; its right edge is the outflow edge.
    pub region: Rect,
    /// Extra coarse columns past the outflow edge that collect the outflow.
    pub outflow_cells: usize,
    pub deflector: Segment,
    /// Rasterization half-thickness of the deflector (coarse model).
    pub deflector_half_thickness: f64,
    pub crowd: Vec<Placement>,
    pub jitter: f64,
    pub smoothing: bool,
    pub filter: GaussianFilter,
    /// Diffusion constants `C` to compare.
    pub diffusion: Vec<f64>,
    pub omega_star: f64,
    pub u0: f64,
    pub bounds: [f64; 2],
    pub optimum: DescentConfig,
    pub extraction: DescentConfig,
    pub warm_start: WarmStart,
    pub asm: AsmConfig,
}

impl Default for MaterialFlowConfig {
    fn default() -> Self {
        let mut search = DescentConfig::new(0.01, 0.9, 1e-5, 50);
        search.grad_tol = Some(1e-10);
        Self {
            seed: 0,
            horizon: 1.0,
            radius: 0.012,
            mass: 0.01,
            tau: 1.0,
            c_m: 200.0,
            c_obst: 1000.0,
            dt_fine: 5e-4,
            dt_coarse: 5e-3,
            dx: 0.02,
            region: Rect::new(Vec2::ZERO, Vec2::new(0.65, 0.4)),
            outflow_cells: 2,
            deflector: Segment::new(Vec2::new(0.35, 0.40), Vec2::new(0.55, 0.12)),
            deflector_half_thickness: 0.02,
            crowd: vec![Placement::HexRectangle {
                region: Rect::new(Vec2::new(0.02, 0.02), Vec2::new(0.42, 0.16)),
                count: 100,
                spacing: 0.024,
            }],
            jitter: 0.0,
            smoothing: true,
            filter: GaussianFilter::default(),
            diffusion: vec![0.0, 0.1, 0.5, 1.0],
            omega_star: 25.0,
            u0: 0.5,
            bounds: [0.0, 2.0],
            optimum: search.clone(),
            extraction: search,
            warm_start: WarmStart::Previous,
            asm: AsmConfig {
                tolerance: 1e-2,
                fine_tolerance: None,
                max_iters: 10,
                max_halvings: 10,
            },
        }
    }
}

impl MaterialFlowConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("horizon", self.horizon),
            ("radius", self.radius),
            ("mass", self.mass),
            ("tau", self.tau),
            ("c_m", self.c_m),
            ("c_obst", self.c_obst),
            ("dx", self.dx),
            ("deflector_half_thickness", self.deflector_half_thickness),
        ] {
            require_positive(name, v)?;
        }
        step_count("dt_fine", self.horizon, self.dt_fine)?;
        step_count("dt_coarse", self.horizon, self.dt_coarse)?;
        if !self.region.is_valid() {
            return Err(Error::Config("the counting region must be a nonempty rectangle".into()));
        }
        if self.outflow_cells == 0 {
            return Err(Error::Config("at least one outflow column is needed".into()));
        }
        if self.crowd.is_empty() {
            return Err(Error::Config("the crowd needs at least one placement".into()));
        }
        if self.diffusion.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::Config("diffusion constants must be nonnegative".into()));
        }
        if !(self.bounds[0] <= self.u0 && self.u0 <= self.bounds[1]) {
            return Err(Error::Config(format!("u0 = {} lies outside {:?}", self.u0, self.bounds)));
        }
        Ok(())
    }

    /// Belt side walls, the upstream wall and the deflector.
    pub fn walls(&self) -> Vec<Segment> {
        let Rect { lo, hi } = self.region;
        let end = hi.x + self.outflow_cells as f64 * self.dx;
        vec![
            Segment::new(Vec2::new(lo.x, lo.y), Vec2::new(end, lo.y)),
            Segment::new(Vec2::new(lo.x, hi.y), Vec2::new(end, hi.y)),
            Segment::new(Vec2::new(lo.x, lo.y), Vec2::new(lo.x, hi.y)),
            self.deflector,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct MaterialFlowCoarse {
    pub grid: Grid,
    pub params: MacroParams,
    pub rho0: Vec<f64>,
    region: Rect,
    n_particles: f64,
    m0: f64,
}

impl MaterialFlowCoarse {
    /// Belt velocity on interior cells; walls and outflow cells stay at rest.
    pub fn velocity(&self, belt: f64) -> Vec<Vec2> {
        (0..self.grid.len())
            .map(|k| if self.grid.is_interior(k) { Vec2::new(belt, 0.0) } else { Vec2::ZERO })
            .collect()
    }

    pub fn simulate(&self, belt: f64) -> Result<DensityHistory> {
        macroscopic::solve(&self.grid, &self.params, &self.velocity(belt), &self.rho0)
    }

    /// Expected number of parts in the region at the final time.
    pub fn count(&self, belt: f64) -> Result<f64> {
        let hist = self.simulate(belt)?;
        macroscopic::count(&self.grid, hist.last(), &self.region, self.n_particles, self.m0)
    }
}

impl CoarseModel for MaterialFlowCoarse {
    fn dim(&self) -> usize {
        1
    }

    fn response_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let velocity = self.velocity(u[0]);
        let hist = macroscopic::solve(&self.grid, &self.params, &velocity, &self.rho0)?;
        let j = macroscopic::count(&self.grid, hist.last(), &self.region, self.n_particles, self.m0)?;
        let terminal = macroscopic::count_partials(&self.grid, &self.region, self.n_particles, self.m0);
        let adj = backward_sweep_terminal(&self.grid, &self.params, &velocity, &hist, &terminal)?;
        Ok((j, vec![gradient_wrt_belt(&self.grid, &velocity, &hist, &adj)]))
    }
}

#[derive(Debug, Clone)]
pub struct MaterialFlowFine {
    pub params: MicroParams,
    pub initial: ParticleState,
    region: Rect,
    par: Parallelism,
}

impl MaterialFlowFine {
    pub fn simulate(&self, belt: f64) -> Result<ParticleEnsemble> {
        simulate_trajectory(&self.initial, &self.params, &belt_field(belt), self.par)
    }
}

impl FineModel for MaterialFlowFine {
    fn response(&self, u: &[f64]) -> Result<f64> {
        let last = simulate(&self.initial, &self.params, &belt_field(u[0]), self.par)?;
        Ok(count_inside(&last.x, &self.region))
    }
}

fn belt_field(belt: f64) -> VelocityField {
    VelocityField::Uniform(Vec2::new(belt, 0.0))
}

#[derive(Debug, Clone)]
pub struct MaterialFlow {
    pub config: MaterialFlowConfig,
    pub fine: MaterialFlowFine,
    pub par: Parallelism,
}

impl MaterialFlow {
    pub fn new(config: MaterialFlowConfig, par: Parallelism) -> Result<Self> {
        config.validate()?;
        let n_fine = step_count("dt_fine", config.horizon, config.dt_fine)?;
        let x0 = crowd_positions(&config.crowd, config.jitter, config.seed)?;
        let walls = config.walls();
        for p in &x0 {
            if !config.region.contains_open(*p) || walls.iter().any(|w| w.distance(*p) < config.radius) {
                return Err(Error::Config(format!(
                    "initial position ({}, {}) overlaps a wall or lies outside the belt",
                    p.x, p.y
                )));
            }
        }
        let params = MicroParams {
            radius: config.radius,
            mass: config.mass,
            tau: config.tau,
            interaction_scale: 1.0,
            law: InteractionLaw::LinearOverlap { c_m: config.c_m },
            dt: config.dt_fine,
            n_steps: n_fine,
            boundary: BoundaryMode::SoftObstacle {
                walls,
                c_obst: config.c_obst,
            },
            outflow_x: Some(config.region.hi.x),
        };
        params.validate()?;
        Ok(Self {
            fine: MaterialFlowFine {
                params,
                initial: ParticleState::at_rest(x0),
                region: config.region,
                par,
            },
            config,
            par,
        })
    }

    pub fn coarse(&self, c: f64) -> Result<MaterialFlowCoarse> {
        let cfg = &self.config;
        let n_coarse = step_count("dt_coarse", cfg.horizon, cfg.dt_coarse)?;
        let Rect { lo, hi } = cfg.region;
        // counted columns, the outflow columns, then the closing wall
        let inside = ((hi.x - lo.x) / cfg.dx + 1e-9).floor() as usize + 1;
        let rows = ((hi.y - lo.y) / cfg.dx).round() as usize + 1;
        let n = [inside + cfg.outflow_cells + 1, rows];
        let grid = Grid::new(lo, [cfg.dx, cfg.dx], n, cfg.dt_coarse, n_coarse)?
            .rasterize(&[ObstacleSpec::Segment {
                a: cfg.deflector.a,
                b: cfg.deflector.b,
                half_thickness: cfg.deflector_half_thickness,
            }])?
            .with_outflow_beyond(hi.x);
        let rho0 = init_density(&grid, &self.fine.initial.x, cfg.radius, cfg.smoothing.then_some(cfg.filter))?;
        let m0 = macroscopic::mass(&grid, &rho0);
        let params = MacroParams::new(c);
        params.validate()?;
        let coarse = MaterialFlowCoarse {
            grid,
            params,
            rho0,
            region: cfg.region,
            n_particles: self.fine.initial.len() as f64,
            m0,
        };
        macroscopic::check_cfl(&coarse.grid, &coarse.velocity(cfg.bounds[1]))?;
        Ok(coarse)
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::scalar(self.config.bounds[0], self.config.bounds[1])
    }

    pub fn optimize_asm(&self, c: f64) -> Result<AsmResult> {
        let coarse = self.coarse(c)?;
        let pair = ModelPair::new(
            &self.fine,
            &coarse,
            self.bounds()?,
            self.config.omega_star,
            self.config.optimum.clone(),
            self.config.extraction.clone(),
        )
        .with_warm_start(self.config.warm_start);
        asm_optimize(&pair, &[self.config.u0], &self.config.asm)
    }

    pub fn gradcheck(&self, c: f64, u: f64, h: f64) -> Result<Vec<GradCheck>> {
        let coarse = self.coarse(c)?;
        let (_, g) = coarse.response_and_gradient(&[u])?;
        Ok(vec![GradCheck {
            name: "dJc/dvT".into(),
            adjoint: g[0],
            finite_difference: central_difference(|v| coarse.count(v[0]), &[u], 0, h)?,
        }])
    }

    pub fn run(&self) -> Result<MaterialFlowReport> {
        let cs = self.config.diffusion.clone();
        let results = self.par.map_tasks(cs.len(), |k| self.optimize_asm(cs[k]));
        let mut runs = Vec::new();
        for (c, r) in cs.into_iter().zip(results) {
            runs.push((c, r?));
        }
        Ok(MaterialFlowReport {
            omega_star: self.config.omega_star,
            runs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaterialFlowRow {
    pub c: f64,
    pub u_coarse: f64,
    pub u_asm: f64,
    /// `j^f(u_*^ASM)`, the count minus the target.
    pub j_fine: f64,
    pub iterations: usize,
    pub distance: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MaterialFlowReport {
    pub omega_star: f64,
    pub runs: Vec<(f64, AsmResult)>,
}

impl MaterialFlowReport {
    pub fn rows(&self) -> Vec<MaterialFlowRow> {
        self.runs
            .iter()
            .map(|(c, r)| {
                let last = r.records.last().expect("ASM records the first extraction");
                MaterialFlowRow {
                    c: *c,
                    u_coarse: r.u_star_coarse()[0],
                    u_asm: r.u[0],
                    j_fine: last.fine_response - self.omega_star,
                    iterations: r.iterations(),
                    distance: last.distance,
                    converged: r.status == AsmStatus::Converged,
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["C", "u_coarse", "u_asm", "j_fine", "iterations", "distance"])?;
        for r in self.rows() {
            w.serialize((r.c, r.u_coarse, r.u_asm, r.j_fine, r.iterations, r.distance))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn converged(&self) -> bool {
        self.runs.iter().all(|(_, r)| r.status == AsmStatus::Converged)
    }
}
