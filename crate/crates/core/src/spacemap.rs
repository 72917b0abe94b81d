//! Parameter extraction and aggressive space mapping (ASM).

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::grid::Grid;
use crate::optim::{ncg_minimize, Bounds, DescentConfig, Minimization, Objective, Status};
use crate::{Error, Result};

/// Control-to-observable map of the fine model, `u ↦ 𝒢^f(u)`.
pub trait FineModel: Sync {
    fn response(&self, u: &[f64]) -> Result<f64>;
}

/// Control-to-observable map of the coarse model with its adjoint gradient.
pub trait CoarseModel: Sync {
    fn dim(&self) -> usize;

    /// `(𝒢^c(u), ∇𝒢^c(u))`
    fn response_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn response(&self, u: &[f64]) -> Result<f64> {
        Ok(self.response_and_gradient(u)?.0)
    }
}

/// `½ (𝒢^c(u) − target)²`
pub struct MatchTarget<'a> {
    pub model: &'a dyn CoarseModel,
    pub target: f64,
}

impl Objective for MatchTarget<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn evaluate(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (g, grad) = self.model.response_and_gradient(u)?;
        let r = g - self.target;
        Ok((0.5 * r * r, grad.into_iter().map(|x| r * x).collect()))
    }
}

/// Where each parameter extraction starts its coarse optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmStart {
    /// From the previous extraction result `𝒯(u_{k−1})`.
    #[default]
    Previous,
    /// Always from the coarse optimum `u_*^c`.
    CoarseOptimum,
}

/// Fine and coarse models over a shared admissible set.
pub struct ModelPair<'a> {
    pub fine: &'a dyn FineModel,
    pub coarse: &'a dyn CoarseModel,
    pub bounds: Bounds,
    /// Target observable value `ω*`.
    pub omega_star: f64,
    /// Settings for the coarse optimization `u_*^c`.
    pub optimum: DescentConfig,
    /// Settings for each parameter extraction.
    pub extraction: DescentConfig,
    /// Restricts controls to the cell centers of this grid.
    pub grid: Option<Grid>,
    pub warm_start: WarmStart,
    fine_evaluations: AtomicUsize,
}

impl<'a> ModelPair<'a> {
    pub fn new(
        fine: &'a dyn FineModel,
        coarse: &'a dyn CoarseModel,
        bounds: Bounds,
        omega_star: f64,
        optimum: DescentConfig,
        extraction: DescentConfig,
    ) -> Self {
        Self {
            fine,
            coarse,
            bounds,
            omega_star,
            optimum,
            extraction,
            grid: None,
            warm_start: WarmStart::default(),
            fine_evaluations: AtomicUsize::new(0),
        }
    }

    pub fn with_grid(mut self, grid: Grid) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn with_warm_start(mut self, warm_start: WarmStart) -> Self {
        self.warm_start = warm_start;
        self
    }

    /// Number of fine-model solves so far.
    pub fn fine_evaluations(&self) -> usize {
        self.fine_evaluations.load(Ordering::Relaxed)
    }

    fn fine_response(&self, u: &[f64]) -> Result<f64> {
        self.fine_evaluations.fetch_add(1, Ordering::Relaxed);
        self.fine.response(u)
    }

    /// Maps `u` into the admissible set (and onto the grid when set).
    pub fn admissible(&self, u: &[f64]) -> Result<Vec<f64>> {
        let p = self.bounds.project(u);
        match &self.grid {
            None => Ok(p),
            Some(g) => {
                let c = g.project_to_cell_center(Vec2::new(p[0], p[1]))?;
                Ok(vec![c.x, c.y])
            }
        }
    }

    /// `u_*^c = argmin ½ (𝒢^c(u) − ω*)²`
    pub fn coarse_optimum(&self, u0: &[f64]) -> Result<Minimization> {
        let obj = MatchTarget {
            model: self.coarse,
            target: self.omega_star,
        };
        ncg_minimize(&obj, u0, &self.bounds, &self.optimum, self.grid.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct Extraction {
    /// `𝒯(u_f)`
    pub u: Vec<f64>,
    pub fine_response: f64,
    pub coarse_response: f64,
    pub minimization: Minimization,
}

/// `𝒯(u_f) = argmin_u ½ (𝒢^c(u) − 𝒢^f(u_f))²`, one fine solve per call.
pub fn parameter_extraction(pair: &ModelPair<'_>, u_f: &[f64], u_start: &[f64]) -> Result<Extraction> {
    let fine_response = pair.fine_response(u_f)?;
    let obj = MatchTarget {
        model: pair.coarse,
        target: fine_response,
    };
    let min = ncg_minimize(&obj, u_start, &pair.bounds, &pair.extraction, pair.grid.as_ref())?;
    if min.status == Status::MaxIters {
        return Err(Error::Extraction { trace: min.trace });
    }
    let coarse_response = pair.coarse.response(&min.u)?;
    Ok(Extraction {
        u: min.u.clone(),
        fine_response,
        coarse_response,
        minimization: min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AsmStatus {
    Converged,
    /// No step size decreased the extraction distance.
    Stagnated,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsmRecord {
    pub k: usize,
    pub u: Vec<f64>,
    /// `𝒯(u_k)`
    pub extracted: Vec<f64>,
    /// `𝒢^f(u_k)`
    pub fine_response: f64,
    /// `𝒢^c(𝒯(u_k))`
    pub coarse_response: f64,
    /// `‖𝒯(u_k) − u_*^c‖₂`
    pub distance: f64,
    /// Step that produced `u_k` (zero for `k = 1`).
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsmConfig {
    /// Stop once `‖𝒯(u_k) − u_*^c‖₂ ≤ tolerance`.
    pub tolerance: f64,
    /// Also stop once `½ (𝒢^f(u_k) − ω*)² < fine_tolerance`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine_tolerance: Option<f64>,
    pub max_iters: usize,
    /// Smallest step is `2^{−max_halvings}`.
    pub max_halvings: u32,
}

impl Default for AsmConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-5,
            fine_tolerance: None,
            max_iters: 20,
            max_halvings: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AsmResult {
    /// Final fine control.
    pub u: Vec<f64>,
    pub coarse_optimum: Minimization,
    pub status: AsmStatus,
    pub records: Vec<AsmRecord>,
    pub fine_evaluations: usize,
}

impl AsmResult {
    pub fn u_star_coarse(&self) -> &[f64] {
        &self.coarse_optimum.u
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// CSV with columns `k, u…, T…, j_fine, j_coarse_extracted, sigma`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let dim = self.coarse_optimum.u.len();
        let mut header = vec!["k".to_string()];
        header.extend((1..=dim).map(|i| format!("u{i}")));
        header.extend((1..=dim).map(|i| format!("T{i}")));
        header.extend(["j_fine", "j_coarse_extracted", "sigma"].map(String::from));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.k.to_string()];
            row.extend(r.u.iter().map(|x| x.to_string()));
            row.extend(r.extracted.iter().map(|x| x.to_string()));
            row.extend([r.fine_response.to_string(), r.coarse_response.to_string(), r.sigma.to_string()]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Aggressive space mapping from `u0`.
pub fn asm_optimize(pair: &ModelPair<'_>, u0: &[f64], cfg: &AsmConfig) -> Result<AsmResult> {
    let coarse_optimum = pair.coarse_optimum(u0)?;
    if !coarse_optimum.status.is_success() {
        log::warn!("coarse optimization ended with status {:?}", coarse_optimum.status);
    }
    let u_star = coarse_optimum.u.clone();
    let start_for = |prev: &[f64]| match pair.warm_start {
        WarmStart::Previous => prev.to_vec(),
        WarmStart::CoarseOptimum => u_star.clone(),
    };
    let mut u = u_star.clone();
    let mut ext = parameter_extraction(pair, &u, &u_star)?;
    let mut dist = distance(&ext.u, &u_star);
    let mut records = vec![AsmRecord {
        k: 1,
        u: u.clone(),
        extracted: ext.u.clone(),
        fine_response: ext.fine_response,
        coarse_response: ext.coarse_response,
        distance: dist,
        sigma: 0.0,
    }];
    let fine_done = |e: &Extraction| {
        cfg.fine_tolerance
            .is_some_and(|t| 0.5 * (e.fine_response - pair.omega_star).powi(2) < t)
    };
    let status = loop {
        if dist <= cfg.tolerance || fine_done(&ext) {
            break AsmStatus::Converged;
        }
        if records.len() >= cfg.max_iters {
            break AsmStatus::MaxIters;
        }
        let d: Vec<f64> = ext.u.iter().zip(&u_star).map(|(t, s)| s - t).collect();
        let mut accepted = None;
        for h in 0..=cfg.max_halvings {
            let sigma = 0.5f64.powi(h as i32);
            let raw: Vec<f64> = u.iter().zip(&d).map(|(x, d)| x + sigma * d).collect();
            let trial = pair.admissible(&raw)?;
            if trial == u {
                continue;
            }
            let trial_ext = match parameter_extraction(pair, &trial, &start_for(&ext.u)) {
                Ok(e) => e,
                Err(Error::Domain(msg)) => {
                    log::debug!("ASM step {sigma} rejected: {msg}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let trial_dist = distance(&trial_ext.u, &u_star);
            if trial_dist <= dist {
                accepted = Some((trial, trial_ext, trial_dist, sigma));
                break;
            }
        }
        let Some((nu, next, nd, sigma)) = accepted else {
            break AsmStatus::Stagnated;
        };
        u = nu;
        ext = next;
        dist = nd;
        records.push(AsmRecord {
            k: records.len() + 1,
            u: u.clone(),
            extracted: ext.u.clone(),
            fine_response: ext.fine_response,
            coarse_response: ext.coarse_response,
            distance: dist,
            sigma,
        });
    };
    Ok(AsmResult {
        u,
        coarse_optimum,
        status,
        records,
        fine_evaluations: pair.fine_evaluations(),
    })
}
