//! Nonlinear conjugate gradients (Dai–Yuan) with an Armijo/Wolfe line search
//! on a box, optionally restricted to grid cell centers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::grid::Grid;
use crate::{Error, Result};

/// A differentiable objective on `ℝ^d`.
pub trait Objective {
    fn dim(&self) -> usize;

    /// `(J(u), ∇J(u))`
    fn evaluate(&self, u: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for (usize, F)
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn evaluate(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.1)(u)
    }
}

/// Componentwise box `lower ≤ u ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn scalar(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn planar(lower: Vec2, upper: Vec2) -> Result<Self> {
        Self::new(lower.to_array().to_vec(), upper.to_array().to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::Config("bounds need matching, nonempty lower and upper vectors".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Config(format!(
                "empty box: lower {:?}, upper {:?}",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        project_box(u, self)
    }
}

/// Componentwise clamp into the box.
pub fn project_box(u: &[f64], bounds: &Bounds) -> Vec<f64> {
    u.iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|(x, (l, h))| x.clamp(*l, *h))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaRule {
    /// `‖∇J_{k+1}‖² / d_kᵀ(∇J_{k+1} − ∇J_k)`
    #[default]
    DaiYuan,
    /// Same with the numerator norm not squared.
    DaiYuanUnsquared,
}

fn default_floor() -> f64 {
    2f64.powi(-40)
}

fn default_trials() -> usize {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescentConfig {
    pub c1: f64,
    pub c2: f64,
    /// Stop once `|J(u_k)| < tol`.
    pub tol: f64,
    /// Additionally stop once the projected gradient norm drops below this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    pub max_iters: usize,
    #[serde(default)]
    pub beta: BetaRule,
    #[serde(default = "default_floor")]
    pub step_floor: f64,
    #[serde(default = "default_trials")]
    pub max_trials: usize,
}

impl DescentConfig {
    pub fn new(c1: f64, c2: f64, tol: f64, max_iters: usize) -> Self {
        Self {
            c1,
            c2,
            tol,
            grad_tol: None,
            max_iters,
            beta: BetaRule::default(),
            step_floor: default_floor(),
            max_trials: default_trials(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!(
                "line search needs 0 ≤ c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if !(self.tol >= 0.0) || !(self.step_floor > 0.0) {
            return Err(Error::Config("tolerance and step floor must be nonnegative/positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    /// `|J| < tol`
    Converged,
    /// Projected gradient vanished (or fell below `grad_tol`), or no grid
    /// neighbor along the search direction improves `J`.
    Stationary,
    /// The line search found no decrease above the step floor.
    Stalled,
    MaxIters,
}

impl Status {
    pub fn is_success(self) -> bool {
        matches!(self, Status::Converged | Status::Stationary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub k: usize,
    pub u: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    /// Step accepted to reach `u` (zero for the start point).
    pub sigma: f64,
    /// Set when the accepted step failed the curvature condition.
    pub wolfe_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Trace {
    pub records: Vec<Record>,
}

impl Trace {
    /// CSV with columns `k, u1[, u2, …], J, grad_norm, sigma`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let dim = self.records.first().map_or(1, |r| r.u.len());
        let mut header = vec!["k".to_string()];
        header.extend((1..=dim).map(|i| format!("u{i}")));
        header.extend(["J", "grad_norm", "sigma"].map(String::from));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.k.to_string()];
            row.extend(r.u.iter().map(|x| x.to_string()));
            row.extend([r.value.to_string(), r.grad_norm.to_string(), r.sigma.to_string()]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Minimization {
    pub u: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub status: Status,
    pub trace: Trace,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Zeroes components that would leave the box from an active bound.
fn restrict_direction(d: &mut [f64], u: &[f64], bounds: &Bounds) {
    for i in 0..d.len() {
        if (u[i] <= bounds.lower[i] && d[i] < 0.0) || (u[i] >= bounds.upper[i] && d[i] > 0.0) {
            d[i] = 0.0;
        }
    }
}

fn projected_gradient(g: &[f64], u: &[f64], bounds: &Bounds) -> Vec<f64> {
    let mut d: Vec<f64> = g.iter().map(|x| -x).collect();
    restrict_direction(&mut d, u, bounds);
    d.iter().map(|x| -x).collect()
}

struct Point {
    u: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
}

struct Accepted {
    point: Point,
    sigma: f64,
    wolfe_failed: bool,
}

/// Snaps each iterate to a cell center of `grid` (planar controls only).
fn snap(u: Vec<f64>, grid: Option<&Grid>) -> Result<Vec<f64>> {
    match grid {
        None => Ok(u),
        Some(g) => {
            let p = g.project_to_cell_center(Vec2::new(u[0], u[1]))?;
            Ok(vec![p.x, p.y])
        }
    }
}

fn line_search(
    problem: &dyn Objective,
    current: &Point,
    d: &[f64],
    bounds: &Bounds,
    cfg: &DescentConfig,
    grid: Option<&Grid>,
    evaluations: &mut usize,
) -> Result<Option<Accepted>> {
    let slope = dot(&current.gradient, d);
    let mut sigma = 1.0;
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut best_armijo: Option<Accepted> = None;
    let mut best_decrease: Option<Accepted> = None;
    for _ in 0..cfg.max_trials {
        if sigma < cfg.step_floor || !sigma.is_finite() {
            break;
        }
        let raw: Vec<f64> = current.u.iter().zip(d).map(|(u, d)| u + sigma * d).collect();
        let clipped = bounds.project(&raw);
        let saturated = clipped != raw;
        let trial = snap(clipped, grid)?;
        let step: Vec<f64> = trial.iter().zip(&current.u).map(|(a, b)| a - b).collect();
        if step.iter().all(|s| *s == 0.0) {
            if saturated && grid.is_none() {
                break;
            }
            // too short to leave the current cell
            lo = sigma;
            sigma = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * sigma };
            if sigma > 1e12 {
                break;
            }
            continue;
        }
        let (value, gradient) = match problem.evaluate(&trial) {
            Ok(r) => r,
            Err(Error::Domain(msg)) => {
                // infeasible control (e.g. a source inside an obstacle): shorten
                log::debug!("line search trial rejected: {msg}");
                hi = sigma;
                sigma = if lo > 0.0 { 0.5 * (lo + hi) } else { 0.5 * sigma };
                continue;
            }
            Err(e) => return Err(e),
        };
        *evaluations += 1;
        let point = Point {
            u: trial,
            value,
            gradient,
        };
        let decrease = dot(&current.gradient, &step);
        let armijo = if grid.is_some() {
            value < current.value
        } else {
            value <= current.value + cfg.c1 * decrease.min(0.0) && value.is_finite()
        };
        if !armijo {
            if value < current.value && best_decrease.as_ref().map_or(true, |b| value < b.point.value) {
                best_decrease = Some(Accepted {
                    point,
                    sigma,
                    wolfe_failed: true,
                });
            }
            hi = sigma;
            sigma = if lo > 0.0 { 0.5 * (lo + hi) } else { 0.5 * sigma };
            continue;
        }
        let wolfe = dot(&point.gradient, d) >= cfg.c2 * slope;
        if wolfe || saturated {
            return Ok(Some(Accepted {
                point,
                sigma,
                wolfe_failed: !wolfe,
            }));
        }
        if best_armijo.as_ref().map_or(true, |b| point.value < b.point.value) {
            best_armijo = Some(Accepted {
                point,
                sigma,
                wolfe_failed: true,
            });
        }
        lo = sigma;
        sigma = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * sigma };
    }
    Ok(best_armijo.or(best_decrease))
}

/// Minimizes `problem` over `bounds` from `start`. With `grid` set, every
/// iterate is snapped to the nearest cell center and steps must strictly
/// decrease `J`.
pub fn ncg_minimize(
    problem: &dyn Objective,
    start: &[f64],
    bounds: &Bounds,
    cfg: &DescentConfig,
    grid: Option<&Grid>,
) -> Result<Minimization> {
    cfg.validate()?;
    bounds.validate()?;
    if start.len() != bounds.dim() || problem.dim() != bounds.dim() {
        return Err(Error::Config("control dimension does not match the bounds".into()));
    }
    if grid.is_some() && bounds.dim() != 2 {
        return Err(Error::Config("grid projection needs a planar control".into()));
    }
    let u0 = snap(bounds.project(start), grid)?;
    let (value, gradient) = problem.evaluate(&u0)?;
    let mut evaluations = 1;
    let mut current = Point { u: u0, value, gradient };
    let mut trace = Trace::default();
    let mut pg = projected_gradient(&current.gradient, &current.u, bounds);
    trace.records.push(Record {
        k: 0,
        u: current.u.clone(),
        value: current.value,
        grad_norm: norm(&pg),
        sigma: 0.0,
        wolfe_failed: false,
    });
    let mut d: Vec<f64> = pg.iter().map(|g| -g).collect();
    let mut status = Status::MaxIters;
    for k in 1..=cfg.max_iters + 1 {
        if current.value.abs() < cfg.tol {
            status = Status::Converged;
            break;
        }
        let gnorm = norm(&pg);
        if gnorm == 0.0 || cfg.grad_tol.is_some_and(|t| gnorm <= t) {
            status = Status::Stationary;
            break;
        }
        if k > cfg.max_iters {
            break;
        }
        restrict_direction(&mut d, &current.u, bounds);
        if !(dot(&d, &current.gradient) < 0.0) {
            d = pg.iter().map(|g| -g).collect();
        }
        let accepted = line_search(problem, &current, &d, bounds, cfg, grid, &mut evaluations)?;
        let Some(acc) = accepted else {
            // one steepest-descent retry before giving up
            let sd: Vec<f64> = pg.iter().map(|g| -g).collect();
            if sd != d {
                d = sd;
                continue;
            }
            status = if grid.is_some() { Status::Stationary } else { Status::Stalled };
            break;
        };
        if acc.wolfe_failed {
            log::debug!("iteration {k}: accepted step {} without the curvature condition", acc.sigma);
        }
        let y: Vec<f64> = acc.point.gradient.iter().zip(&current.gradient).map(|(a, b)| a - b).collect();
        let denom = dot(&d, &y);
        let gnew = norm(&acc.point.gradient);
        let num = match cfg.beta {
            BetaRule::DaiYuan => gnew * gnew,
            BetaRule::DaiYuanUnsquared => gnew,
        };
        let beta = if denom > 0.0 { num / denom } else { 0.0 };
        current = acc.point;
        pg = projected_gradient(&current.gradient, &current.u, bounds);
        d = current
            .gradient
            .iter()
            .zip(&d)
            .map(|(g, dk)| -g + beta * dk)
            .collect();
        trace.records.push(Record {
            k,
            u: current.u.clone(),
            value: current.value,
            grad_norm: norm(&pg),
            sigma: acc.sigma,
            wolfe_failed: acc.wolfe_failed,
        });
    }
    Ok(Minimization {
        u: current.u,
        value: current.value,
        gradient: current.gradient,
        status,
        trace,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(target: f64) -> (usize, impl Fn(&[f64]) -> Result<(f64, Vec<f64>)>) {
        (1, move |u: &[f64]| Ok((0.5 * (u[0] - target).powi(2), vec![u[0] - target])))
    }

    #[test]
    fn box_projection_examples() {
        let b = Bounds::scalar(0.0, 10.0).unwrap();
        assert_eq!(project_box(&[4.0], &b), vec![4.0]);
        assert_eq!(project_box(&[12.0], &b), vec![10.0]);
        let e = Bounds::planar(Vec2::new(-8.0, -8.0), Vec2::new(2.0, 8.0)).unwrap();
        assert_eq!(project_box(&[-9.0, 5.0], &e), vec![-8.0, 5.0]);
    }

    #[test]
    fn one_dimensional_quadratic() {
        let p = quad(2.0);
        let b = Bounds::scalar(0.0, 10.0).unwrap();
        let mut cfg = DescentConfig::new(1e-4, 0.9, 1e-14, 30);
        cfg.grad_tol = Some(1e-9);
        let r = ncg_minimize(&p, &[0.0], &b, &cfg, None).unwrap();
        assert!(r.status.is_success());
        assert!((r.u[0] - 2.0).abs() < 1e-6);
        assert!(r.trace.records.len() <= 31);
    }

    #[test]
    fn start_at_stationary_point() {
        let p = quad(2.0);
        let b = Bounds::scalar(0.0, 10.0).unwrap();
        let r = ncg_minimize(&p, &[2.0], &b, &DescentConfig::new(1e-4, 0.9, 1e-12, 30), None).unwrap();
        assert_eq!(r.trace.records.len(), 1);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn optimum_outside_the_box_stops_at_the_bound() {
        let p = quad(15.0);
        let b = Bounds::scalar(0.0, 10.0).unwrap();
        let r = ncg_minimize(&p, &[3.0], &b, &DescentConfig::new(1e-4, 0.9, 1e-12, 30), None).unwrap();
        assert_eq!(r.u, vec![10.0]);
        assert_eq!(r.status, Status::Stationary);
    }

    #[test]
    fn grid_mode_visits_cell_centers_only() {
        let g = Grid::covering(Vec2::new(-8.0, -8.0), Vec2::new(8.0, 8.0), [0.5, 0.5], 0.05, 1).unwrap();
        let target = Vec2::new(1.3, -0.7);
        let p = (2, move |u: &[f64]| {
            let d = Vec2::new(u[0], u[1]) - target;
            Ok((0.5 * d.norm_sq(), vec![d.x, d.y]))
        });
        let b = Bounds::planar(Vec2::new(-8.0, -8.0), Vec2::new(2.0, 8.0)).unwrap();
        let mut cfg = DescentConfig::new(0.0, 0.9, 1e-12, 50);
        cfg.grad_tol = Some(1e-12);
        let r = ncg_minimize(&p, &[-5.0, 6.0], &b, &cfg, Some(&g)).unwrap();
        for w in r.trace.records.windows(2) {
            assert!(w[1].value < w[0].value);
        }
        for rec in &r.trace.records {
            let c = g.project_to_cell_center(Vec2::new(rec.u[0], rec.u[1])).unwrap();
            assert_eq!(vec![c.x, c.y], rec.u);
        }
        assert_eq!(r.u, vec![1.5, -0.5]);
    }
}
