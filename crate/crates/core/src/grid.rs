//! Rectangular cell grid with boundary/obstacle index sets.
//!
//! Cell `(i, j)` has center `origin + (i·dx1, j·dx2)` and covers the half-open
//! box `[c1 − dx1/2, c1 + dx1/2) × [c2 − dx2/2, c2 + dx2/2)`. The outermost ring
//! of cells is always a boundary (wall) ring. Flat storage is row-major in
//! `i`: index `i·n2 + j`.

use serde::{Deserialize, Serialize};

use crate::geom::{Rect, Segment, Vec2};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Interior,
    /// Wall or obstacle cell: no advective or diffusive exchange.
    Boundary,
    /// Open sink cell: receives advected mass but never sends it back.
    Outflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObstacleSpec {
    /// Axis-aligned rectangle given in physical coordinates.
    Rectangle { lo: Vec2, hi: Vec2 },
    /// Thin wall; cells whose centers lie within `half_thickness` of the
    /// segment are marked.
    Segment {
        a: Vec2,
        b: Vec2,
        half_thickness: f64,
    },
}

impl ObstacleSpec {
    pub fn translated(&self, offset: Vec2) -> Self {
        match *self {
            ObstacleSpec::Rectangle { lo, hi } => ObstacleSpec::Rectangle {
                lo: lo + offset,
                hi: hi + offset,
            },
            ObstacleSpec::Segment { a, b, half_thickness } => ObstacleSpec::Segment {
                a: a + offset,
                b: b + offset,
                half_thickness,
            },
        }
    }

    fn bounding_box(&self) -> Rect {
        match *self {
            ObstacleSpec::Rectangle { lo, hi } => Rect::new(lo, hi),
            ObstacleSpec::Segment { a, b, half_thickness: h } => Rect::new(
                Vec2::new(a.x.min(b.x) - h, a.y.min(b.y) - h),
                Vec2::new(a.x.max(b.x) + h, a.y.max(b.y) + h),
            ),
        }
    }

    fn covers(&self, p: Vec2) -> bool {
        match *self {
            ObstacleSpec::Rectangle { lo, hi } => Rect::new(lo, hi).contains(p),
            ObstacleSpec::Segment { a, b, half_thickness } => Segment::new(a, b).distance(p) <= half_thickness,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    origin: Vec2,
    dx: [f64; 2],
    n: [usize; 2],
    kinds: Vec<CellKind>,
    dt: f64,
    n_steps: usize,
}

impl Grid {
    /// Creates a grid whose only boundary cells are the outer frame.
    pub fn new(origin: Vec2, dx: [f64; 2], n: [usize; 2], dt: f64, n_steps: usize) -> Result<Self> {
        if !(dx[0] > 0.0 && dx[1] > 0.0) {
            return Err(Error::Config(format!("grid spacing must be positive, got {dx:?}")));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("coarse time step must be positive, got {dt}")));
        }
        if n[0] < 3 || n[1] < 3 {
            return Err(Error::Config(format!("grid needs at least 3×3 cells, got {n:?}")));
        }
        if !origin.is_finite() {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        let mut kinds = vec![CellKind::Interior; n[0] * n[1]];
        for i in 0..n[0] {
            for j in 0..n[1] {
                if i == 0 || j == 0 || i == n[0] - 1 || j == n[1] - 1 {
                    kinds[i * n[1] + j] = CellKind::Boundary;
                }
            }
        }
        Ok(Self {
            origin,
            dx,
            n,
            kinds,
            dt,
            n_steps,
        })
    }

    /// Grid covering `[lo, hi]` with cell centers at integer multiples of `dx`
    /// offset by `lo`, i.e. the first center sits at `lo` itself.
    pub fn covering(lo: Vec2, hi: Vec2, dx: [f64; 2], dt: f64, n_steps: usize) -> Result<Self> {
        let n1 = ((hi.x - lo.x) / dx[0]).round() as usize + 1;
        let n2 = ((hi.y - lo.y) / dx[1]).round() as usize + 1;
        Self::new(lo, dx, [n1, n2], dt, n_steps)
    }

    pub fn n(&self) -> [usize; 2] {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> [f64; 2] {
        self.dx
    }

    pub fn cell_area(&self) -> f64 {
        self.dx[0] * self.dx[1]
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    /// `(Δt/Δx¹, Δt/Δx²)`
    pub fn lambda(&self) -> [f64; 2] {
        [self.dt / self.dx[0], self.dt / self.dx[1]]
    }

    pub fn with_time(mut self, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("coarse time step must be positive, got {dt}")));
        }
        self.dt = dt;
        self.n_steps = n_steps;
        Ok(self)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n[1] + j
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k / self.n[1], k % self.n[1])
    }

    #[inline]
    pub fn kind(&self, k: usize) -> CellKind {
        self.kinds[k]
    }

    #[inline]
    pub fn is_boundary(&self, k: usize) -> bool {
        self.kinds[k] == CellKind::Boundary
    }

    #[inline]
    pub fn is_interior(&self, k: usize) -> bool {
        self.kinds[k] == CellKind::Interior
    }

    pub fn kinds(&self) -> &[CellKind] {
        &self.kinds
    }

    /// Indices of all boundary cells (frame and obstacles).
    pub fn boundary_cells(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .filter(|&k| self.is_boundary(k))
            .map(|k| self.coords(k))
            .collect()
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + i as f64 * self.dx[0],
            self.origin.y + j as f64 * self.dx[1],
        )
    }

    #[inline]
    pub fn center_of(&self, k: usize) -> Vec2 {
        let (i, j) = self.coords(k);
        self.center(i, j)
    }

    /// Physical extent of the union of all cells.
    pub fn extent(&self) -> Rect {
        let half = Vec2::new(0.5 * self.dx[0], 0.5 * self.dx[1]);
        let last = self.center(self.n[0] - 1, self.n[1] - 1);
        Rect::new(self.origin - half, last + half)
    }

    /// The cell containing `p` under the half-open convention.
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let fi = ((p.x - self.origin.x) / self.dx[0] + 0.5).floor();
        let fj = ((p.y - self.origin.y) / self.dx[1] + 0.5).floor();
        if !(fi >= 0.0 && fj >= 0.0) {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        (i < self.n[0] && j < self.n[1]).then_some((i, j))
    }

    /// Snaps `p` to the center of its containing cell.
    pub fn project_to_cell_center(&self, p: Vec2) -> Result<Vec2> {
        self.cell_of(p)
            .map(|(i, j)| self.center(i, j))
            .ok_or_else(|| Error::Domain(format!("point ({}, {}) lies outside the grid", p.x, p.y)))
    }

    /// Marks every cell whose center lies inside an obstacle as a boundary cell.
    pub fn rasterize(mut self, obstacles: &[ObstacleSpec]) -> Result<Self> {
        let extent = self.extent();
        for obs in obstacles {
            let bb = obs.bounding_box();
            if !bb.lo.is_finite() || !bb.hi.is_finite() || !bb.intersects(&extent) {
                return Err(Error::Config(format!("obstacle {obs:?} lies outside the domain")));
            }
            if let ObstacleSpec::Rectangle { lo, hi } = obs {
                if !(lo.x <= hi.x && lo.y <= hi.y) {
                    return Err(Error::Config(format!("degenerate rectangle obstacle {obs:?}")));
                }
            }
            for k in 0..self.len() {
                if obs.covers(self.center_of(k)) {
                    self.kinds[k] = CellKind::Boundary;
                }
            }
        }
        Ok(self)
    }

    /// Turns interior cells with center `x¹ > x_min` into outflow sinks.
    pub fn with_outflow_beyond(mut self, x_min: f64) -> Self {
        for k in 0..self.len() {
            if self.kinds[k] == CellKind::Interior && self.center_of(k).x > x_min {
                self.kinds[k] = CellKind::Outflow;
            }
        }
        self
    }

    /// Largest admissible time step for a cell velocity field.
    pub fn cfl_limit(&self, velocity: &[Vec2]) -> f64 {
        velocity
            .iter()
            .map(|v| v.x.abs() / self.dx[0] + v.y.abs() / self.dx[1])
            .fold(0.0_f64, f64::max)
            .recip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn evac_grid() -> Grid {
        Grid::covering(Vec2::new(-8.0, -8.0), Vec2::new(8.0, 8.0), [0.5, 0.5], 0.05, 100).unwrap()
    }

    #[test]
    fn projection_examples() {
        let g = evac_grid();
        assert_eq!(g.project_to_cell_center(Vec2::new(1.3, -0.4)).unwrap(), Vec2::new(1.5, -0.5));
        assert_eq!(g.project_to_cell_center(Vec2::new(1.24, -0.4)).unwrap(), Vec2::new(1.0, -0.5));
        // half-open: the right edge of the cell centered at 1.0 belongs to the next cell
        assert_eq!(g.project_to_cell_center(Vec2::new(1.25, 0.0)).unwrap(), Vec2::new(1.5, 0.0));
        let c = Vec2::new(2.5, 3.0);
        assert_eq!(g.project_to_cell_center(c).unwrap(), c);
        assert!(matches!(g.project_to_cell_center(Vec2::new(9.0, 0.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_obstacle_list_leaves_only_frame() {
        let g = evac_grid().rasterize(&[]).unwrap();
        let [n1, n2] = g.n();
        assert_eq!(g.boundary_cells().len(), 2 * n1 + 2 * n2 - 4);
    }

    #[test]
    fn evacuation_wall_rasterizes_cell_centers() {
        let wall = ObstacleSpec::Rectangle {
            lo: Vec2::new(2.0, 1.0),
            hi: Vec2::new(3.0, 8.0),
        };
        let g = evac_grid().rasterize(&[wall]).unwrap();
        let marked: BTreeSet<_> = g
            .boundary_cells()
            .into_iter()
            .map(|(i, j)| g.center(i, j))
            .filter(|c| c.x > -7.9 && c.x < 7.9 && c.y > -7.9 && c.y < 7.9)
            .map(|c| ((c.x * 2.0) as i64, (c.y * 2.0) as i64))
            .collect();
        let mut expected = BTreeSet::new();
        for x in [2.0, 2.5, 3.0] {
            let mut y: f64 = 1.0;
            while y <= 7.5 {
                expected.insert(((x * 2.0) as i64, (y * 2.0) as i64));
                y += 0.5;
            }
        }
        assert_eq!(marked, expected);
    }

    #[test]
    fn out_of_domain_obstacle_is_rejected() {
        let far = ObstacleSpec::Rectangle {
            lo: Vec2::new(20.0, 20.0),
            hi: Vec2::new(21.0, 21.0),
        };
        assert!(matches!(evac_grid().rasterize(&[far]), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_spacing_is_rejected() {
        assert!(Grid::new(Vec2::ZERO, [0.0, 1.0], [4, 4], 0.1, 1).is_err());
        assert!(Grid::new(Vec2::ZERO, [1.0, 1.0], [4, 4], -0.1, 1).is_err());
    }

    #[test]
    fn segment_wall_has_no_diagonal_leaks() {
        let g = Grid::covering(Vec2::new(-0.01, -0.01), Vec2::new(0.69, 0.41), [0.02, 0.02], 0.005, 1)
            .unwrap()
            .rasterize(&[ObstacleSpec::Segment {
                a: Vec2::new(0.35, 0.40),
                b: Vec2::new(0.55, 0.12),
                half_thickness: 0.02,
            }])
            .unwrap();
        // walking along x in each row crossed by the wall meets a boundary cell
        for j in 0..g.n()[1] {
            let y = g.center(0, j).y;
            if y < 0.14 || y > 0.39 {
                continue;
            }
            assert!((1..g.n()[0] - 1).any(|i| g.is_boundary(g.index(i, j))), "row {j} leaks");
        }
    }
}
