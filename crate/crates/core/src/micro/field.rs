use crate::geom::{Mat2, Vec2};
use crate::grid::Grid;

/// Equilibrium velocity `v̄(x)` steering the velocity-selection force.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityField {
    /// `v̄(x) = −rate · (x − center)`
    Radial { center: Vec2, rate: f64 },
    /// Spatially constant field, e.g. a conveyor belt `(v_T, 0)`.
    Uniform(Vec2),
    /// Cell-centered samples with bilinear interpolation.
    Gridded(GriddedField),
}

impl VelocityField {
    pub fn evaluate(&self, x: Vec2) -> Vec2 {
        match self {
            VelocityField::Radial { center, rate } => (x - *center) * -*rate,
            VelocityField::Uniform(v) => *v,
            VelocityField::Gridded(g) => g.evaluate(x),
        }
    }

    /// Jacobian `∂v̄/∂x` (row k = component k).
    pub fn jacobian(&self, x: Vec2) -> Mat2 {
        match self {
            VelocityField::Radial { rate, .. } => Mat2::identity().scaled(-*rate),
            VelocityField::Uniform(_) => Mat2::ZERO,
            VelocityField::Gridded(g) => g.jacobian(x),
        }
    }
}

/// Samples at the centers of a regular grid. Outside the sample hull the
/// field is extended by clamping to the nearest sample row/column.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedField {
    origin: Vec2,
    dx: [f64; 2],
    n: [usize; 2],
    values: Vec<Vec2>,
}

impl GriddedField {
    pub fn new(origin: Vec2, dx: [f64; 2], n: [usize; 2], values: Vec<Vec2>) -> Self {
        assert_eq!(values.len(), n[0] * n[1], "field sample count mismatch");
        Self { origin, dx, n, values }
    }

    pub fn from_grid(grid: &Grid, values: Vec<Vec2>) -> Self {
        Self::new(grid.origin(), grid.dx(), grid.n(), values)
    }

    pub fn values(&self) -> &[Vec2] {
        &self.values
    }

    fn locate(&self, x: Vec2) -> ([usize; 2], [f64; 2]) {
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for l in 0..2 {
            let s = ((x[l] - self.origin[l]) / self.dx[l]).clamp(0.0, (self.n[l] - 1) as f64);
            let b = (s.floor() as usize).min(self.n[l] - 2);
            base[l] = b;
            frac[l] = s - b as f64;
        }
        (base, frac)
    }

    fn at(&self, i: usize, j: usize) -> Vec2 {
        self.values[i * self.n[1] + j]
    }

    pub fn evaluate(&self, x: Vec2) -> Vec2 {
        let ([i, j], [s, t]) = self.locate(x);
        self.at(i, j) * ((1.0 - s) * (1.0 - t))
            + self.at(i + 1, j) * (s * (1.0 - t))
            + self.at(i, j + 1) * ((1.0 - s) * t)
            + self.at(i + 1, j + 1) * (s * t)
    }

    pub fn jacobian(&self, x: Vec2) -> Mat2 {
        let ([i, j], [s, t]) = self.locate(x);
        let d_ds = ((self.at(i + 1, j) - self.at(i, j)) * (1.0 - t) + (self.at(i + 1, j + 1) - self.at(i, j + 1)) * t)
            * (1.0 / self.dx[0]);
        let d_dt = ((self.at(i, j + 1) - self.at(i, j)) * (1.0 - s) + (self.at(i + 1, j + 1) - self.at(i + 1, j)) * s)
            * (1.0 / self.dx[1]);
        Mat2([[d_ds.x, d_dt.x], [d_ds.y, d_dt.y]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_reproduces_affine_fields() {
        let n = [5, 4];
        let origin = Vec2::new(-1.0, 0.5);
        let dx = [0.5, 0.25];
        let f = |p: Vec2| Vec2::new(2.0 * p.x - p.y + 1.0, 0.5 * p.y);
        let mut vals = Vec::new();
        for i in 0..n[0] {
            for j in 0..n[1] {
                vals.push(f(origin + Vec2::new(i as f64 * dx[0], j as f64 * dx[1])));
            }
        }
        let g = GriddedField::new(origin, dx, n, vals);
        let p = Vec2::new(-0.3, 0.93);
        let e = g.evaluate(p) - f(p);
        assert!(e.norm() < 1e-12);
        let jac = g.jacobian(p).0;
        assert!((jac[0][0] - 2.0).abs() < 1e-12 && (jac[0][1] + 1.0).abs() < 1e-12);
        assert!(jac[1][0].abs() < 1e-12 && (jac[1][1] - 0.5).abs() < 1e-12);
    }
}
