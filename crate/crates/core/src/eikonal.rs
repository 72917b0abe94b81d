//! First-order fast marching for `|∇T| = 1` with a point source, and the
//! steering field derived from it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geom::Vec2;
use crate::grid::Grid;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeField {
    pub values: Vec<f64>,
    /// Source location snapped to its cell center.
    pub source: Vec2,
    pub source_cell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Trial {
    t: f64,
    k: usize,
}

impl Eq for Trial {}

impl Ord for Trial {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on t, ties broken by index for determinism
        other.t.total_cmp(&self.t).then_with(|| other.k.cmp(&self.k))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn neighbors(grid: &Grid, k: usize) -> [Option<usize>; 4] {
    let (i, j) = grid.coords(k);
    let [n1, n2] = grid.n();
    [
        (i > 0).then(|| grid.index(i - 1, j)),
        (i + 1 < n1).then(|| grid.index(i + 1, j)),
        (j > 0).then(|| grid.index(i, j - 1)),
        (j + 1 < n2).then(|| grid.index(i, j + 1)),
    ]
}

/// Upwind quadratic update from the accepted neighbors of `k`.
fn local_update(grid: &Grid, values: &[f64], accepted: &[bool], k: usize) -> f64 {
    let nb = neighbors(grid, k);
    let pick = |a: Option<usize>, b: Option<usize>| {
        [a, b]
            .into_iter()
            .flatten()
            .filter(|&m| accepted[m])
            .map(|m| values[m])
            .fold(f64::INFINITY, f64::min)
    };
    let tx = pick(nb[0], nb[1]);
    let ty = pick(nb[2], nb[3]);
    let [hx, hy] = grid.dx();
    match (tx.is_finite(), ty.is_finite()) {
        (true, false) => tx + hx,
        (false, true) => ty + hy,
        (false, false) => f64::INFINITY,
        (true, true) => {
            // (T − tx)²/hx² + (T − ty)²/hy² = 1
            let (a, b) = (1.0 / (hx * hx), 1.0 / (hy * hy));
            let qa = a + b;
            let qb = -2.0 * (a * tx + b * ty);
            let qc = a * tx * tx + b * ty * ty - 1.0;
            let disc = qb * qb - 4.0 * qa * qc;
            let t = if disc >= 0.0 {
                (-qb + disc.sqrt()) / (2.0 * qa)
            } else {
                f64::NEG_INFINITY
            };
            if t >= tx.max(ty) {
                t
            } else {
                (tx + hx).min(ty + hy)
            }
        }
    }
}

/// Fast marching over the non-wall cells of `grid` from the cell containing
/// `source`. Wall and obstacle cells get twice the domain diameter, smoothed
/// once with their neighbors, so the field is finite everywhere.
pub fn solve_eikonal(grid: &Grid, source: Vec2) -> Result<TravelTimeField> {
    let (si, sj) = grid
        .cell_of(source)
        .ok_or_else(|| Error::Domain(format!("source ({}, {}) lies outside the grid", source.x, source.y)))?;
    let s = grid.index(si, sj);
    if grid.is_boundary(s) {
        return Err(Error::Domain(format!(
            "source ({}, {}) lies inside a wall or obstacle",
            source.x, source.y
        )));
    }
    let n = grid.len();
    let mut values = vec![f64::INFINITY; n];
    let mut accepted = vec![false; n];
    let mut heap = BinaryHeap::new();
    values[s] = 0.0;
    heap.push(Trial { t: 0.0, k: s });
    let mut last = 0.0_f64;
    while let Some(Trial { t, k }) = heap.pop() {
        if accepted[k] || t > values[k] {
            continue;
        }
        assert!(t >= last - 1e-12, "fast marching accepted {t} after {last}");
        last = t;
        accepted[k] = true;
        for m in neighbors(grid, k).into_iter().flatten() {
            if accepted[m] || grid.is_boundary(m) {
                continue;
            }
            let cand = local_update(grid, &values, &accepted, m);
            if cand < values[m] {
                values[m] = cand;
                heap.push(Trial { t: cand, k: m });
            }
        }
    }
    let ext = grid.extent();
    let fill = 2.0 * (ext.hi - ext.lo).norm();
    for k in 0..n {
        if !values[k].is_finite() {
            if !grid.is_boundary(k) {
                log::warn!("cell {:?} is unreachable from the source", grid.coords(k));
            }
            values[k] = fill;
        }
    }
    let before = values.clone();
    for k in 0..n {
        if grid.is_boundary(k) {
            let nb: Vec<f64> = neighbors(grid, k).into_iter().flatten().map(|m| before[m]).collect();
            values[k] = nb.iter().sum::<f64>() / nb.len() as f64;
        }
    }
    Ok(TravelTimeField {
        values,
        source: grid.center(si, sj),
        source_cell: s,
    })
}

/// `∇T` at every open cell: central differences, one-sided where a neighbor
/// is a wall; zero on walls.
pub fn travel_time_gradient(grid: &Grid, ttf: &TravelTimeField) -> Vec<Vec2> {
    let t = &ttf.values;
    let dx = grid.dx();
    (0..grid.len())
        .map(|k| {
            if grid.is_boundary(k) {
                return Vec2::ZERO;
            }
            let nb = neighbors(grid, k);
            let open = |m: Option<usize>| m.filter(|&m| !grid.is_boundary(m));
            let mut g = Vec2::ZERO;
            for axis in 0..2 {
                let (lo, hi) = (open(nb[2 * axis]), open(nb[2 * axis + 1]));
                g[axis] = match (lo, hi) {
                    (Some(a), Some(b)) => (t[b] - t[a]) / (2.0 * dx[axis]),
                    (Some(a), None) => (t[k] - t[a]) / dx[axis],
                    (None, Some(b)) => (t[b] - t[k]) / dx[axis],
                    (None, None) => 0.0,
                };
            }
            g
        })
        .collect()
}

/// `v̄(x) = −∇T/‖∇T‖ · min{‖x − x_s‖, 1}` on open cells, zero on walls.
pub fn steering_field(grid: &Grid, ttf: &TravelTimeField) -> Vec<Vec2> {
    let grad = travel_time_gradient(grid, ttf);
    let out: Vec<Vec2> = (0..grid.len())
        .map(|k| {
            if grid.is_boundary(k) {
                return Vec2::ZERO;
            }
            let dist = (grid.center_of(k) - ttf.source).norm();
            let norm = grad[k].norm();
            if norm == 0.0 {
                if k != ttf.source_cell {
                    log::debug!("vanishing travel-time gradient at cell {:?}", grid.coords(k));
                }
                return Vec2::ZERO;
            }
            grad[k] * (-dist.min(1.0) / norm)
        })
        .collect();
    assert!(
        out.iter().all(|v| v.norm() <= 1.0 + 1e-12),
        "steering field exceeds unit speed"
    );
    out
}

/// Steering field for a source, solved on `grid`.
pub fn steering_for_source(grid: &Grid, source: Vec2) -> Result<Vec<Vec2>> {
    let ttf = solve_eikonal(grid, source)?;
    Ok(steering_field(grid, &ttf))
}

/// `∂v̄/∂x_s^(axis)` by central differences over sources shifted one cell.
/// Falls back to a one-sided difference when a shifted source is blocked.
pub fn source_derivative(grid: &Grid, source: Vec2, axis: usize) -> Result<Vec<Vec2>> {
    let h = grid.dx()[axis];
    let e = Vec2::unit(axis) * h;
    let shifted = |p: Vec2| -> Option<Vec<Vec2>> {
        let (i, j) = grid.cell_of(p)?;
        if grid.is_boundary(grid.index(i, j)) {
            return None;
        }
        steering_for_source(grid, p).ok()
    };
    let plus = shifted(source + e);
    let minus = shifted(source - e);
    let (a, b, width) = match (plus, minus) {
        (Some(p), Some(m)) => (p, m, 2.0 * h),
        (Some(p), None) => {
            log::info!("source derivative along axis {axis}: backward shift blocked, using a forward difference");
            (p, steering_for_source(grid, source)?, h)
        }
        (None, Some(m)) => {
            log::info!("source derivative along axis {axis}: forward shift blocked, using a backward difference");
            (steering_for_source(grid, source)?, m, h)
        }
        (None, None) => {
            return Err(Error::Domain(format!(
                "both shifted sources along axis {axis} are blocked at ({}, {})",
                source.x, source.y
            )))
        }
    };
    Ok(a.iter().zip(&b).map(|(p, m)| (*p - *m) * (1.0 / width)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ObstacleSpec;

    fn free_grid() -> Grid {
        Grid::covering(Vec2::new(-8.0, -8.0), Vec2::new(8.0, 8.0), [0.5, 0.5], 0.05, 1).unwrap()
    }

    #[test]
    fn free_space_travel_time() {
        let g = free_grid();
        let src = Vec2::new(1.5, -0.5);
        let ttf = solve_eikonal(&g, src).unwrap();
        assert_eq!(ttf.values[ttf.source_cell], 0.0);
        let err = (0..g.len())
            .filter(|&k| g.is_interior(k))
            .map(|k| (ttf.values[k] - (g.center_of(k) - src).norm()).abs())
            .fold(0.0_f64, f64::max);
        assert!(err <= 5.0 * 0.5, "error {err}");
        assert!(ttf.values.iter().all(|t| t.is_finite() && *t >= 0.0));
    }

    #[test]
    fn steering_examples() {
        let g = free_grid();
        let src = Vec2::new(0.0, 0.0);
        let v = steering_for_source(&g, src).unwrap();
        let s = g.index(16, 16);
        assert_eq!(v[s], Vec2::ZERO);
        let far = g.index(24, 16);
        assert!((v[far].norm() - 1.0).abs() < 1e-12);
        assert!(v[far].x < 0.0);
        let near = g.index(17, 16);
        assert!((v[near].norm() - 0.5).abs() < 1e-12);
        assert!(v[near].x < 0.0 && v[near].y.abs() < 1e-12);
        assert!((0..g.len()).filter(|&k| g.is_boundary(k)).all(|k| v[k] == Vec2::ZERO));
    }

    #[test]
    fn obstacle_blocks_direct_path() {
        let g = free_grid()
            .rasterize(&[ObstacleSpec::Rectangle {
                lo: Vec2::new(2.0, 1.0),
                hi: Vec2::new(3.0, 8.0),
            }])
            .unwrap();
        let src = Vec2::new(1.5, 3.0);
        let ttf = solve_eikonal(&g, src).unwrap();
        let behind = g.cell_of(Vec2::new(4.0, 3.0)).unwrap();
        let t = ttf.values[g.index(behind.0, behind.1)];
        assert!(t > 2.5 + 2.0, "travel time {t} ignores the obstacle");
        assert!(solve_eikonal(&g, Vec2::new(2.5, 4.0)).is_err());
    }
}
