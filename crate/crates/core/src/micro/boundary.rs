//! Boundary treatments for the particle model.

use serde::{Deserialize, Serialize};

use crate::geom::{Rect, Segment, Vec2};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundaryMode {
    /// Free space.
    #[default]
    None,
    /// Mirror particles that would enter a wall or an obstacle.
    Reflect { domain: Rect, obstacles: Vec<Rect> },
    /// Repulsive force from the closest point of a set of wall segments.
    SoftObstacle { walls: Vec<Segment>, c_obst: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionFailure {
    pub position: Vec2,
}

/// Mirrors `proposed` back into the feasible set.
///
/// `previous` is the feasible position the explicit step started from; it
/// decides which obstacle face was crossed. The normal velocity component is
/// negated for every mirrored face, so the speed is unchanged.
pub fn reflect_particle(
    previous: Vec2,
    proposed: Vec2,
    v: Vec2,
    domain: &Rect,
    obstacles: &[Rect],
) -> Result<(Vec2, Vec2), ReflectionFailure> {
    let mut p = proposed;
    let mut v = v;
    for l in 0..2 {
        if p[l] < domain.lo[l] {
            p[l] = 2.0 * domain.lo[l] - p[l];
            v[l] = -v[l];
        } else if p[l] > domain.hi[l] {
            p[l] = 2.0 * domain.hi[l] - p[l];
            v[l] = -v[l];
        }
    }
    for obs in obstacles {
        if !obs.contains_open(p) {
            if crosses(previous, p, obs) && spans(previous, p, obs) {
                return Err(ReflectionFailure { position: proposed });
            }
            continue;
        }
        let mut mirrored = false;
        for l in 0..2 {
            if previous[l] <= obs.lo[l] && p[l] > obs.lo[l] {
                p[l] = 2.0 * obs.lo[l] - p[l];
                v[l] = -v[l];
                mirrored = true;
            } else if previous[l] >= obs.hi[l] && p[l] < obs.hi[l] {
                p[l] = 2.0 * obs.hi[l] - p[l];
                v[l] = -v[l];
                mirrored = true;
            }
        }
        if !mirrored {
            return Err(ReflectionFailure { position: proposed });
        }
    }
    let feasible = domain.contains(p) && obstacles.iter().all(|o| !o.contains_open(p));
    if feasible {
        Ok((p, v))
    } else {
        Err(ReflectionFailure { position: proposed })
    }
}

/// Whether `a` and `b` lie on opposite sides of `r` along some axis; a
/// segment that cuts only a corner does not count.
fn spans(a: Vec2, b: Vec2, r: &Rect) -> bool {
    (0..2).any(|l| (a[l] <= r.lo[l] && b[l] >= r.hi[l]) || (a[l] >= r.hi[l] && b[l] <= r.lo[l]))
}

/// Whether the open segment `a → b` passes through the interior of `r`.
fn crosses(a: Vec2, b: Vec2, r: &Rect) -> bool {
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for l in 0..2 {
        let d = b[l] - a[l];
        if d == 0.0 {
            if a[l] <= r.lo[l] || a[l] >= r.hi[l] {
                return false;
            }
            continue;
        }
        let (mut lo, mut hi) = ((r.lo[l] - a[l]) / d, (r.hi[l] - a[l]) / d);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    t0 < t1
}

/// Soft wall force `c_obst (R − ‖d‖) d/‖d‖` with `d = x − p`, `p` the closest
/// wall point, active for `‖d‖ ≤ R`.
pub fn obstacle_force(x: Vec2, walls: &[Segment], radius: f64, c_obst: f64) -> Vec2 {
    let closest = walls
        .iter()
        .map(|w| w.closest_point(x))
        .min_by(|a, b| (x - *a).norm_sq().total_cmp(&(x - *b).norm_sq()));
    let Some(p) = closest else {
        return Vec2::ZERO;
    };
    let d = x - p;
    let dist = d.norm();
    if dist > radius {
        return Vec2::ZERO;
    }
    if dist == 0.0 {
        log::debug!("particle at ({}, {}) sits exactly on a wall; obstacle force set to zero", x.x, x.y);
        return Vec2::ZERO;
    }
    d * (c_obst * (radius - dist) / dist)
}
