//! Deterministic initial particle placements on hexagonal lattices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{Rect, Vec2};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Placement {
    /// The `count` hexagonal-lattice sites closest to `center`.
    HexCluster { center: Vec2, count: usize, spacing: f64 },
    /// The first `count` lattice sites of a hexagonal fill of `region`,
    /// in row order starting from its lower-left corner.
    HexRectangle { region: Rect, count: usize, spacing: f64 },
}

impl Placement {
    pub fn count(&self) -> usize {
        match self {
            Placement::HexCluster { count, .. } | Placement::HexRectangle { count, .. } => *count,
        }
    }

    pub fn translated(&self, offset: Vec2) -> Self {
        match self.clone() {
            Placement::HexCluster { center, count, spacing } => Placement::HexCluster {
                center: center + offset,
                count,
                spacing,
            },
            Placement::HexRectangle { region, count, spacing } => Placement::HexRectangle {
                region: region.translated(offset),
                count,
                spacing,
            },
        }
    }

    pub fn positions(&self) -> Result<Vec<Vec2>> {
        match *self {
            Placement::HexCluster { center, count, spacing } => hex_cluster(center, count, spacing),
            Placement::HexRectangle { region, count, spacing } => hex_rectangle(region, count, spacing),
        }
    }
}

pub fn hex_cluster(center: Vec2, count: usize, spacing: f64) -> Result<Vec<Vec2>> {
    if !(spacing > 0.0) {
        return Err(Error::Config(format!("lattice spacing must be positive, got {spacing}")));
    }
    let k = ((count as f64).sqrt().ceil() as i64) + 2;
    let row = spacing * 3f64.sqrt() / 2.0;
    let mut sites = Vec::new();
    for j in -k..=k {
        for i in -k..=k {
            let offset = Vec2::new(spacing * (i as f64 + 0.5 * j as f64), row * j as f64);
            sites.push(offset);
        }
    }
    // distance first, then angle, so that ties on a lattice shell resolve
    // the same way on every platform
    let key = |p: &Vec2| ((p.norm_sq() / (spacing * spacing) * 1e9).round() as i64, p.y.atan2(p.x));
    sites.sort_by(|a, b| {
        let (da, aa) = key(a);
        let (db, ab) = key(b);
        da.cmp(&db).then(aa.total_cmp(&ab))
    });
    if sites.len() < count {
        return Err(Error::Config(format!("cannot place {count} particles in a cluster")));
    }
    Ok(sites.into_iter().take(count).map(|p| center + p).collect())
}

pub fn hex_rectangle(region: Rect, count: usize, spacing: f64) -> Result<Vec<Vec2>> {
    if !(spacing > 0.0) || !region.is_valid() {
        return Err(Error::Config("hexagonal fill needs a valid region and positive spacing".into()));
    }
    let row = spacing * 3f64.sqrt() / 2.0;
    let mut out = Vec::with_capacity(count);
    let mut j = 0usize;
    'rows: loop {
        let y = region.lo.y + row * j as f64;
        if y > region.hi.y + 1e-12 {
            break;
        }
        let shift = if j % 2 == 1 { 0.5 * spacing } else { 0.0 };
        let mut i = 0usize;
        loop {
            let x = region.lo.x + shift + spacing * i as f64;
            if x > region.hi.x + 1e-12 {
                break;
            }
            out.push(Vec2::new(x, y));
            if out.len() == count {
                break 'rows;
            }
            i += 1;
        }
        j += 1;
    }
    if out.len() < count {
        return Err(Error::Config(format!(
            "region {region:?} holds only {} of {count} particles at spacing {spacing}",
            out.len()
        )));
    }
    Ok(out)
}

/// Uniform jitter in `[−amplitude, amplitude]²`, reproducible from `seed`.
pub fn jitter(positions: &mut [Vec2], amplitude: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in positions {
        p.x += rng.gen_range(-amplitude..=amplitude);
        p.y += rng.gen_range(-amplitude..=amplitude);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_respects_minimum_spacing() {
        let pts = hex_cluster(Vec2::new(2.5, 0.0), 100, 0.4).unwrap();
        assert_eq!(pts.len(), 100);
        for a in 0..pts.len() {
            for b in 0..a {
                assert!((pts[a] - pts[b]).norm() > 0.4 - 1e-9);
            }
        }
        let centroid = pts.iter().fold(Vec2::ZERO, |s, p| s + *p) * 0.01;
        assert!((centroid - Vec2::new(2.5, 0.0)).norm() < 0.1);
    }

    #[test]
    fn rectangle_fill_stays_inside() {
        let r = Rect::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.5));
        let pts = hex_rectangle(r, 20, 0.1).unwrap();
        assert!(pts.iter().all(|p| r.contains(*p)));
        assert!(hex_rectangle(r, 10_000, 0.1).is_err());
    }

    #[test]
    fn jitter_is_seeded() {
        let mut a = vec![Vec2::ZERO; 5];
        let mut b = a.clone();
        jitter(&mut a, 0.1, 7);
        jitter(&mut b, 0.1, 7);
        assert_eq!(a, b);
    }
}
