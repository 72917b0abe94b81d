use proptest::prelude::*;

use spacemap::eikonal::{solve_eikonal, steering_for_source};
use spacemap::macroscopic::{self, init_density, MacroParams};
use spacemap::micro::{
    hex_cluster, interaction_sums, simulate, BoundaryMode, InteractionLaw, MicroParams, ParticleState, VelocityField,
};
use spacemap::optim::Bounds;
use spacemap::{Grid, ObstacleSpec, Parallelism, Vec2};

fn toy_grid(n_steps: usize) -> Grid {
    Grid::new(Vec2::new(-4.75, -4.75), [0.5, 0.5], [20, 20], 0.05, n_steps).unwrap()
}

fn point() -> impl Strategy<Value = Vec2> {
    (-3.5..3.5f64, -3.5..3.5f64).prop_map(|(x, y)| Vec2::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn macro_step_conserves_mass_and_sign(
        pts in prop::collection::vec(point(), 20..80),
        vx in -1.5..1.5f64,
        vy in -1.5..1.5f64,
        c in 0.0..2.0f64,
    ) {
        let grid = toy_grid(8);
        let rho0 = init_density(&grid, &pts, 0.35, None).unwrap();
        let v: Vec<Vec2> = (0..grid.len())
            .map(|k| {
                let p = grid.center_of(k);
                Vec2::new(vx - 0.1 * p.y, vy + 0.1 * p.x)
            })
            .collect();
        let hist = macroscopic::solve(&grid, &MacroParams::new(c), &v, &rho0).unwrap();
        let m0 = macroscopic::mass(&grid, &rho0);
        for rho in &hist.rho {
            let m = macroscopic::mass(&grid, rho);
            prop_assert!((m - m0).abs() <= 1e-10 * m0);
            prop_assert!(rho.iter().all(|&r| r >= -1e-12));
        }
    }

    #[test]
    fn pair_forces_cancel(pts in prop::collection::vec(point(), 2..40), seed in 0u64..1000) {
        let mut x = pts;
        spacemap::micro::jitter(&mut x, 0.01, seed);
        let state = ParticleState::at_rest(x);
        let sums = interaction_sums(&state, 0.4, InteractionLaw::QuadraticOverlap { b_f: 100.0 }, Parallelism::Sequential);
        let total = sums.iter().fold(Vec2::ZERO, |a, f| a + *f);
        let scale: f64 = sums.iter().map(|f| f.norm()).sum::<f64>().max(1.0);
        prop_assert!(total.norm() <= 1e-12 * scale);
    }

    #[test]
    fn steering_is_bounded(sx in -7.0..7.0f64, sy in -7.0..7.0f64, gap in 0usize..4) {
        let grid = Grid::covering(Vec2::new(-8.0, -8.0), Vec2::new(8.0, 8.0), [0.5, 0.5], 0.05, 1)
            .unwrap()
            .rasterize(&[ObstacleSpec::Rectangle { lo: Vec2::new(2.0, 1.0 + gap as f64), hi: Vec2::new(3.0, 8.0) }])
            .unwrap();
        let src = grid.project_to_cell_center(Vec2::new(sx, sy)).unwrap();
        prop_assume!(grid.is_interior(grid.cell_of(src).map(|(i, j)| grid.index(i, j)).unwrap()));
        let v = steering_for_source(&grid, src).unwrap();
        for (k, vk) in v.iter().enumerate() {
            prop_assert!(vk.norm() <= 1.0 + 1e-12);
            if grid.is_boundary(k) {
                prop_assert_eq!(*vk, Vec2::ZERO);
            }
        }
        let t = solve_eikonal(&grid, src).unwrap();
        prop_assert!(t.values.iter().all(|&x| x >= 0.0));
        prop_assert_eq!(t.values[t.source_cell], 0.0);
    }

    #[test]
    fn grid_projection_is_idempotent(p in point()) {
        let grid = toy_grid(1);
        let c = grid.project_to_cell_center(p).unwrap();
        prop_assert_eq!(grid.project_to_cell_center(c).unwrap(), c);
        prop_assert!((c.x - p.x).abs() <= 0.25 + 1e-12 && (c.y - p.y).abs() <= 0.25 + 1e-12);
    }

    #[test]
    fn box_projection_is_idempotent(u in prop::collection::vec(-20.0..20.0f64, 2)) {
        let b = Bounds::planar(Vec2::new(-8.0, -8.0), Vec2::new(2.0, 8.0)).unwrap();
        let p = b.project(&u);
        prop_assert!(b.contains(&p));
        prop_assert_eq!(b.project(&p), p);
    }
}

#[test]
fn free_particles_conserve_momentum() {
    let x = hex_cluster(Vec2::ZERO, 30, 0.3).unwrap();
    let v: Vec<Vec2> = (0..x.len()).map(|i| Vec2::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos())).collect();
    let state = ParticleState::new(x, v).unwrap();
    let params = MicroParams {
        radius: 0.2,
        mass: 1.0,
        tau: f64::INFINITY,
        interaction_scale: 1.0,
        law: InteractionLaw::QuadraticOverlap { b_f: 0.2f64.powi(-5) },
        dt: 0.00125,
        n_steps: 400,
        boundary: BoundaryMode::None,
        outflow_x: None,
    };
    let field = VelocityField::Uniform(Vec2::ZERO);
    let p0 = state.momentum(params.mass);
    let last = simulate(&state, &params, &field, Parallelism::Sequential).unwrap();
    let p1 = last.momentum(params.mass);
    assert!((p1 - p0).norm() <= 1e-12 * p0.norm(), "{p0:?} -> {p1:?}");
}

#[test]
fn rasterized_gap_is_an_index_translation() {
    let base = || Grid::covering(Vec2::new(-8.0, -8.0), Vec2::new(8.0, 8.0), [0.5, 0.5], 0.05, 1).unwrap();
    let wall = |g: f64| ObstacleSpec::Rectangle {
        lo: Vec2::new(2.0, 1.0 + g),
        hi: Vec2::new(3.0, 8.0 + g),
    };
    let g0 = base().rasterize(&[wall(0.0)]).unwrap();
    let g2 = base().rasterize(&[wall(2.0)]).unwrap();
    let [n1, n2] = g0.n();
    for i in 1..n1 - 1 {
        for j in 1..n2 - 5 {
            assert_eq!(g0.kind(g0.index(i, j)), g2.kind(g2.index(i, j + 4)), "cell ({i}, {j})");
        }
    }
}
