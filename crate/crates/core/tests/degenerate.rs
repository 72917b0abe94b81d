mod common;

use common::{dense_hyperbolic_adjoint, MacroCase};
use spacemap::adjoint::backward_sweep_terminal;
use spacemap::macroscopic;
use spacemap::micro::Placement;
use spacemap::optim::DescentConfig;
use spacemap::scenario::toy::{Toy, ToyCoarse, ToyConfig};
use spacemap::spacemap::{asm_optimize, parameter_extraction, AsmConfig, AsmStatus, CoarseModel, FineModel, ModelPair};
use spacemap::{Parallelism, Result, Vec2};

fn small_toy() -> Toy {
    let cfg = ToyConfig {
        horizon: 0.5,
        crowd: vec![
            Placement::HexCluster {
                center: Vec2::new(-1.0, 0.0),
                count: 20,
                spacing: 0.3,
            },
            Placement::HexCluster {
                center: Vec2::new(1.0, 0.0),
                count: 20,
                spacing: 0.3,
            },
        ],
        ..ToyConfig::default()
    };
    Toy::new(cfg, Parallelism::Sequential).unwrap()
}

/// The coarse model posing as the fine one.
struct Mirror<'a>(ToyCoarse<'a>);

impl FineModel for Mirror<'_> {
    fn response(&self, u: &[f64]) -> Result<f64> {
        self.0.response(u)
    }
}

fn search(tol: f64) -> DescentConfig {
    let mut d = DescentConfig::new(0.01, 0.9, tol, 100);
    d.grad_tol = Some(1e-14);
    d
}

#[test]
fn pure_advection_adjoint_matches_dense_reference() {
    let case = MacroCase::new(10);
    let params = case.params(0.0);
    let v = case.velocity(case.belt);
    let hist = macroscopic::solve(&case.grid, &params, &v, &case.rho0).unwrap();
    let terminal = macroscopic::spread_partials(&case.grid, Vec2::ZERO, case.m0);
    let adj = backward_sweep_terminal(&case.grid, &params, &v, &hist, &terminal).unwrap();
    let reference = dense_hyperbolic_adjoint(&case.grid, &v, 10, &terminal);
    let mut err: f64 = 0.0;
    for (a, b) in adj.mu_bar.iter().zip(&reference) {
        for (x, y) in a.iter().zip(b) {
            err = err.max((x - y).abs());
        }
    }
    assert!(err <= 1e-12, "max deviation {err}");
    assert_eq!(adj.mu_tilde, adj.mu_bar);
}

#[test]
fn identical_models_extract_the_input() {
    let toy = small_toy();
    let coarse = ToyCoarse(&toy);
    let fine = Mirror(ToyCoarse(&toy));
    let tol = 1e-14;
    let pair = ModelPair::new(&fine, &coarse, toy.bounds().unwrap(), 1.0, search(1e-10), search(tol));
    for u in [0.3, 1.7, 4.0] {
        let ext = parameter_extraction(&pair, &[u], &[8.0]).unwrap();
        // ½ r² < tol bounds the response mismatch, the slope turns it into a control bound
        let slope = coarse.response_and_gradient(&[u]).unwrap().1[0].abs();
        let bound = 1.5 * (2.0 * tol).sqrt() / slope;
        assert!((ext.u[0] - u).abs() <= bound, "u = {u}: extracted {}, bound {bound}", ext.u[0]);
    }
}

#[test]
fn identical_models_finish_after_one_extraction() {
    let toy = small_toy();
    let coarse = ToyCoarse(&toy);
    let fine = Mirror(ToyCoarse(&toy));
    let pair = ModelPair::new(&fine, &coarse, toy.bounds().unwrap(), 1.0, search(1e-12), search(1e-12));
    let cfg = AsmConfig {
        tolerance: 1e-8,
        ..AsmConfig::default()
    };
    let r = asm_optimize(&pair, &[8.0], &cfg).unwrap();
    assert_eq!(r.status, AsmStatus::Converged);
    assert_eq!(r.records.len(), 1);
    assert_eq!(r.fine_evaluations, 1);
    assert_eq!(r.u, r.coarse_optimum.u);
}

#[test]
fn each_extraction_costs_one_fine_solve() {
    let toy = small_toy();
    let coarse = ToyCoarse(&toy);
    let fine = spacemap::scenario::toy::ToyFine(&toy);
    let pair = ModelPair::new(&fine, &coarse, toy.bounds().unwrap(), 1.0, search(1e-10), search(1e-12));
    for (n, u) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        parameter_extraction(&pair, &[u], &[u]).unwrap();
        assert_eq!(pair.fine_evaluations(), n + 1);
    }
}
