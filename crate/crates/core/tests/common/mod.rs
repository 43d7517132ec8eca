#![allow(dead_code)]

use droopcert::case::{bundled_case, Case};
use droopcert::grid::{Branch, Grid, NodeOperatingPoint, OperatingPoint};
use droopcert::models::{GeneralizedDroop, NodeModel, ThirdOrderInverter, ThirdOrderMachine};
use droopcert::powerflow::{stressed_operating_point, SolverOptions};
use rand::Rng;

pub const STRESS_SEED: u64 = 1;
pub const STRESS_MAGNITUDE: f64 = 0.3;

/// Random spanning tree plus extra edges with probability `p_extra`.
pub fn random_grid<R: Rng>(rng: &mut R, n: usize, p_extra: f64, rx_ratio: f64) -> Grid {
    let mut branches = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        branches.push(Branch::new(j, i, rng.random_range(1.0..10.0)));
    }
    for i in 0..n {
        for j in i + 1..n {
            let exists = branches
                .iter()
                .any(|b| (b.from == i && b.to == j) || (b.from == j && b.to == i));
            if !exists && rng.random_bool(p_extra) {
                branches.push(Branch::new(i, j, rng.random_range(1.0..10.0)));
            }
        }
    }
    Grid::new(n, branches, rx_ratio).unwrap()
}

pub fn random_operating_point<R: Rng>(rng: &mut R, grid: &Grid) -> OperatingPoint {
    let n = grid.n_nodes();
    let v = (0..n).map(|_| rng.random_range(0.9..1.1)).collect();
    let phi = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
    OperatingPoint::from_polar(&grid.laplacian(), v, phi).unwrap()
}

/// Droop gains with a positive definite symmetric part.
pub fn random_accretive_droop<R: Rng>(rng: &mut R, alpha: f64) -> GeneralizedDroop {
    loop {
        let c_vq = rng.random_range(0.2..2.0);
        let c_wp = rng.random_range(0.2..2.0);
        let c_vp = rng.random_range(-2.0..2.0);
        let c_wq = rng.random_range(-2.0..2.0);
        let s: f64 = c_vp + c_wq;
        if c_vq * c_wp > 0.25 * s * s + 1e-3 {
            return GeneralizedDroop {
                c_wp,
                c_wq,
                c_vp,
                c_vq,
                alpha,
            };
        }
    }
}

pub fn random_inverter<R: Rng>(rng: &mut R) -> ThirdOrderInverter {
    ThirdOrderInverter {
        tau_p: rng.random_range(0.05..2.0),
        tau_q: rng.random_range(0.05..2.0),
        damping: rng.random_range(0.5..2.0),
        k_p: rng.random_range(0.1..2.0),
        k_q: rng.random_range(0.1..2.0),
        delta: rng.random_range(0.0..0.2),
    }
}

pub fn random_machine<R: Rng>(rng: &mut R) -> ThirdOrderMachine {
    ThirdOrderMachine {
        tau_v: rng.random_range(0.05..2.0),
        x: rng.random_range(0.05..0.5),
        tau_p: rng.random_range(0.05..2.0),
        damping: rng.random_range(0.5..2.0),
        k_p: rng.random_range(0.1..2.0),
        delta: rng.random_range(0.0..0.2),
    }
}

/// Any of the three model types; machine reactances are kept small enough
/// for the inverter mapping to exist at `op`.
pub fn random_model_at<R: Rng>(rng: &mut R, op: &NodeOperatingPoint) -> NodeModel {
    match rng.random_range(0..3) {
        0 => {
            let alpha = rng.random_range(-1.0..3.0);
            random_accretive_droop(rng, alpha).into()
        }
        1 => random_inverter(rng).into(),
        _ => {
            let mut m = random_machine(rng);
            if op.q > 0.0 {
                m.x = m.x.min(0.25 * op.v * op.v / op.q);
            }
            m.into()
        }
    }
}

/// C_vq = C_wp = 1, C_vp = C_wq = 0.5.
pub fn resolved_gains(alpha: f64) -> GeneralizedDroop {
    GeneralizedDroop {
        c_wp: 1.0,
        c_wq: 0.5,
        c_vp: 0.5,
        c_vq: 1.0,
        alpha,
    }
}

pub fn droop_everywhere(alphas: &[f64], base: impl Fn(f64) -> GeneralizedDroop) -> Vec<NodeModel> {
    alphas.iter().map(|&a| base(a).into()).collect()
}

/// IEEE 14-bus with reactive injections scattered around the ideal ones.
pub fn stressed_ieee14() -> (Case, OperatingPoint) {
    let case = bundled_case("ieee14").unwrap();
    let op = stressed_operating_point(&case, STRESS_MAGNITUDE, STRESS_SEED, SolverOptions::default()).unwrap();
    (case, op)
}
