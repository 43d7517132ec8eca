//! Newton power flow on the lossless (Laplacian) injection equations.
//!
//! Every non-slack node is a PQ node. The slack node has its phase pinned at 0
//! and its magnitude at `v_init[slack]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::case::Case;
use crate::error::{Error, Result};
use crate::grid::{power_sensitivities, trig_power, Grid, OperatingPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSpec {
    pub p_spec: Vec<f64>,
    pub q_spec: Vec<f64>,
    pub slack: usize,
    pub v_init: Vec<f64>,
}

impl PowerFlowSpec {
    pub fn new(p_spec: Vec<f64>, q_spec: Vec<f64>, slack: usize) -> Self {
        let n = p_spec.len();
        Self {
            p_spec,
            q_spec,
            slack,
            v_init: vec![1.0; n],
        }
    }

    pub fn with_v_init(mut self, v_init: Vec<f64>) -> Self {
        self.v_init = v_init;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowResult {
    pub op: OperatingPoint,
    pub iterations: usize,
    pub residual: f64,
}

fn validate(grid: &Grid, spec: &PowerFlowSpec, opts: &SolverOptions) -> Result<()> {
    let n = grid.n_nodes();
    for len in [spec.p_spec.len(), spec.q_spec.len(), spec.v_init.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: len,
            });
        }
    }
    if spec.slack >= n {
        return Err(Error::InvalidArgument(format!("slack {} out of range", spec.slack)));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    crate::grid::check_voltages(&spec.v_init)
}

/// Solves for (V, phi) matching `p_spec` and `q_spec` at every non-slack node.
pub fn solve(grid: &Grid, spec: &PowerFlowSpec, opts: SolverOptions) -> Result<PowerFlowResult> {
    validate(grid, spec, &opts)?;
    match newton_pq(grid, spec, opts, false) {
        Ok(r) => Ok(r),
        Err(Error::PowerFlowDiverged { .. }) => newton_pq(grid, spec, opts, true),
        Err(e) => Err(e),
    }
}

fn newton_pq(grid: &Grid, spec: &PowerFlowSpec, opts: SolverOptions, damped: bool) -> Result<PowerFlowResult> {
    let l = grid.laplacian();
    let n = grid.n_nodes();
    let free: Vec<usize> = (0..n).filter(|&i| i != spec.slack).collect();
    let k = free.len();

    let mut v = spec.v_init.clone();
    let mut phi = vec![0.0; n];

    let mismatch = |v: &[f64], phi: &[f64]| -> DVector<f64> {
        let (p, q) = trig_power(&l, v, phi);
        DVector::from_iterator(
            2 * k,
            free.iter()
                .map(|&i| p[i] - spec.p_spec[i])
                .chain(free.iter().map(|&i| q[i] - spec.q_spec[i])),
        )
    };

    let mut f = mismatch(&v, &phi);
    let mut residual = f.amax();
    for iter in 0..=opts.max_iter {
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            if v.iter().any(|&x| x <= 0.0) {
                break;
            }
            let op = OperatingPoint::from_polar(&l, v, phi)?;
            return Ok(PowerFlowResult {
                op,
                iterations: iter,
                residual,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let s = power_sensitivities(&l, &v, &phi);
        let jac = DMatrix::from_fn(2 * k, 2 * k, |r, c| {
            let (row_blk, ri) = (r / k, free[r % k]);
            let (col_blk, ci) = (c / k, free[c % k]);
            match (row_blk, col_blk) {
                (0, 0) => s.dp_dphi[(ri, ci)],
                (0, _) => s.dp_dv[(ri, ci)],
                (_, 0) => s.dq_dphi[(ri, ci)],
                _ => s.dq_dv[(ri, ci)],
            }
        });
        let step = jac.lu().solve(&f).ok_or(Error::PowerFlowSingular)?;
        if step.iter().any(|x| !x.is_finite()) {
            return Err(Error::PowerFlowSingular);
        }

        let apply = |t: f64| {
            let mut v2 = v.clone();
            let mut phi2 = phi.clone();
            for (j, &i) in free.iter().enumerate() {
                phi2[i] -= t * step[j];
                v2[i] -= t * step[k + j];
            }
            (v2, phi2)
        };
        let mut t = 1.0;
        let (mut v2, mut phi2) = apply(t);
        let mut f2 = mismatch(&v2, &phi2);
        if damped {
            while !(f2.amax() < residual && v2.iter().all(|&x| x > 0.0)) && t > 1e-6 {
                t *= 0.5;
                (v2, phi2) = apply(t);
                f2 = mismatch(&v2, &phi2);
            }
        }
        v = v2;
        phi = phi2;
        f = f2;
        residual = f.amax();
    }
    Err(Error::PowerFlowDiverged {
        iterations: opts.max_iter,
        residual,
    })
}

/// Reactive injections that hold every magnitude at `v_set` under the given
/// active injections.
///
/// Newton on the non-slack phases with V fixed; the returned operating point
/// carries the resulting `q` at every node.
pub fn ideal_reactive(
    grid: &Grid,
    p_spec: &[f64],
    v_set: &[f64],
    slack: usize,
    opts: SolverOptions,
) -> Result<OperatingPoint> {
    let n = grid.n_nodes();
    let spec = PowerFlowSpec::new(p_spec.to_vec(), vec![0.0; n], slack).with_v_init(v_set.to_vec());
    validate(grid, &spec, &opts)?;
    let l = grid.laplacian();
    let free: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let k = free.len();
    let v = v_set.to_vec();
    let mut phi = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..=opts.max_iter {
        let (p, _) = trig_power(&l, &v, &phi);
        let f = DVector::from_iterator(k, free.iter().map(|&i| p[i] - p_spec[i]));
        residual = f.amax();
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            return OperatingPoint::from_polar(&l, v, phi);
        }
        let s = power_sensitivities(&l, &v, &phi);
        let jac = DMatrix::from_fn(k, k, |r, c| s.dp_dphi[(free[r], free[c])]);
        let step = jac.lu().solve(&f).ok_or(Error::PowerFlowSingular)?;
        for (j, &i) in free.iter().enumerate() {
            phi[i] -= step[j];
        }
    }
    Err(Error::PowerFlowDiverged {
        iterations: opts.max_iter,
        residual,
    })
}

/// Scales each reactive injection by `1 + u`, `u ~ U[-magnitude, magnitude]`.
pub fn perturb_reactive(q_ideal: &[f64], magnitude: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&magnitude) {
        return Err(Error::InvalidArgument(format!(
            "perturbation magnitude must lie in [0, 1), got {magnitude}"
        )));
    }
    if magnitude == 0.0 {
        return Ok(q_ideal.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(q_ideal
        .iter()
        .map(|&q| q * (1.0 + rng.random_range(-magnitude..=magnitude)))
        .collect())
}

/// Operating point with every reactive injection scaled by a random factor
/// in `[1 - magnitude, 1 + magnitude]` around the ideal one.
///
/// The ideal injections hold every magnitude at its setpoint (1.0 where none
/// is given); the perturbed ones are then solved from the setpoints as start.
pub fn stressed_operating_point(case: &Case, magnitude: f64, seed: u64, opts: SolverOptions) -> Result<OperatingPoint> {
    let v_set = case.v_set_or_unity();
    let ideal = ideal_reactive(&case.grid, &case.p_set, &v_set, case.slack, opts)?;
    let q = perturb_reactive(&ideal.q, magnitude, seed)?;
    let spec = PowerFlowSpec::new(case.p_set.clone(), q, case.slack).with_v_init(v_set);
    Ok(solve(&case.grid, &spec, opts)?.op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::bundled_case;
    use crate::grid::Branch;

    fn two_bus() -> Grid {
        Grid::new(2, vec![Branch::new(0, 1, 1.0)], 0.0).unwrap()
    }

    #[test]
    fn zero_injection_is_flat() {
        let spec = PowerFlowSpec::new(vec![0.0; 2], vec![0.0; 2], 0);
        let r = solve(&two_bus(), &spec, SolverOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.op.v, vec![1.0, 1.0]);
        assert_eq!(r.op.phi, vec![0.0, 0.0]);
    }

    #[test]
    fn two_bus_angle_inversion() {
        // Node 2 is slack; node 1 exports 0.3 with q chosen for V = (1, 1).
        let delta = 0.3f64.asin();
        let q1 = 1.0 - delta.cos();
        let spec = PowerFlowSpec::new(vec![0.3, -0.3], vec![q1, q1], 1);
        let r = solve(&two_bus(), &spec, SolverOptions::default()).unwrap();
        assert!((r.op.phi[0] - r.op.phi[1] - delta).abs() < 1e-10);
        assert!((r.op.v[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ieee14_base_case_converges() {
        let case = bundled_case("ieee14").unwrap();
        let spec = PowerFlowSpec::new(case.p_set.clone(), case.q_set.clone(), case.slack)
            .with_v_init(case.v_set_or_unity());
        let r = solve(&case.grid, &spec, SolverOptions::default()).unwrap();
        assert!(r.iterations <= 10, "{} iterations", r.iterations);
        assert!(r.residual <= 1e-8);
        let (p, q) = trig_power(&case.grid.laplacian(), &r.op.v, &r.op.phi);
        for i in 0..14 {
            if i != case.slack {
                assert!((p[i] - case.p_set[i]).abs() <= 1e-10);
                assert!((q[i] - case.q_set[i]).abs() <= 1e-10);
            }
        }
        assert!(r.op.p.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn ideal_reactive_holds_voltages() {
        let case = bundled_case("ieee14").unwrap();
        let v_set = case.v_set_or_unity();
        let ideal = ideal_reactive(&case.grid, &case.p_set, &v_set, case.slack, SolverOptions::default()).unwrap();
        let spec = PowerFlowSpec::new(case.p_set.clone(), ideal.q.clone(), case.slack).with_v_init(v_set.clone());
        let r = solve(&case.grid, &spec, SolverOptions::default()).unwrap();
        for i in 0..14 {
            assert!((r.op.v[i] - v_set[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn infeasible_transfer_fails() {
        let spec = PowerFlowSpec::new(vec![5.0, -5.0], vec![0.0, 0.0], 1);
        let err = solve(&two_bus(), &spec, SolverOptions::default()).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn perturbation_contract() {
        let q = vec![0.1, -0.2, 0.3, 0.0, 1.5];
        assert_eq!(perturb_reactive(&q, 0.0, 7).unwrap(), q);
        let a = perturb_reactive(&q, 0.3, 7).unwrap();
        assert_eq!(a, perturb_reactive(&q, 0.3, 7).unwrap());
        assert_ne!(a, perturb_reactive(&q, 0.3, 8).unwrap());
        for (x, y) in a.iter().zip(&q) {
            if *y != 0.0 {
                let r = x / y;
                assert!((0.7..=1.3).contains(&r));
            }
        }
        assert!(perturb_reactive(&q, 1.0, 7).is_err());
    }
}
