//! Reference stability checks that do not rely on the certificate: the full
//! linearization of the interconnected system, its spectrum, bisection for
//! critical droop ratios, nonlinear time-domain simulation and parameter
//! scans.
//!
//! State vector: per node `[phi_n, V_n, x_n...]`, nodes in index order.

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{alpha_theory_all, certify, rotated_realizations, CertifyOptions, RotationO};
use crate::error::{Error, Result};
use crate::grid::{power_sensitivities, trig_power, Grid, NodeOperatingPoint, OperatingPoint};
use crate::models::{GeneralizedDroop, NodeModel};

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Phase,
    Voltage,
    Internal(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullLinearization {
    pub state_layout: Vec<(usize, StateKind)>,
    pub j_full: DMatrix<f64>,
    /// Index of each node's phase state.
    pub offsets: Vec<usize>,
}

impl FullLinearization {
    pub fn dim(&self) -> usize {
        self.j_full.nrows()
    }

    /// The direction that shifts every phase by one radian.
    pub fn uniform_phase_direction(&self) -> Vec<f64> {
        self.state_layout
            .iter()
            .map(|(_, k)| if *k == StateKind::Phase { 1.0 } else { 0.0 })
            .collect()
    }

    /// Max entry of `J_full` applied to the uniform phase direction.
    pub fn rotation_residual(&self) -> f64 {
        let u = nalgebra::DVector::from_vec(self.uniform_phase_direction());
        (&self.j_full * u).amax()
    }
}

fn layout(models: &[NodeModel]) -> (Vec<(usize, StateKind)>, Vec<usize>) {
    let mut layout = Vec::new();
    let mut offsets = Vec::with_capacity(models.len());
    for (n, m) in models.iter().enumerate() {
        offsets.push(layout.len());
        layout.push((n, StateKind::Phase));
        layout.push((n, StateKind::Voltage));
        for k in 0..m.n_var() {
            layout.push((n, StateKind::Internal(k)));
        }
    }
    (layout, offsets)
}

/// Jacobian of the closed loop at `op`.
///
/// The nodal inputs are `w_n = [dq_n + alpha_n dV_n; dp_n]` with the Laplacian
/// injections; on lossy grids the realizations already carry the rotation.
pub fn assemble_jacobian(grid: &Grid, op: &OperatingPoint, models: &[NodeModel]) -> Result<FullLinearization> {
    let realizations = rotated_realizations(grid, op, models)?;
    let (state_layout, offsets) = layout(models);
    let dim = state_layout.len();
    let n_nodes = grid.n_nodes();
    let sens = power_sensitivities(&grid.laplacian(), &op.v, &op.phi);

    let mut j = DMatrix::zeros(dim, dim);
    for n in 0..n_nodes {
        let ss = &realizations[n];
        let alpha = ss.alpha();
        let on = offsets[n];
        let nv = ss.n_var();

        // d w_n / d(phi_k, V_k) for every node k.
        let mut dw = vec![[[0.0; 2]; 2]; n_nodes];
        for (k, d) in dw.iter_mut().enumerate() {
            d[0][0] = sens.dq_dphi[(n, k)];
            d[0][1] = sens.dq_dv[(n, k)] + if k == n { alpha } else { 0.0 };
            d[1][0] = sens.dp_dphi[(n, k)];
            d[1][1] = sens.dp_dv[(n, k)];
        }

        // rows: phi (omega), V (V rho), internal states.
        for (k, d) in dw.iter().enumerate() {
            let ok = offsets[k];
            for col in 0..2 {
                let du = [d[0][col], d[1][col]];
                if du == [0.0, 0.0] {
                    continue;
                }
                let d_rho = ss.d()[(0, 0)] * du[0] + ss.d()[(0, 1)] * du[1];
                let d_omega = ss.d()[(1, 0)] * du[0] + ss.d()[(1, 1)] * du[1];
                j[(on, ok + col)] -= d_omega;
                j[(on + 1, ok + col)] -= op.v[n] * d_rho;
                for r in 0..nv {
                    j[(on + 2 + r, ok + col)] += ss.b()[(r, 0)] * du[0] + ss.b()[(r, 1)] * du[1];
                }
            }
        }
        for c in 0..nv {
            j[(on, on + 2 + c)] -= ss.c()[(1, c)];
            j[(on + 1, on + 2 + c)] -= op.v[n] * ss.c()[(0, c)];
            for r in 0..nv {
                j[(on + 2 + r, on + 2 + c)] += ss.a()[(r, c)];
            }
        }
    }
    Ok(FullLinearization {
        state_layout,
        j_full: j,
        offsets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralVerdict {
    pub eigenvalues: Vec<Complex64>,
    /// The excluded eigenvalue closest to zero.
    pub rotation_mode: Complex64,
    pub max_re_excluding_zero_mode: f64,
    pub near_zero_count: usize,
    pub rotation_residual: f64,
    pub verdict: Stability,
    pub diagnostic: Option<String>,
}

impl SpectralVerdict {
    pub fn is_stable(&self) -> bool {
        self.verdict == Stability::Stable
    }
}

/// Classifies the spectrum after removing the eigenvalue nearest to zero.
pub fn spectral_verdict(lin: &FullLinearization, tol: f64) -> Result<SpectralVerdict> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let mut eigenvalues: Vec<Complex64> = lin.j_full.complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    let zero_idx = (0..eigenvalues.len())
        .min_by(|&a, &b| eigenvalues[a].norm().total_cmp(&eigenvalues[b].norm()))
        .ok_or_else(|| Error::InvalidArgument("empty linearization".into()))?;
    let rotation_mode = eigenvalues[zero_idx];
    let max_re = eigenvalues
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != zero_idx)
        .map(|(_, z)| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let near_zero_count = eigenvalues.iter().filter(|z| z.norm() <= tol).count();
    let rotation_residual = lin.rotation_residual();
    let scale = lin.j_full.amax().max(1.0);

    let mut diagnostic = None;
    let mut verdict = if max_re < -tol {
        Stability::Stable
    } else if max_re > tol {
        Stability::Unstable
    } else {
        Stability::Marginal
    };
    if near_zero_count > 1 {
        diagnostic = Some(format!(
            "{near_zero_count} eigenvalues within {tol:e} of zero; possible structural degeneracy"
        ));
        if verdict == Stability::Stable {
            verdict = Stability::Marginal;
        }
    } else if rotation_residual > 1e-10 * scale {
        diagnostic = Some(format!(
            "uniform phase shift is not a null direction (residual {rotation_residual:e})"
        ));
    }
    Ok(SpectralVerdict {
        eigenvalues,
        rotation_mode,
        max_re_excluding_zero_mode: max_re,
        near_zero_count,
        rotation_residual,
        verdict,
        diagnostic,
    })
}

/// Linearize and classify in one go.
pub fn oracle_verdict(grid: &Grid, op: &OperatingPoint, models: &[NodeModel], tol: f64) -> Result<SpectralVerdict> {
    spectral_verdict(&assemble_jacobian(grid, op, models)?, tol)
}

/// Replaces every droop ratio.
pub fn with_alphas(models: &[NodeModel], alphas: &[f64]) -> Result<Vec<NodeModel>> {
    if models.len() != alphas.len() {
        return Err(Error::DimensionMismatch {
            expected: models.len(),
            found: alphas.len(),
        });
    }
    models.iter().zip(alphas).map(|(m, &a)| m.with_alpha(a)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaCrit {
    pub alpha_crit: f64,
    /// Final bracket, `lo < hi`.
    pub lo: f64,
    pub hi: f64,
    pub stable_above: bool,
    pub iterations: usize,
}

/// Bisection on the spectral verdict for the droop ratio of `node`, all other
/// models unchanged. The verdict is split into stable versus not stable.
pub fn find_alpha_crit(
    grid: &Grid,
    op: &OperatingPoint,
    models: &[NodeModel],
    node: usize,
    bracket: (f64, f64),
    xtol: f64,
) -> Result<AlphaCrit> {
    if node >= models.len() {
        return Err(Error::InvalidArgument(format!("node {node} out of range")));
    }
    let (mut lo, mut hi) = (bracket.0.min(bracket.1), bracket.0.max(bracket.1));
    if !(xtol > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument("bisection needs a finite bracket and xtol > 0".into()));
    }
    let stable_at = |a: f64| -> Result<bool> {
        let mut ms = models.to_vec();
        ms[node] = models[node].with_alpha(a)?;
        Ok(oracle_verdict(grid, op, &ms, DEFAULT_TOL)?.is_stable())
    };
    let s_lo = stable_at(lo)?;
    let s_hi = stable_at(hi)?;
    if s_lo == s_hi {
        return Err(Error::Bracket { lo, hi });
    }
    let mut iterations = 0;
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        if stable_at(mid)? == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(AlphaCrit {
        alpha_crit: 0.5 * (lo + hi),
        lo,
        hi,
        stable_above: s_hi,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweepRow {
    pub node: usize,
    pub alpha_theory: f64,
    pub alpha_crit: Option<f64>,
    /// `alpha_crit / alpha_theory`, absent when the bound is zero.
    pub ratio: Option<f64>,
    pub flag: Option<String>,
}

/// Every node at its bound, then one node at a time bisected over
/// `[alpha_theory - half_width, alpha_theory + half_width]`.
pub fn alpha_sweep(
    grid: &Grid,
    op: &OperatingPoint,
    models: &[NodeModel],
    half_width: f64,
    xtol: f64,
) -> Result<Vec<AlphaSweepRow>> {
    let theory = alpha_theory_all(&grid.laplacian(), op)?;
    let base = with_alphas(models, &theory)?;
    (0..grid.n_nodes())
        .into_par_iter()
        .map(|n| {
            let th = theory[n];
            let row = match find_alpha_crit(grid, op, &base, n, (th - half_width, th + half_width), xtol) {
                Ok(c) => AlphaSweepRow {
                    node: n,
                    alpha_theory: th,
                    alpha_crit: Some(c.alpha_crit),
                    ratio: (th != 0.0).then(|| c.alpha_crit / th),
                    flag: (!c.stable_above).then(|| "stable below the threshold".to_string()),
                },
                Err(Error::Bracket { .. }) => AlphaSweepRow {
                    node: n,
                    alpha_theory: th,
                    alpha_crit: None,
                    ratio: None,
                    flag: Some("no verdict change in bracket".into()),
                },
                Err(e) => return Err(e),
            };
            Ok(row)
        })
        .collect()
}

/// Nonlinear closed loop around `op`.
pub struct Simulator<'a> {
    grid: &'a Grid,
    op: &'a OperatingPoint,
    models: &'a [NodeModel],
    node_ops: Vec<NodeOperatingPoint>,
    alphas: Vec<f64>,
    rotation: RotationO,
    offsets: Vec<usize>,
    dim: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(grid: &'a Grid, op: &'a OperatingPoint, models: &'a [NodeModel]) -> Result<Self> {
        let realizations = rotated_realizations(grid, op, models)?;
        let (layout, offsets) = layout(models);
        Ok(Self {
            grid,
            op,
            models,
            node_ops: (0..grid.n_nodes()).map(|i| op.physical_node(grid, i)).collect(),
            alphas: realizations.iter().map(|ss| ss.alpha()).collect(),
            rotation: RotationO::from_rx_ratio(grid.rx_ratio()),
            offsets,
            dim: layout.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// State vector of the operating point.
    pub fn equilibrium(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for n in 0..self.grid.n_nodes() {
            y[self.offsets[n]] = self.op.phi[n];
            y[self.offsets[n] + 1] = self.op.v[n];
        }
        y
    }

    /// Laplacian injections `(p, q)` at state `y`.
    pub fn injections(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n_nodes = self.grid.n_nodes();
        let mut p = vec![0.0; n_nodes];
        let mut q = vec![0.0; n_nodes];
        for n in 0..n_nodes {
            let (phi_n, v_n) = (y[self.offsets[n]], y[self.offsets[n] + 1]);
            for &(m, b) in self.grid.neighbors(n) {
                let (phi_m, v_m) = (y[self.offsets[m]], y[self.offsets[m] + 1]);
                let (sin, cos) = (phi_n - phi_m).sin_cos();
                p[n] += b * v_n * v_m * sin;
                q[n] += b * (v_n * v_n - v_n * v_m * cos);
            }
        }
        (p, q)
    }

    pub fn physical_injections(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (p, q) = self.injections(y);
        p.iter()
            .zip(&q)
            .map(|(&p, &q)| {
                let (q, p) = self.grid.physical_injection(q, p);
                (p, q)
            })
            .unzip()
    }

    pub fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let (p, q) = self.injections(y);
        let o: &Matrix2<f64> = &self.rotation.o;
        for n in 0..self.grid.n_nodes() {
            let on = self.offsets[n];
            let v = y[on + 1];
            let wq = q[n] - self.op.q[n] + self.alphas[n] * (v - self.op.v[n]);
            let wp = p[n] - self.op.p[n];
            let (uq, up) = if self.rotation.is_identity() {
                (wq, wp)
            } else {
                (o[(0, 0)] * wq + o[(0, 1)] * wp, o[(1, 0)] * wq + o[(1, 1)] * wp)
            };
            let nv = self.models[n].n_var();
            let (head, tail) = dy.split_at_mut(on + 2);
            let (phi_dot, v_dot) = self.models[n].rates(
                &self.node_ops[n],
                self.alphas[n],
                v,
                &y[on + 2..on + 2 + nv],
                uq,
                up,
                &mut tail[..nv],
            );
            head[on] = phi_dot;
            head[on + 1] = v_dot;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Added to the magnitudes, one entry per node (empty means none).
    pub dv: Vec<f64>,
    pub dphi: Vec<f64>,
}

impl Perturbation {
    /// Relative voltage dip at one node.
    pub fn voltage_dip(n_nodes: usize, node: usize, fraction: f64, v: f64) -> Self {
        let mut dv = vec![0.0; n_nodes];
        dv[node] = -fraction * v;
        Self { dv, dphi: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub collapsed: bool,
    pub collapse_time: Option<f64>,
}

impl Trajectory {
    pub fn min_voltage(&self) -> Vec<f64> {
        self.v.iter().map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).collect()
    }

    /// Distance from `op` in (phi, V), with the common phase shift removed.
    pub fn deviation(&self, op: &OperatingPoint) -> Vec<f64> {
        self.phi
            .iter()
            .zip(&self.v)
            .map(|(phi, v)| {
                let n = phi.len() as f64;
                let shift: f64 = phi.iter().zip(&op.phi).map(|(a, b)| a - b).sum::<f64>() / n;
                phi.iter()
                    .zip(&op.phi)
                    .map(|(a, b)| (a - b - shift).powi(2))
                    .chain(v.iter().zip(&op.v).map(|(a, b)| (a - b).powi(2)))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Store every `record_every`-th step.
    pub record_every: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            dt: 1e-3,
            record_every: 100,
        }
    }
}

/// Fixed-step RK4 from `op` plus `perturbation`. Stops early, flagging a
/// collapse, as soon as any magnitude drops to zero or below.
pub fn simulate(
    grid: &Grid,
    op: &OperatingPoint,
    models: &[NodeModel],
    perturbation: &Perturbation,
    opts: SimulationOptions,
) -> Result<Trajectory> {
    if !(opts.dt > 0.0) || !(opts.t_end >= 0.0) || opts.record_every == 0 {
        return Err(Error::InvalidArgument(
            "simulation needs dt > 0, t_end >= 0 and record_every >= 1".into(),
        ));
    }
    let sim = Simulator::new(grid, op, models)?;
    let n_nodes = grid.n_nodes();
    let mut y = sim.equilibrium();
    for (n, &d) in perturbation.dv.iter().enumerate().take(n_nodes) {
        y[sim.offsets[n] + 1] += d;
    }
    for (n, &d) in perturbation.dphi.iter().enumerate().take(n_nodes) {
        y[sim.offsets[n]] += d;
    }

    let mut traj = Trajectory {
        times: Vec::new(),
        phi: Vec::new(),
        v: Vec::new(),
        x: Vec::new(),
        p: Vec::new(),
        q: Vec::new(),
        collapsed: false,
        collapse_time: None,
    };
    let record = |t: f64, y: &[f64], traj: &mut Trajectory| {
        let (p, q) = sim.physical_injections(y);
        traj.times.push(t);
        traj.phi.push((0..n_nodes).map(|n| y[sim.offsets[n]]).collect());
        traj.v.push((0..n_nodes).map(|n| y[sim.offsets[n] + 1]).collect());
        traj.x.push(
            (0..n_nodes)
                .flat_map(|n| {
                    let on = sim.offsets[n];
                    y[on + 2..on + 2 + models[n].n_var()].to_vec()
                })
                .collect(),
        );
        traj.p.push(p);
        traj.q.push(q);
    };
    let collapsed = |y: &[f64]| (0..n_nodes).any(|n| !(y[sim.offsets[n] + 1] > 0.0));

    record(0.0, &y, &mut traj);
    if collapsed(&y) {
        traj.collapsed = true;
        traj.collapse_time = Some(0.0);
        return Ok(traj);
    }
    let steps = (opts.t_end / opts.dt).round() as usize;
    let dim = sim.dim();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    let h = opts.dt;
    for step in 1..=steps {
        sim.rhs(&y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        sim.rhs(&tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        sim.rhs(&tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        sim.rhs(&tmp, &mut k4);
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t = step as f64 * h;
        if collapsed(&y) || y.iter().any(|v| !v.is_finite()) {
            record(t, &y, &mut traj);
            traj.collapsed = true;
            traj.collapse_time = Some(t);
            return Ok(traj);
        }
        if step % opts.record_every == 0 || step == steps {
            record(t, &y, &mut traj);
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub c_vp: f64,
    pub c_wq: f64,
    pub oracle: Stability,
    pub max_re: f64,
    pub certified: bool,
}

/// Evaluates the oracle and the certificate on a grid of cross couplings.
///
/// Every node runs `base` with the given `(c_vp, c_wq)` and its droop ratio
/// at `alpha_theory`. Points are returned row-major over `cvp_values`.
pub fn cross_coupling_scan(
    grid: &Grid,
    op: &OperatingPoint,
    base: &GeneralizedDroop,
    cvp_values: &[f64],
    cwq_values: &[f64],
) -> Result<Vec<ScanPoint>> {
    let theory = alpha_theory_all(&grid.laplacian(), op)?;
    let opts = CertifyOptions {
        phase_diagnostics: false,
        ..CertifyOptions::default()
    };
    let points: Vec<(f64, f64)> = cvp_values
        .iter()
        .flat_map(|&a| cwq_values.iter().map(move |&b| (a, b)))
        .collect();
    points
        .par_iter()
        .map(|&(c_vp, c_wq)| {
            let models: Vec<NodeModel> = theory
                .iter()
                .map(|&alpha| {
                    GeneralizedDroop {
                        c_vp,
                        c_wq,
                        alpha,
                        ..*base
                    }
                    .into()
                })
                .collect();
            let verdict = oracle_verdict(grid, op, &models, DEFAULT_TOL)?;
            let report = certify(grid, op, &models, &opts)?;
            Ok(ScanPoint {
                c_vp,
                c_wq,
                oracle: verdict.verdict,
                max_re: verdict.max_re_excluding_zero_mode,
                certified: report.is_certified(),
            })
        })
        .collect()
}

/// Evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace_step(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "range [{lo}, {hi}] with step {step} is not valid"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + k as f64 * step).collect())
}

/// Injections induced through the Laplacian at `(v, phi)`.
pub fn laplacian_injections(grid: &Grid, v: &[f64], phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    trig_power(&grid.laplacian(), v, phi)
}
