//! Decentralized stability certificate.
//!
//! An operating point is certified when
//!
//! 1. every nodal realization is internally stable,
//! 2. every nodal transfer matrix is strictly accretive along the contour
//!    `s in {0} u j(0, inf) u {inf}`,
//! 3. every line carries a phase difference below `pi/2`,
//! 4. every droop ratio satisfies `alpha_n >= alpha_theory(n)`.
//!
//! The last two conditions make every edge block of the network response
//! positive semidefinite; the edge blocks are built and checked explicitly.
//! On lossy grids with a shared R/X ratio the nodal transfer matrices are
//! composed with the rotation `O` and the lossless machinery is reused.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{complex_couplings, nodal_power, ComplexCouplings, Grid, OperatingPoint};
use crate::models::{eval_transfer, internal_stability, transfer_at_infinity, NodalStateSpace, NodeModel};
use crate::phase::{self, combined_phase_bounds, is_accretive_2x2, psd_check, PhaseInterval, PsdCheck, Sectoriality};

/// Slack required by the strict inequalities.
pub const STRICT_MARGIN: f64 = 1e-12;

/// `O = [[1, -tan kappa], [tan kappa, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationO {
    pub kappa: f64,
    pub o: Matrix2<f64>,
}

impl RotationO {
    pub fn from_rx_ratio(rx_ratio: f64) -> Self {
        Self {
            kappa: rx_ratio.atan(),
            o: Matrix2::new(1.0, -rx_ratio, rx_ratio, 1.0),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.kappa == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContourConfig {
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_samples: usize,
    pub include_zero: bool,
    pub include_infinity: bool,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self {
            omega_min: 1e-4,
            omega_max: 1e6,
            n_samples: 200,
            include_zero: true,
            include_infinity: true,
        }
    }
}

impl ContourConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_min > 0.0 && self.omega_max > self.omega_min && self.omega_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "contour needs 0 < omega_min < omega_max, got [{}, {}]",
                self.omega_min, self.omega_max
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::InvalidArgument("contour needs at least 2 samples".into()));
        }
        Ok(())
    }

    pub fn omegas(&self) -> Vec<f64> {
        let (a, b) = (self.omega_min.log10(), self.omega_max.log10());
        let n = self.n_samples;
        (0..n).map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64)).collect()
    }
}

/// Edge-wise split of the droop ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionStrategy {
    /// Surplus shared in proportion to `b V_m / cos`.
    #[default]
    ProportionalToBound,
    /// Same surplus added to every edge.
    UniformExcess,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyOptions {
    pub contour: ContourConfig,
    pub margin: f64,
    pub edge_tol: f64,
    pub strategy: DecompositionStrategy,
    /// Compute numerical-range phase intervals for the report.
    pub phase_diagnostics: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            contour: ContourConfig::default(),
            margin: STRICT_MARGIN,
            edge_tol: 1e-10,
            strategy: DecompositionStrategy::default(),
            phase_diagnostics: true,
        }
    }
}

fn phase_diff(op: &OperatingPoint, n: usize, m: usize) -> f64 {
    op.phi[n] - op.phi[m]
}

fn check_phase(n: usize, m: usize, diff: f64) -> Result<f64> {
    let cos = diff.cos();
    if diff.abs() >= FRAC_PI_2 || cos <= 0.0 {
        return Err(Error::EdgePhase {
            from: n,
            to: m,
            diff: diff.abs(),
        });
    }
    Ok(cos)
}

/// Node-wise droop bound `2 sum_{m != n} b_nm (V_m / cos(phi_n - phi_m) - V_n)`.
pub fn alpha_theory(laplacian: &DMatrix<f64>, op: &OperatingPoint, n: usize) -> Result<f64> {
    let mut sum = 0.0;
    for m in 0..laplacian.ncols() {
        let b = -laplacian[(n, m)];
        if m == n || b == 0.0 {
            continue;
        }
        let cos = check_phase(n, m, phase_diff(op, n, m))?;
        sum += b * (op.v[m] / cos - op.v[n]);
    }
    Ok(2.0 * sum)
}

pub fn alpha_theory_all(laplacian: &DMatrix<f64>, op: &OperatingPoint) -> Result<Vec<f64>> {
    (0..laplacian.nrows()).map(|n| alpha_theory(laplacian, op, n)).collect()
}

/// Directed edge bounds `V_m / (V_n cos) - 1` and `V_n / (V_m cos) - 1`.
pub fn alpha_edge_bound(op: &OperatingPoint, edge: (usize, usize)) -> Result<(f64, f64)> {
    let (n, m) = edge;
    let cos = check_phase(n, m, phase_diff(op, n, m))?;
    Ok((op.v[m] / (op.v[n] * cos) - 1.0, op.v[n] / (op.v[m] * cos) - 1.0))
}

/// Edge shares of the droop ratios for one line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeAlpha {
    pub from: usize,
    pub to: usize,
    pub alpha_nm: f64,
    pub alpha_mn: f64,
}

/// Splits each `alpha_n` over its lines so that
/// `alpha_n = 2 V_n sum_m b_nm alpha'_nm`, one entry per grid branch.
pub fn decompose_alpha(
    grid: &Grid,
    op: &OperatingPoint,
    alpha: &[f64],
    strategy: DecompositionStrategy,
) -> Result<Vec<EdgeAlpha>> {
    let l = grid.laplacian();
    for n in 0..grid.n_nodes() {
        let th = alpha_theory(&l, op, n)?;
        if alpha[n] < th - alpha_tolerance(grid, op, n) {
            return Err(Error::AlphaInfeasible {
                node: n,
                alpha: alpha[n],
                alpha_theory: th,
            });
        }
    }
    decompose_unchecked(grid, op, alpha, strategy)
}

/// Roundoff allowance for `alpha >= alpha_theory`, relative to the size of
/// the terms in the bound.
fn alpha_tolerance(grid: &Grid, op: &OperatingPoint, n: usize) -> f64 {
    let scale: f64 = grid
        .neighbors(n)
        .iter()
        .map(|&(m, b)| 2.0 * b * (op.v[m] + op.v[n]))
        .sum();
    STRICT_MARGIN * scale.max(1.0)
}

fn decompose_unchecked(
    grid: &Grid,
    op: &OperatingPoint,
    alpha: &[f64],
    strategy: DecompositionStrategy,
) -> Result<Vec<EdgeAlpha>> {
    let n_nodes = grid.n_nodes();
    if alpha.len() != n_nodes {
        return Err(Error::DimensionMismatch {
            expected: n_nodes,
            found: alpha.len(),
        });
    }
    // Per-node surplus factor s_n.
    let mut surplus = vec![0.0; n_nodes];
    for n in 0..n_nodes {
        let mut bound_sum = 0.0;
        let mut weight_sum = 0.0;
        for &(m, b) in grid.neighbors(n) {
            let cos = check_phase(n, m, phase_diff(op, n, m))?;
            bound_sum += b * (op.v[m] / (op.v[n] * cos) - 1.0);
            weight_sum += match strategy {
                DecompositionStrategy::ProportionalToBound => b * op.v[m] / cos,
                DecompositionStrategy::UniformExcess => b * op.v[n],
            };
        }
        let th = 2.0 * op.v[n] * bound_sum;
        surplus[n] = (alpha[n] - th) / (2.0 * weight_sum);
    }
    let share = |n: usize, m: usize| -> Result<f64> {
        let cos = check_phase(n, m, phase_diff(op, n, m))?;
        let bound = op.v[m] / (op.v[n] * cos) - 1.0;
        Ok(match strategy {
            DecompositionStrategy::ProportionalToBound => bound + surplus[n] * op.v[m] / (op.v[n] * cos),
            DecompositionStrategy::UniformExcess => bound + surplus[n],
        })
    };
    grid.branches()
        .iter()
        .map(|br| {
            Ok(EdgeAlpha {
                from: br.from,
                to: br.to,
                alpha_nm: share(br.from, br.to)?,
                alpha_mn: share(br.to, br.from)?,
            })
        })
        .collect()
}

/// `alpha_n - 2 V_n sum_m b_nm alpha'_nm` per node.
pub fn decomposition_residual(grid: &Grid, op: &OperatingPoint, alpha: &[f64], shares: &[EdgeAlpha]) -> Vec<f64> {
    let mut recon = vec![0.0; grid.n_nodes()];
    for (e, br) in shares.iter().zip(grid.branches()) {
        recon[e.from] += 2.0 * op.v[e.from] * br.b * e.alpha_nm;
        recon[e.to] += 2.0 * op.v[e.to] * br.b * e.alpha_mn;
    }
    alpha.iter().zip(recon).map(|(a, r)| a - r).collect()
}

/// Static network response in stacked `(theta, conj theta)` coordinates:
///
/// ```text
/// [ K + A/2           diag(sigma) + A/2 ]
/// [ diag(conj sigma) + A/2    conj K + A/2 ],   A = diag(alpha V)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkJacobian {
    pub j_net: DMatrix<Complex64>,
}

impl NetworkJacobian {
    pub fn n_nodes(&self) -> usize {
        self.j_net.nrows() / 2
    }

    pub fn hermitian_residual(&self) -> f64 {
        phase::hermitian_residual(&self.j_net)
    }

    /// Max entry of `J_net [1; -1]`.
    pub fn zero_mode_residual(&self) -> f64 {
        let n = self.n_nodes();
        (0..2 * n)
            .map(|i| {
                let s: Complex64 = (0..n).map(|j| self.j_net[(i, j)] - self.j_net[(i, n + j)]).sum();
                s.norm()
            })
            .fold(0.0, f64::max)
    }
}

pub fn build_network_jacobian(
    k: &ComplexCouplings,
    sigma: &[Complex64],
    v: &[f64],
    alpha: &[f64],
) -> Result<NetworkJacobian> {
    let n = k.n_nodes();
    for len in [sigma.len(), v.len(), alpha.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, found: len });
        }
    }
    let km = k.matrix();
    let half = |i: usize| Complex64::new(0.5 * alpha[i] * v[i], 0.0);
    let j_net = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let (bi, i) = (r / n, r % n);
        let (bj, j) = (c / n, c % n);
        let diag = if i == j { half(i) } else { Complex64::new(0.0, 0.0) };
        match (bi, bj) {
            (0, 0) => km[(i, j)] + diag,
            (1, 1) => km[(i, j)].conj() + diag,
            (0, 1) => (if i == j { sigma[i] } else { Complex64::new(0.0, 0.0) }) + diag,
            _ => (if i == j { sigma[i].conj() } else { Complex64::new(0.0, 0.0) }) + diag,
        }
    });
    Ok(NetworkJacobian { j_net })
}

/// Network Jacobian straight from a grid and operating point.
pub fn network_jacobian(grid: &Grid, op: &OperatingPoint, alpha: &[f64]) -> Result<NetworkJacobian> {
    let k = complex_couplings(&grid.laplacian(), op)?;
    let sigma = nodal_power(&k);
    build_network_jacobian(&k, &sigma, &op.v, alpha)
}

/// Contribution of one line to the network Jacobian, acting on
/// `(theta_n, conj theta_n, theta_m, conj theta_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMatrix {
    pub edge: (usize, usize),
    pub alpha_prime_nm: f64,
    pub alpha_prime_mn: f64,
    pub j_e: DMatrix<Complex64>,
    pub b: f64,
    pub phase_diff: f64,
    pub v: (f64, f64),
}

/// `J_e = b R^H J~_e R` with `R = diag(v_n, conj v_n, v_m, conj v_m)` and
/// `C'_nm = (v_n / conj v_n)(1 + alpha'_nm) - v_m / conj v_n`.
pub fn build_edge_matrix(
    laplacian: &DMatrix<f64>,
    op: &OperatingPoint,
    edge: (usize, usize),
    alpha_prime_nm: f64,
    alpha_prime_mn: f64,
) -> Result<EdgeMatrix> {
    let (n, m) = edge;
    let size = laplacian.nrows();
    if n >= size || m >= size || n == m || laplacian[(n, m)] == 0.0 {
        return Err(Error::InvalidArgument(format!("({n}, {m}) is not a branch")));
    }
    let b = -laplacian[(n, m)];
    let vn = Complex64::from_polar(op.v[n], op.phi[n]);
    let vm = Complex64::from_polar(op.v[m], op.phi[m]);
    let cp = |va: Complex64, vb: Complex64, a: f64| (va / va.conj()) * (1.0 + a) - vb / va.conj();
    let c_nm = cp(vn, vm, alpha_prime_nm);
    let c_mn = cp(vm, vn, alpha_prime_mn);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let an = one * (1.0 + alpha_prime_nm);
    let am = one * (1.0 + alpha_prime_mn);
    #[rustfmt::skip]
    let jt = [
        [an,            c_nm,  -one,          zero],
        [c_nm.conj(),   an,    zero,          -one],
        [-one,          zero,  am,            c_mn],
        [zero,          -one,  c_mn.conj(),   am],
    ];
    let r = [vn, vn.conj(), vm, vm.conj()];
    let j_e = DMatrix::from_fn(4, 4, |i, j| b * r[i].conj() * jt[i][j] * r[j]);
    Ok(EdgeMatrix {
        edge,
        alpha_prime_nm,
        alpha_prime_mn,
        j_e,
        b,
        phase_diff: phase_diff(op, n, m),
        v: (op.v[n], op.v[m]),
    })
}

/// `sum_e P_e^H J_e P_e` in the stacked `(theta, conj theta)` coordinates.
pub fn assemble_edge_matrices(n_nodes: usize, edges: &[EdgeMatrix]) -> DMatrix<Complex64> {
    let mut j = DMatrix::zeros(2 * n_nodes, 2 * n_nodes);
    for e in edges {
        let (n, m) = e.edge;
        let idx = [n, n_nodes + n, m, n_nodes + m];
        for a in 0..4 {
            for b in 0..4 {
                j[(idx[a], idx[b])] += e.j_e[(a, b)];
            }
        }
    }
    j
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeCheck {
    pub phase_diff: f64,
    pub phase_ok: bool,
    pub bound_nm: Option<f64>,
    pub bound_mn: Option<f64>,
    /// Both shares meet their directed bounds.
    pub analytic_ok: bool,
    pub psd: PsdCheck,
    pub pass: bool,
}

/// Checks one edge block both through the directed bounds and numerically.
///
/// The bounds are sufficient for semidefiniteness but not necessary, so only
/// an analytic pass paired with a numerical failure is inconsistent.
pub fn check_edge(em: &EdgeMatrix, tol: f64) -> Result<EdgeCheck> {
    let (vn, vm) = em.v;
    let phase_ok = em.phase_diff.abs() < FRAC_PI_2 && em.phase_diff.cos() > 0.0;
    let scale = em.j_e.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let psd = psd_check(&em.j_e, tol * scale)?;
    let (bound_nm, bound_mn, analytic_ok) = if phase_ok {
        let cos = em.phase_diff.cos();
        let b_nm = vm / (vn * cos) - 1.0;
        let b_mn = vn / (vm * cos) - 1.0;
        let slack = tol * (1.0 + b_nm.abs().max(b_mn.abs()));
        let ok = em.alpha_prime_nm >= b_nm - slack && em.alpha_prime_mn >= b_mn - slack;
        (Some(b_nm), Some(b_mn), ok)
    } else {
        (None, None, false)
    };
    if analytic_ok && !psd.pass {
        return Err(Error::InternalConsistency(format!(
            "edge {:?} meets its droop bounds but has lambda_min = {:e}",
            em.edge, psd.min_eigenvalue
        )));
    }
    Ok(EdgeCheck {
        phase_diff: em.phase_diff,
        phase_ok,
        bound_nm,
        bound_mn,
        analytic_ok,
        psd,
        pass: phase_ok && psd.pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContourPoint {
    Zero,
    Omega { omega: f64 },
    Infinity,
}

impl ContourPoint {
    pub fn s(&self) -> Option<Complex64> {
        match *self {
            ContourPoint::Zero => Some(Complex64::new(0.0, 0.0)),
            ContourPoint::Omega { omega } => Some(Complex64::new(0.0, omega)),
            ContourPoint::Infinity => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRoute {
    NodeWise,
    EdgeWise,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: usize,
    pub model: String,
    pub internal_stable: bool,
    pub accretive: bool,
    pub worst_s: Option<ContourPoint>,
    pub worst_slack_trace: f64,
    pub worst_slack_det: f64,
    pub samples_evaluated: usize,
    pub samples_skipped: usize,
    pub alpha: f64,
    pub alpha_theory: Option<f64>,
    /// Smallest alpha admitted by the edge-wise bounds.
    pub alpha_edge_min: Option<f64>,
    pub alpha_ok: bool,
    pub alpha_route: AlphaRoute,
    pub phase: Option<PhaseInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub from: usize,
    pub to: usize,
    pub phase_diff: f64,
    pub phase_ok: bool,
    pub edge_psd_ok: bool,
    pub min_eigenvalue: Option<f64>,
    pub alpha_prime_used: Option<(f64, f64)>,
    pub bound: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CertifiedStable,
    NotCertified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    InternalStability,
    Accretivity,
    PhaseDifference,
    AlphaBound,
    EdgePsd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Location {
    Node { node: usize },
    Edge { from: usize, to: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub location: Location,
    pub condition: Condition,
}

/// Phase bookkeeping of the loop: nodal phases plus the network phase
/// `-pi/2` on the imaginary axis must stay inside `(-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagnostics {
    pub node_phases: PhaseInterval,
    pub edge_phases: PhaseInterval,
    pub network_phases: PhaseInterval,
    pub loop_phase_min: f64,
    pub loop_phase_max: f64,
    pub loop_within_pi: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub verdict: Verdict,
    pub rx_ratio: f64,
    pub per_node: Vec<NodeReport>,
    pub per_edge: Vec<EdgeReport>,
    pub failure_attribution: Vec<Failure>,
    pub notes: Vec<String>,
    pub phase_diagnostics: Option<PhaseDiagnostics>,
}

impl CertificateReport {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::CertifiedStable
    }

    pub fn failing_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .failure_attribution
            .iter()
            .filter_map(|f| match f.location {
                Location::Node { node } => Some(node),
                Location::Edge { .. } => None,
            })
            .collect();
        nodes.dedup();
        nodes
    }
}

struct Sweep {
    accretive: bool,
    worst: Option<ContourPoint>,
    worst_trace: f64,
    worst_det: f64,
    evaluated: usize,
    skipped: usize,
    samples: Vec<Matrix2<Complex64>>,
}

fn sweep_contour(ss: &NodalStateSpace, opts: &CertifyOptions, keep_samples: bool) -> Sweep {
    let mut sweep = Sweep {
        accretive: true,
        worst: None,
        worst_trace: f64::INFINITY,
        worst_det: f64::INFINITY,
        evaluated: 0,
        skipped: 0,
        samples: Vec::new(),
    };
    let record = |point: ContourPoint, t: Matrix2<Complex64>, sweep: &mut Sweep| {
        let acc = is_accretive_2x2(&t, opts.margin);
        sweep.evaluated += 1;
        sweep.accretive &= acc.pass;
        if sweep.worst.is_none() || acc.worst_slack() < sweep.worst_trace.min(sweep.worst_det) {
            sweep.worst = Some(point);
            sweep.worst_trace = acc.slack_trace;
            sweep.worst_det = acc.slack_det;
        }
        if keep_samples {
            sweep.samples.push(t);
        }
        acc.worst_slack()
    };

    if ss.n_var() == 0 {
        record(ContourPoint::Infinity, transfer_at_infinity(ss), &mut sweep);
        return sweep;
    }
    let c = &opts.contour;
    if c.include_zero {
        match eval_transfer(ss, Complex64::new(0.0, 0.0)) {
            Ok(t) => {
                record(ContourPoint::Zero, t.t, &mut sweep);
            }
            Err(_) => sweep.skipped += 1,
        }
    }
    let omegas = c.omegas();
    let mut slacks = Vec::with_capacity(omegas.len());
    for &w in &omegas {
        match eval_transfer(ss, Complex64::new(0.0, w)) {
            Ok(t) => slacks.push(Some(record(ContourPoint::Omega { omega: w }, t.t, &mut sweep))),
            Err(_) => {
                sweep.skipped += 1;
                slacks.push(None);
            }
        }
    }
    // Refine interior local minima of the worst slack in log(omega).
    let slack_at = |lw: f64| {
        eval_transfer(ss, Complex64::new(0.0, 10f64.powf(lw)))
            .map(|t| is_accretive_2x2(&t.t, opts.margin).worst_slack())
            .unwrap_or(f64::INFINITY)
    };
    for k in 1..omegas.len().saturating_sub(1) {
        let (Some(l), Some(m), Some(r)) = (slacks[k - 1], slacks[k], slacks[k + 1]) else {
            continue;
        };
        if m <= l && m <= r {
            let (lo, hi) = (omegas[k - 1].log10(), omegas[k + 1].log10());
            let lw = golden_section(&slack_at, lo, hi);
            let w = 10f64.powf(lw);
            if let Ok(t) = eval_transfer(ss, Complex64::new(0.0, w)) {
                record(ContourPoint::Omega { omega: w }, t.t, &mut sweep);
            }
        }
    }
    if c.include_infinity {
        record(ContourPoint::Infinity, transfer_at_infinity(ss), &mut sweep);
    }
    sweep
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..60 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        x1
    } else {
        x2
    }
}

/// Linear nodal realizations as seen by the lossless analysis: each model is
/// linearized at its physical operating point and, for `rx_ratio != 0`,
/// composed with `O`.
pub fn rotated_realizations(grid: &Grid, op: &OperatingPoint, models: &[NodeModel]) -> Result<Vec<NodalStateSpace>> {
    let n = grid.n_nodes();
    if models.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: models.len(),
        });
    }
    let rot = RotationO::from_rx_ratio(grid.rx_ratio());
    models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let ss = m.to_state_space(&op.physical_node(grid, i))?;
            if rot.is_identity() {
                Ok(ss)
            } else {
                ss.compose_input(&rot.o)
            }
        })
        .collect()
}

/// Evaluates the decentralized conditions for every node and line.
pub fn certify(grid: &Grid, op: &OperatingPoint, models: &[NodeModel], opts: &CertifyOptions) -> Result<CertificateReport> {
    opts.contour.validate()?;
    let n_nodes = grid.n_nodes();
    if op.n_nodes() != n_nodes {
        return Err(Error::DimensionMismatch {
            expected: n_nodes,
            found: op.n_nodes(),
        });
    }
    let l = grid.laplacian();
    let realizations = rotated_realizations(grid, op, models)?;
    let alpha: Vec<f64> = realizations.iter().map(|ss| ss.alpha()).collect();

    let mut notes = Vec::new();
    let mut failures = Vec::new();

    // Lines: phase differences and directed bounds.
    let mut edge_phase_ok = Vec::with_capacity(grid.branches().len());
    let mut node_phase_ok = vec![true; n_nodes];
    for br in grid.branches() {
        let ok = check_phase(br.from, br.to, phase_diff(op, br.from, br.to)).is_ok();
        if !ok {
            node_phase_ok[br.from] = false;
            node_phase_ok[br.to] = false;
        }
        edge_phase_ok.push(ok);
    }

    // Nodes.
    let mut per_node = Vec::with_capacity(n_nodes);
    let mut node_phase_intervals = Vec::new();
    for (i, (model, ss)) in models.iter().zip(&realizations).enumerate() {
        let internal_stable = internal_stability(ss);
        let sweep = sweep_contour(ss, opts, opts.phase_diagnostics);
        if sweep.skipped > 0 {
            notes.push(format!(
                "node {i}: {} contour samples skipped at poles of the realization",
                sweep.skipped
            ));
        }
        if model.zero_feedthrough() && !sweep.accretive {
            notes.push(format!(
                "node {i}: delta = 0 leaves Re T_wp = 0 at s = j inf, so strict accretivity fails there; \
                 the conditions hold for every small positive delta, which gives semi-stability at delta = 0"
            ));
        }
        if opts.phase_diagnostics {
            let mut ivs = Vec::with_capacity(sweep.samples.len());
            for t in &sweep.samples {
                let m = DMatrix::from_fn(2, 2, |r, c| t[(r, c)]);
                ivs.push(phase::phases(&m, 1e-9)?);
            }
            let iv = combined_phase_bounds(&ivs)?;
            node_phase_intervals.push(iv);
        }

        let (alpha_theory_n, alpha_edge_min, alpha_ok, route) = if node_phase_ok[i] {
            let th = alpha_theory(&l, op, i)?;
            let tol = alpha_tolerance(grid, op, i);
            let edge_min: f64 = grid
                .neighbors(i)
                .iter()
                .map(|&(m, b)| {
                    let (bound, _) = alpha_edge_bound(op, (i, m))?;
                    Ok(2.0 * op.v[i] * b * bound)
                })
                .sum::<Result<f64>>()?;
            if alpha[i] >= th - tol {
                (Some(th), Some(edge_min), true, AlphaRoute::NodeWise)
            } else if alpha[i] >= edge_min - tol {
                (Some(th), Some(edge_min), true, AlphaRoute::EdgeWise)
            } else {
                (Some(th), Some(edge_min), false, AlphaRoute::Failed)
            }
        } else {
            (None, None, false, AlphaRoute::Failed)
        };

        if !internal_stable {
            failures.push(Failure {
                location: Location::Node { node: i },
                condition: Condition::InternalStability,
            });
        }
        if !sweep.accretive {
            failures.push(Failure {
                location: Location::Node { node: i },
                condition: Condition::Accretivity,
            });
        }
        if !alpha_ok && node_phase_ok[i] {
            failures.push(Failure {
                location: Location::Node { node: i },
                condition: Condition::AlphaBound,
            });
        }
        per_node.push(NodeReport {
            node: i,
            model: model.type_name().to_string(),
            internal_stable,
            accretive: sweep.accretive,
            worst_s: sweep.worst,
            worst_slack_trace: sweep.worst_trace,
            worst_slack_det: sweep.worst_det,
            samples_evaluated: sweep.evaluated,
            samples_skipped: sweep.skipped,
            alpha: alpha[i],
            alpha_theory: alpha_theory_n,
            alpha_edge_min,
            alpha_ok,
            alpha_route: route,
            phase: node_phase_intervals.last().copied().filter(|_| opts.phase_diagnostics),
        });
    }

    // Edge blocks of the network response.
    let all_phases_ok = edge_phase_ok.iter().all(|&ok| ok);
    let shares = if all_phases_ok {
        Some(decompose_unchecked(grid, op, &alpha, opts.strategy)?)
    } else {
        None
    };
    let mut per_edge = Vec::with_capacity(grid.branches().len());
    let mut edge_intervals = Vec::new();
    for (k, br) in grid.branches().iter().enumerate() {
        let diff = phase_diff(op, br.from, br.to);
        let mut report = EdgeReport {
            from: br.from,
            to: br.to,
            phase_diff: diff,
            phase_ok: edge_phase_ok[k],
            edge_psd_ok: false,
            min_eigenvalue: None,
            alpha_prime_used: None,
            bound: None,
        };
        if let Some(shares) = &shares {
            let s = shares[k];
            let em = build_edge_matrix(&l, op, (br.from, br.to), s.alpha_nm, s.alpha_mn)?;
            let check = check_edge(&em, opts.edge_tol)?;
            report.edge_psd_ok = check.pass;
            report.min_eigenvalue = Some(check.psd.min_eigenvalue);
            report.alpha_prime_used = Some((s.alpha_nm, s.alpha_mn));
            report.bound = check.bound_nm.zip(check.bound_mn);
            if opts.phase_diagnostics {
                edge_intervals.push(phase::phases(&em.j_e, opts.edge_tol * em.b.max(1.0))?);
            }
            // A deficit at an endpoint already explains a failing block.
            if !check.pass && per_node[br.from].alpha_ok && per_node[br.to].alpha_ok {
                failures.push(Failure {
                    location: Location::Edge { from: br.from, to: br.to },
                    condition: Condition::EdgePsd,
                });
            }
        }
        if !report.phase_ok {
            failures.push(Failure {
                location: Location::Edge { from: br.from, to: br.to },
                condition: Condition::PhaseDifference,
            });
        }
        per_edge.push(report);
    }

    let phase_diagnostics = if opts.phase_diagnostics && !edge_intervals.is_empty() {
        let node_phases = combined_phase_bounds(&node_phase_intervals)?;
        let edge_phases = combined_phase_bounds(&edge_intervals)?;
        let network_phases = PhaseInterval::new(
            edge_phases.phi_min - FRAC_PI_2,
            edge_phases.phi_max - FRAC_PI_2,
            edge_phases.sectoriality,
            edge_phases.contains_zero,
        );
        let lo = node_phases.phi_min + network_phases.phi_min;
        let hi = node_phases.phi_max + network_phases.phi_max;
        let within = node_phases.sectoriality != Sectoriality::NonSectorial
            && network_phases.sectoriality != Sectoriality::NonSectorial
            && lo > -PI
            && hi < PI;
        Some(PhaseDiagnostics {
            node_phases,
            edge_phases,
            network_phases,
            loop_phase_min: lo,
            loop_phase_max: hi,
            loop_within_pi: within,
        })
    } else {
        None
    };

    let all_pass = per_node
        .iter()
        .all(|n| n.internal_stable && n.accretive && n.alpha_ok)
        && per_edge.iter().all(|e| e.phase_ok && e.edge_psd_ok);
    debug_assert_eq!(all_pass, failures.is_empty());
    Ok(CertificateReport {
        verdict: if all_pass {
            Verdict::CertifiedStable
        } else {
            Verdict::NotCertified
        },
        rx_ratio: grid.rx_ratio(),
        per_node,
        per_edge,
        failure_attribution: failures,
        notes,
        phase_diagnostics,
    })
}
