//! Network topology, the susceptance Laplacian and nodal power injections.
//!
//! The grid stores one susceptance magnitude `b > 0` per line plus a single
//! R/X ratio shared by all lines. Everything downstream works with the real
//! Laplacian `L` built from the susceptances; the R/X ratio only enters as a
//! rotation of the nodal (q, p) channels.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A line between two distinct nodes (0-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Susceptance magnitude in p.u.
    pub b: f64,
}

impl Branch {
    pub fn new(from: usize, to: usize, b: f64) -> Self {
        Self { from, to, b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    n_nodes: usize,
    branches: Vec<Branch>,
    rx_ratio: f64,
    #[serde(skip)]
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Grid {
    /// Validates the branch list and builds the adjacency structure.
    ///
    /// Rejects self loops, nonpositive or non-finite susceptances, duplicate
    /// node pairs (in either orientation), out-of-range ids and disconnected
    /// graphs.
    pub fn new(n_nodes: usize, branches: Vec<Branch>, rx_ratio: f64) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidGrid("grid has no nodes".into()));
        }
        if !rx_ratio.is_finite() || rx_ratio < 0.0 {
            return Err(Error::InvalidGrid(format!("rx_ratio must be finite and >= 0, got {rx_ratio}")));
        }
        let mut seen = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); n_nodes];
        for (k, br) in branches.iter().enumerate() {
            if br.from >= n_nodes || br.to >= n_nodes {
                return Err(Error::InvalidGrid(format!(
                    "branch {k}: node id out of range ({} -> {}, n_nodes = {n_nodes})",
                    br.from, br.to
                )));
            }
            if br.from == br.to {
                return Err(Error::InvalidGrid(format!("branch {k}: self loop at node {}", br.from)));
            }
            if !(br.b.is_finite() && br.b > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "branch {k}: nonpositive susceptance b = {}",
                    br.b
                )));
            }
            let key = (br.from.min(br.to), br.from.max(br.to));
            if !seen.insert(key) {
                return Err(Error::InvalidGrid(format!(
                    "branch {k}: duplicate branch between {} and {}",
                    key.0, key.1
                )));
            }
            adjacency[br.from].push((br.to, br.b));
            adjacency[br.to].push((br.from, br.b));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(m, _)| m);
        }

        let mut visited = vec![false; n_nodes];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(n) = queue.pop_front() {
            for &(m, _) in &adjacency[n] {
                if !visited[m] {
                    visited[m] = true;
                    queue.push_back(m);
                }
            }
        }
        if let Some(node) = visited.iter().position(|v| !v) {
            return Err(Error::Disconnected { node });
        }

        Ok(Self {
            n_nodes,
            branches,
            rx_ratio,
            adjacency,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// R/X ratio `tan(kappa)` shared by every line.
    pub fn rx_ratio(&self) -> f64 {
        self.rx_ratio
    }

    pub fn kappa(&self) -> f64 {
        self.rx_ratio.atan()
    }

    /// Same topology with a different R/X ratio.
    pub fn with_rx_ratio(&self, rx_ratio: f64) -> Result<Self> {
        Self::new(self.n_nodes, self.branches.clone(), rx_ratio)
    }

    /// Neighbors of `n` with the connecting susceptance, sorted by node id.
    pub fn neighbors(&self, n: usize) -> &[(usize, f64)] {
        &self.adjacency[n]
    }

    pub fn susceptance(&self, n: usize, m: usize) -> Option<f64> {
        self.adjacency
            .get(n)?
            .iter()
            .find_map(|&(k, b)| (k == m).then_some(b))
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        build_laplacian(self)
    }

    /// Physical injections from the Laplacian ones: `[q; p] -> O(R/X) [q; p]`.
    ///
    /// With `b` the line susceptance the lossy admittance is
    /// `Y = -j (1 + j R/X) L`, so the rotation is exact.
    pub fn physical_injection(&self, q: f64, p: f64) -> (f64, f64) {
        let t = self.rx_ratio;
        if t == 0.0 {
            return (q, p);
        }
        (q - t * p, t * q + p)
    }
}

/// Real symmetric Laplacian: `L_nm = -b_nm`, `L_nn = sum_m b_nm`.
pub fn build_laplacian(grid: &Grid) -> DMatrix<f64> {
    let n = grid.n_nodes();
    let mut l = DMatrix::zeros(n, n);
    for br in grid.branches() {
        l[(br.from, br.to)] -= br.b;
        l[(br.to, br.from)] -= br.b;
        l[(br.from, br.from)] += br.b;
        l[(br.to, br.to)] += br.b;
    }
    l
}

/// Operating state at one node, as seen by its controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeOperatingPoint {
    pub v: f64,
    pub p: f64,
    pub q: f64,
}

/// Voltage magnitudes and phases plus the injections they induce.
///
/// `p` and `q` are the injections through the susceptance Laplacian. On a
/// lossy grid the physical injections are obtained with
/// [`Grid::physical_injection`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: Vec<f64>,
    pub phi: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl OperatingPoint {
    /// Builds a self-consistent operating point from voltage phasors in polar form.
    pub fn from_polar(laplacian: &DMatrix<f64>, v: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let n = laplacian.nrows();
        check_len(n, v.len())?;
        check_len(n, phi.len())?;
        check_voltages(&v)?;
        let (p, q) = trig_power(laplacian, &v, &phi);
        Ok(Self { v, phi, p, q })
    }

    /// Flat start: unit magnitudes, zero phases, zero injections.
    pub fn flat(n: usize) -> Self {
        Self {
            v: vec![1.0; n],
            phi: vec![0.0; n],
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.v.len()
    }

    pub fn node(&self, n: usize) -> NodeOperatingPoint {
        NodeOperatingPoint {
            v: self.v[n],
            p: self.p[n],
            q: self.q[n],
        }
    }

    /// Node operating point with the physical (possibly lossy) injections.
    pub fn physical_node(&self, grid: &Grid, n: usize) -> NodeOperatingPoint {
        let (q, p) = grid.physical_injection(self.q[n], self.p[n]);
        NodeOperatingPoint { v: self.v[n], p, q }
    }

    pub fn phasors(&self) -> Vec<Complex64> {
        self.v
            .iter()
            .zip(&self.phi)
            .map(|(&v, &phi)| Complex64::from_polar(v, phi))
            .collect()
    }

    /// Largest deviation of the stored injections from those induced by (V, phi).
    pub fn consistency_residual(&self, laplacian: &DMatrix<f64>) -> f64 {
        let (p, q) = trig_power(laplacian, &self.v, &self.phi);
        p.iter()
            .zip(&self.p)
            .chain(q.iter().zip(&self.q))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn check_voltages(v: &[f64]) -> Result<()> {
    for (node, &value) in v.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveVoltage { node, value });
        }
    }
    Ok(())
}

/// Hermitian matrix of complex couplings `K_nm = conj(v_n) L_nm v_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexCouplings(DMatrix<Complex64>);

impl ComplexCouplings {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn n_nodes(&self) -> usize {
        self.0.nrows()
    }

    /// Max |K - K^H| entry.
    pub fn hermitian_residual(&self) -> f64 {
        let k = &self.0;
        let mut r = 0.0f64;
        for i in 0..k.nrows() {
            for j in 0..k.ncols() {
                r = r.max((k[(i, j)] - k[(j, i)].conj()).norm());
            }
        }
        r
    }
}

pub fn complex_couplings(laplacian: &DMatrix<f64>, op: &OperatingPoint) -> Result<ComplexCouplings> {
    let n = laplacian.nrows();
    if laplacian.ncols() != n {
        return Err(Error::NonSquare {
            rows: n,
            cols: laplacian.ncols(),
        });
    }
    check_len(n, op.n_nodes())?;
    check_voltages(&op.v)?;
    let vs = op.phasors();
    let k = DMatrix::from_fn(n, n, |i, j| vs[i].conj() * laplacian[(i, j)] * vs[j]);
    Ok(ComplexCouplings(k))
}

/// Complex nodal power `sigma_n = q_n + j p_n`, the row sums of `K`.
pub fn nodal_power(k: &ComplexCouplings) -> Vec<Complex64> {
    k.0.row_iter().map(|row| row.iter().sum()).collect()
}

/// Closed-form injections `(p, q)` induced by (V, phi) through `L`.
pub fn trig_power(laplacian: &DMatrix<f64>, v: &[f64], phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let b = -laplacian[(i, j)];
            if b == 0.0 {
                continue;
            }
            let d = phi[i] - phi[j];
            p[i] += b * v[i] * v[j] * d.sin();
            q[i] += b * (v[i] * v[i] - v[i] * v[j] * d.cos());
        }
    }
    (p, q)
}

/// Partial derivatives of the Laplacian injections with respect to phases and magnitudes.
#[derive(Debug, Clone)]
pub struct PowerSensitivities {
    pub dp_dphi: DMatrix<f64>,
    pub dp_dv: DMatrix<f64>,
    pub dq_dphi: DMatrix<f64>,
    pub dq_dv: DMatrix<f64>,
}

pub fn power_sensitivities(laplacian: &DMatrix<f64>, v: &[f64], phi: &[f64]) -> PowerSensitivities {
    let n = v.len();
    let mut s = PowerSensitivities {
        dp_dphi: DMatrix::zeros(n, n),
        dp_dv: DMatrix::zeros(n, n),
        dq_dphi: DMatrix::zeros(n, n),
        dq_dv: DMatrix::zeros(n, n),
    };
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let b = -laplacian[(i, j)];
            if b == 0.0 {
                continue;
            }
            let d = phi[i] - phi[j];
            let (sin, cos) = d.sin_cos();
            let vv = v[i] * v[j];

            s.dp_dphi[(i, i)] += b * vv * cos;
            s.dp_dphi[(i, j)] -= b * vv * cos;
            s.dp_dv[(i, i)] += b * v[j] * sin;
            s.dp_dv[(i, j)] += b * v[i] * sin;

            s.dq_dphi[(i, i)] += b * vv * sin;
            s.dq_dphi[(i, j)] -= b * vv * sin;
            s.dq_dv[(i, i)] += b * (2.0 * v[i] - v[j] * cos);
            s.dq_dv[(i, j)] -= b * v[i] * cos;
        }
    }
    s
}
