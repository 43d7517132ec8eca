//! Nodal dynamic models and their linear realizations.
//!
//! Every model is linearized into a [`NodalStateSpace`] whose transfer matrix
//! maps `[dq_hat; dp]` to `[rho; omega]` with a leading minus sign:
//!
//! ```text
//! [rho; omega] = -T(s) [dq_hat; dp],   T(s) = D + C (sI - A)^-1 B
//! ```
//!
//! where `q_hat = q + alpha V`, `rho = dV/dt / V` and `omega = dphi/dt`.

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::NodeOperatingPoint;

/// Constant-gain droop with cross couplings.
///
/// Linearized law: `omega = -(c_wq dq_hat + c_wp dp)`,
/// `rho = -(c_vq dq_hat + c_vp dp)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizedDroop {
    pub c_wp: f64,
    pub c_wq: f64,
    pub c_vp: f64,
    pub c_vq: f64,
    pub alpha: f64,
}

impl GeneralizedDroop {
    pub fn diagonal(c_vq: f64, c_wp: f64, alpha: f64) -> Self {
        Self {
            c_wp,
            c_wq: 0.0,
            c_vp: 0.0,
            c_vq,
            alpha,
        }
    }
}

/// Inverter with low-pass filtered frequency droop and first-order voltage droop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThirdOrderInverter {
    pub tau_p: f64,
    pub tau_q: f64,
    pub damping: f64,
    pub k_p: f64,
    /// Reactive droop gain; the droop ratio is `1 / k_q`.
    pub k_q: f64,
    pub delta: f64,
}

/// Third-order (flux-decay) synchronous machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThirdOrderMachine {
    pub tau_v: f64,
    /// Transient reactance.
    pub x: f64,
    pub tau_p: f64,
    pub damping: f64,
    pub k_p: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeModel {
    GeneralizedDroop(GeneralizedDroop),
    ThirdOrderInverter(ThirdOrderInverter),
    ThirdOrderMachine(ThirdOrderMachine),
}

impl From<GeneralizedDroop> for NodeModel {
    fn from(m: GeneralizedDroop) -> Self {
        NodeModel::GeneralizedDroop(m)
    }
}

impl From<ThirdOrderInverter> for NodeModel {
    fn from(m: ThirdOrderInverter) -> Self {
        NodeModel::ThirdOrderInverter(m)
    }
}

impl From<ThirdOrderMachine> for NodeModel {
    fn from(m: ThirdOrderMachine) -> Self {
        NodeModel::ThirdOrderMachine(m)
    }
}

/// Linear nodal realization `(A, B, C, D)` with the droop ratio `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalStateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: Matrix2<f64>,
    alpha: f64,
    poles: Vec<Complex64>,
}

impl NodalStateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: Matrix2<f64>, alpha: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::NonSquare {
                rows: n,
                cols: a.ncols(),
            });
        }
        for (dims, expected) in [(b.shape(), (n, 2)), (c.shape(), (2, n))] {
            if dims != expected {
                return Err(Error::InvalidModel(format!(
                    "realization block has shape {dims:?}, expected {expected:?}"
                )));
            }
        }
        let all_finite = a.iter().chain(b.iter()).chain(c.iter()).chain(d.iter()).all(|x| x.is_finite());
        if !all_finite || !alpha.is_finite() {
            return Err(Error::InvalidModel("non-finite realization entry".into()));
        }
        let poles = if n == 0 {
            Vec::new()
        } else {
            a.complex_eigenvalues().iter().copied().collect()
        };
        Ok(Self { a, b, c, d, alpha, poles })
    }

    /// Static gain `T = D`.
    pub fn static_gain(d: Matrix2<f64>, alpha: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, 2), DMatrix::zeros(2, 0), d, alpha)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &Matrix2<f64> {
        &self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_var(&self) -> usize {
        self.a.nrows()
    }

    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    /// Same realization with the inputs mixed by `O`: `T(s) -> T(s) O`.
    pub fn compose_input(&self, o: &Matrix2<f64>) -> Result<Self> {
        let b = &self.b * DMatrix::from_column_slice(2, 2, o.as_slice());
        Self::new(self.a.clone(), b, self.c.clone(), self.d * o, self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferSample {
    pub s: Complex64,
    /// Rows (rho, omega), columns (q_hat, p).
    pub t: Matrix2<Complex64>,
}

pub fn eval_transfer(ss: &NodalStateSpace, s: Complex64) -> Result<TransferSample> {
    let d = ss.d.map(|x| Complex64::new(x, 0.0));
    let n = ss.n_var();
    if n == 0 {
        return Ok(TransferSample { s, t: d });
    }
    if ss.poles.iter().any(|p| (p - s).norm() <= 1e-12) {
        return Err(Error::Pole { s });
    }
    let resolvent = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
        diag - ss.a[(i, j)]
    });
    let b = ss.b.map(|x| Complex64::new(x, 0.0));
    let x = resolvent.lu().solve(&b).ok_or(Error::Pole { s })?;
    let cx = ss.c.map(|v| Complex64::new(v, 0.0)) * x;
    let t = d + Matrix2::from_fn(|i, j| cx[(i, j)]);
    Ok(TransferSample { s, t })
}

/// The `s -> infinity` limit, which is the feed-through block.
pub fn transfer_at_infinity(ss: &NodalStateSpace) -> Matrix2<Complex64> {
    ss.d.map(|x| Complex64::new(x, 0.0))
}

/// True iff every eigenvalue of `A` has real part below `-1e-10`.
pub fn internal_stability(ss: &NodalStateSpace) -> bool {
    ss.poles.iter().all(|p| p.re < -1e-10)
}

fn mapping_factor(k_q: f64, op: &NodeOperatingPoint) -> Result<f64> {
    let c = 1.0 + 2.0 * k_q * op.q / op.v;
    if !(c > 1e-12) {
        return Err(Error::SingularMapping(format!(
            "1 + 2 k_q q/V = {c} must be positive"
        )));
    }
    Ok(c)
}

fn check_op(op: &NodeOperatingPoint) -> Result<()> {
    if !(op.v > 0.0) {
        return Err(Error::NonPositiveVoltage { node: 0, value: op.v });
    }
    Ok(())
}

/// Inverter parameters with the same transfer matrix as `machine` at `op`.
pub fn machine_to_inverter(machine: &ThirdOrderMachine, op: &NodeOperatingPoint) -> Result<ThirdOrderInverter> {
    check_op(op)?;
    if machine.x == 0.0 {
        return Err(Error::SingularMapping("X = 0 maps to k_q = 0".into()));
    }
    let denom = op.v - 2.0 * machine.x * op.q / op.v;
    if denom.abs() < 1e-12 {
        return Err(Error::SingularMapping(format!("V - 2 X q / V = {denom}")));
    }
    let k_q = machine.x / denom;
    let c = mapping_factor(k_q, op)?;
    Ok(ThirdOrderInverter {
        tau_p: machine.tau_p,
        tau_q: machine.tau_v * c,
        damping: machine.damping,
        k_p: machine.k_p,
        k_q,
        delta: machine.delta,
    })
}

/// Machine parameters `X = V k_q / c`, `tau_V = tau_q / c` with `c = 1 + 2 k_q q / V`.
pub fn inverter_to_machine(inv: &ThirdOrderInverter, op: &NodeOperatingPoint) -> Result<ThirdOrderMachine> {
    check_op(op)?;
    if inv.k_q == 0.0 {
        return Err(Error::SingularMapping("k_q = 0".into()));
    }
    let c = mapping_factor(inv.k_q, op)?;
    Ok(ThirdOrderMachine {
        tau_v: inv.tau_q / c,
        x: op.v * inv.k_q / c,
        tau_p: inv.tau_p,
        damping: inv.damping,
        k_p: inv.k_p,
        delta: inv.delta,
    })
}

/// Droop ratio of the linearized machine, `V/X - q/V`.
pub fn machine_alpha(machine: &ThirdOrderMachine, op: &NodeOperatingPoint) -> f64 {
    op.v / machine.x - op.q / op.v
}

fn positive(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::InvalidModel(format!("{name} must be positive, got {value}")));
    }
    Ok(())
}

fn finite(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::InvalidModel(format!("{name} must be finite, got {value}")));
    }
    Ok(())
}

impl NodeModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            NodeModel::GeneralizedDroop(m) => {
                for (name, v) in [("c_wp", m.c_wp), ("c_wq", m.c_wq), ("c_vp", m.c_vp), ("c_vq", m.c_vq), ("alpha", m.alpha)] {
                    finite(name, v)?;
                }
            }
            NodeModel::ThirdOrderInverter(m) => {
                positive("tau_p", m.tau_p)?;
                positive("tau_q", m.tau_q)?;
                finite("damping", m.damping)?;
                finite("k_p", m.k_p)?;
                finite("k_q", m.k_q)?;
                if m.k_q == 0.0 {
                    return Err(Error::InvalidModel("k_q must be nonzero".into()));
                }
                if !(m.delta >= 0.0) {
                    return Err(Error::InvalidModel(format!("delta must be >= 0, got {}", m.delta)));
                }
            }
            NodeModel::ThirdOrderMachine(m) => {
                positive("tau_v", m.tau_v)?;
                positive("tau_p", m.tau_p)?;
                finite("damping", m.damping)?;
                finite("k_p", m.k_p)?;
                if !(m.x >= 0.0 && m.x.is_finite()) {
                    return Err(Error::InvalidModel(format!("x must be >= 0, got {}", m.x)));
                }
                if !(m.delta >= 0.0) {
                    return Err(Error::InvalidModel(format!("delta must be >= 0, got {}", m.delta)));
                }
            }
        }
        Ok(())
    }

    pub fn n_var(&self) -> usize {
        match self {
            NodeModel::GeneralizedDroop(_) => 0,
            _ => 1,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            NodeModel::GeneralizedDroop(_) => "generalized_droop",
            NodeModel::ThirdOrderInverter(_) => "third_order_inverter",
            NodeModel::ThirdOrderMachine(_) => "third_order_machine",
        }
    }

    /// Feed-through of the frequency channel is zero (`delta = 0`).
    pub fn zero_feedthrough(&self) -> bool {
        match self {
            NodeModel::GeneralizedDroop(_) => false,
            NodeModel::ThirdOrderInverter(m) => m.delta == 0.0,
            NodeModel::ThirdOrderMachine(m) => m.delta == 0.0,
        }
    }

    /// Droop ratio at `op`.
    pub fn alpha(&self, op: &NodeOperatingPoint) -> f64 {
        match self {
            NodeModel::GeneralizedDroop(m) => m.alpha,
            NodeModel::ThirdOrderInverter(m) => 1.0 / m.k_q,
            NodeModel::ThirdOrderMachine(m) => machine_alpha(m, op),
        }
    }

    /// Copy with the droop ratio replaced. Machines have no free droop ratio.
    pub fn with_alpha(&self, alpha: f64) -> Result<NodeModel> {
        match *self {
            NodeModel::GeneralizedDroop(m) => Ok(GeneralizedDroop { alpha, ..m }.into()),
            NodeModel::ThirdOrderInverter(m) => {
                if alpha == 0.0 {
                    return Err(Error::InvalidArgument("inverter droop ratio must be nonzero".into()));
                }
                Ok(ThirdOrderInverter { k_q: 1.0 / alpha, ..m }.into())
            }
            NodeModel::ThirdOrderMachine(_) => Err(Error::InvalidModel(
                "machine droop ratio is fixed by X and the operating point".into(),
            )),
        }
    }

    pub fn to_state_space(&self, op: &NodeOperatingPoint) -> Result<NodalStateSpace> {
        self.validate()?;
        check_op(op)?;
        match self {
            NodeModel::GeneralizedDroop(m) => {
                NodalStateSpace::static_gain(Matrix2::new(m.c_vq, m.c_vp, m.c_wq, m.c_wp), m.alpha)
            }
            NodeModel::ThirdOrderInverter(m) => Ok(third_order_realization(
                m.tau_p,
                m.damping,
                m.k_p,
                m.delta,
                m.k_q / (op.v * m.tau_q),
                1.0 / m.k_q,
            )),
            // With alpha = V/X - q/V the V-feedback cancels and V' = -(X / (V tau_V)) dq_hat.
            NodeModel::ThirdOrderMachine(m) => Ok(third_order_realization(
                m.tau_p,
                m.damping,
                m.k_p,
                m.delta,
                m.x / (op.v * op.v * m.tau_v),
                machine_alpha(m, op),
            )),
        }
    }

    /// Nonlinear rates `(dphi/dt, dV/dt)`; internal state rates go to `x_dot`.
    ///
    /// `dq_hat` and `dp` are deviations of the (shifted) inputs from `op`,
    /// `v` is the current magnitude and `alpha` the droop ratio used to form
    /// `dq_hat`.
    pub fn rates(
        &self,
        op: &NodeOperatingPoint,
        alpha: f64,
        v: f64,
        x: &[f64],
        dq_hat: f64,
        dp: f64,
        x_dot: &mut [f64],
    ) -> (f64, f64) {
        match self {
            NodeModel::GeneralizedDroop(m) => {
                let phi_dot = -m.c_wq * dq_hat - m.c_wp * dp;
                let v_dot = -op.v * (m.c_vq * dq_hat + m.c_vp * dp);
                (phi_dot, v_dot)
            }
            NodeModel::ThirdOrderInverter(m) => {
                x_dot[0] = (-m.damping * x[0] - m.k_p * dp) / m.tau_p;
                (x[0] - m.delta * dp, -m.k_q * dq_hat / m.tau_q)
            }
            NodeModel::ThirdOrderMachine(m) => {
                x_dot[0] = (-m.damping * x[0] - m.k_p * dp) / m.tau_p;
                let q = op.q + dq_hat - alpha * (v - op.v);
                let v_dot = (-(v - op.v) - m.x * (q / v - op.q / op.v)) / m.tau_v;
                (x[0] - m.delta * dp, v_dot)
            }
        }
    }
}

pub fn to_state_space(model: &NodeModel, op: &NodeOperatingPoint) -> Result<NodalStateSpace> {
    model.to_state_space(op)
}

fn third_order_realization(tau_p: f64, damping: f64, k_p: f64, delta: f64, d_rho: f64, alpha: f64) -> NodalStateSpace {
    let a = DMatrix::from_element(1, 1, -damping / tau_p);
    let b = DMatrix::from_row_slice(1, 2, &[0.0, -k_p / tau_p]);
    let c = DMatrix::from_column_slice(2, 1, &[0.0, -1.0]);
    let d = Matrix2::new(d_rho, 0.0, 0.0, delta);
    NodalStateSpace::new(a, b, c, d, alpha).expect("third-order realization has consistent shapes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn op(v: f64, q: f64) -> NodeOperatingPoint {
        NodeOperatingPoint { v, p: 0.0, q }
    }

    fn inverter(tau_p: f64, damping: f64, k_p: f64, delta: f64) -> ThirdOrderInverter {
        ThirdOrderInverter {
            tau_p,
            tau_q: 0.5,
            damping,
            k_p,
            k_q: 0.1,
            delta,
        }
    }

    /// Printed closed form of the inverter transfer matrix.
    fn inverter_closed_form(m: &ThirdOrderInverter, v: f64, s: Complex64) -> Matrix2<Complex64> {
        let alpha = 1.0 / m.k_q;
        Matrix2::new(
            c(1.0 / (v * alpha * m.tau_q), 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            m.delta + m.k_p / (s * m.tau_p + m.damping),
        )
    }

    fn max_diff(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_droop() {
        let m: NodeModel = GeneralizedDroop::diagonal(1.0, 1.0, 1.0).into();
        let ss = m.to_state_space(&op(1.0, 0.0)).unwrap();
        assert_eq!(ss.n_var(), 0);
        for s in [c(0.0, 0.0), c(0.0, 3.0), c(-2.0, 1.0)] {
            assert_eq!(eval_transfer(&ss, s).unwrap().t, Matrix2::identity().map(|x: f64| c(x, 0.0)));
        }
        assert!(internal_stability(&ss));
    }

    #[test]
    fn droop_block_ordering() {
        let m = GeneralizedDroop {
            c_wp: 4.0,
            c_wq: 3.0,
            c_vp: 2.0,
            c_vq: 1.0,
            alpha: 0.0,
        };
        let ss = NodeModel::from(m).to_state_space(&op(1.1, 0.0)).unwrap();
        assert_eq!(*ss.d(), Matrix2::new(1.0, 2.0, 3.0, 4.0));
    }

    #[test]
    fn inverter_limits() {
        let m = inverter(1.0, 2.0, 4.0, 0.1);
        let o = op(1.05, 0.2);
        let ss = NodeModel::from(m).to_state_space(&o).unwrap();
        let t0 = eval_transfer(&ss, c(0.0, 0.0)).unwrap().t;
        assert!((t0[(1, 1)] - c(2.1, 0.0)).norm() < 1e-15);
        let inf = transfer_at_infinity(&ss);
        assert!((inf[(0, 0)].re - 1.0 / (1.05 * 10.0 * 0.5)).abs() < 1e-15);
        assert_eq!(inf[(1, 1)], c(0.1, 0.0));
        assert!((ss.poles()[0] - c(-2.0, 0.0)).norm() < 1e-15);
        assert!(internal_stability(&ss));
        let w = 0.7;
        let t = eval_transfer(&ss, c(0.0, w)).unwrap().t;
        assert!((t[(1, 1)] - (0.1 + 4.0 / c(2.0, w))).norm() < 1e-14);
    }

    #[test]
    fn unstable_inverter() {
        let ss = NodeModel::from(inverter(1.0, -1.0, 4.0, 0.1)).to_state_space(&op(1.0, 0.0)).unwrap();
        assert!(!internal_stability(&ss));
    }

    #[test]
    fn pole_detected() {
        let ss = NodeModel::from(inverter(1.0, 2.0, 4.0, 0.1)).to_state_space(&op(1.0, 0.0)).unwrap();
        assert!(matches!(eval_transfer(&ss, c(-2.0, 0.0)), Err(Error::Pole { .. })));
    }

    #[test]
    fn mapping_examples() {
        let inv = ThirdOrderInverter {
            k_q: 0.1,
            ..inverter(1.0, 2.0, 4.0, 0.1)
        };
        let unloaded = inverter_to_machine(&inv, &op(1.0, 0.0)).unwrap();
        assert!((unloaded.x - 0.1).abs() < 1e-15);
        assert_eq!(unloaded.tau_v, inv.tau_q);

        let loaded = inverter_to_machine(&inv, &op(1.0, 0.2)).unwrap();
        assert!((loaded.x - 0.1 / 1.04).abs() < 1e-15);
        assert!((loaded.tau_v - inv.tau_q / 1.04).abs() < 1e-15);

        let back = machine_to_inverter(&loaded, &op(1.0, 0.2)).unwrap();
        assert!((back.k_q - inv.k_q).abs() < 1e-15);
        assert!((back.tau_q - inv.tau_q).abs() < 1e-15);

        let zero_x = ThirdOrderMachine { x: 0.0, ..loaded };
        assert!(matches!(machine_to_inverter(&zero_x, &op(1.0, 0.2)), Err(Error::SingularMapping(_))));
    }

    #[test]
    fn machine_alpha_from_linearization() {
        let m = ThirdOrderMachine {
            tau_v: 2.0,
            x: 0.2,
            tau_p: 1.0,
            damping: 1.0,
            k_p: 1.0,
            delta: 0.1,
        };
        let o = op(1.02, 0.3);
        let model = NodeModel::from(m);
        let ss = model.to_state_space(&o).unwrap();
        assert!((ss.alpha() - (1.02 / 0.2 - 0.3 / 1.02)).abs() < 1e-14);

        // dV/dt around op is -(X/V) dq_hat with the machine's own alpha.
        let h = 1e-6;
        let mut xd = [0.0];
        let (_, vd) = model.rates(&o, ss.alpha(), o.v, &[0.0], h, 0.0, &mut xd);
        assert!((vd / h + m.x / (o.v * m.tau_v)).abs() < 1e-6);
        let (_, vd) = model.rates(&o, ss.alpha(), o.v + h, &[0.0], ss.alpha() * h, 0.0, &mut xd);
        assert!((vd / h + m.x * ss.alpha() / (o.v * m.tau_v)).abs() < 1e-6);
        assert!((ss.d()[(0, 0)] - m.x / (o.v * o.v * m.tau_v)).abs() < 1e-14);
    }

    #[test]
    fn machine_alpha_cannot_be_set() {
        let m = NodeModel::from(ThirdOrderMachine {
            tau_v: 2.0,
            x: 0.2,
            tau_p: 1.0,
            damping: 1.0,
            k_p: 1.0,
            delta: 0.1,
        });
        assert!(m.with_alpha(1.0).is_err());
        let inv = NodeModel::from(inverter(1.0, 1.0, 1.0, 0.0));
        match inv.with_alpha(4.0).unwrap() {
            NodeModel::ThirdOrderInverter(i) => assert_eq!(i.k_q, 0.25),
            _ => unreachable!(),
        }
    }

    #[test]
    fn input_composition() {
        let ss = NodeModel::from(inverter(1.0, 2.0, 4.0, 0.1)).to_state_space(&op(1.0, 0.0)).unwrap();
        let o = Matrix2::new(1.0, -0.3, 0.3, 1.0);
        let rot = ss.compose_input(&o).unwrap();
        let s = c(0.1, 2.0);
        let lhs = eval_transfer(&rot, s).unwrap().t;
        let rhs = eval_transfer(&ss, s).unwrap().t * o.map(|x| c(x, 0.0));
        assert!(max_diff(&lhs, &rhs) < 1e-14);
    }

    fn arb_inverter() -> impl Strategy<Value = ThirdOrderInverter> {
        (0.05f64..5.0, 0.05f64..5.0, 0.1f64..5.0, -3.0f64..3.0, 0.02f64..0.5, 0.0f64..1.0).prop_map(
            |(tau_p, tau_q, damping, k_p, k_q, delta)| ThirdOrderInverter {
                tau_p,
                tau_q,
                damping,
                k_p,
                k_q,
                delta,
            },
        )
    }

    proptest! {
        #[test]
        fn realization_matches_closed_form(
            m in arb_inverter(),
            v in 0.8f64..1.2,
            re in -3.0f64..3.0,
            im in -50.0f64..50.0,
        ) {
            let s = c(re, im);
            prop_assume!((s * m.tau_p + m.damping).norm() > 1e-3);
            let ss = NodeModel::from(m).to_state_space(&op(v, 0.0)).unwrap();
            let t = eval_transfer(&ss, s).unwrap().t;
            prop_assert!(max_diff(&t, &inverter_closed_form(&m, v, s)) < 1e-12);
        }

        #[test]
        fn conjugate_symmetry(m in arb_inverter(), w in 1e-3f64..1e3) {
            let ss = NodeModel::from(m).to_state_space(&op(1.0, 0.1)).unwrap();
            let a = eval_transfer(&ss, c(0.0, w)).unwrap().t;
            let b = eval_transfer(&ss, c(0.0, -w)).unwrap().t;
            prop_assert!(max_diff(&a.map(|z| z.conj()), &b) < 1e-14);
        }

        #[test]
        fn machine_inverter_equivalence(m in arb_inverter(), v in 0.9f64..1.1, q in -0.5f64..0.5) {
            let o = op(v, q);
            prop_assume!(1.0 + 2.0 * m.k_q * q / v > 0.05);
            let machine = inverter_to_machine(&m, &o).unwrap();
            let back = machine_to_inverter(&machine, &o).unwrap();
            prop_assert!((back.k_q - m.k_q).abs() <= 1e-12 * m.k_q.abs().max(1.0));
            prop_assert!((back.tau_q - m.tau_q).abs() <= 1e-12 * m.tau_q.max(1.0));
            let ss_i = NodeModel::from(m).to_state_space(&o).unwrap();
            let ss_m = NodeModel::from(machine).to_state_space(&o).unwrap();
            for k in 0..50 {
                let w = 10f64.powf(-3.0 + 6.0 * k as f64 / 49.0);
                let ti = eval_transfer(&ss_i, c(0.0, w)).unwrap().t;
                let tm = eval_transfer(&ss_m, c(0.0, w)).unwrap().t;
                prop_assert!(max_diff(&ti, &tm) <= 1e-12);
            }
        }
    }
}
