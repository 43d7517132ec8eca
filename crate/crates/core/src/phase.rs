//! Numerical ranges, matrix phases and small definiteness tests.
//!
//! Everything here is driven by the support function of the numerical range,
//!
//! ```text
//! h(theta) = lambda_max( (e^{-j theta} M + e^{j theta} M^H) / 2 ),
//! ```
//!
//! which is the largest projection of `W(M)` onto the direction `e^{j theta}`.
//! `0` lies outside `W(M)` iff `h` is negative somewhere, and the arc where
//! `h <= 0` is dual to the cone spanned by `W(M)`, which gives the phases
//! directly.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sectoriality {
    Sectorial,
    QuasiSectorial,
    SemiSectorial,
    NonSectorial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseInterval {
    pub phi_min: f64,
    pub phi_max: f64,
    pub delta: f64,
    pub sectoriality: Sectoriality,
    pub contains_zero: bool,
    /// Set for the zero matrix, whose phases are undefined.
    pub empty: bool,
}

impl PhaseInterval {
    pub fn new(phi_min: f64, phi_max: f64, sectoriality: Sectoriality, contains_zero: bool) -> Self {
        Self {
            phi_min,
            phi_max,
            delta: phi_max - phi_min,
            sectoriality,
            contains_zero,
            empty: false,
        }
    }

    fn whole_plane() -> Self {
        Self::new(-PI, PI, Sectoriality::NonSectorial, true)
    }

    fn center(&self) -> f64 {
        0.5 * (self.phi_min + self.phi_max)
    }

    /// Strictly inside `(lo, hi)`.
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        !self.empty && self.phi_min > lo && self.phi_max < hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBoundary {
    pub points: Vec<Complex64>,
    pub n_angles: usize,
}

fn check_square(m: &DMatrix<Complex64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn rotated_hermitian_part(m: &DMatrix<Complex64>, theta: f64) -> DMatrix<Complex64> {
    let r = Complex64::from_polar(1.0, -theta);
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (r * m[(i, j)] + (r * m[(j, i)]).conj()))
}

/// Boundary samples `u^H M u` at the angles `theta_k = pi k / n_angles`,
/// `k = 0 .. 2 n_angles - 1`, with `u` the top eigenvector of the rotated
/// Hermitian part.
pub fn numerical_range_boundary(m: &DMatrix<Complex64>, n_angles: usize) -> Result<RangeBoundary> {
    check_square(m)?;
    if n_angles < 8 {
        return Err(Error::InvalidArgument(format!("n_angles must be >= 8, got {n_angles}")));
    }
    let n = m.nrows();
    let mut points = Vec::with_capacity(2 * n_angles);
    if n == 0 {
        return Ok(RangeBoundary { points, n_angles });
    }
    for k in 0..2 * n_angles {
        let theta = PI * k as f64 / n_angles as f64;
        let eig = SymmetricEigen::new(rotated_hermitian_part(m, theta));
        let top = eig.eigenvalues.imax();
        let u = eig.eigenvectors.column(top);
        let mu = m * u;
        points.push(u.dotc(&mu));
    }
    Ok(RangeBoundary { points, n_angles })
}

/// Support function of `W(M)`, with a closed form for 2x2 inputs.
fn support(m: &DMatrix<Complex64>) -> impl Fn(f64) -> f64 + '_ {
    move |theta: f64| {
        if m.nrows() == 2 {
            let r = Complex64::from_polar(1.0, -theta);
            let a = (r * m[(0, 0)]).re;
            let d = (r * m[(1, 1)]).re;
            let b = 0.5 * (r * m[(0, 1)] + (r * m[(1, 0)]).conj());
            0.5 * (a + d) + (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt()
        } else {
            SymmetricEigen::new(rotated_hermitian_part(m, theta)).eigenvalues.max()
        }
    }
}

const SAMPLE_ANGLES: usize = 720;

/// Phase interval of `M` and its sectoriality class.
///
/// `tol` is the distance from the origin to `W(M)` below which the origin is
/// treated as a boundary point.
pub fn phases(m: &DMatrix<Complex64>, tol: f64) -> Result<PhaseInterval> {
    check_square(m)?;
    let scale = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok(PhaseInterval {
            empty: true,
            ..PhaseInterval::whole_plane()
        });
    }
    let h = support(m);
    let step = TAU / SAMPLE_ANGLES as f64;
    let samples: Vec<f64> = (0..SAMPLE_ANGLES).map(|k| h(k as f64 * step)).collect();
    let k_min = (0..SAMPLE_ANGLES)
        .min_by(|&a, &b| samples[a].total_cmp(&samples[b]))
        .expect("nonempty sample set");
    let (theta_min, h_min) = golden_min(&h, (k_min as f64 - 1.0) * step, (k_min as f64 + 1.0) * step);
    let (theta_min, h_min) = if h_min <= samples[k_min] {
        (theta_min, h_min)
    } else {
        (k_min as f64 * step, samples[k_min])
    };

    if h_min > tol {
        return Ok(PhaseInterval::whole_plane());
    }
    // On the boundary, widen the level set slightly beyond roundoff so that
    // smooth tangencies at the origin still produce a nondegenerate arc.
    let on_boundary = h_min >= -tol;
    let level = if on_boundary {
        h_min.max(0.0) + 64.0 * f64::EPSILON * scale
    } else {
        0.0
    };
    let (theta_a, theta_b) = level_arc(&h, theta_min, level, step);
    let mut phi_max = theta_a - PI / 2.0;
    let mut phi_min = theta_b + PI / 2.0 - TAU;
    let c = 0.5 * (phi_min + phi_max);
    let shift = TAU * ((c + PI) / TAU).floor();
    phi_min -= shift;
    phi_max -= shift;
    if phi_min > phi_max {
        // Level arc longer than a half turn can only arise from roundoff.
        phi_min = phi_max;
    }
    let delta = phi_max - phi_min;
    let class = if !on_boundary {
        Sectoriality::Sectorial
    } else if delta >= PI - 1e-6 {
        Sectoriality::SemiSectorial
    } else {
        Sectoriality::QuasiSectorial
    };
    Ok(PhaseInterval::new(phi_min, phi_max, class, on_boundary))
}

fn golden_min(h: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = h(x1);
    let mut f2 = h(x2);
    for _ in 0..80 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = h(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = h(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Endpoints `theta_a <= theta_min <= theta_b` of the connected arc where
/// `h <= level`.
fn level_arc(h: &impl Fn(f64) -> f64, theta_min: f64, level: f64, step: f64) -> (f64, f64) {
    let edge = |dir: f64| {
        let mut inside = theta_min;
        let mut outside = theta_min + dir * step;
        let mut travelled = step;
        while h(outside) <= level {
            inside = outside;
            travelled += step;
            if travelled > PI {
                return inside;
            }
            outside += dir * step;
        }
        for _ in 0..100 {
            let mid = 0.5 * (inside + outside);
            if h(mid) <= level {
                inside = mid;
            } else {
                outside = mid;
            }
            if (outside - inside).abs() < 1e-15 {
                break;
            }
        }
        inside
    };
    (edge(-1.0), edge(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccretivityCheck {
    pub pass: bool,
    /// `Re T11 + Re T22`.
    pub slack_trace: f64,
    /// `Re T11 Re T22 - |T21 + conj T12|^2 / 4`.
    pub slack_det: f64,
}

impl AccretivityCheck {
    pub fn worst_slack(&self) -> f64 {
        self.slack_trace.min(self.slack_det)
    }
}

/// Strict accretivity of a 2x2 matrix through the trace and determinant of
/// its Hermitian part.
pub fn is_accretive_2x2(t: &Matrix2<Complex64>, margin: f64) -> AccretivityCheck {
    let a = t[(0, 0)].re;
    let d = t[(1, 1)].re;
    let slack_trace = a + d;
    let slack_det = a * d - 0.25 * (t[(1, 0)] + t[(0, 1)].conj()).norm_sqr();
    AccretivityCheck {
        pass: slack_trace > margin && slack_det > margin,
        slack_trace,
        slack_det,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdCheck {
    pub pass: bool,
    pub min_eigenvalue: f64,
}

pub fn hermitian_residual(h: &DMatrix<Complex64>) -> f64 {
    let mut r = 0.0f64;
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            r = r.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    r
}

/// `lambda_min(H) >= -tol`.
pub fn psd_check(h: &DMatrix<Complex64>, tol: f64) -> Result<PsdCheck> {
    let residual = hermitian_residual(h);
    let scale = h.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if residual > tol * scale {
        return Err(Error::NotHermitian { residual });
    }
    let min_eigenvalue = if h.nrows() == 0 {
        0.0
    } else {
        SymmetricEigen::new(h.clone()).eigenvalues.min()
    };
    Ok(PsdCheck {
        pass: min_eigenvalue >= -tol,
        min_eigenvalue,
    })
}

/// Phase bounds of a block-diagonal operator from those of its blocks.
///
/// Intervals are unwrapped around the first one so that intervals straddling
/// the branch cut combine correctly.
pub fn combined_phase_bounds(intervals: &[PhaseInterval]) -> Result<PhaseInterval> {
    let first = intervals
        .first()
        .ok_or_else(|| Error::InvalidArgument("no intervals to combine".into()))?;
    if intervals.iter().any(|i| i.empty || i.sectoriality == Sectoriality::NonSectorial) {
        return Ok(PhaseInterval::whole_plane());
    }
    let c0 = first.center();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for iv in intervals {
        let shift = TAU * ((iv.center() - c0 + PI) / TAU).floor();
        lo = lo.min(iv.phi_min - shift);
        hi = hi.max(iv.phi_max - shift);
    }
    let delta = hi - lo;
    let any_zero = intervals.iter().any(|i| i.contains_zero);
    let (class, contains_zero) = if delta > PI + 1e-12 {
        (Sectoriality::NonSectorial, true)
    } else if !any_zero && delta < PI {
        (Sectoriality::Sectorial, false)
    } else if delta < PI {
        (Sectoriality::QuasiSectorial, true)
    } else {
        (Sectoriality::SemiSectorial, true)
    };
    Ok(PhaseInterval::new(lo, hi, class, contains_zero))
}
