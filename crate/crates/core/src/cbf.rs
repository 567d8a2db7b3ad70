//! Barrier functions, class-K∞ᵉ functions and the constraint rows they induce.
//!
//! Barriers are defined on position only. Under the double integrator such a
//! barrier has relative degree two (L_g h ≡ 0), so the filters act on the
//! velocity-augmented barrier
//!
//! ```text
//! h_e(x) = h(p) + k_v ∇ₚh(p) · v
//! ```
//!
//! whose input gradient is k_v ∇ₚh. Keeping h_e ≥ 0 gives ḣ ≥ −h / k_v, so
//! h ≥ 0 stays invariant as well. Reported barrier values, set membership and
//! the weighting schedule always use the plain h.

use nalgebra::{DMatrix, DVector, Matrix2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InputBox, RomDynamics, State, Vec2};
use crate::qp::{solve_qp, QpError, QpProblem, QpStatus};

/// |h| at or below this is classified as on the boundary.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// Default velocity gain k_v of the augmented barrier, in seconds.
pub const DEFAULT_VELOCITY_GAIN: f64 = 1.0;

const SINGULAR_DISTANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CbfError {
    #[error("barrier gradient is singular at p = ({0}, {1})")]
    SingularGradient(f64, f64),
    #[error("h1(x) = {0} < 0: the constant set is empty")]
    EmptyConstantSet(f64),
    #[error("invalid barrier: {0}")]
    InvalidBarrier(String),
    #[error("at least one barrier is required")]
    NoBarriers,
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Extended class-K∞ function
///
/// ```text
/// α(h) =  φ₁ log( φ₂ h + φ₃) − φ₁ log φ₃   for h ≥ 0
/// α(h) = −φ₁ log(−φ₂ h + φ₃) + φ₁ log φ₃   for h < 0
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassKe {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
}

impl ClassKe {
    pub fn new(phi1: f64, phi2: f64, phi3: f64) -> Result<Self, CbfError> {
        let k = Self { phi1, phi2, phi3 };
        k.validate()?;
        Ok(k)
    }

    /// φ = (1, 0.5, 0.1).
    pub fn standard() -> Self {
        Self {
            phi1: 1.0,
            phi2: 0.5,
            phi3: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), CbfError> {
        let ok = [self.phi1, self.phi2, self.phi3]
            .iter()
            .all(|p| p.is_finite() && *p > 0.0);
        if ok {
            Ok(())
        } else {
            Err(CbfError::InvalidBarrier(format!(
                "class-K parameters must be positive, got ({}, {}, {})",
                self.phi1, self.phi2, self.phi3
            )))
        }
    }

    pub fn eval(&self, h: f64) -> f64 {
        // ln(1 + φ₂|h|/φ₃) is the same quantity without cancellation.
        let magnitude = self.phi1 * (self.phi2 * h.abs() / self.phi3).ln_1p();
        if h >= 0.0 {
            magnitude
        } else {
            -magnitude
        }
    }
}

impl Default for ClassKe {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BarrierKind {
    /// h = a · p + b
    Halfplane { a: Vec2, b: f64 },
    /// h = ‖p − center‖ − radius
    Circle { center: Vec2, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub shape: BarrierKind,
    #[serde(default)]
    pub alpha: ClassKe,
}

impl BarrierSpec {
    pub fn halfplane(a: Vec2, b: f64, alpha: ClassKe) -> Result<Self, CbfError> {
        let spec = Self {
            shape: BarrierKind::Halfplane { a, b },
            alpha,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn circle(center: Vec2, radius: f64, alpha: ClassKe) -> Result<Self, CbfError> {
        let spec = Self {
            shape: BarrierKind::Circle { center, radius },
            alpha,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CbfError> {
        self.alpha.validate()?;
        match self.shape {
            BarrierKind::Halfplane { a, b } => {
                if a.norm() <= 0.0 || !a.iter().all(|c| c.is_finite()) || !b.is_finite() {
                    return Err(CbfError::InvalidBarrier(format!(
                        "halfplane needs a finite non-zero normal, got a = ({}, {}), b = {b}",
                        a.x, a.y
                    )));
                }
            }
            BarrierKind::Circle { center, radius } => {
                if radius <= 0.0 || !radius.is_finite() || !center.iter().all(|c| c.is_finite()) {
                    return Err(CbfError::InvalidBarrier(format!(
                        "circle needs a finite centre and positive radius, got r = {radius}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// h(x)
    pub fn value(&self, x: &State) -> f64 {
        match self.shape {
            BarrierKind::Halfplane { a, b } => a.dot(&x.p) + b,
            BarrierKind::Circle { center, radius } => (x.p - center).norm() - radius,
        }
    }

    /// ∇ₚh
    pub fn position_gradient(&self, x: &State) -> Result<Vec2, CbfError> {
        match self.shape {
            BarrierKind::Halfplane { a, .. } => Ok(a),
            BarrierKind::Circle { center, .. } => {
                let d = x.p - center;
                let dist = d.norm();
                if dist <= SINGULAR_DISTANCE {
                    return Err(CbfError::SingularGradient(x.p.x, x.p.y));
                }
                Ok(d / dist)
            }
        }
    }

    /// ∂h/∂x; the velocity components are identically zero.
    pub fn gradient(&self, x: &State) -> Result<Vector4<f64>, CbfError> {
        let g = self.position_gradient(x)?;
        Ok(Vector4::new(g.x, g.y, 0.0, 0.0))
    }

    /// ∇ₚ²h
    pub fn position_hessian(&self, x: &State) -> Result<Matrix2<f64>, CbfError> {
        match self.shape {
            BarrierKind::Halfplane { .. } => Ok(Matrix2::zeros()),
            BarrierKind::Circle { center, .. } => {
                let d = x.p - center;
                let dist = d.norm();
                if dist <= SINGULAR_DISTANCE {
                    return Err(CbfError::SingularGradient(x.p.x, x.p.y));
                }
                let n = d / dist;
                Ok((Matrix2::identity() - n * n.transpose()) / dist)
            }
        }
    }

    /// h_e(x) = h(p) + k_v ∇ₚh · v
    pub fn augmented_value(&self, x: &State, velocity_gain: f64) -> Result<f64, CbfError> {
        Ok(self.value(x) + velocity_gain * self.position_gradient(x)?.dot(&x.v))
    }

    /// ∂h_e/∂x = [∇ₚh + k_v ∇ₚ²h v; k_v ∇ₚh]
    pub fn augmented_gradient(&self, x: &State, velocity_gain: f64) -> Result<Vector4<f64>, CbfError> {
        let g = self.position_gradient(x)?;
        let dp = g + velocity_gain * self.position_hessian(x)? * x.v;
        let dv = velocity_gain * g;
        Ok(Vector4::new(dp.x, dp.y, dv.x, dv.y))
    }
}

/// (L_f h, L_g h) of the plain barrier.
pub fn lie_derivatives<D: RomDynamics + ?Sized>(
    barrier: &BarrierSpec,
    dynamics: &D,
    x: &State,
) -> Result<(f64, Vec2), CbfError> {
    let grad = barrier.gradient(x)?;
    Ok(lie_pair(&grad, dynamics, x))
}

fn lie_pair<D: RomDynamics + ?Sized>(grad: &Vector4<f64>, dynamics: &D, x: &State) -> (f64, Vec2) {
    let lf = grad.dot(&dynamics.drift(x));
    let lg = (grad.transpose() * dynamics.input_matrix(x)).transpose();
    (lf, lg)
}

/// The affine CBF condition ḣ_e(x, u) = L_f h_e + L_g h_e u ≥ −α(h_e) for one
/// barrier at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfConstraint {
    /// Plain barrier value h(x).
    pub h: f64,
    /// Augmented barrier value h_e(x).
    pub h_aug: f64,
    pub lf: f64,
    pub lg: Vec2,
    /// α(h_e(x)).
    pub alpha: f64,
}

impl CbfConstraint {
    pub fn at<D: RomDynamics + ?Sized>(
        barrier: &BarrierSpec,
        dynamics: &D,
        x: &State,
        velocity_gain: f64,
    ) -> Result<Self, CbfError> {
        let grad = barrier.augmented_gradient(x, velocity_gain)?;
        let (lf, lg) = lie_pair(&grad, dynamics, x);
        let h_aug = barrier.augmented_value(x, velocity_gain)?;
        Ok(Self {
            h: barrier.value(x),
            h_aug,
            lf,
            lg,
            alpha: barrier.alpha.eval(h_aug),
        })
    }

    /// ḣ_e(x, u)
    pub fn hdot(&self, u: &Vec2) -> f64 {
        self.lf + self.lg.dot(u)
    }

    /// Lower bound the row imposes on L_g h_e u, i.e. −α(h_e) − L_f h_e.
    pub fn input_bound(&self) -> f64 {
        -self.alpha - self.lf
    }

    /// ḣ_e(x, u) + α(h_e); non-negative when the condition holds.
    pub fn margin(&self, u: &Vec2) -> f64 {
        self.hdot(u) + self.alpha
    }
}

/// Where a state sits relative to two safe sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetRegion {
    InteriorBoth,
    /// h₁ > 0 and h₂ < 0.
    C1MinusCap,
    /// h₂ > 0 and h₁ < 0.
    C2MinusCap,
    OutsideUnion,
    Boundary,
}

pub fn set_membership(x: &State, h1: &BarrierSpec, h2: &BarrierSpec) -> SetRegion {
    let (a, b) = (h1.value(x), h2.value(x));
    if a.abs() <= BOUNDARY_TOLERANCE || b.abs() <= BOUNDARY_TOLERANCE {
        return SetRegion::Boundary;
    }
    match (a > 0.0, b > 0.0) {
        (true, true) => SetRegion::InteriorBoth,
        (true, false) => SetRegion::C1MinusCap,
        (false, true) => SetRegion::C2MinusCap,
        (false, false) => SetRegion::OutsideUnion,
    }
}

/// Smallest c ≥ 0 with h₁(x) ≥ 0 and h₂(x) ≥ −c.
pub fn epsilon_min(x: &State, h1: &BarrierSpec, h2: &BarrierSpec) -> Result<f64, CbfError> {
    let v1 = h1.value(x);
    if v1 < 0.0 {
        return Err(CbfError::EmptyConstantSet(v1));
    }
    Ok((-h2.value(x)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Certificate {
    /// Some input in the box satisfies every condition; one such input.
    Compatible(Vec2),
    Conflicting,
}

impl Certificate {
    pub fn is_compatible(&self) -> bool {
        matches!(self, Certificate::Compatible(_))
    }
}

/// Zero-cost feasibility check of all CBF conditions jointly over the box.
pub fn conflict_certificate<D: RomDynamics + ?Sized>(
    x: &State,
    barriers: &[BarrierSpec],
    dynamics: &D,
    input_box: &InputBox,
    velocity_gain: f64,
) -> Result<Certificate, CbfError> {
    if barriers.is_empty() {
        return Err(CbfError::NoBarriers);
    }
    let rows = barriers
        .iter()
        .map(|b| CbfConstraint::at(b, dynamics, x, velocity_gain))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(certify_rows(&rows, input_box)?)
}

pub(crate) fn certify_rows(rows: &[CbfConstraint], input_box: &InputBox) -> Result<Certificate, QpError> {
    let mut a = DMatrix::zeros(rows.len(), 2);
    let mut b = DVector::zeros(rows.len());
    for (i, row) in rows.iter().enumerate() {
        a[(i, 0)] = row.lg.x;
        a[(i, 1)] = row.lg.y;
        b[i] = row.input_bound();
    }
    let problem = QpProblem::new(DMatrix::zeros(2, 2), DVector::zeros(2))
        .with_inequalities(a, b)
        .with_bounds(
            DVector::from_column_slice(input_box.lower.as_slice()),
            DVector::from_column_slice(input_box.upper.as_slice()),
        );
    let sol = solve_qp(&problem)?;
    Ok(match sol.status {
        QpStatus::Optimal => Certificate::Compatible(Vec2::new(sol.z[0], sol.z[1])),
        QpStatus::Infeasible | QpStatus::MaxIter => Certificate::Conflicting,
    })
}
