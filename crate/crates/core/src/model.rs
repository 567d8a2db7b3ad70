//! Reduced-order model: planar state, control-affine dynamics and the input box.

use nalgebra::{Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;

/// ROM state x = [p; v].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub p: Vec2,
    pub v: Vec2,
}

impl State {
    pub fn new(px: f64, py: f64, vx: f64, vy: f64) -> Self {
        Self {
            p: Vec2::new(px, py),
            v: Vec2::new(vx, vy),
        }
    }

    pub fn at_rest(p: Vec2) -> Self {
        Self { p, v: Vec2::zeros() }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.p.x, self.p.y, self.v.x, self.v.y)
    }

    pub fn from_vector(x: &Vector4<f64>) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }
}

/// Control-affine dynamics ẋ = f(x) + g(x) u on the 4-dimensional ROM state.
pub trait RomDynamics {
    fn drift(&self, x: &State) -> Vector4<f64>;
    fn input_matrix(&self, x: &State) -> Matrix4x2<f64>;

    fn derivative(&self, x: &State, u: &Vec2) -> Vector4<f64> {
        self.drift(x) + self.input_matrix(x) * u
    }
}

/// Planar double integrator: f(x) = [v; 0], g(x) = [0; I₂].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoubleIntegrator;

impl RomDynamics for DoubleIntegrator {
    fn drift(&self, x: &State) -> Vector4<f64> {
        Vector4::new(x.v.x, x.v.y, 0.0, 0.0)
    }

    fn input_matrix(&self, _x: &State) -> Matrix4x2<f64> {
        Matrix4x2::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0)
    }
}

/// Axis-aligned admissible input set. Infinite bounds are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lower: Vec2,
    pub upper: Vec2,
}

impl InputBox {
    /// |u_i| ≤ limit on both axes.
    pub fn symmetric(limit: f64) -> Self {
        Self {
            lower: Vec2::repeat(-limit),
            upper: Vec2::repeat(limit),
        }
    }

    pub fn unbounded() -> Self {
        Self::symmetric(f64::INFINITY)
    }

    pub fn is_valid(&self) -> bool {
        (0..2).all(|i| !self.lower[i].is_nan() && !self.upper[i].is_nan() && self.lower[i] <= self.upper[i])
    }

    pub fn contains(&self, u: &Vec2, tol: f64) -> bool {
        (0..2).all(|i| u[i] >= self.lower[i] - tol && u[i] <= self.upper[i] + tol)
    }

    pub fn clamp(&self, u: &Vec2) -> Vec2 {
        Vec2::new(
            u.x.clamp(self.lower.x, self.upper.x),
            u.y.clamp(self.lower.y, self.upper.y),
        )
    }
}
