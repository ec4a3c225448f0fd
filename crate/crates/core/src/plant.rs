//! Two-link planar revolute manipulator and the reference trajectory.
//!
//! ```text
//! M(q) = [p1 + 2 p3 c2   p2 + p3 c2]     C(q, q̇) = [-p3 s2 q̇2   -p3 s2 (q̇1 + q̇2)]
//!        [p2 + p3 c2     p2        ]               [ p3 s2 q̇1    0              ]
//! F(q̇) = f_d ∘ q̇ + f_s ∘ tanh(κ_s q̇)
//! ```
//!
//! `C` uses the Christoffel convention, so `Ṁ − 2C` is skew-symmetric.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor_ops::{Mat, Vector};

pub const DOF: usize = 2;
const GRAVITY_ACCEL: f64 = 9.81;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotParams {
    /// Lumped inertia constants (kg·m²).
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    /// Link masses (kg) and lengths (m); only the gravity term uses them.
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub gravity: bool,
    /// Viscous friction (N·m·s/rad).
    pub fd: [f64; 2],
    /// Static friction (N·m).
    pub fs: [f64; 2],
    /// Static friction smoothing slope (s/rad).
    pub kappa_s: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            p1: 3.473,
            p2: 0.196,
            p3: 0.242,
            m1: 2.0,
            m2: 2.0,
            l1: 0.5,
            l2: 0.5,
            gravity: false,
            fd: [5.3, 1.1],
            fs: [8.45, 2.35],
            kappa_s: 100.0,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.p1, self.p2, self.p3, self.m1, self.m2, self.l1, self.l2, self.kappa_s];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(
                "plant inertia constants, masses, lengths and kappa_s must be positive".into(),
            ));
        }
        if self.fd.iter().chain(&self.fs).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("plant friction coefficients must be non-negative".into()));
        }
        // M(q) must stay positive definite for every q2
        if self.p1 * self.p2 - self.p2 * self.p2 - self.p3 * self.p3 <= 0.0 {
            return Err(Error::Config("plant inertia constants give a singular M(q)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    pub q: Vector,
    pub q_dot: Vector,
}

impl PlantState {
    pub fn new(q: [f64; 2], q_dot: [f64; 2]) -> Self {
        Self {
            q: Vector::from_row_slice(&q),
            q_dot: Vector::from_row_slice(&q_dot),
        }
    }
}

pub fn inertia(p: &RobotParams, q: &Vector) -> Mat {
    let c2 = q[1].cos();
    let off = p.p2 + p.p3 * c2;
    Mat::from_row_slice(2, 2, &[p.p1 + 2.0 * p.p3 * c2, off, off, p.p2])
}

pub fn inertia_rate(p: &RobotParams, q: &Vector, q_dot: &Vector) -> Mat {
    let s2 = q[1].sin();
    let d = -p.p3 * s2 * q_dot[1];
    Mat::from_row_slice(2, 2, &[2.0 * d, d, d, 0.0])
}

pub fn coriolis(p: &RobotParams, q: &Vector, q_dot: &Vector) -> Mat {
    let h = p.p3 * q[1].sin();
    Mat::from_row_slice(
        2,
        2,
        &[-h * q_dot[1], -h * (q_dot[0] + q_dot[1]), h * q_dot[0], 0.0],
    )
}

pub fn friction(p: &RobotParams, q_dot: &Vector) -> Vector {
    Vector::from_fn(DOF, |i, _| {
        p.fd[i] * q_dot[i] + p.fs[i] * (p.kappa_s * q_dot[i]).tanh()
    })
}

/// Zero unless `params.gravity` is set; links are uniform rods.
pub fn gravity(p: &RobotParams, q: &Vector) -> Vector {
    if !p.gravity {
        return Vector::zeros(DOF);
    }
    let c1 = q[0].cos();
    let c12 = (q[0] + q[1]).cos();
    let lc1 = 0.5 * p.l1;
    let lc2 = 0.5 * p.l2;
    let g2 = p.m2 * lc2 * GRAVITY_ACCEL * c12;
    Vector::from_row_slice(&[(p.m1 * lc1 + p.m2 * p.l1) * GRAVITY_ACCEL * c1 + g2, g2])
}

/// `q̈ = M⁻¹ (τ − C q̇ − G − F)`.
pub fn forward_dynamics(p: &RobotParams, state: &PlantState, tau: &Vector) -> Result<Vector> {
    if tau.len() != DOF {
        return Err(Error::Dimension {
            what: "torque",
            expected: DOF,
            got: tau.len(),
        });
    }
    if !tau.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("torque"));
    }
    let m = inertia(p, &state.q);
    let rhs = tau
        - coriolis(p, &state.q, &state.q_dot) * &state.q_dot
        - gravity(p, &state.q)
        - friction(p, &state.q_dot);
    // closed-form 2×2 inverse; M is SPD so det > 0
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Ok(Vector::from_row_slice(&[
        (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det,
        (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det,
    ]))
}

/// `M q̈ + C q̇ + G + F`.
pub fn inverse_dynamics(p: &RobotParams, state: &PlantState, q_ddot: &Vector) -> Vector {
    inertia(p, &state.q) * q_ddot
        + coriolis(p, &state.q, &state.q_dot) * &state.q_dot
        + gravity(p, &state.q)
        + friction(p, &state.q_dot)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryMode {
    /// Constant prefactor `1 − e^{−0.1}`.
    #[default]
    Literal,
    /// Time-varying prefactor `1 − e^{−0.1 t}`.
    Ramp,
}

impl std::str::FromStr for TrajectoryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(TrajectoryMode::Literal),
            "ramp" => Ok(TrajectoryMode::Ramp),
            other => Err(Error::Config(format!("unknown trajectory mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesiredPoint {
    pub q: Vector,
    pub q_dot: Vector,
    pub q_ddot: Vector,
}

pub const TRAJECTORY_AMPLITUDE: f64 = 3.0 * PI / 8.0;
const TRAJECTORY_FREQ: f64 = PI / 2.0;
const RAMP_RATE: f64 = 0.1;

/// `q_d = c(t) · (3π/8) sin(πt/2) · [1; 1]` with analytic derivatives.
pub fn desired_trajectory(t: f64, mode: TrajectoryMode) -> DesiredPoint {
    let w = TRAJECTORY_FREQ;
    let s = TRAJECTORY_AMPLITUDE * (w * t).sin();
    let s_dot = TRAJECTORY_AMPLITUDE * w * (w * t).cos();
    let s_ddot = -w * w * s;
    let (c, c_dot, c_ddot) = match mode {
        TrajectoryMode::Literal => (1.0 - (-RAMP_RATE).exp(), 0.0, 0.0),
        TrajectoryMode::Ramp => {
            let decay = (-RAMP_RATE * t).exp();
            (1.0 - decay, RAMP_RATE * decay, -RAMP_RATE * RAMP_RATE * decay)
        }
    };
    let q = c * s;
    let q_dot = c_dot * s + c * s_dot;
    let q_ddot = c_ddot * s + 2.0 * c_dot * s_dot + c * s_ddot;
    DesiredPoint {
        q: Vector::from_element(DOF, q),
        q_dot: Vector::from_element(DOF, q_dot),
        q_ddot: Vector::from_element(DOF, q_ddot),
    }
}
