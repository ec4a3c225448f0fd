//! Tracking errors and the DNN feedforward control input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::DesiredPoint;
use crate::tensor_ops::{kron, sgn, Mat, Vector};

/// Feedback gains shared by the developed and baseline controllers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlGains {
    pub alpha: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            alpha: 3.8,
            k1: 15.1,
            k2: 0.5,
            k3: 0.5,
            k4: 0.3,
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.k1, self.k2, self.k3, self.k4];
        if all.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::Config("gains.alpha and gains.k1..k4 must be positive".into()));
        }
        Ok(())
    }
}

/// How the robust term switches on `r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Switching {
    Sign,
    /// `tanh(κ r)` boundary layer.
    Smooth(f64),
}

impl Switching {
    pub fn from_smoothing(kappa: f64) -> Self {
        if kappa > 0.0 {
            Switching::Smooth(kappa)
        } else {
            Switching::Sign
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Switching::Sign => sgn(x),
            Switching::Smooth(k) => (k * x).tanh(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorState {
    pub e: Vector,
    pub r: Vector,
    pub e_dot: Vector,
}

impl ErrorState {
    /// `q̇_d − α e`, multiplies the Coriolis estimate.
    pub fn velocity_signal(&self, desired: &DesiredPoint, alpha: f64) -> Vector {
        &desired.q_dot - alpha * &self.e
    }

    /// `q̈_d − α ė`, multiplies the inertia estimate.
    pub fn acceleration_signal(&self, desired: &DesiredPoint, alpha: f64) -> Vector {
        &desired.q_ddot - alpha * &self.e_dot
    }
}

/// `e = q − q_d`, `r = ė + α e`.
pub fn tracking_errors(q: &Vector, q_dot: &Vector, desired: &DesiredPoint, alpha: f64) -> ErrorState {
    let e = q - &desired.q;
    let e_dot = q_dot - &desired.q_dot;
    let r = &e_dot + alpha * &e;
    ErrorState { e, r, e_dot }
}

/// `(vᵀ ⊗ I_n)`, shape `n × n²`.
pub fn regressor(v: &Vector) -> Mat {
    let n = v.len();
    kron(&Mat::from_row_slice(1, v.len(), v.as_slice()), &Mat::identity(n, n))
}

/// `(vᵀ ⊗ I_n) w = unvec(w) v` without forming the Kronecker product.
pub fn apply_regressor(v: &Vector, w: &Vector) -> Vector {
    let n = v.len();
    debug_assert_eq!(w.len(), n * n);
    let mut out = Vector::zeros(n);
    for (j, &vj) in v.iter().enumerate() {
        for i in 0..n {
            out[i] += w[j * n + i] * vj;
        }
    }
    out
}

/// DNN estimates `Φ_M`, `Φ_C` (length n²) and `Φ_F`, `Φ_G` (length n).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutputs {
    pub inertia: Vector,
    pub coriolis: Vector,
    pub friction: Vector,
    pub gravity: Vector,
}

impl ModelOutputs {
    pub fn zeros(n: usize) -> Self {
        Self {
            inertia: Vector::zeros(n * n),
            coriolis: Vector::zeros(n * n),
            friction: Vector::zeros(n),
            gravity: Vector::zeros(n),
        }
    }

    fn all_finite(&self) -> bool {
        [&self.inertia, &self.coriolis, &self.friction, &self.gravity]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Feedforward from the estimates plus `−k₁r − e` and the switching robust term.
///
/// The norm `‖vᵀ ⊗ I_n‖` is the spectral norm, which equals `‖v‖₂`.
pub fn control_input(
    errors: &ErrorState,
    desired: &DesiredPoint,
    outputs: &ModelOutputs,
    gains: &ControlGains,
    switching: Switching,
) -> Result<Vector> {
    let n = errors.e.len();
    if outputs.inertia.len() != n * n || outputs.coriolis.len() != n * n {
        return Err(Error::Dimension {
            what: "matrix estimate",
            expected: n * n,
            got: outputs.inertia.len().max(outputs.coriolis.len()),
        });
    }
    if !outputs.all_finite() {
        return Err(Error::NonFinite("dnn output"));
    }
    let vel = errors.velocity_signal(desired, gains.alpha);
    let acc = errors.acceleration_signal(desired, gains.alpha);
    let robust = gains.k2 + gains.k3 * vel.norm() + gains.k4 * acc.norm();

    let mut tau = apply_regressor(&vel, &outputs.coriolis)
        + &outputs.gravity
        + &outputs.friction
        - gains.k1 * &errors.r
        - &errors.e
        + apply_regressor(&acc, &outputs.inertia);
    for i in 0..n {
        tau[i] -= switching.apply(errors.r[i]) * robust;
    }
    Ok(tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{desired_trajectory, TrajectoryMode};
    use crate::tensor_ops::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn at_rest() -> DesiredPoint {
        DesiredPoint {
            q: Vector::zeros(2),
            q_dot: Vector::zeros(2),
            q_ddot: Vector::zeros(2),
        }
    }

    #[test]
    fn tracking_error_examples() {
        let d = desired_trajectory(0.7, TrajectoryMode::Literal);
        let z = tracking_errors(&d.q, &d.q_dot, &d, 3.8);
        assert_eq!(z.e, Vector::zeros(2));
        assert_eq!(z.r, Vector::zeros(2));

        let q = &d.q + v(&[0.1, 0.0]);
        let z = tracking_errors(&q, &d.q_dot, &d, 2.0);
        assert!((z.e - v(&[0.1, 0.0])).amax() < 1e-15);
        assert!((z.r - v(&[0.2, 0.0])).amax() < 1e-15);

        let d0 = desired_trajectory(0.0, TrajectoryMode::Literal);
        let z = tracking_errors(&v(&[0.4, -0.3]), &Vector::zeros(2), &d0, 3.8);
        assert_eq!(z.e, v(&[0.4, -0.3]));
    }

    #[test]
    fn regressor_examples() {
        let r = regressor(&v(&[1.0, 2.0]));
        assert_eq!(r, Mat::from_row_slice(2, 4, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 2.0]));
        assert_eq!(regressor(&Vector::zeros(2)), Mat::zeros(2, 4));
    }

    #[test]
    fn regressor_is_matrix_vector_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..=4 {
            for _ in 0..20 {
                let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-3.0..3.0));
                let x = Vector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
                let oracle = &a * &x;
                assert!((regressor(&x) * vec(&a) - &oracle).amax() <= 1e-13);
                assert!((apply_regressor(&x, &vec(&a)) - &oracle).amax() <= 1e-13);
            }
        }
    }

    #[test]
    fn regressor_spectral_norm_is_vector_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let x = Vector::from_fn(3, |_, _| rng.gen_range(-3.0..3.0));
            let sv = regressor(&x).singular_values();
            assert!((sv.max() - x.norm()).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_everything_gives_zero_torque() {
        let z = tracking_errors(&Vector::zeros(2), &Vector::zeros(2), &at_rest(), 3.8);
        let tau = control_input(&z, &at_rest(), &ModelOutputs::zeros(2), &ControlGains::default(), Switching::Sign).unwrap();
        assert_eq!(tau, Vector::zeros(2));
    }

    #[test]
    fn inertia_feedforward_only() {
        let d = DesiredPoint {
            q: Vector::zeros(2),
            q_dot: Vector::zeros(2),
            q_ddot: v(&[0.3, -1.1]),
        };
        let z = tracking_errors(&d.q, &d.q_dot, &d, 3.8);
        let a = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mut out = ModelOutputs::zeros(2);
        out.inertia = vec(&a);
        let tau = control_input(&z, &d, &out, &ControlGains::default(), Switching::Sign).unwrap();
        assert!((tau - &a * &d.q_ddot).amax() <= 1e-14);
    }

    #[test]
    fn robust_term_arithmetic() {
        let errors = ErrorState {
            e: Vector::zeros(2),
            r: v(&[1.0, -1.0]),
            e_dot: v(&[1.0, -1.0]),
        };
        let gains = ControlGains {
            alpha: 1.0,
            k1: 1.0,
            k2: 0.5,
            k3: 0.0,
            k4: 0.0,
        };
        // k3 = k4 = 0 is outside validated gains but the arithmetic is still defined
        let tau = control_input(&errors, &at_rest(), &ModelOutputs::zeros(2), &gains, Switching::Sign).unwrap();
        assert!((tau - v(&[-1.5, 1.5])).amax() <= 1e-15);
    }

    #[test]
    fn odd_in_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let e = Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let r = Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let alpha = 3.8;
            let mk = |e: &Vector, r: &Vector| ErrorState {
                e: e.clone(),
                r: r.clone(),
                e_dot: r - alpha * e,
            };
            let g = ControlGains::default();
            let out = ModelOutputs::zeros(2);
            let plus = control_input(&mk(&e, &r), &at_rest(), &out, &g, Switching::Sign).unwrap();
            let minus = control_input(&mk(&-&e, &-&r), &at_rest(), &out, &g, Switching::Sign).unwrap();
            assert!((plus + minus).amax() <= 1e-13);
        }
    }

    #[test]
    fn rejects_non_finite_estimates() {
        let z = tracking_errors(&Vector::zeros(2), &Vector::zeros(2), &at_rest(), 3.8);
        let mut out = ModelOutputs::zeros(2);
        out.friction[1] = f64::INFINITY;
        assert!(matches!(
            control_input(&z, &at_rest(), &out, &ControlGains::default(), Switching::Sign),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn smooth_switching() {
        assert_eq!(Switching::from_smoothing(0.0), Switching::Sign);
        let s = Switching::from_smoothing(50.0);
        assert!((s.apply(1.0) - 1.0).abs() < 1e-12);
        assert_eq!(s.apply(0.0), 0.0);
    }
}
