//! Skew-symmetric prediction error observer.
//!
//! The true quantity `E = ∫ ξᵀ(Ṁ − 2C)ξ dt` is identically zero, so the
//! prediction error is `Ẽ = −Ê`. The estimate integrates the skew-symmetry
//! violation of the DNN estimates,
//!
//! ```text
//! Ê̇ = (ξ ⊗ ξ)ᵀ ( d/dt Φ_M − 2 Φ_C + μ )
//! μ  = −Φ'_M θ̂̇_M + 𝟙 · ( γ₁ Ẽ + (γ₂ + γ₃ + γ₄ ‖ẋ_M‖) sgn(Ẽ) )
//! ```
//!
//! The scalar robust terms of `μ` are laid along the all-ones vector of
//! length n², so after contraction they carry the weight `(ξ⊗ξ)ᵀ𝟙 = (Σξ)²`.
//! Because `d/dt Φ_M = (∂Φ_M/∂x) ẋ_M + Φ'_M θ̂̇_M`, the weight-rate terms
//! cancel and the simplified form needs only the input Jacobian.

use serde::{Deserialize, Serialize};

use crate::controller::Switching;
use crate::error::{Error, Result};
use crate::tensor_ops::{kron_vec, Mat, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XiSpec {
    Uniform(f64),
    PerJoint(Vec<f64>),
}

impl XiSpec {
    pub fn resolve(&self, n: usize) -> Result<Vector> {
        let xi = match self {
            XiSpec::Uniform(x) => Vector::from_element(n, *x),
            XiSpec::PerJoint(v) if v.len() == n => Vector::from_row_slice(v),
            XiSpec::PerJoint(v) => {
                return Err(Error::Dimension {
                    what: "skew.xi",
                    expected: n,
                    got: v.len(),
                })
            }
        };
        if xi.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config("skew.xi entries must be positive".into()));
        }
        Ok(xi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkewGains {
    /// `false` runs the tracking-only baseline.
    pub enabled: bool,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    pub xi: XiSpec,
    pub form: ObserverForm,
}

impl Default for SkewGains {
    fn default() -> Self {
        Self {
            enabled: true,
            gamma1: 186.1,
            gamma2: 1.2,
            gamma3: 6.5,
            gamma4: 2.7,
            xi: XiSpec::Uniform(0.4),
            form: ObserverForm::Simplified,
        }
    }
}

impl SkewGains {
    pub fn validate(&self, n: usize) -> Result<()> {
        let g = [self.gamma1, self.gamma2, self.gamma3, self.gamma4];
        if g.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config("skew.gamma1..4 must be positive".into()));
        }
        self.xi.resolve(n).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObserverForm {
    Literal,
    #[default]
    Simplified,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SkewState {
    pub e_hat: f64,
}

pub fn e_tilde(state: &SkewState) -> f64 {
    -state.e_hat
}

/// `γ₁ Ẽ + (γ₂ + γ₃ + γ₄ ‖ẋ_M‖) sgn(Ẽ)`.
pub fn robust_scalar(e_tilde: f64, x_m_dot: &Vector, gains: &SkewGains, switching: Switching) -> f64 {
    gains.gamma1 * e_tilde
        + (gains.gamma2 + gains.gamma3 + gains.gamma4 * x_m_dot.norm()) * switching.apply(e_tilde)
}

pub fn mu(
    theta_m_rate: &Vector,
    jac_m: &Mat,
    e_tilde: f64,
    x_m_dot: &Vector,
    gains: &SkewGains,
    switching: Switching,
) -> Vector {
    let s = robust_scalar(e_tilde, x_m_dot, gains, switching);
    (-(jac_m * theta_m_rate)).add_scalar(s)
}

/// Everything the estimate rate needs from the inertia and Coriolis networks.
#[derive(Clone, Copy, Debug)]
pub struct ObserverInputs<'a> {
    /// `∂Φ_M/∂x_M`, n² × n.
    pub input_jac_m: &'a Mat,
    /// `Φ'_M`, n² × ϰ_M. Only the literal form reads it.
    pub weight_jac_m: Option<&'a Mat>,
    pub theta_m_rate: Option<&'a Vector>,
    pub x_m_dot: &'a Vector,
    pub phi_c: &'a Vector,
    pub e_tilde: f64,
}

pub fn e_hat_rate(
    inputs: &ObserverInputs<'_>,
    xi: &Vector,
    gains: &SkewGains,
    switching: Switching,
    form: ObserverForm,
) -> Result<f64> {
    let xi_xi = kron_vec(xi, xi);
    let state_part = inputs.input_jac_m * inputs.x_m_dot;
    let rate = match form {
        ObserverForm::Simplified => {
            let s = robust_scalar(inputs.e_tilde, inputs.x_m_dot, gains, switching);
            xi_xi.dot(&(state_part - 2.0 * inputs.phi_c)) + xi_xi.sum() * s
        }
        ObserverForm::Literal => {
            let (jac, theta_rate) = inputs
                .weight_jac_m
                .zip(inputs.theta_m_rate)
                .ok_or(Error::Config("literal observer form needs Φ'_M and θ̂̇_M".into()))?;
            let weight_part = jac * theta_rate;
            let phi_m_rate = state_part + weight_part;
            let mu = mu(theta_rate, jac, inputs.e_tilde, inputs.x_m_dot, gains, switching);
            xi_xi.dot(&(phi_m_rate - 2.0 * inputs.phi_c + mu))
        }
    };
    if !rate.is_finite() {
        return Err(Error::NonFinite("skew estimate rate"));
    }
    Ok(rate)
}

/// `(ξ⊗ξ)ᵀ (vec(Ṁ) − 2 vec(C))`, the integrand of the true `E`.
pub fn skew_violation(xi: &Vector, m_dot: &Mat, c: &Mat) -> f64 {
    let xi_xi = kron_vec(xi, xi);
    let diff = m_dot - 2.0 * c;
    xi_xi.dot(&Vector::from_column_slice(diff.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnn::{init_weights, Activation, DnnArch};
    use crate::plant::{coriolis, inertia_rate, RobotParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn e_tilde_is_negated_estimate() {
        assert_eq!(e_tilde(&SkewState { e_hat: 0.0 }), 0.0);
        assert_eq!(e_tilde(&SkewState { e_hat: 0.3 }), -0.3);
    }

    #[test]
    fn mu_examples() {
        let g = SkewGains::default();
        let jac = Mat::from_fn(4, 6, |i, j| (i + j) as f64);
        let m = mu(&Vector::zeros(6), &jac, 0.0, &Vector::zeros(2), &g, Switching::Sign);
        assert_eq!(m, Vector::zeros(4));

        let g = SkewGains {
            gamma1: 1.0,
            gamma2: 1.0,
            gamma3: 1.0,
            gamma4: 123.0,
            ..SkewGains::default()
        };
        let m = mu(&Vector::zeros(6), &jac, 1.0, &Vector::zeros(2), &g, Switching::Sign);
        assert_eq!(m, Vector::from_element(4, 3.0));
    }

    #[test]
    fn zero_network_zero_error_gives_zero_rate() {
        let xi = v(&[0.4, 0.4]);
        let jx = Mat::zeros(4, 2);
        let inputs = ObserverInputs {
            input_jac_m: &jx,
            weight_jac_m: None,
            theta_m_rate: None,
            x_m_dot: &v(&[0.3, 0.1]),
            phi_c: &Vector::zeros(4),
            e_tilde: 0.0,
        };
        let g = SkewGains::default();
        assert_eq!(e_hat_rate(&inputs, &xi, &g, Switching::Sign, ObserverForm::Simplified).unwrap(), 0.0);
    }

    #[test]
    fn frozen_and_stationary_reduces_to_coriolis_term() {
        let xi = v(&[0.4, 0.5]);
        let xi_xi = kron_vec(&xi, &xi);
        let c = v(&[1.0, -2.0, 0.5, 3.0]);
        let jx = Mat::from_fn(4, 2, |i, j| 0.1 * (i as f64) - 0.3 * j as f64);
        let jw = Mat::from_fn(4, 5, |i, j| (i * j) as f64);
        let zero_rate = Vector::zeros(5);
        let still = Vector::zeros(2);
        let g = SkewGains::default();
        let e_t = 0.02;
        let expected = xi_xi.dot(&(-2.0 * &c)) + xi_xi.sum() * robust_scalar(e_t, &still, &g, Switching::Sign);
        for form in [ObserverForm::Literal, ObserverForm::Simplified] {
            let inputs = ObserverInputs {
                input_jac_m: &jx,
                weight_jac_m: Some(&jw),
                theta_m_rate: Some(&zero_rate),
                x_m_dot: &still,
                phi_c: &c,
                e_tilde: e_t,
            };
            let got = e_hat_rate(&inputs, &xi, &g, Switching::Sign, form).unwrap();
            assert!((got - expected).abs() <= 1e-12, "{form:?}");
        }
    }

    #[test]
    fn literal_and_simplified_agree_on_random_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let arch = DnnArch::uniform(2, 4, 7, 4, Activation::Tanh).unwrap();
        let g = SkewGains::default();
        let xi = v(&[0.4, 0.4]);
        for seed in 0..20 {
            let p = init_weights(&arch, 20.0, seed);
            let x = Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let x_dot = Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let theta_rate = Vector::from_fn(arch.param_count(), |_, _| rng.gen_range(-1.0..1.0));
            let phi_c = Vector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0));
            let ev = arch.eval(&p.theta, &x).unwrap();
            let jx = ev.input_jacobian();
            let jw = ev.weight_jacobian();
            let e_t = rng.gen_range(-0.1..0.1);
            let inputs = ObserverInputs {
                input_jac_m: &jx,
                weight_jac_m: Some(&jw),
                theta_m_rate: Some(&theta_rate),
                x_m_dot: &x_dot,
                phi_c: &phi_c,
                e_tilde: e_t,
            };
            let lit = e_hat_rate(&inputs, &xi, &g, Switching::Sign, ObserverForm::Literal).unwrap();
            let simp = e_hat_rate(&inputs, &xi, &g, Switching::Sign, ObserverForm::Simplified).unwrap();
            assert!((lit - simp).abs() <= 1e-12 * lit.abs().max(1.0));
        }
    }

    #[test]
    fn true_model_has_no_violation() {
        let p = RobotParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let q = Vector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let qd = Vector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let xi = Vector::from_fn(2, |_, _| rng.gen_range(0.1..1.0));
            let viol = skew_violation(&xi, &inertia_rate(&p, &q, &qd), &coriolis(&p, &q, &qd));
            assert!(viol.abs() <= 1e-10);
        }
    }

    #[test]
    fn xi_resolution() {
        assert_eq!(XiSpec::Uniform(0.4).resolve(2).unwrap(), v(&[0.4, 0.4]));
        assert_eq!(XiSpec::PerJoint(vec![0.1, 0.2]).resolve(2).unwrap(), v(&[0.1, 0.2]));
        assert!(XiSpec::PerJoint(vec![0.1]).resolve(2).is_err());
        assert!(XiSpec::Uniform(-1.0).resolve(2).is_err());
    }
}
