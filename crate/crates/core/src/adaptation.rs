//! Weight adaptation laws and the smooth radial projection.
//!
//! All four laws share the tracking term `−Γ Φ'ᵀ (s ⊗ r)`, where `s` is the
//! signal that multiplies the estimate in the control input. The inertia
//! and Coriolis laws add the skew prediction error coupling when the skew
//! observer is enabled.

use serde::{Deserialize, Serialize};

use crate::dnn::DnnParams;
use crate::error::{Error, Result};
use crate::tensor_ops::{kron_vec, Mat, Vector};

/// Relative slack before `proj` reports a bound violation. RK4 stage states
/// can sit up to O((dt·‖θ̇‖)²/θ̄) outside the ball; committed states are
/// clamped back onto it.
pub const PROJ_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptationGains {
    #[serde(rename = "gamma_M")]
    pub gamma_m: f64,
    #[serde(rename = "gamma_C")]
    pub gamma_c: f64,
    #[serde(rename = "gamma_F")]
    pub gamma_f: f64,
    #[serde(rename = "gamma_G")]
    pub gamma_g: f64,
    #[serde(rename = "theta_bound_M")]
    pub theta_bound_m: f64,
    #[serde(rename = "theta_bound_C")]
    pub theta_bound_c: f64,
    #[serde(rename = "theta_bound_F")]
    pub theta_bound_f: f64,
    #[serde(rename = "theta_bound_G")]
    pub theta_bound_g: f64,
    /// Boundary layer width as a fraction of the bound.
    pub proj_delta: f64,
}

impl Default for AdaptationGains {
    fn default() -> Self {
        Self {
            gamma_m: 1.1,
            gamma_c: 11.5,
            gamma_f: 9.0,
            gamma_g: 9.0,
            theta_bound_m: 20.0,
            theta_bound_c: 20.0,
            theta_bound_f: 20.0,
            theta_bound_g: 20.0,
            proj_delta: 0.05,
        }
    }
}

impl AdaptationGains {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.gamma_m,
            self.gamma_c,
            self.gamma_f,
            self.gamma_g,
            self.theta_bound_m,
            self.theta_bound_c,
            self.theta_bound_f,
            self.theta_bound_g,
        ];
        if positive.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::Config("adaptation gains and theta bounds must be positive".into()));
        }
        if !(self.proj_delta > 0.0 && self.proj_delta < 1.0) {
            return Err(Error::Config("adaptation.proj_delta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Adapted weights of the four networks. `last_inertia_rate` is the
/// committed `θ̂̇_M` of the previous step, used to evaluate `d/dt Φ'_M`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationState {
    pub inertia: DnnParams,
    pub coriolis: DnnParams,
    pub friction: DnnParams,
    pub gravity: DnnParams,
    pub last_inertia_rate: Vector,
}

impl AdaptationState {
    pub fn max_bound_excess(&self) -> f64 {
        [&self.inertia, &self.coriolis, &self.friction, &self.gravity]
            .iter()
            .map(|p| p.theta.norm() - p.bound)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Smooth projection onto `‖θ‖ ≤ bound`.
///
/// Inside `(1 − δ)·bound`, or when the rate points inward, the rate passes
/// through. In the boundary layer the outward radial component is removed
/// with a weight ramping linearly from 0 to 1, reaching 1 on the sphere.
pub fn proj(rate: &Vector, theta: &Vector, bound: f64, delta: f64) -> Result<Vector> {
    let norm = theta.norm();
    if norm > bound * (1.0 + PROJ_TOLERANCE) {
        return Err(Error::OutsideBound { norm, bound });
    }
    let inner = (1.0 - delta) * bound;
    let radial = theta.dot(rate);
    if norm <= inner || radial <= 0.0 {
        return Ok(rate.clone());
    }
    let weight = ((norm - inner) / (delta * bound)).min(1.0);
    Ok(rate - (weight * radial / (norm * norm)) * theta)
}

/// Rescale `theta` onto the ball if it lies outside; returns the norm before.
pub fn clamp_to_ball(theta: &mut Vector, bound: f64) -> f64 {
    let norm = theta.norm();
    if norm > bound {
        *theta *= bound / norm;
    }
    norm
}

/// `−Φ'ᵀ (s ⊗ r)`.
fn tracking_term(jac: &Mat, signal: &Vector, r: &Vector) -> Vector {
    -jac.tr_mul(&kron_vec(signal, r))
}

/// Inertia law. `skew` carries `(d/dt Φ'_M, Ẽ)` when the skew observer is on.
#[allow(clippy::too_many_arguments)]
pub fn theta_m_rate(
    jac: &Mat,
    skew: Option<(&Mat, f64)>,
    acc_signal: &Vector,
    r: &Vector,
    xi_xi: &Vector,
    gamma: f64,
    params: &DnnParams,
    delta: f64,
) -> Result<Vector> {
    let mut raw = tracking_term(jac, acc_signal, r);
    if let Some((jac_rate, e_tilde)) = skew {
        if e_tilde != 0.0 {
            raw += jac_rate.tr_mul(xi_xi) * e_tilde;
        }
    }
    proj(&(gamma * raw), &params.theta, params.bound, delta)
}

/// Coriolis law; `e_tilde = 0` gives the tracking-only law.
#[allow(clippy::too_many_arguments)]
pub fn theta_c_rate(
    jac: &Mat,
    e_tilde: f64,
    vel_signal: &Vector,
    r: &Vector,
    xi_xi: &Vector,
    gamma: f64,
    params: &DnnParams,
    delta: f64,
) -> Result<Vector> {
    let mut raw = tracking_term(jac, vel_signal, r);
    if e_tilde != 0.0 {
        raw -= jac.tr_mul(xi_xi) * (2.0 * e_tilde);
    }
    proj(&(gamma * raw), &params.theta, params.bound, delta)
}

/// `proj(−Γ Φ'ᵀ r)`, used for both friction and gravity.
pub fn theta_vector_rate(jac: &Mat, r: &Vector, gamma: f64, params: &DnnParams, delta: f64) -> Result<Vector> {
    proj(&(-gamma * jac.tr_mul(r)), &params.theta, params.bound, delta)
}

pub fn theta_f_rate(jac: &Mat, r: &Vector, gamma: f64, params: &DnnParams, delta: f64) -> Result<Vector> {
    theta_vector_rate(jac, r, gamma, params, delta)
}

pub fn theta_g_rate(jac: &Mat, r: &Vector, gamma: f64, params: &DnnParams, delta: f64) -> Result<Vector> {
    theta_vector_rate(jac, r, gamma, params, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnn::{init_weights, Activation, DnnArch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn proj_interior_passes_through() {
        let theta = v(&[0.1, 0.0]);
        let rate = v(&[3.0, -2.0]);
        assert_eq!(proj(&rate, &theta, 1.0, 0.05).unwrap(), rate);
    }

    #[test]
    fn proj_boundary_removes_radial_component() {
        let theta = v(&[0.6, 0.8]);
        let out = proj(&theta, &theta, 1.0, 0.05).unwrap();
        assert!(theta.dot(&out).abs() <= 1e-15);

        let rate = v(&[1.0, 1.0]);
        let out = proj(&rate, &theta, 1.0, 0.05).unwrap();
        assert!(theta.dot(&out).abs() <= 1e-15);
        // tangential part survives
        let tangent = v(&[-0.8, 0.6]);
        assert!((tangent.dot(&out) - tangent.dot(&rate)).abs() <= 1e-15);
    }

    #[test]
    fn proj_inward_rate_untouched_on_boundary() {
        let theta = v(&[0.0, 1.0]);
        let rate = v(&[0.5, -1.0]);
        assert_eq!(proj(&rate, &theta, 1.0, 0.05).unwrap(), rate);
    }

    #[test]
    fn proj_rejects_outside() {
        assert!(matches!(
            proj(&v(&[1.0]), &v(&[1.1]), 1.0, 0.05),
            Err(Error::OutsideBound { .. })
        ));
    }

    #[test]
    fn proj_keeps_integrated_state_in_ball() {
        let c = v(&[0.7, 0.4, -0.2]);
        let mut theta = Vector::zeros(3);
        let dt = 1e-3;
        let f = |th: &Vector| proj(&c, th, 1.0, 0.05).unwrap();
        let mut max_norm: f64 = 0.0;
        for _ in 0..20_000 {
            let k1 = f(&theta);
            let k2 = f(&(&theta + 0.5 * dt * &k1));
            let k3 = f(&(&theta + 0.5 * dt * &k2));
            let k4 = f(&(&theta + dt * &k3));
            theta += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            max_norm = max_norm.max(theta.norm());
        }
        assert!(max_norm <= 1.0 + 1e-9, "{max_norm}");
        assert!(max_norm > 0.99);
    }

    #[test]
    fn proj_continuity_and_radial_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let bound = 2.0;
        let delta = 0.05;
        for _ in 0..500 {
            let dir = Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)).normalize();
            // sample around the inner edge of the boundary layer and the sphere
            let rho = if rng.gen_bool(0.5) { (1.0 - delta) * bound } else { bound - 1e-7 };
            let theta = dir * rho;
            let rate = Vector::from_fn(4, |_, _| rng.gen_range(-5.0..5.0));
            let base = proj(&rate, &theta, bound, delta).unwrap();
            assert!(theta.dot(&base) <= theta.dot(&rate) + 1e-12);

            let dr = Vector::from_fn(4, |_, _| rng.gen_range(-1e-8..1e-8));
            let dth = Vector::from_fn(4, |_, _| rng.gen_range(-1e-8..1e-8));
            let th2 = &theta + dth;
            let th2 = if th2.norm() > bound { th2.normalize() * bound } else { th2 };
            let moved = proj(&(&rate + dr), &th2, bound, delta).unwrap();
            assert!((moved - base).norm() <= 1e-6);
        }
    }

    fn affine_setup() -> (DnnArch, DnnParams) {
        // single affine layer, x ∈ ℝ², output ∈ ℝ⁴
        let arch = DnnArch::new(2, &[], 4, Activation::Tanh).unwrap();
        let p = init_weights(&arch, 20.0, 8);
        (arch, p)
    }

    #[test]
    fn zero_errors_give_zero_rates() {
        let (arch, p) = affine_setup();
        let x = v(&[0.3, -0.2]);
        let ev = arch.eval(&p.theta, &x).unwrap();
        let jac = ev.weight_jacobian();
        let jr = ev.weight_jacobian_rate(&v(&[1.0, 1.0]), &Vector::zeros(arch.param_count())).unwrap();
        let xi_xi = Vector::from_element(4, 0.16);
        let zero = Vector::zeros(2);
        let sig = v(&[0.5, 0.1]);
        let m = theta_m_rate(&jac, Some((&jr, 0.0)), &sig, &zero, &xi_xi, 1.1, &p, 0.05).unwrap();
        assert_eq!(m, Vector::zeros(arch.param_count()));
        let c = theta_c_rate(&jac, 0.0, &sig, &zero, &xi_xi, 11.5, &p, 0.05).unwrap();
        assert_eq!(c, Vector::zeros(arch.param_count()));
    }

    #[test]
    fn affine_layer_matches_symbolic_rates() {
        // Φ = v_0ᵀ x_a, so Φ' = I_4 ⊗ x_aᵀ and d/dt Φ' = I_4 ⊗ ẋ_aᵀ.
        // (I ⊗ aᵀ)ᵀ w = w ⊗ a, which gives the laws in closed form.
        let (arch, p) = affine_setup();
        let x = v(&[0.3, -0.2]);
        let x_dot = v(&[0.7, 1.3]);
        let xa = v(&[0.3, -0.2, 1.0]);
        let xa_dot = v(&[0.7, 1.3, 0.0]);
        let ev = arch.eval(&p.theta, &x).unwrap();
        let jac = ev.weight_jacobian();
        let jr = ev.weight_jacobian_rate(&x_dot, &Vector::zeros(arch.param_count())).unwrap();

        let xi = v(&[0.4, 0.4]);
        let xi_xi = kron_vec(&xi, &xi);
        let r = v(&[0.2, -0.5]);
        let acc = v(&[1.5, -0.3]);
        let vel = v(&[-0.4, 0.9]);
        let e_tilde = -0.37;

        let expected_m = 1.1 * (kron_vec(&xi_xi, &xa_dot) * e_tilde - kron_vec(&kron_vec(&acc, &r), &xa));
        let got_m = theta_m_rate(&jac, Some((&jr, e_tilde)), &acc, &r, &xi_xi, 1.1, &p, 0.05).unwrap();
        assert!((got_m - expected_m).amax() <= 1e-12);

        let expected_c = 11.5 * (kron_vec(&xi_xi, &xa) * (-2.0 * e_tilde) - kron_vec(&kron_vec(&vel, &r), &xa));
        let got_c = theta_c_rate(&jac, e_tilde, &vel, &r, &xi_xi, 11.5, &p, 0.05).unwrap();
        assert!((got_c - expected_c).amax() <= 1e-12);

        let arch_f = DnnArch::new(2, &[], 2, Activation::Tanh).unwrap();
        let pf = init_weights(&arch_f, 20.0, 9);
        let jf = arch_f.eval(&pf.theta, &x).unwrap().weight_jacobian();
        let expected_f = -9.0 * kron_vec(&r, &xa);
        let got_f = theta_f_rate(&jf, &r, 9.0, &pf, 0.05).unwrap();
        assert!((&got_f - &expected_f).amax() <= 1e-12);
        assert_eq!(theta_g_rate(&jf, &r, 9.0, &pf, 0.05).unwrap(), got_f);
        assert_eq!(theta_f_rate(&jf, &Vector::zeros(2), 9.0, &pf, 0.05).unwrap(), Vector::zeros(6));
    }

    #[test]
    fn coriolis_skew_sign() {
        // zero tracking error isolates −2 Γ Φ'ᵀ(ξ⊗ξ) Ẽ
        let (arch, p) = affine_setup();
        let jac = arch.eval(&p.theta, &v(&[0.1, 0.2])).unwrap().weight_jacobian();
        let xi_xi = Vector::from_element(4, 0.16);
        let u = jac.tr_mul(&xi_xi);
        let got = theta_c_rate(&jac, 0.5, &v(&[1.0, 1.0]), &Vector::zeros(2), &xi_xi, 11.5, &p, 0.05).unwrap();
        assert!((got - (-2.0 * 11.5 * 0.5) * u).amax() <= 1e-12);
    }

    #[test]
    fn zero_skew_error_equals_baseline_bitwise() {
        let arch = DnnArch::uniform(2, 2, 5, 4, Activation::Tanh).unwrap();
        let p = init_weights(&arch, 20.0, 31);
        let x = v(&[0.2, -0.6]);
        let ev = arch.eval(&p.theta, &x).unwrap();
        let jac = ev.weight_jacobian();
        let jr = ev.weight_jacobian_rate(&v(&[0.4, 0.1]), &Vector::zeros(arch.param_count())).unwrap();
        let xi_xi = Vector::from_element(4, 0.16);
        let r = v(&[0.3, 0.2]);
        let s = v(&[-1.0, 0.5]);
        let dev = theta_m_rate(&jac, Some((&jr, 0.0)), &s, &r, &xi_xi, 1.1, &p, 0.05).unwrap();
        let base = theta_m_rate(&jac, None, &s, &r, &xi_xi, 1.1, &p, 0.05).unwrap();
        assert_eq!(dev, base);
    }
}
