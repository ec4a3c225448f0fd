//! Runtime property checks: derivative consistency, structural identities,
//! projection invariance and observer equivalence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptation::{clamp_to_ball, proj};
use crate::config::{Mode, SimConfig};
use crate::dnn::{init_weights_with, Activation, DnnArch};
use crate::error::Result;
use crate::plant::{self, RobotParams};
use crate::simulator::run;
use crate::skew_observer::{skew_violation, ObserverForm};
use crate::tensor_ops::{kron, vec, Mat, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{status}] {}: {}", self.name, self.detail)
    }
}

fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn rand_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

fn rel(err: f64, scale: f64) -> f64 {
    err / scale.max(1e-8)
}

/// `vec(ABC) = (Cᵀ ⊗ A) vec(B)` on random conforming triples.
pub fn kron_identity(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (m, n, p, q) = (
            rng.gen_range(1..=5),
            rng.gen_range(1..=5),
            rng.gen_range(1..=5),
            rng.gen_range(1..=5),
        );
        let a = rand_mat(&mut rng, m, n);
        let b = rand_mat(&mut rng, n, p);
        let c = rand_mat(&mut rng, p, q);
        let lhs = vec(&(&a * &b * &c));
        let rhs = kron(&c.transpose(), &a) * vec(&b);
        worst = worst.max(rel((lhs.clone() - rhs).norm(), lhs.norm()));
    }
    CheckOutcome::new(
        "kron identity",
        worst <= 1e-12,
        format!("{trials} triples, worst relative error {worst:.2e}"),
    )
}

/// Architectures used by the Jacobian checks, including the reference
/// 4 × 7 tanh network for each of the M, C and F shapes.
pub fn jacobian_architectures() -> Vec<DnnArch> {
    let mut out = Vec::new();
    for act in [Activation::Tanh, Activation::Logistic] {
        for (input, output) in [(2, 4), (4, 4), (2, 2)] {
            out.push(DnnArch::uniform(input, 4, 7, output, act).expect("valid"));
        }
        out.push(DnnArch::new(3, &[5], 2, act).expect("valid"));
        out.push(DnnArch::new(2, &[3, 6, 4], 3, act).expect("valid"));
        out.push(DnnArch::new(1, &[], 1, act).expect("valid"));
        out.push(DnnArch::uniform(2, 2, 2, 4, act).expect("valid"));
        out.push(DnnArch::new(4, &[8, 8], 1, act).expect("valid"));
        out.push(DnnArch::uniform(2, 6, 3, 2, act).expect("valid"));
        out.push(DnnArch::new(5, &[2, 9], 4, act).expect("valid"));
    }
    out
}

/// Worst relative error of `(Φ', ∂Φ/∂x, d/dt Φ')` against central differences.
pub fn jacobian_errors(arch: &DnnArch, rng: &mut impl Rng, points: usize) -> Result<(f64, f64, f64)> {
    let bound = 20.0;
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..points {
        let theta = init_weights_with(arch, bound, rng).theta;
        let x = rand_vec(rng, arch.input_dim(), 1.5);
        let ev = arch.eval(&theta, &x)?;
        let h = 1e-6;

        let jw = ev.weight_jacobian();
        let mut fd = Mat::zeros(arch.output_dim(), theta.len());
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let col = (arch.eval(&tp, &x)?.output() - arch.eval(&tm, &x)?.output()) / (2.0 * h);
            fd.set_column(i, &col);
        }
        worst.0 = worst.0.max(rel((&jw - &fd).norm(), fd.norm()));

        let jx = ev.input_jacobian();
        let mut fd = Mat::zeros(arch.output_dim(), x.len());
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let col = (arch.eval(&theta, &xp)?.output() - arch.eval(&theta, &xm)?.output()) / (2.0 * h);
            fd.set_column(i, &col);
        }
        worst.1 = worst.1.max(rel((&jx - &fd).norm(), fd.norm()));

        let x_dot = rand_vec(rng, x.len(), 1.0);
        let theta_dot = rand_vec(rng, theta.len(), 1.0);
        let rate = ev.weight_jacobian_rate(&x_dot, &theta_dot)?;
        let hs = 1e-5;
        let plus = arch.eval(&(&theta + hs * &theta_dot), &(&x + hs * &x_dot))?.weight_jacobian();
        let minus = arch.eval(&(&theta - hs * &theta_dot), &(&x - hs * &x_dot))?.weight_jacobian();
        let fd = (plus - minus) / (2.0 * hs);
        worst.2 = worst.2.max(rel((&rate - &fd).norm(), fd.norm()));
    }
    Ok(worst)
}

pub fn jacobian_fd(seed: u64, points: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let archs = jacobian_architectures();
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for arch in &archs {
        let w = jacobian_errors(arch, &mut rng, points)?;
        worst = (worst.0.max(w.0), worst.1.max(w.1), worst.2.max(w.2));
    }
    let ok = worst.0 <= 1e-5 && worst.1 <= 1e-5 && worst.2 <= 1e-5;
    Ok(CheckOutcome::new(
        "dnn jacobians vs finite differences",
        ok,
        format!(
            "{} networks, worst relative error: weight {:.2e}, input {:.2e}, rate {:.2e}",
            archs.len(),
            worst.0,
            worst.1,
            worst.2
        ),
    ))
}

/// `(Ṁ − 2C) + (Ṁ − 2C)ᵀ = 0` at random states and `∫ (ξ⊗ξ)ᵀ(vec Ṁ − 2 vec C) dt`
/// stays at zero along a 1 s closed-loop trajectory of the true plant.
pub fn skew_property(params: &RobotParams, states: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..states {
        let q = rand_vec(&mut rng, 2, std::f64::consts::PI);
        let qd = rand_vec(&mut rng, 2, 5.0);
        let n = plant::inertia_rate(params, &q, &qd) - 2.0 * plant::coriolis(params, &q, &qd);
        worst = worst.max((&n + n.transpose()).norm());
    }

    let mut cfg = SimConfig {
        plant: params.clone(),
        ..SimConfig::default()
    };
    cfg.sim.duration_s = 1.0;
    cfg.sim.noise = false;
    cfg.sim.mode = Mode::OracleFeedforward;
    let trace = run(&cfg)?;
    let xi = cfg.skew.xi.resolve(2)?;
    let dt = cfg.sim.dt_s;
    let mut integral = 0.0f64;
    let mut worst_integral = 0.0f64;
    for pair in trace.rows.windows(2) {
        let f = |r: &crate::simulator::TraceRow| {
            let q = Vector::from_row_slice(&r.q);
            let qd = Vector::from_row_slice(&r.q_dot);
            skew_violation(&xi, &plant::inertia_rate(params, &q, &qd), &plant::coriolis(params, &q, &qd))
        };
        integral += 0.5 * dt * (f(&pair[0]) + f(&pair[1]));
        worst_integral = worst_integral.max(integral.abs());
    }
    let ok = worst <= 1e-10 && worst_integral <= 1e-8 && trace.abort.is_none();
    Ok(CheckOutcome::new(
        "skew symmetry of Ṁ − 2C",
        ok,
        format!("{states} states: max ‖N + Nᵀ‖_F = {worst:.2e}; max |E| over 1 s = {worst_integral:.2e}"),
    ))
}

/// On the sphere the projected rate never points outward, interior rates
/// pass through unchanged, and RK4 with the committed-state clamp used by
/// the simulator keeps every weight vector in the ball.
pub fn projection_invariance(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 20.0;
    let delta = 0.05;
    let dt = 1e-3;
    let mut worst_outward = f64::NEG_INFINITY;
    let mut worst_norm = 0.0f64;
    let mut worst_drift = 0.0f64;
    let mut interior_ok = true;
    for _ in 0..50 {
        let n = rng.gen_range(2..40);
        let dir = rand_vec(&mut rng, n, 1.0).normalize();

        let on_sphere = &dir * bound;
        let rate = rand_vec(&mut rng, n, 100.0);
        let p = proj(&rate, &on_sphere, bound, delta)?;
        worst_outward = worst_outward.max(on_sphere.dot(&p) / (bound * rate.norm()));

        let inside = &dir * bound * rng.gen_range(0.0..0.9);
        interior_ok &= proj(&rate, &inside, bound, delta)? == rate;

        let mut theta = &dir * bound * rng.gen_range(0.9..1.0);
        let push = rand_vec(&mut rng, n, 1.0) + 3.0 * &dir;
        let gain = rng.gen_range(1.0..50.0);
        let f = |th: &Vector| proj(&(gain * &push), th, bound, delta);
        for _ in 0..2000 {
            let k1 = f(&theta)?;
            let k2 = f(&(&theta + 0.5 * dt * &k1))?;
            let k3 = f(&(&theta + 0.5 * dt * &k2))?;
            let k4 = f(&(&theta + dt * &k3))?;
            theta += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            worst_drift = worst_drift.max(clamp_to_ball(&mut theta, bound) / bound - 1.0);
            worst_norm = worst_norm.max(theta.norm());
        }
    }
    let excess = worst_norm - bound;
    Ok(CheckOutcome::new(
        "projection keeps ‖θ‖ ≤ θ̄",
        worst_outward <= 1e-12 && interior_ok && excess <= 1e-9,
        format!(
            "max outward rate on sphere {worst_outward:.2e}; max ‖θ‖ − θ̄ = {excess:.2e} \
             (largest RK4 step overshoot before clamp {worst_drift:.2e}); interior pass-through {interior_ok}"
        ),
    ))
}

/// Literal and simplified observer forms integrate to the same `Ê` over 1 s,
/// and `Ẽ = −Ê` on every row.
pub fn observer_dual_form(base: &SimConfig) -> Result<CheckOutcome> {
    let mut cfg = base.clone();
    cfg.sim.duration_s = 1.0;
    cfg.sim.mode = Mode::Developed;
    cfg.skew.enabled = true;
    cfg.skew.form = ObserverForm::Literal;
    let literal = run(&cfg)?;
    cfg.skew.form = ObserverForm::Simplified;
    let simplified = run(&cfg)?;
    let diff = literal
        .rows
        .iter()
        .zip(&simplified.rows)
        .map(|(a, b)| (a.e_hat - b.e_hat).abs())
        .fold(0.0f64, f64::max);
    let sign_ok = simplified.rows.iter().all(|r| r.e_tilde == -r.e_hat);
    let complete = literal.abort.is_none()
        && simplified.abort.is_none()
        && literal.rows.len() == simplified.rows.len();
    Ok(CheckOutcome::new(
        "observer literal vs simplified form",
        diff <= 1e-8 && sign_ok && complete,
        format!("max |Ê_lit − Ê_simp| over 1 s = {diff:.2e}; Ẽ = −Ê on all rows: {sign_ok}"),
    ))
}

/// The full suite used by the `check` command.
pub fn run_all(cfg: &SimConfig) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        kron_identity(100, 11),
        jacobian_fd(12, 2)?,
        skew_property(&cfg.plant, 1000, 13)?,
        projection_invariance(14)?,
        observer_dual_form(cfg)?,
    ])
}
