//! Closed-loop simulation of the plant, the adaptive controller and the
//! skew observer.
//!
//! The joint state `[q, q̇, θ̂_M, θ̂_C, θ̂_F, θ̂_G, Ê]` is integrated with
//! classical fixed-step RK4. Measurement noise is drawn once per step and
//! held over the four stages. The controller and adaptation laws see noisy
//! measurements; the recorded metrics use the true state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::ops::Range;

use crate::adaptation::{self, AdaptationState};
use crate::config::{Mode, SimConfig};
use crate::controller::{control_input, tracking_errors, ModelOutputs, Switching};
use crate::dnn::{init_weights_with, DnnArch, DnnParams};
use crate::error::Result;
use crate::metrics::{f_tilde, matrix_error, vector_error};
use crate::plant::{self, desired_trajectory, DesiredPoint, PlantState, DOF};
use crate::skew_observer::{self, ObserverForm, ObserverInputs};
use crate::tensor_ops::{kron_vec, vec, Vector};

/// Any state component beyond this magnitude aborts the run.
pub const ABORT_THRESHOLD: f64 = 1e6;

const WEIGHT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub inertia: DnnArch,
    pub coriolis: DnnArch,
    pub friction: DnnArch,
    pub gravity: Option<DnnArch>,
}

impl Networks {
    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        let net = &cfg.network;
        let make = |input, output| {
            DnnArch::uniform(input, net.hidden_layers, net.width, output, net.activation)
        };
        Ok(Self {
            inertia: make(DOF, DOF * DOF)?,
            coriolis: make(2 * DOF, DOF * DOF)?,
            friction: make(DOF, DOF)?,
            gravity: if cfg.plant.gravity { Some(make(DOF, DOF)?) } else { None },
        })
    }

    fn gravity_params(&self) -> usize {
        self.gravity.as_ref().map_or(0, DnnArch::param_count)
    }
}

/// `U(−1, 1)` weights for all networks from one seed, drawn in the order
/// M, C, F, G. Both comparison arms call this with the same seed.
pub fn initial_weights(nets: &Networks, cfg: &SimConfig, seed: u64) -> AdaptationState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(WEIGHT_STREAM);
    let a = &cfg.adaptation;
    let inertia = init_weights_with(&nets.inertia, a.theta_bound_m, &mut rng);
    let coriolis = init_weights_with(&nets.coriolis, a.theta_bound_c, &mut rng);
    let friction = init_weights_with(&nets.friction, a.theta_bound_f, &mut rng);
    let gravity = match &nets.gravity {
        Some(arch) => init_weights_with(arch, a.theta_bound_g, &mut rng),
        None => DnnParams {
            theta: Vector::zeros(0),
            bound: a.theta_bound_g,
        },
    };
    AdaptationState {
        last_inertia_rate: Vector::zeros(inertia.theta.len()),
        inertia,
        coriolis,
        friction,
        gravity,
    }
}

/// `σ = rms · 10^(−snr/20)`; `None` means noise is off.
pub fn noise_std(snr_db: Option<f64>, signal_rms: f64) -> f64 {
    match snr_db {
        Some(snr) => signal_rms * 10f64.powf(-snr / 20.0),
        None => 0.0,
    }
}

/// Per-joint RMS of `q_d` and `q̇_d` sampled on the simulation grid.
pub fn desired_signal_rms(cfg: &SimConfig) -> ([f64; 2], [f64; 2]) {
    let steps = step_count(cfg);
    let mut pos = [0.0; 2];
    let mut vel = [0.0; 2];
    for k in 0..=steps {
        let d = desired_trajectory(k as f64 * cfg.sim.dt_s, cfg.sim.trajectory);
        for i in 0..DOF {
            pos[i] += d.q[i] * d.q[i];
            vel[i] += d.q_dot[i] * d.q_dot[i];
        }
    }
    let count = (steps + 1) as f64;
    (pos.map(|s| (s / count).sqrt()), vel.map(|s| (s / count).sqrt()))
}

fn step_count(cfg: &SimConfig) -> usize {
    (cfg.sim.duration_s / cfg.sim.dt_s).round() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub q: [f64; 2],
    pub q_dot: [f64; 2],
    pub q_d: [f64; 2],
    pub e: [f64; 2],
    pub r: [f64; 2],
    pub tau: [f64; 2],
    pub e_hat: f64,
    pub e_tilde: f64,
    pub err_m: f64,
    pub err_c: f64,
    pub err_f: f64,
    pub f_tilde_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub rows: Vec<TraceRow>,
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    /// Set when the run stopped early; rows cover the time before failure.
    pub abort: Option<String>,
    /// Largest `‖θ̂_i‖ − θ̄_i` over committed states and networks.
    pub max_theta_excess: f64,
    pub max_q_norm: f64,
    pub max_q_dot_norm: f64,
    /// `‖q‖` or `‖q̇‖` left the monitored input region.
    pub excursion: bool,
}

impl SimTrace {
    pub fn empty(mode: Mode, seed: u64, config_hash: String) -> Self {
        Self {
            rows: Vec::new(),
            mode,
            seed,
            config_hash,
            abort: None,
            max_theta_excess: f64::NEG_INFINITY,
            max_q_norm: 0.0,
            max_q_dot_norm: 0.0,
            excursion: false,
        }
    }
}

struct Layout {
    inertia: Range<usize>,
    coriolis: Range<usize>,
    friction: Range<usize>,
    gravity: Range<usize>,
    e_hat: usize,
    len: usize,
}

impl Layout {
    fn new(nets: &Networks) -> Self {
        let start = 2 * DOF;
        let inertia = start..start + nets.inertia.param_count();
        let coriolis = inertia.end..inertia.end + nets.coriolis.param_count();
        let friction = coriolis.end..coriolis.end + nets.friction.param_count();
        let gravity = friction.end..friction.end + nets.gravity_params();
        let e_hat = gravity.end;
        Self {
            inertia,
            coriolis,
            friction,
            gravity,
            e_hat,
            len: e_hat + 1,
        }
    }

    fn plant_state(&self, y: &Vector) -> PlantState {
        PlantState {
            q: y.rows(0, DOF).into_owned(),
            q_dot: y.rows(DOF, DOF).into_owned(),
        }
    }
}

fn slice(y: &Vector, r: &Range<usize>) -> Vector {
    y.rows(r.start, r.len()).into_owned()
}

struct Noise {
    q: Vector,
    q_dot: Vector,
}

struct Stage {
    dy: Vector,
    tau: Vector,
    q_ddot: Vector,
}

struct ClosedLoop<'a> {
    cfg: &'a SimConfig,
    mode: Mode,
    nets: Networks,
    layout: Layout,
    xi: Vector,
    xi_xi: Vector,
    switching: Switching,
}

impl<'a> ClosedLoop<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        let nets = Networks::from_config(cfg)?;
        let layout = Layout::new(&nets);
        let xi = cfg.skew.xi.resolve(DOF)?;
        Ok(Self {
            cfg,
            mode: cfg.effective_mode(),
            layout,
            nets,
            xi_xi: kron_vec(&xi, &xi),
            xi,
            switching: cfg.controller.switching(),
        })
    }

    fn params(&self, y: &Vector, range: &Range<usize>, bound: f64) -> DnnParams {
        DnnParams {
            theta: slice(y, range),
            bound,
        }
    }

    fn initial_state(&self, weights: &AdaptationState) -> Vector {
        let s = &self.cfg.sim;
        let (q0, qd0) = if s.start_on_trajectory {
            let d = desired_trajectory(0.0, s.trajectory);
            (d.q, d.q_dot)
        } else {
            (Vector::from_row_slice(&s.initial_q), Vector::from_row_slice(&s.initial_q_dot))
        };
        let l = &self.layout;
        let mut y = Vector::zeros(l.len);
        y.rows_mut(0, DOF).copy_from(&q0);
        y.rows_mut(DOF, DOF).copy_from(&qd0);
        y.rows_mut(l.inertia.start, l.inertia.len()).copy_from(&weights.inertia.theta);
        y.rows_mut(l.coriolis.start, l.coriolis.len()).copy_from(&weights.coriolis.theta);
        y.rows_mut(l.friction.start, l.friction.len()).copy_from(&weights.friction.theta);
        y.rows_mut(l.gravity.start, l.gravity.len()).copy_from(&weights.gravity.theta);
        y
    }

    fn true_model(&self, state: &PlantState) -> ModelOutputs {
        let p = &self.cfg.plant;
        ModelOutputs {
            inertia: vec(&plant::inertia(p, &state.q)),
            coriolis: vec(&plant::coriolis(p, &state.q, &state.q_dot)),
            friction: plant::friction(p, &state.q_dot),
            gravity: plant::gravity(p, &state.q),
        }
    }

    /// DNN estimates at `state`, without Jacobians.
    fn estimates(&self, y: &Vector, state: &PlantState) -> Result<ModelOutputs> {
        if self.mode == Mode::OracleFeedforward {
            return Ok(self.true_model(state));
        }
        let l = &self.layout;
        let x_c = stack(&state.q, &state.q_dot);
        Ok(ModelOutputs {
            inertia: self.nets.inertia.eval(&slice(y, &l.inertia), &state.q)?.output().clone(),
            coriolis: self.nets.coriolis.eval(&slice(y, &l.coriolis), &x_c)?.output().clone(),
            friction: self.nets.friction.eval(&slice(y, &l.friction), &state.q_dot)?.output().clone(),
            gravity: match &self.nets.gravity {
                Some(arch) => arch.eval(&slice(y, &l.gravity), &state.q)?.output().clone(),
                None => Vector::zeros(DOF),
            },
        })
    }

    fn rhs(&self, t: f64, y: &Vector, noise: &Noise, lagged_m_rate: &Vector) -> Result<Stage> {
        let cfg = self.cfg;
        let l = &self.layout;
        let a = &cfg.adaptation;
        let alpha = cfg.gains.alpha;
        let truth = l.plant_state(y);
        let meas = PlantState {
            q: &truth.q + &noise.q,
            q_dot: &truth.q_dot + &noise.q_dot,
        };
        let desired = desired_trajectory(t, cfg.sim.trajectory);
        let errors = tracking_errors(&meas.q, &meas.q_dot, &desired, alpha);
        let mut dy = Vector::zeros(l.len);

        let tau = if self.mode == Mode::OracleFeedforward {
            let outputs = self.true_model(&meas);
            control_input(&errors, &desired, &outputs, &cfg.gains, self.switching)?
        } else {
            let developed = self.mode == Mode::Developed;
            let e_tilde = if developed { -y[l.e_hat] } else { 0.0 };
            let vel = errors.velocity_signal(&desired, alpha);
            let acc = errors.acceleration_signal(&desired, alpha);
            let x_c = stack(&meas.q, &meas.q_dot);

            let th_m = self.params(y, &l.inertia, a.theta_bound_m);
            let th_c = self.params(y, &l.coriolis, a.theta_bound_c);
            let th_f = self.params(y, &l.friction, a.theta_bound_f);
            let ev_m = self.nets.inertia.eval(&th_m.theta, &meas.q)?;
            let ev_c = self.nets.coriolis.eval(&th_c.theta, &x_c)?;
            let ev_f = self.nets.friction.eval(&th_f.theta, &meas.q_dot)?;

            let mut outputs = ModelOutputs {
                inertia: ev_m.output().clone(),
                coriolis: ev_c.output().clone(),
                friction: ev_f.output().clone(),
                gravity: Vector::zeros(DOF),
            };
            if let Some(arch) = &self.nets.gravity {
                let th_g = self.params(y, &l.gravity, a.theta_bound_g);
                let ev_g = arch.eval(&th_g.theta, &meas.q)?;
                outputs.gravity = ev_g.output().clone();
                let rate = adaptation::theta_g_rate(&ev_g.weight_jacobian(), &errors.r, a.gamma_g, &th_g, a.proj_delta)?;
                dy.rows_mut(l.gravity.start, l.gravity.len()).copy_from(&rate);
            }
            let tau = control_input(&errors, &desired, &outputs, &cfg.gains, self.switching)?;

            let jac_m = ev_m.weight_jacobian();
            let jac_c = ev_c.weight_jacobian();
            let jac_f = ev_f.weight_jacobian();
            // d/dt Φ'_M uses the previous step's committed θ̂̇_M
            let jac_m_rate = if developed && e_tilde != 0.0 {
                Some(ev_m.weight_jacobian_rate(&meas.q_dot, lagged_m_rate)?)
            } else {
                None
            };
            let rate_m = adaptation::theta_m_rate(
                &jac_m,
                jac_m_rate.as_ref().map(|j| (j, e_tilde)),
                &acc,
                &errors.r,
                &self.xi_xi,
                a.gamma_m,
                &th_m,
                a.proj_delta,
            )?;
            let rate_c = adaptation::theta_c_rate(
                &jac_c,
                e_tilde,
                &vel,
                &errors.r,
                &self.xi_xi,
                a.gamma_c,
                &th_c,
                a.proj_delta,
            )?;
            let rate_f = adaptation::theta_f_rate(&jac_f, &errors.r, a.gamma_f, &th_f, a.proj_delta)?;

            if developed {
                let input_jac_m = ev_m.input_jacobian();
                let inputs = ObserverInputs {
                    input_jac_m: &input_jac_m,
                    weight_jac_m: Some(&jac_m),
                    theta_m_rate: Some(&rate_m),
                    x_m_dot: &meas.q_dot,
                    phi_c: &outputs.coriolis,
                    e_tilde,
                };
                dy[l.e_hat] = skew_observer::e_hat_rate(
                    &inputs,
                    &self.xi,
                    &cfg.skew,
                    self.switching,
                    cfg.skew.form,
                )?;
            }
            dy.rows_mut(l.inertia.start, l.inertia.len()).copy_from(&rate_m);
            dy.rows_mut(l.coriolis.start, l.coriolis.len()).copy_from(&rate_c);
            dy.rows_mut(l.friction.start, l.friction.len()).copy_from(&rate_f);
            tau
        };

        let q_ddot = plant::forward_dynamics(&cfg.plant, &truth, &tau)?;
        dy.rows_mut(0, DOF).copy_from(&truth.q_dot);
        dy.rows_mut(DOF, DOF).copy_from(&q_ddot);
        Ok(Stage { dy, tau, q_ddot })
    }

    fn record(&self, t: f64, y: &Vector, stage: &Stage) -> Result<TraceRow> {
        let p = &self.cfg.plant;
        let truth = self.layout.plant_state(y);
        let desired: DesiredPoint = desired_trajectory(t, self.cfg.sim.trajectory);
        let errors = tracking_errors(&truth.q, &truth.q_dot, &desired, self.cfg.gains.alpha);
        let est = self.estimates(y, &truth)?;
        let m = plant::inertia(p, &truth.q);
        let c = plant::coriolis(p, &truth.q, &truth.q_dot);
        let f = plant::friction(p, &truth.q_dot);
        let ft = f_tilde(&m, &c, &f, &est.inertia, &est.coriolis, &est.friction, &stage.q_ddot, &truth.q_dot)?;
        let e_hat = if self.mode == Mode::Developed { y[self.layout.e_hat] } else { 0.0 };
        Ok(TraceRow {
            t,
            q: pair(&truth.q),
            q_dot: pair(&truth.q_dot),
            q_d: pair(&desired.q),
            e: pair(&errors.e),
            r: pair(&errors.r),
            tau: pair(&stage.tau),
            e_hat,
            e_tilde: skew_observer::e_tilde(&skew_observer::SkewState { e_hat }),
            err_m: matrix_error(&m, &est.inertia)?,
            err_c: matrix_error(&c, &est.coriolis)?,
            err_f: vector_error(&f, &est.friction)?,
            f_tilde_norm: ft.norm(),
        })
    }

    /// Pull committed weights back onto their balls. RK4 can leave the
    /// sphere by O(dt²) even though the continuous flow cannot.
    fn clamp_weights(&self, y: &mut Vector) {
        let a = &self.cfg.adaptation;
        let l = &self.layout;
        for (range, bound) in [
            (&l.inertia, a.theta_bound_m),
            (&l.coriolis, a.theta_bound_c),
            (&l.friction, a.theta_bound_f),
            (&l.gravity, a.theta_bound_g),
        ] {
            let mut block = slice(y, range);
            adaptation::clamp_to_ball(&mut block, bound);
            y.rows_mut(range.start, range.len()).copy_from(&block);
        }
    }

    fn theta_excess(&self, y: &Vector) -> f64 {
        let a = &self.cfg.adaptation;
        let l = &self.layout;
        [
            (&l.inertia, a.theta_bound_m),
            (&l.coriolis, a.theta_bound_c),
            (&l.friction, a.theta_bound_f),
            (&l.gravity, a.theta_bound_g),
        ]
        .iter()
        .filter(|(r, _)| !r.is_empty())
        .map(|(r, b)| y.rows(r.start, r.len()).norm() - b)
        .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn stack(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn pair(v: &Vector) -> [f64; 2] {
    [v[0], v[1]]
}

/// Simulate one configuration. Divergence is reported through
/// [`SimTrace::abort`]; only an invalid configuration returns `Err`.
pub fn run(cfg: &SimConfig) -> Result<SimTrace> {
    cfg.validate()?;
    let sim = ClosedLoop::new(cfg)?;
    let weights = initial_weights(&sim.nets, cfg, cfg.sim.seed);
    Ok(integrate(&sim, &weights))
}

fn integrate(sim: &ClosedLoop<'_>, weights: &AdaptationState) -> SimTrace {
    let cfg = sim.cfg;
    let dt = cfg.sim.dt_s;
    let steps = step_count(cfg);
    let mut trace = SimTrace::empty(sim.mode, cfg.sim.seed, cfg.hash());
    trace.rows.reserve(steps + 1);

    let (pos_rms, vel_rms) = desired_signal_rms(cfg);
    let snr = cfg.sim.noise.then_some(cfg.sim.snr_db);
    let sigma_q = pos_rms.map(|s| noise_std(snr, s));
    let sigma_qd = vel_rms.map(|s| noise_std(snr, s));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
    rng.set_stream(NOISE_STREAM);
    let sample_noise = |rng: &mut ChaCha8Rng| {
        if !cfg.sim.noise {
            return Noise {
                q: Vector::zeros(DOF),
                q_dot: Vector::zeros(DOF),
            };
        }
        let mut draw = |sigma: [f64; 2]| {
            Vector::from_fn(DOF, |i, _| {
                let z: f64 = StandardNormal.sample(rng);
                sigma[i] * z
            })
        };
        let q = draw(sigma_q);
        let q_dot = draw(sigma_qd);
        Noise { q, q_dot }
    };

    let mut y = sim.initial_state(weights);
    let mut lagged = weights.last_inertia_rate.clone();
    let l = &sim.layout;
    trace.max_theta_excess = sim.theta_excess(&y);

    for n in 0..=steps {
        let t = n as f64 * dt;
        let noise = sample_noise(&mut rng);
        let k1 = match sim.rhs(t, &y, &noise, &lagged) {
            Ok(s) => s,
            Err(e) => {
                trace.abort = Some(format!("t = {t:.4} s: {e}"));
                break;
            }
        };
        match sim.record(t, &y, &k1) {
            Ok(row) => trace.rows.push(row),
            Err(e) => {
                trace.abort = Some(format!("t = {t:.4} s: {e}"));
                break;
            }
        }
        let q_norm = y.rows(0, DOF).norm();
        let qd_norm = y.rows(DOF, DOF).norm();
        trace.max_q_norm = trace.max_q_norm.max(q_norm);
        trace.max_q_dot_norm = trace.max_q_dot_norm.max(qd_norm);
        if n == steps {
            break;
        }

        let stage = |t: f64, y: &Vector| sim.rhs(t, y, &noise, &lagged).map(|s| s.dy);
        let step = (|| -> Result<Vector> {
            let k2 = stage(t + 0.5 * dt, &(&y + 0.5 * dt * &k1.dy))?;
            let k3 = stage(t + 0.5 * dt, &(&y + 0.5 * dt * &k2))?;
            let k4 = stage(t + dt, &(&y + dt * &k3))?;
            Ok(&y + (dt / 6.0) * (&k1.dy + 2.0 * k2 + 2.0 * k3 + k4))
        })();
        let mut next = match step {
            Ok(next) => next,
            Err(e) => {
                trace.abort = Some(format!("t = {t:.4} s: {e}"));
                break;
            }
        };
        if let Some(bad) = next.iter().position(|v| !v.is_finite() || v.abs() > ABORT_THRESHOLD) {
            trace.abort = Some(format!(
                "t = {:.4} s: state component {bad} diverged ({})",
                t + dt,
                next[bad]
            ));
            break;
        }
        sim.clamp_weights(&mut next);
        lagged = (slice(&next, &l.inertia) - slice(&y, &l.inertia)) / dt;
        trace.max_theta_excess = trace.max_theta_excess.max(sim.theta_excess(&next));
        y = next;
    }

    let radius = cfg.sim.excursion_radius;
    trace.excursion = trace.max_q_norm > radius || trace.max_q_dot_norm > radius;
    if trace.excursion {
        log::warn!(
            "seed {}: DNN inputs left the monitored region (max ‖q‖ = {:.3}, max ‖q̇‖ = {:.3})",
            cfg.sim.seed,
            trace.max_q_norm,
            trace.max_q_dot_norm
        );
    }
    trace
}

/// Run with the given mode and seed, keeping everything else from `cfg`.
pub fn run_arm(cfg: &SimConfig, mode: Mode, seed: u64) -> Result<SimTrace> {
    let mut c = cfg.clone();
    c.sim.mode = mode;
    c.sim.seed = seed;
    c.skew.enabled = mode != Mode::Baseline;
    run(&c)
}

/// Literal-form observer rate evaluated alongside the simplified one on the
/// same state, for dual-form checks. Returns `(literal, simplified)`.
pub fn observer_rates_at(cfg: &SimConfig, weights: &AdaptationState, q: &Vector, q_dot: &Vector, e_tilde: f64) -> Result<(f64, f64)> {
    let nets = Networks::from_config(cfg)?;
    let xi = cfg.skew.xi.resolve(DOF)?;
    let ev_m = nets.inertia.eval(&weights.inertia.theta, q)?;
    let ev_c = nets.coriolis.eval(&weights.coriolis.theta, &stack(q, q_dot))?;
    let jx = ev_m.input_jacobian();
    let jw = ev_m.weight_jacobian();
    let inputs = ObserverInputs {
        input_jac_m: &jx,
        weight_jac_m: Some(&jw),
        theta_m_rate: Some(&weights.last_inertia_rate),
        x_m_dot: q_dot,
        phi_c: ev_c.output(),
        e_tilde,
    };
    let sw = cfg.controller.switching();
    Ok((
        skew_observer::e_hat_rate(&inputs, &xi, &cfg.skew, sw, ObserverForm::Literal)?,
        skew_observer::e_hat_rate(&inputs, &xi, &cfg.skew, sw, ObserverForm::Simplified)?,
    ))
}
