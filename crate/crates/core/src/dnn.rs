//! Fully-connected feedforward DNN with analytic Jacobians.
//!
//! Layer `j` holds a weight matrix `v_j` of shape `L_j × L_{j+1}`. The input
//! is augmented with a trailing 1 for the bias, hidden layers apply the
//! activation element-wise, and the output layer is linear:
//!
//! ```text
//! Φ_0 = v_0ᵀ [x; 1]
//! Φ_j = v_jᵀ φ(Φ_{j-1}),   j = 1..k
//! ```
//!
//! The packed parameter vector is `θ = [vec(v_0); …; vec(v_k)]` with
//! column-major `vec`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_ops::{Mat, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Logistic,
}

impl Activation {
    #[inline]
    pub fn value(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => y.tanh(),
            Activation::Logistic => logistic(y),
        }
    }

    #[inline]
    pub fn first(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = y.tanh();
                1.0 - t * t
            }
            Activation::Logistic => {
                let s = logistic(y);
                s * (1.0 - s)
            }
        }
    }

    #[inline]
    pub fn second(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = y.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Logistic => {
                let s = logistic(y);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
        }
    }

    /// Value, first and second derivative in one pass.
    #[inline]
    pub fn eval(self, y: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = y.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Logistic => {
                let s = logistic(y);
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
        }
    }
}

#[inline]
fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "logistic" => Ok(Activation::Logistic),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer widths `L_0 = L_in + 1, L_1, …, L_k, L_{k+1} = L_out`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DnnArch {
    widths: Vec<usize>,
    activation: Activation,
}

impl DnnArch {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim + 1);
        widths.extend_from_slice(hidden);
        widths.push(output_dim);
        Ok(Self { widths, activation })
    }

    /// `hidden_layers` layers of width `width`.
    pub fn uniform(
        input_dim: usize,
        hidden_layers: usize,
        width: usize,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        Self::new(input_dim, &vec![width; hidden_layers], output_dim, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0] - 1
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of packed weights, `Σ L_j L_{j+1}`.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1]).sum()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.widths.windows(2).scan(0, |off, w| {
            let start = *off;
            *off += w[0] * w[1];
            Some((start, w[0], w[1]))
        })
    }

    /// Split a packed parameter vector into `v_0, …, v_k`.
    pub fn unpack(&self, theta: &Vector) -> Result<Vec<Mat>> {
        self.check_theta(theta)?;
        Ok(self
            .layer_offsets()
            .map(|(off, rows, cols)| {
                DMatrix::from_column_slice(rows, cols, &theta.as_slice()[off..off + rows * cols])
            })
            .collect())
    }

    pub fn pack(&self, layers: &[Mat]) -> Result<Vector> {
        if layers.len() != self.widths.len() - 1 {
            return Err(Error::Dimension {
                what: "layer count",
                expected: self.widths.len() - 1,
                got: layers.len(),
            });
        }
        let mut theta = Vec::with_capacity(self.param_count());
        for ((_, rows, cols), v) in self.layer_offsets().zip(layers) {
            if v.shape() != (rows, cols) {
                return Err(Error::Dimension {
                    what: "layer shape",
                    expected: rows * cols,
                    got: v.len(),
                });
            }
            theta.extend_from_slice(v.as_slice());
        }
        Ok(Vector::from_vec(theta))
    }

    fn check_theta(&self, theta: &Vector) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::Dimension {
                what: "theta",
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &Vector) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "dnn input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass with per-layer caches for the Jacobians.
    pub fn eval(&self, theta: &Vector, x: &Vector) -> Result<DnnEval<'_>> {
        self.check_input(x)?;
        let layers = self.unpack(theta)?;
        let k = self.hidden_layers();

        let mut x_a = Vector::zeros(x.len() + 1);
        x_a.rows_mut(0, x.len()).copy_from(x);
        x_a[x.len()] = 1.0;

        let mut inputs = Vec::with_capacity(k + 1);
        let mut pre = Vec::with_capacity(k + 1);
        let mut slopes = Vec::with_capacity(k);
        let mut curvatures = Vec::with_capacity(k);

        pre.push(layers[0].tr_mul(&x_a));
        inputs.push(x_a);
        for j in 1..=k {
            let prev = &pre[j - 1];
            let n = prev.len();
            let mut h = Vector::zeros(n);
            let mut d1 = Vector::zeros(n);
            let mut d2 = Vector::zeros(n);
            for i in 0..n {
                let (a, b, c) = self.activation.eval(prev[i]);
                h[i] = a;
                d1[i] = b;
                d2[i] = c;
            }
            pre.push(layers[j].tr_mul(&h));
            inputs.push(h);
            slopes.push(d1);
            curvatures.push(d2);
        }

        Ok(DnnEval {
            arch: self,
            layers,
            inputs,
            pre,
            slopes,
            curvatures,
        })
    }
}

/// Cached forward pass.
///
/// `inputs[j]` is the vector multiplied by `v_jᵀ` (the augmented input for
/// `j = 0`, the activated previous layer otherwise); `slopes[j-1]` and
/// `curvatures[j-1]` are `φ'` and `φ''` evaluated at `Φ_{j-1}`.
#[derive(Clone, Debug)]
pub struct DnnEval<'a> {
    arch: &'a DnnArch,
    layers: Vec<Mat>,
    inputs: Vec<Vector>,
    pre: Vec<Vector>,
    slopes: Vec<Vector>,
    curvatures: Vec<Vector>,
}

impl DnnEval<'_> {
    pub fn output(&self) -> &Vector {
        self.pre.last().unwrap()
    }

    /// Right-to-left products `P_j = ∂Φ_k/∂Φ_j`, for `j = 0..=k`.
    fn backward_products(&self) -> Vec<Mat> {
        let k = self.arch.hidden_layers();
        let out = self.arch.output_dim();
        let mut products = vec![Mat::zeros(0, 0); k + 1];
        products[k] = Mat::identity(out, out);
        for j in (0..k).rev() {
            let mut p = &products[j + 1] * self.layers[j + 1].transpose();
            scale_columns(&mut p, &self.slopes[j]);
            products[j] = p;
        }
        products
    }

    /// `∂Φ/∂θ`, shape `L_out × ϰ`.
    pub fn weight_jacobian(&self) -> Mat {
        let products = self.backward_products();
        let mut jac = Mat::zeros(self.arch.output_dim(), self.arch.param_count());
        for (j, (off, rows, cols)) in self.arch.layer_offsets().enumerate() {
            fill_kron_block(&mut jac, off, rows, cols, &products[j], &self.inputs[j], 1.0);
        }
        jac
    }

    /// `∂Φ/∂x`, shape `L_out × L_in`. The bias row of `v_0` drops out.
    pub fn input_jacobian(&self) -> Mat {
        let products = self.backward_products();
        let n_in = self.arch.input_dim();
        &products[0] * self.layers[0].rows(0, n_in).transpose()
    }

    /// Time derivative of the weight Jacobian along `ẋ` and `θ̇`.
    pub fn weight_jacobian_rate(&self, x_dot: &Vector, theta_dot: &Vector) -> Result<Mat> {
        self.arch.check_input(x_dot)?;
        let layer_rates = self.arch.unpack(theta_dot)?;
        let k = self.arch.hidden_layers();
        let out = self.arch.output_dim();

        // forward tangent: input rates and pre-activation rates
        let mut input_rates = Vec::with_capacity(k + 1);
        let mut pre_rates: Vec<Vector> = Vec::with_capacity(k + 1);
        let mut xa_dot = Vector::zeros(x_dot.len() + 1);
        xa_dot.rows_mut(0, x_dot.len()).copy_from(x_dot);
        pre_rates.push(layer_rates[0].tr_mul(&self.inputs[0]) + self.layers[0].tr_mul(&xa_dot));
        input_rates.push(xa_dot);
        for j in 1..=k {
            let h_dot = self.slopes[j - 1].component_mul(&pre_rates[j - 1]);
            pre_rates.push(layer_rates[j].tr_mul(&self.inputs[j]) + self.layers[j].tr_mul(&h_dot));
            input_rates.push(h_dot);
        }

        // backward: P_j = P_{j+1} A_{j+1}, d/dt P_j = Ṗ_{j+1} A_{j+1} + P_{j+1} Ȧ_{j+1}
        let mut products = vec![Mat::zeros(0, 0); k + 1];
        let mut product_rates = vec![Mat::zeros(0, 0); k + 1];
        products[k] = Mat::identity(out, out);
        product_rates[k] = Mat::zeros(out, out);
        for j in (0..k).rev() {
            let l = j + 1;
            let slope = &self.slopes[j];
            let slope_rate = self.curvatures[j].component_mul(&pre_rates[j]);

            let vt = self.layers[l].transpose();
            let mut a = vt.clone();
            scale_columns(&mut a, slope);
            let mut a_dot = layer_rates[l].transpose();
            scale_columns(&mut a_dot, slope);
            let mut curv_part = vt;
            scale_columns(&mut curv_part, &slope_rate);
            a_dot += curv_part;

            product_rates[j] = &product_rates[l] * &a + &products[l] * &a_dot;
            products[j] = &products[l] * &a;
        }

        let mut rate = Mat::zeros(out, self.arch.param_count());
        for (j, (off, rows, cols)) in self.arch.layer_offsets().enumerate() {
            fill_kron_block(&mut rate, off, rows, cols, &product_rates[j], &self.inputs[j], 1.0);
            fill_kron_block(&mut rate, off, rows, cols, &products[j], &input_rates[j], 1.0);
        }
        Ok(rate)
    }
}

fn scale_columns(m: &mut Mat, s: &Vector) {
    for (mut col, &f) in m.column_iter_mut().zip(s.iter()) {
        col *= f;
    }
}

/// Adds `scale * (P ⊗ hᵀ)` into columns `off..off + rows*cols` of `dst`.
fn fill_kron_block(
    dst: &mut Mat,
    off: usize,
    rows: usize,
    cols: usize,
    p: &Mat,
    h: &Vector,
    scale: f64,
) {
    debug_assert_eq!(p.ncols(), cols);
    debug_assert_eq!(h.len(), rows);
    for c in 0..cols {
        for a in 0..rows {
            let ha = scale * h[a];
            let col = off + c * rows + a;
            for o in 0..p.nrows() {
                dst[(o, col)] += p[(o, c)] * ha;
            }
        }
    }
}

/// Packed weights together with their norm bound `θ̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct DnnParams {
    pub theta: Vector,
    pub bound: f64,
}

impl DnnParams {
    pub fn zeros(arch: &DnnArch, bound: f64) -> Self {
        Self {
            theta: Vector::zeros(arch.param_count()),
            bound,
        }
    }
}

pub fn forward(arch: &DnnArch, params: &DnnParams, x: &Vector) -> Result<Vector> {
    Ok(arch.eval(&params.theta, x)?.output().clone())
}

pub fn weight_jacobian(arch: &DnnArch, params: &DnnParams, x: &Vector) -> Result<Mat> {
    Ok(arch.eval(&params.theta, x)?.weight_jacobian())
}

pub fn input_jacobian(arch: &DnnArch, params: &DnnParams, x: &Vector) -> Result<Mat> {
    Ok(arch.eval(&params.theta, x)?.input_jacobian())
}

pub fn weight_jacobian_rate(
    arch: &DnnArch,
    params: &DnnParams,
    x: &Vector,
    x_dot: &Vector,
    theta_dot: &Vector,
) -> Result<Mat> {
    arch.eval(&params.theta, x)?
        .weight_jacobian_rate(x_dot, theta_dot)
}

/// I.i.d. `U(-1, 1)` weights, rescaled onto the ball if the draw lands outside.
pub fn init_weights(arch: &DnnArch, bound: f64, seed: u64) -> DnnParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_weights_with(arch, bound, &mut rng)
}

pub fn init_weights_with<R: Rng + ?Sized>(arch: &DnnArch, bound: f64, rng: &mut R) -> DnnParams {
    let mut theta = Vector::from_fn(arch.param_count(), |_, _| rng.gen_range(-1.0..1.0));
    let norm = theta.norm();
    if norm > bound {
        theta *= bound / norm;
    }
    DnnParams { theta, bound }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straightforward re-implementation of the recursion, no caching.
    fn naive_forward(arch: &DnnArch, theta: &Vector, x: &Vector) -> Vector {
        let mut off = 0;
        let w = arch.widths();
        let mut h: Vec<f64> = x.iter().copied().chain(std::iter::once(1.0)).collect();
        let mut out = Vec::new();
        for j in 0..w.len() - 1 {
            if j > 0 {
                h = out.iter().map(|&y| arch.activation().value(y)).collect();
            }
            let (rows, cols) = (w[j], w[j + 1]);
            out = (0..cols)
                .map(|c| (0..rows).map(|r| theta[off + c * rows + r] * h[r]).sum())
                .collect();
            off += rows * cols;
        }
        Vector::from_vec(out)
    }

    fn affine() -> (DnnArch, DnnParams) {
        let arch = DnnArch::new(1, &[], 1, Activation::Tanh).unwrap();
        let params = DnnParams {
            theta: Vector::from_vec(vec![2.0, 3.0]),
            bound: 10.0,
        };
        (arch, params)
    }

    #[test]
    fn single_affine_layer() {
        let (arch, params) = affine();
        let x = Vector::from_vec(vec![1.0]);
        assert_eq!(forward(&arch, &params, &x).unwrap()[0], 5.0);
        assert_eq!(weight_jacobian(&arch, &params, &x).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(input_jacobian(&arch, &params, &x).unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn affine_rate_is_kron_of_augmented_input_rate() {
        let (arch, params) = affine();
        let x = Vector::from_vec(vec![1.0]);
        let x_dot = Vector::from_vec(vec![0.7]);
        let theta_dot = Vector::from_vec(vec![-3.0, 4.0]);
        let rate = weight_jacobian_rate(&arch, &params, &x, &x_dot, &theta_dot).unwrap();
        assert_eq!(rate.as_slice(), &[0.7, 0.0]);
    }

    #[test]
    fn zero_weights_give_zero_output_and_input_jacobian() {
        let arch = DnnArch::uniform(3, 2, 5, 4, Activation::Tanh).unwrap();
        let params = DnnParams::zeros(&arch, 1.0);
        let x = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        assert_eq!(forward(&arch, &params, &x).unwrap(), Vector::zeros(4));
        assert_eq!(input_jacobian(&arch, &params, &x).unwrap(), Mat::zeros(4, 3));
    }

    #[test]
    fn zero_rates_give_zero_jacobian_rate() {
        let arch = DnnArch::uniform(2, 3, 4, 2, Activation::Tanh).unwrap();
        let params = init_weights(&arch, 20.0, 3);
        let x = Vector::from_vec(vec![0.1, 0.2]);
        let rate = weight_jacobian_rate(
            &arch,
            &params,
            &x,
            &Vector::zeros(2),
            &Vector::zeros(arch.param_count()),
        )
        .unwrap();
        assert_eq!(rate, Mat::zeros(2, arch.param_count()));
    }

    #[test]
    fn matches_naive_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let arch = DnnArch::uniform(3, 1, 6, 2, Activation::Tanh).unwrap();
            let params = init_weights_with(&arch, 100.0, &mut rng);
            let x = Vector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let fast = forward(&arch, &params, &x).unwrap();
            let slow = naive_forward(&arch, &params.theta, &x);
            assert!((fast - slow).amax() <= 1e-14);
        }
    }

    #[test]
    fn dimension_errors() {
        let arch = DnnArch::uniform(2, 1, 3, 1, Activation::Tanh).unwrap();
        let params = DnnParams::zeros(&arch, 1.0);
        assert!(forward(&arch, &params, &Vector::zeros(3)).is_err());
        let bad = DnnParams {
            theta: Vector::zeros(4),
            bound: 1.0,
        };
        assert!(forward(&arch, &bad, &Vector::zeros(2)).is_err());
    }

    #[test]
    fn pack_unpack_round_trip() {
        let arch = DnnArch::new(2, &[3, 4], 2, Activation::Logistic).unwrap();
        let params = init_weights(&arch, 100.0, 5);
        let layers = arch.unpack(&params.theta).unwrap();
        assert_eq!(layers.len(), 3);
        assert_eq!(layers[0].shape(), (3, 3));
        assert_eq!(layers[1].shape(), (3, 4));
        assert_eq!(layers[2].shape(), (4, 2));
        assert_eq!(arch.pack(&layers).unwrap(), params.theta);
    }

    #[test]
    fn param_count_matches_layer_sum() {
        // k = 4 hidden layers of width 7, L_in = 2, L_out = 4
        let arch = DnnArch::uniform(2, 4, 7, 4, Activation::Tanh).unwrap();
        assert_eq!(arch.param_count(), 3 * 7 + 3 * 49 + 7 * 4);
    }

    #[test]
    fn activation_derivatives() {
        let t = Activation::Tanh;
        assert_eq!(t.value(0.0), 0.0);
        assert_eq!(t.first(0.0), 1.0);
        assert_eq!(t.second(0.0), 0.0);
        let bound = 4.0 / (3.0 * 3f64.sqrt());
        let mut max_curv: f64 = 0.0;
        for i in 0..=200_000 {
            let y = -10.0 + 20.0 * i as f64 / 200_000.0;
            max_curv = max_curv.max(t.second(y).abs());
            assert!(t.value(y).abs() <= 1.0 && t.first(y).abs() <= 1.0);
        }
        assert!(max_curv <= bound + 1e-12);
        assert!(max_curv > bound - 1e-6);

        let h = 1e-6;
        for act in [Activation::Tanh, Activation::Logistic] {
            for &y in &[-3.0, -0.4, 0.0, 0.8, 2.5] {
                let fd1 = (act.value(y + h) - act.value(y - h)) / (2.0 * h);
                let fd2 = (act.first(y + h) - act.first(y - h)) / (2.0 * h);
                assert!((fd1 - act.first(y)).abs() <= 1e-8, "{act:?} φ' at {y}");
                assert!((fd2 - act.second(y)).abs() <= 1e-8, "{act:?} φ'' at {y}");
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = DnnArch::uniform(2, 4, 7, 4, Activation::Tanh).unwrap();
        let a = init_weights(&arch, 10.0, 42);
        let b = init_weights(&arch, 10.0, 42);
        assert_eq!(a, b);
        assert!(a.theta.norm() <= 10.0 + 1e-12);

        let loose = init_weights(&arch, 20.0, 42);
        assert!(loose.theta.iter().all(|w| *w > -1.0 && *w < 1.0));
        assert!(loose.theta.norm() < 20.0);
    }
}
