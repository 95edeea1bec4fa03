use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{norm2, sub2, BackwardFlow, Mat2, Vec2};
use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};

/// Smooth activations with `|σ′| ≤ 1`, the condition under which the product
/// of spectral norms bounds the network's Lipschitz constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    /// `4·sigmoid(y) − 2 = 2·tanh(y/2)`; slope 1 at the origin.
    ScaledSigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => y.tanh(),
            Activation::ScaledSigmoid => 2.0 * (0.5 * y).tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = y.tanh();
                1.0 - t * t
            }
            Activation::ScaledSigmoid => {
                let t = (0.5 * y).tanh();
                1.0 - t * t
            }
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::ScaledSigmoid => "sigmoid-scaled",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid-scaled" => Ok(Activation::ScaledSigmoid),
            other => Err(Error::Config(format!(
                "unsupported activation '{other}' (expected tanh or sigmoid-scaled)"
            ))),
        }
    }
}

/// Architecture of a [`FlowNetwork`]: `blocks` residual blocks, each with
/// `layers` weight matrices of hidden width `hidden`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowArch {
    pub blocks: usize,
    pub layers: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for FlowArch {
    fn default() -> Self {
        FlowArch {
            blocks: 3,
            layers: 3,
            hidden: 32,
            activation: Activation::Tanh,
        }
    }
}

impl FlowArch {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::Config("k (blocks) must be at least 1".into()));
        }
        if self.layers < 2 {
            return Err(Error::Config("L (layers) must be at least 2".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("h (hidden width) must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameters of one feed-forward network
/// `g_t(x) = W_L σ(⋯σ(W₁x + t·w₁ + b₁)⋯) + b_L`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    /// `W₁ (h×2), W₂..W_{L−1} (h×h), W_L (2×h)`.
    pub weights: Vec<Matrix>,
    /// `w₁`, the time coefficient of the first layer (h×1).
    pub time_weight: Matrix,
    /// `b₁..b_L` as column vectors.
    pub biases: Vec<Matrix>,
}

/// Value of `g` plus its derivatives with respect to `(x₁, x₂, t)`.
struct GEval {
    value: Vec2,
    /// `d[i] = [∂g_i/∂x₁, ∂g_i/∂x₂, ∂g_i/∂t]`.
    d: [[f64; 3]; 2],
}

impl ResidualBlock {
    pub fn zeros(layers: usize, hidden: usize) -> Self {
        let weights = (0..layers)
            .map(|i| {
                let rows = if i + 1 == layers { 2 } else { hidden };
                let cols = if i == 0 { 2 } else { hidden };
                Matrix::zeros(rows, cols)
            })
            .collect();
        let biases = (0..layers)
            .map(|i| Matrix::zeros(if i + 1 == layers { 2 } else { hidden }, 1))
            .collect();
        ResidualBlock {
            weights,
            time_weight: Matrix::zeros(hidden, 1),
            biases,
        }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden(&self) -> usize {
        self.weights[0].rows()
    }

    /// Checks every array against the shapes implied by `layers` and `hidden`.
    pub fn validate(&self, layers: usize, hidden: usize) -> Result<()> {
        let expected = ResidualBlock::zeros(layers, hidden);
        let ok = self.weights.len() == layers
            && self.biases.len() == layers
            && self.time_weight.shape() == expected.time_weight.shape()
            && self
                .weights
                .iter()
                .zip(&expected.weights)
                .all(|(a, b)| a.shape() == b.shape())
            && self
                .biases
                .iter()
                .zip(&expected.biases)
                .all(|(a, b)| a.shape() == b.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "residual block",
                format!("arrays do not match L={layers}, h={hidden}"),
            ))
        }
    }

    /// Product of the layers' spectral norms, an upper bound on `‖∇g_t(x)‖₂`.
    pub fn norm_product(&self) -> f64 {
        self.weights.iter().map(|w| spectral_norm(w, 1000)).product()
    }

    /// All arrays in canonical order `W₁, w₁, b₁, W₂, b₂, …, W_L, b_L`.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(2 * self.layers() + 1);
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push(w);
            if i == 0 {
                out.push(&self.time_weight);
            }
            out.push(b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(2 * self.weights.len() + 1);
        let mut time = Some(&mut self.time_weight);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            if let Some(tw) = time.take() {
                out.push(tw);
            }
            out.push(b);
        }
        out
    }

    /// `g_t(x)`.
    pub fn g(&self, activation: Activation, t: f64, x: Vec2) -> Vec2 {
        let w1 = &self.weights[0];
        let mut a: Vec<f64> = (0..w1.rows())
            .map(|r| {
                let pre = w1[(r, 0)] * x[0]
                    + w1[(r, 1)] * x[1]
                    + t * self.time_weight.as_slice()[r]
                    + self.biases[0].as_slice()[r];
                activation.apply(pre)
            })
            .collect();
        let last = self.layers() - 1;
        for i in 1..last {
            let w = &self.weights[i];
            let b = self.biases[i].as_slice();
            a = (0..w.rows())
                .map(|r| activation.apply(matrix::dot(w.row(r), &a) + b[r]))
                .collect();
        }
        let w = &self.weights[last];
        let b = self.biases[last].as_slice();
        [matrix::dot(w.row(0), &a) + b[0], matrix::dot(w.row(1), &a) + b[1]]
    }

    /// `g_t(x)` with forward-mode derivatives in `x` and `t`.
    fn g_with_derivatives(&self, activation: Activation, t: f64, x: Vec2) -> GEval {
        let w1 = &self.weights[0];
        let tw = self.time_weight.as_slice();
        let b1 = self.biases[0].as_slice();
        let mut a = Vec::with_capacity(w1.rows());
        let mut da: Vec<[f64; 3]> = Vec::with_capacity(w1.rows());
        for r in 0..w1.rows() {
            let pre = w1[(r, 0)] * x[0] + w1[(r, 1)] * x[1] + t * tw[r] + b1[r];
            let s = activation.derivative(pre);
            a.push(activation.apply(pre));
            da.push([s * w1[(r, 0)], s * w1[(r, 1)], s * tw[r]]);
        }
        let last = self.layers() - 1;
        for i in 1..last {
            let w = &self.weights[i];
            let b = self.biases[i].as_slice();
            let mut na = Vec::with_capacity(w.rows());
            let mut nda = Vec::with_capacity(w.rows());
            for (r, bias) in b.iter().enumerate() {
                let row = w.row(r);
                let pre = matrix::dot(row, &a) + bias;
                let s = activation.derivative(pre);
                let mut d = [0.0; 3];
                for (wk, dak) in row.iter().zip(&da) {
                    for m in 0..3 {
                        d[m] += wk * dak[m];
                    }
                }
                na.push(activation.apply(pre));
                nda.push([s * d[0], s * d[1], s * d[2]]);
            }
            a = na;
            da = nda;
        }
        let w = &self.weights[last];
        let b = self.biases[last].as_slice();
        let mut value = [0.0; 2];
        let mut d = [[0.0; 3]; 2];
        for i in 0..2 {
            let row = w.row(i);
            value[i] = matrix::dot(row, &a) + b[i];
            for (wk, dak) in row.iter().zip(&da) {
                for m in 0..3 {
                    d[i][m] += wk * dak[m];
                }
            }
        }
        GEval { value, d }
    }

    /// `ψ⁽ʲ⁾_t(x) = x − t·g_t(x)`.
    pub fn forward(&self, activation: Activation, t: f64, x: Vec2) -> Vec2 {
        let g = self.g(activation, t, x);
        [x[0] - t * g[0], x[1] - t * g[1]]
    }

    /// Solves `x − t·g_t(x) = label` by iterating `x ← label + t·g_t(x)`.
    fn invert(
        &self,
        activation: Activation,
        t: f64,
        label: Vec2,
        tol: f64,
        max_iter: usize,
    ) -> Result<Vec2> {
        let mut x = label;
        let mut step = f64::INFINITY;
        for _ in 0..max_iter {
            let g = self.g(activation, t, x);
            let next = [label[0] + t * g[0], label[1] + t * g[1]];
            step = norm2(sub2(next, x));
            x = next;
            if step <= tol {
                return Ok(x);
            }
        }
        Err(Error::Convergence {
            iterations: max_iter,
            residual: step,
        })
    }
}

/// Composition `ψ_t = ψ⁽ᵏ⁾_t ∘ ⋯ ∘ ψ⁽¹⁾_t` of residual blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowNetwork {
    pub blocks: Vec<ResidualBlock>,
    pub activation: Activation,
}

impl FlowNetwork {
    /// A network whose every block is identically zero, so `ψ_t(x) = x`.
    pub fn zeros(arch: FlowArch) -> Result<Self> {
        arch.validate()?;
        Ok(FlowNetwork {
            blocks: (0..arch.blocks)
                .map(|_| ResidualBlock::zeros(arch.layers, arch.hidden))
                .collect(),
            activation: arch.activation,
        })
    }

    /// A single zero block with `b_L = w`, i.e. exactly `ψ_t(x) = x − t·w`.
    pub fn constant_drift(w: Vec2, layers: usize, hidden: usize) -> Result<Self> {
        let mut net = Self::zeros(FlowArch {
            blocks: 1,
            layers,
            hidden,
            activation: Activation::Tanh,
        })?;
        net.blocks[0].biases[layers - 1] = Matrix::column(&w);
        Ok(net)
    }

    /// Random near-identity network: weights uniform on `[−1, 1]` rescaled so
    /// each block's norm product is `target_norm`, hidden biases uniform on
    /// `[−1, 1]`, time weights uniform on `[−0.5, 0.5]`, output bias zero.
    pub fn random<R: Rng + ?Sized>(arch: FlowArch, target_norm: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for block in &mut net.blocks {
            for w in &mut block.weights {
                for v in w.as_mut_slice() {
                    *v = rng.random_range(-1.0..=1.0);
                }
            }
            for v in block.time_weight.as_mut_slice() {
                *v = rng.random_range(-0.5..=0.5);
            }
            let last = block.biases.len() - 1;
            for b in &mut block.biases[..last] {
                for v in b.as_mut_slice() {
                    *v = rng.random_range(-1.0..=1.0);
                }
            }
            rescale_block(block, target_norm);
        }
        Ok(net)
    }

    /// Starting point for fitting: random weights rescaled to `target_norm`
    /// per block, all biases and time weights zero.
    pub fn random_weights<R: Rng + ?Sized>(arch: FlowArch, target_norm: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for block in &mut net.blocks {
            for w in &mut block.weights {
                for v in w.as_mut_slice() {
                    *v = rng.random_range(-1.0..=1.0);
                }
            }
            rescale_block(block, target_norm);
        }
        Ok(net)
    }

    pub fn arch(&self) -> FlowArch {
        FlowArch {
            blocks: self.blocks.len(),
            layers: self.blocks[0].layers(),
            hidden: self.blocks[0].hidden(),
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("flow network has no blocks".into()));
        }
        let arch = self.arch();
        arch.validate()?;
        for b in &self.blocks {
            b.validate(arch.layers, arch.hidden)?;
        }
        Ok(())
    }

    /// `g⁽ʲ⁾_t(x)` for block `j`.
    pub fn g(&self, block: usize, t: f64, x: Vec2) -> Vec2 {
        self.blocks[block].g(self.activation, t, x)
    }

    /// `ψ⁽ʲ⁾_t(x)` for block `j`.
    pub fn block_forward(&self, block: usize, t: f64, x: Vec2) -> Vec2 {
        self.blocks[block].forward(self.activation, t, x)
    }

    /// `ψ_t(x)`, its spatial Jacobian and its time derivative in one pass.
    pub fn forward_with_derivatives(&self, t: f64, x: Vec2) -> (Vec2, Mat2, Vec2) {
        let mut y = x;
        let mut jac: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
        let mut dt: Vec2 = [0.0, 0.0];
        for block in &self.blocks {
            let g = block.g_with_derivatives(self.activation, t, y);
            // Block Jacobian in y: I − t·∂g/∂y
            let bj = [
                [1.0 - t * g.d[0][0], -t * g.d[0][1]],
                [-t * g.d[1][0], 1.0 - t * g.d[1][1]],
            ];
            jac = mat2_mul(bj, jac);
            let carried = mat2_apply(bj, dt);
            dt = [
                carried[0] - g.value[0] - t * g.d[0][2],
                carried[1] - g.value[1] - t * g.d[1][2],
            ];
            y = [y[0] - t * g.value[0], y[1] - t * g.value[1]];
        }
        (y, jac, dt)
    }

    /// Applies the per-block hard projection: any block whose norm product
    /// is at least `gamma` has every weight matrix scaled by
    /// `(gamma / product)^(1/L)`, leaving the product equal to `gamma`.
    pub fn spectral_project(&self, gamma: f64) -> FlowNetwork {
        let mut out = self.clone();
        for block in &mut out.blocks {
            if block.norm_product() >= gamma {
                rescale_block(block, gamma);
            }
        }
        out
    }

    pub fn norm_products(&self) -> Vec<f64> {
        self.blocks.iter().map(ResidualBlock::norm_product).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| b.tensors())
            .map(Matrix::len)
            .sum()
    }

    /// All trainable values, block by block in canonical tensor order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for b in &self.blocks {
            for m in b.tensors() {
                out.extend_from_slice(m.as_slice());
            }
        }
        out
    }

    /// Inverse of [`FlowNetwork::to_flat`]; returns the number of values read.
    pub fn set_from_flat(&mut self, values: &[f64]) -> Result<usize> {
        if values.len() < self.parameter_count() {
            return Err(Error::shape(
                "set_from_flat",
                format!("{} values for {} parameters", values.len(), self.parameter_count()),
            ));
        }
        let mut pos = 0;
        for b in &mut self.blocks {
            for m in b.tensors_mut() {
                let n = m.len();
                m.as_mut_slice().copy_from_slice(&values[pos..pos + n]);
                pos += n;
            }
        }
        Ok(pos)
    }
}

fn rescale_block(block: &mut ResidualBlock, target: f64) {
    let norms: Vec<f64> = block.weights.iter().map(|w| spectral_norm(w, 1000)).collect();
    let product: f64 = norms.iter().product();
    if product <= 0.0 {
        return;
    }
    let factor = (target / product).powf(1.0 / block.weights.len() as f64);
    for w in &mut block.weights {
        w.scale_in_place(factor);
    }
}

fn mat2_mul(a: Mat2, b: Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn mat2_apply(a: Mat2, v: Vec2) -> Vec2 {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

/// Largest singular value of `w` by deterministic power iteration.
pub fn spectral_norm(w: &Matrix, iters: usize) -> f64 {
    matrix::power_iteration(w, iters).sigma
}

impl BackwardFlow for FlowNetwork {
    fn forward(&self, t: f64, x: Vec2) -> Vec2 {
        self.blocks
            .iter()
            .fold(x, |y, b| b.forward(self.activation, t, y))
    }

    fn jacobian(&self, t: f64, x: Vec2) -> Mat2 {
        self.forward_with_derivatives(t, x).1
    }

    fn time_derivative(&self, t: f64, x: Vec2) -> Vec2 {
        self.forward_with_derivatives(t, x).2
    }

    /// Inverts block by block in reverse composition order. Each block solve
    /// targets `tol / 2^k` so that the composed residual stays within `tol`
    /// (each block map is at most 2-Lipschitz).
    fn inverse(&self, t: f64, label: Vec2, tol: f64, max_iter: usize) -> Result<Vec2> {
        let block_tol = tol / 2f64.powi(self.blocks.len() as i32);
        let mut x = label;
        for block in self.blocks.iter().rev() {
            x = block.invert(self.activation, t, x, block_tol, max_iter)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch(layers: usize) -> FlowArch {
        FlowArch {
            blocks: 2,
            layers,
            hidden: 5,
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn zero_network_returns_output_bias() {
        let mut net = FlowNetwork::zeros(small_arch(3)).unwrap();
        net.blocks[0].biases[2] = Matrix::column(&[0.3, -0.1]);
        assert_eq!(net.g(0, 0.4, [7.0, -2.0]), [0.3, -0.1]);
        let y = net.block_forward(0, 0.7, [1.0, 2.0]);
        assert_eq!(y, [1.0 - 0.7 * 0.3, 2.0 + 0.7 * 0.1]);
    }

    #[test]
    fn two_layer_block_by_hand() {
        // h = 2, W₁ = I, w₁ = (1, 0), b₁ = 0, W₂ = I, b₂ = (0, 1)
        let mut block = ResidualBlock::zeros(2, 2);
        block.weights[0] = Matrix::identity(2);
        block.weights[1] = Matrix::identity(2);
        block.time_weight = Matrix::column(&[1.0, 0.0]);
        block.biases[1] = Matrix::column(&[0.0, 1.0]);
        let g = block.g(Activation::Tanh, 0.5, [1.0, 0.0]);
        // first layer pre-activation (1 + 0.5, 0)
        assert_eq!(g, [1.5f64.tanh(), 1.0]);
    }

    #[test]
    fn identity_at_time_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = FlowNetwork::random(small_arch(3), 0.9, &mut rng).unwrap();
        for x in [[0.0, 0.0], [0.3, -1.7], [12.0, 5.5]] {
            assert_eq!(net.forward(0.0, x), x);
        }
    }

    #[test]
    fn random_init_hits_target_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = FlowNetwork::random(FlowArch::default(), 0.5, &mut rng).unwrap();
        for p in net.norm_products() {
            assert!((p - 0.5).abs() < 1e-9, "{p}");
        }
        let net = FlowNetwork::random_weights(FlowArch::default(), 0.5, &mut rng).unwrap();
        for (block, p) in net.blocks.iter().zip(net.norm_products()) {
            assert!((p - 0.5).abs() < 1e-9, "{p}");
            assert!(block.time_weight.as_slice().iter().all(|&v| v == 0.0));
            assert!(block.biases.iter().all(|b| b.as_slice().iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn projection_of_two_layer_block() {
        // norms (2, 1) → product 2 ≥ 0.98; scaled by sqrt(0.49) each
        let mut net = FlowNetwork::zeros(FlowArch {
            blocks: 1,
            layers: 2,
            hidden: 2,
            activation: Activation::Tanh,
        })
        .unwrap();
        net.blocks[0].weights[0] = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 0.5]]).unwrap();
        net.blocks[0].weights[1] = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let p = net.spectral_project(0.98);
        assert!((p.norm_products()[0] - 0.98).abs() < 1e-12);
        assert!((spectral_norm(&p.blocks[0].weights[0], 100) - 2.0 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn contractive_net_is_left_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = FlowNetwork::random(small_arch(3), 0.5, &mut rng).unwrap();
        assert_eq!(net.spectral_project(0.98), net);
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = FlowNetwork::random(small_arch(4), 0.5, &mut rng).unwrap();
        let flat = net.to_flat();
        assert_eq!(flat.len(), net.parameter_count());
        let mut other = FlowNetwork::zeros(small_arch(4)).unwrap();
        assert_eq!(other.set_from_flat(&flat).unwrap(), flat.len());
        assert_eq!(other, net);
    }

    #[test]
    fn inversion_reports_non_convergence() {
        // A block with a large norm is not a contraction.
        let mut net = FlowNetwork::zeros(FlowArch {
            blocks: 1,
            layers: 2,
            hidden: 2,
            activation: Activation::Tanh,
        })
        .unwrap();
        net.blocks[0].weights[0] = Matrix::identity(2).map(|v| 3.0 * v);
        net.blocks[0].weights[1] = Matrix::identity(2).map(|v| -3.0 * v);
        assert!(matches!(
            net.inverse(1.0, [0.1, 0.0], 1e-12, 50),
            Err(Error::Convergence { iterations: 50, .. })
        ));
    }

    #[test]
    fn activation_tags_parse() {
        for a in [Activation::Tanh, Activation::ScaledSigmoid] {
            assert_eq!(a.tag().parse::<Activation>().unwrap(), a);
        }
        assert!("relu".parse::<Activation>().is_err());
    }

    #[test]
    fn activation_slopes_are_bounded() {
        for a in [Activation::Tanh, Activation::ScaledSigmoid] {
            for i in -200..=200 {
                let y = i as f64 * 0.05;
                assert!(a.derivative(y) <= 1.0 && a.derivative(y) > 0.0);
            }
            assert_eq!(a.derivative(0.0), 1.0);
        }
    }
}
