//! Batched evaluation of a [`FlowNetwork`] on a [`Tape`], so that the
//! warped coordinates feeding the covariance carry gradients back to every
//! weight.

use super::{Activation, FlowNetwork};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::matrix::Matrix;

/// Leaf handles for one residual block, mirroring
/// [`super::ResidualBlock::tensors`].
#[derive(Clone, Debug)]
pub struct BlockVars {
    pub weights: Vec<Var>,
    pub time_weight: Var,
    pub biases: Vec<Var>,
}

impl BlockVars {
    /// Handles in canonical tensor order `W₁, w₁, b₁, W₂, b₂, …`.
    pub fn tensors(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(2 * self.weights.len() + 1);
        for (i, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push(w);
            if i == 0 {
                out.push(self.time_weight);
            }
            out.push(b);
        }
        out
    }
}

/// A network whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct NetworkVars {
    pub blocks: Vec<BlockVars>,
    pub activation: Activation,
}

impl NetworkVars {
    /// Registers every weight and bias of `net` as a leaf.
    pub fn register(tape: &mut Tape, net: &FlowNetwork) -> Self {
        let blocks = net
            .blocks
            .iter()
            .map(|b| BlockVars {
                weights: b.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
                time_weight: tape.leaf(b.time_weight.clone()),
                biases: b.biases.iter().map(|v| tape.leaf(v.clone())).collect(),
            })
            .collect();
        NetworkVars {
            blocks,
            activation: net.activation,
        }
    }

    /// All handles, block by block in canonical order (matches
    /// [`FlowNetwork::to_flat`]).
    pub fn tensors(&self) -> Vec<Var> {
        self.blocks.iter().flat_map(BlockVars::tensors).collect()
    }

    fn activate(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        match self.activation {
            Activation::Tanh => tape.tanh(z),
            Activation::ScaledSigmoid => {
                let half = tape.scale(z, 0.5)?;
                let t = tape.tanh(half)?;
                tape.scale(t, 2.0)
            }
        }
    }

    /// `ψ_{t_r}(x_r)` for every row `r`, given times as an N×1 column and
    /// positions as an N×2 matrix. Returns an N×2 node.
    pub fn forward(&self, tape: &mut Tape, times: &[f64], positions: Var) -> Result<Var> {
        let n = times.len();
        let t_col = tape.constant(Matrix::column(times));
        let ones_col = tape.constant(Matrix::filled(n, 1, 1.0));
        let t_wide = tape.constant(Matrix::from_fn(n, 2, |r, _| times[r]));
        let mut y = positions;
        for block in &self.blocks {
            let g = self.g_batch(tape, block, t_col, ones_col, y)?;
            let tg = tape.mul(t_wide, g)?;
            y = tape.sub(y, tg)?;
        }
        Ok(y)
    }

    fn g_batch(
        &self,
        tape: &mut Tape,
        block: &BlockVars,
        t_col: Var,
        ones_col: Var,
        y: Var,
    ) -> Result<Var> {
        let last = block.weights.len() - 1;
        let mut h = Self::affine(tape, y, block.weights[0], block.biases[0], ones_col)?;
        let tw = tape.transpose(block.time_weight)?;
        let time_term = tape.matmul(t_col, tw)?;
        h = tape.add(h, time_term)?;
        h = self.activate(tape, h)?;
        for i in 1..last {
            h = Self::affine(tape, h, block.weights[i], block.biases[i], ones_col)?;
            h = self.activate(tape, h)?;
        }
        Self::affine(tape, h, block.weights[last], block.biases[last], ones_col)
    }

    /// `X·Wᵀ + 1·bᵀ`.
    fn affine(tape: &mut Tape, x: Var, w: Var, b: Var, ones_col: Var) -> Result<Var> {
        let wt = tape.transpose(w)?;
        let xw = tape.matmul(x, wt)?;
        let bt = tape.transpose(b)?;
        let bias = tape.matmul(ones_col, bt)?;
        tape.add(xw, bias)
    }

    /// `Σ_j max(0, Π_i‖W_i⁽ʲ⁾‖₂ − γ)²` as a scalar node.
    pub fn contraction_penalty(&self, tape: &mut Tape, gamma: f64) -> Result<Var> {
        let offset = tape.scalar_constant(gamma);
        let mut total = tape.scalar_constant(0.0);
        for block in &self.blocks {
            let mut product = tape.spectral_norm(block.weights[0])?;
            for &w in &block.weights[1..] {
                let s = tape.spectral_norm(w)?;
                product = tape.mul(product, s)?;
            }
            let excess = tape.sub(product, offset)?;
            let hinge = tape.pos_part(excess)?;
            let sq = tape.mul(hinge, hinge)?;
            total = tape.add(total, sq)?;
        }
        Ok(total)
    }
}
