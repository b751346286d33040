//! Shared transformer building blocks: linear/layer-norm parameter bundles,
//! multi-head attention, pre-norm residual stacks and positional embeddings.

mod attention;
mod stack;

pub use attention::{multi_head_attention, scaled_dot_attention, AttentionConfig, AttentionParams};
pub use stack::{add_positions, BlockLayout, StackConfig, TransformerStack};

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Bound, Element, ParamId, Params, Tape, Tensor, Var};

/// Weight init scale for linear layers and embedding tables.
pub const INIT_STD: f64 = 0.02;

/// Epsilon used by every layer norm in the model zoo.
pub const LN_EPS: f64 = 1e-5;

/// `y = x W + b` with `W: [fan_in, fan_out]`.
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn init<T: Element>(
        params: &mut Params<T>,
        rng: &mut Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = params.add(format!("{name}.w"), Tensor::randn(rng, &[fan_in, fan_out], INIT_STD))?;
        let b = if bias {
            Some(params.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let h = tape.matmul(x, bound.var(self.w))?;
        match self.b {
            Some(b) => tape.add_row_bias(h, bound.var(b)),
            None => Ok(h),
        }
    }
}

/// Gamma/beta pair for one layer norm.
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn init<T: Element>(params: &mut Params<T>, name: &str, d: usize) -> Result<Self> {
        let gamma = params.add(format!("{name}.g"), Tensor::full(&[d], T::ONE))?;
        let beta = params.add(format!("{name}.b"), Tensor::zeros(&[d]))?;
        Ok(LayerNormParams { gamma, beta })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, bound.var(self.gamma), bound.var(self.beta), LN_EPS)
    }
}

/// Two-layer GELU MLP with hidden width `4 * d_model`.
pub struct Mlp {
    pub fc: Linear,
    pub proj: Linear,
}

impl Mlp {
    pub fn init<T: Element>(
        params: &mut Params<T>,
        rng: &mut Rng,
        name: &str,
        d_model: usize,
    ) -> Result<Self> {
        let fc = Linear::init(params, rng, &format!("{name}.fc"), d_model, 4 * d_model, true)?;
        let proj = Linear::init(params, rng, &format!("{name}.proj"), 4 * d_model, d_model, true)?;
        Ok(Mlp { fc, proj })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let h = self.fc.forward(tape, bound, x)?;
        let h = tape.gelu(h);
        self.proj.forward(tape, bound, h)
    }
}

/// Adds an embedding table of `rows x d` normal entries.
pub fn embedding_table<T: Element>(
    params: &mut Params<T>,
    rng: &mut Rng,
    name: &str,
    rows: usize,
    d: usize,
) -> Result<ParamId> {
    params.add(name, Tensor::randn(rng, &[rows, d], INIT_STD))
}
