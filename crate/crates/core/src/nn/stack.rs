//! Pre-norm residual transformer stacks. Three block layouts cover all the
//! components in this project: self-attention only (predictor, classifier,
//! decoder-only baseline), cross-attention only (corrector), and causal
//! self-attention plus cross-attention (frame decoder).

use super::attention::{AttentionConfig, AttentionParams};
use super::{LayerNormParams, Mlp};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Bound, Element, Params, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockLayout {
    SelfOnly { causal: bool },
    CrossOnly,
    SelfCross { causal: bool },
}

impl BlockLayout {
    pub fn wants_context(self) -> bool {
        !matches!(self, BlockLayout::SelfOnly { .. })
    }

    fn causal(self) -> bool {
        match self {
            BlockLayout::SelfOnly { causal } | BlockLayout::SelfCross { causal } => causal,
            BlockLayout::CrossOnly => false,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StackConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub layout: BlockLayout,
}

struct Block {
    ln_attn: LayerNormParams,
    attn: AttentionParams,
    ln_cross: Option<LayerNormParams>,
    cross: Option<AttentionParams>,
    ln_ctx: Option<LayerNormParams>,
    ln_mlp: LayerNormParams,
    mlp: Mlp,
}

/// A stack of pre-norm residual blocks with a final layer norm:
/// `x <- x + Attn(LN(x), ctx); x <- x + MLP(LN(x))`.
pub struct TransformerStack {
    pub cfg: StackConfig,
    blocks: Vec<Block>,
    ln_f: LayerNormParams,
}

impl TransformerStack {
    pub fn init<T: Element>(
        params: &mut Params<T>,
        rng: &mut Rng,
        name: &str,
        cfg: StackConfig,
    ) -> Result<Self> {
        AttentionConfig { d_model: cfg.d_model, n_heads: cfg.n_heads, causal: false, cross: false }
            .validate()?;
        if cfg.n_layers == 0 {
            return Err(Error::contract("stack needs at least one layer"));
        }
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("{name}.block{l}");
            let ln_attn = LayerNormParams::init(params, &format!("{p}.ln_attn"), cfg.d_model)?;
            let attn = AttentionParams::init(params, rng, &format!("{p}.attn"), cfg.d_model)?;
            let (ln_cross, cross) = if matches!(cfg.layout, BlockLayout::SelfCross { .. }) {
                (
                    Some(LayerNormParams::init(params, &format!("{p}.ln_cross"), cfg.d_model)?),
                    Some(AttentionParams::init(params, rng, &format!("{p}.cross"), cfg.d_model)?),
                )
            } else {
                (None, None)
            };
            let ln_ctx = if cfg.layout.wants_context() {
                Some(LayerNormParams::init(params, &format!("{p}.ln_ctx"), cfg.d_model)?)
            } else {
                None
            };
            let ln_mlp = LayerNormParams::init(params, &format!("{p}.ln_mlp"), cfg.d_model)?;
            let mlp = Mlp::init(params, rng, &format!("{p}.mlp"), cfg.d_model)?;
            blocks.push(Block { ln_attn, attn, ln_cross, cross, ln_ctx, ln_mlp, mlp });
        }
        let ln_f = LayerNormParams::init(params, &format!("{name}.ln_f"), cfg.d_model)?;
        Ok(TransformerStack { cfg, blocks, ln_f })
    }

    /// Runs the stack. `context` must be present exactly when the layout uses
    /// cross attention.
    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        context: Option<Var>,
    ) -> Result<Var> {
        match (self.cfg.layout.wants_context(), context) {
            (true, None) => {
                return Err(Error::contract("stack configured for cross-attention needs a context"))
            }
            (false, Some(_)) => {
                return Err(Error::contract("self-only stack must not receive a context"))
            }
            _ => {}
        }
        let self_cfg = AttentionConfig {
            d_model: self.cfg.d_model,
            n_heads: self.cfg.n_heads,
            causal: self.cfg.layout.causal(),
            cross: false,
        };
        let cross_cfg = AttentionConfig {
            d_model: self.cfg.d_model,
            n_heads: self.cfg.n_heads,
            causal: false,
            cross: true,
        };
        let mut h = x;
        for block in &self.blocks {
            match self.cfg.layout {
                BlockLayout::SelfOnly { .. } => {
                    let q = block.ln_attn.forward(tape, bound, h)?;
                    let a = block.attn.forward(tape, bound, q, q, &self_cfg)?;
                    h = tape.add(h, a)?;
                }
                BlockLayout::CrossOnly => {
                    let q = block.ln_attn.forward(tape, bound, h)?;
                    let ctx = block
                        .ln_ctx
                        .as_ref()
                        .expect("cross block has ln_ctx")
                        .forward(tape, bound, context.expect("checked above"))?;
                    let a = block.attn.forward(tape, bound, q, ctx, &cross_cfg)?;
                    h = tape.add(h, a)?;
                }
                BlockLayout::SelfCross { .. } => {
                    let q = block.ln_attn.forward(tape, bound, h)?;
                    let a = block.attn.forward(tape, bound, q, q, &self_cfg)?;
                    h = tape.add(h, a)?;
                    let q2 = block.ln_cross.as_ref().expect("selfcross has ln_cross").forward(
                        tape, bound, h,
                    )?;
                    let ctx = block
                        .ln_ctx
                        .as_ref()
                        .expect("cross block has ln_ctx")
                        .forward(tape, bound, context.expect("checked above"))?;
                    let a2 =
                        block.cross.as_ref().expect("selfcross has cross").forward(
                            tape, bound, q2, ctx, &cross_cfg,
                        )?;
                    h = tape.add(h, a2)?;
                }
            }
            let m = block.ln_mlp.forward(tape, bound, h)?;
            let m = block.mlp.forward(tape, bound, m)?;
            h = tape.add(h, m)?;
        }
        self.ln_f.forward(tape, bound, h)
    }
}

/// Adds learned position rows `0..n` to `x: [n, d]`. Fails with a capacity
/// error when the sequence outgrows the table.
pub fn add_positions<T: Element>(tape: &mut Tape<T>, x: Var, table: Var) -> Result<Var> {
    let sx = tape.value(x).shape().to_vec();
    let st = tape.value(table).shape().to_vec();
    if sx.len() != 2 || st.len() != 2 || sx[1] != st[1] {
        return Err(Error::dim(format!("add_positions: x {sx:?} vs table {st:?}")));
    }
    if sx[0] > st[0] {
        return Err(Error::Capacity(format!(
            "sequence length {} exceeds positional table {}",
            sx[0], st[0]
        )));
    }
    let rows = tape.slice_rows(table, 0, sx[0])?;
    tape.add(x, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn stack_fixture(
        layout: BlockLayout,
        seed: u64,
    ) -> (Params<f64>, TransformerStack) {
        let mut params = Params::new();
        let mut rng = Rng::seed_from_u64(seed);
        let cfg = StackConfig { d_model: 8, n_heads: 2, n_layers: 2, layout };
        let stack = TransformerStack::init(&mut params, &mut rng, "s", cfg).unwrap();
        (params, stack)
    }

    #[test]
    fn shape_preserved_for_any_length() {
        let (params, stack) = stack_fixture(BlockLayout::SelfOnly { causal: false }, 1);
        for n in [1, 3, 9] {
            let mut rng = Rng::seed_from_u64(n as u64);
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let x = tape.leaf(Tensor::randn(&mut rng, &[n, 8], 1.0));
            let y = stack.forward(&mut tape, &bound, x, None).unwrap();
            assert_eq!(tape.value(y).shape(), &[n, 8]);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let (params, stack) = stack_fixture(BlockLayout::SelfOnly { causal: true }, 2);
        let run = || {
            let mut rng = Rng::seed_from_u64(5);
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let x = tape.leaf(Tensor::randn(&mut rng, &[4, 8], 1.0));
            let y = stack.forward(&mut tape, &bound, x, None).unwrap();
            tape.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cross_stack_depends_on_context() {
        let (params, stack) = stack_fixture(BlockLayout::CrossOnly, 3);
        let mut rng = Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn(&mut rng, &[3, 8], 1.0);
        let ctx_a = Tensor::<f64>::randn(&mut rng, &[6, 8], 1.0);
        let mut ctx_b = ctx_a.clone();
        ctx_b.data_mut()[0] += 1.0;
        let run = |ctx: &Tensor<f64>| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            let cv = tape.leaf(ctx.clone());
            let y = stack.forward(&mut tape, &bound, xv, Some(cv)).unwrap();
            tape.value(y).data().to_vec()
        };
        assert_ne!(run(&ctx_a), run(&ctx_b));
    }

    #[test]
    fn context_presence_is_enforced() {
        let (params, self_stack) = stack_fixture(BlockLayout::SelfOnly { causal: false }, 4);
        let (cparams, cross_stack) = stack_fixture(BlockLayout::CrossOnly, 5);
        let mut tape = Tape::<f64>::new();
        let bound = params.bind(&mut tape);
        let x = tape.leaf(Tensor::zeros(&[2, 8]));
        assert!(matches!(
            self_stack.forward(&mut tape, &bound, x, Some(x)),
            Err(Error::Contract(_))
        ));
        let mut tape2 = Tape::<f64>::new();
        let bound2 = cparams.bind(&mut tape2);
        let x2 = tape2.leaf(Tensor::zeros(&[2, 8]));
        assert!(matches!(
            cross_stack.forward(&mut tape2, &bound2, x2, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn causal_prefix_property_through_full_stack() {
        let (params, stack) = stack_fixture(BlockLayout::SelfOnly { causal: true }, 6);
        let mut rng = Rng::seed_from_u64(13);
        let x = Tensor::<f64>::randn(&mut rng, &[5, 8], 1.0);
        let mut x2 = x.clone();
        for i in 3 * 8..5 * 8 {
            x2.data_mut()[i] = -x2.data()[i] + 0.5;
        }
        let run = |x: &Tensor<f64>| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            let y = stack.forward(&mut tape, &bound, xv, None).unwrap();
            tape.value(y).data().to_vec()
        };
        let a = run(&x);
        let b = run(&x2);
        // prefix rows 0..3 exactly equal, suffix rows differ
        assert_eq!(&a[..3 * 8], &b[..3 * 8]);
        assert_ne!(&a[3 * 8..], &b[3 * 8..]);
    }

    #[test]
    fn parameters_registered_exactly_once() {
        let mut params = Params::<f64>::new();
        let mut rng = Rng::seed_from_u64(7);
        let cfg = StackConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 3,
            layout: BlockLayout::SelfCross { causal: true },
        };
        TransformerStack::init(&mut params, &mut rng, "s", cfg).unwrap();
        // per layer: 4 layer norms (attn, cross, ctx, mlp) * 2 tensors
        //          + 2 attention modules * 4 linears * 2 tensors
        //          + mlp 2 linears * 2 tensors
        // final norm: 2 tensors
        let per_layer = 4 * 2 + 2 * 4 * 2 + 2 * 2;
        assert_eq!(params.len(), 3 * per_layer + 2);
    }

    #[test]
    fn add_positions_contract() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[3, 4], 2.0));
        let zero_table = tape.leaf(Tensor::zeros(&[3, 4]));
        let y = add_positions(&mut tape, x, zero_table).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let small_table = tape.leaf(Tensor::zeros(&[2, 4]));
        match add_positions(&mut tape, x, small_table) {
            Err(Error::Capacity(_)) => {}
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn positions_break_permutation_symmetry() {
        let mut rng = Rng::seed_from_u64(17);
        let (params, stack) = stack_fixture(BlockLayout::SelfOnly { causal: false }, 18);
        let table = Tensor::<f64>::randn(&mut rng, &[4, 8], 1.0);
        let x = Tensor::<f64>::randn(&mut rng, &[4, 8], 1.0);
        let perm = [2usize, 0, 3, 1];
        let permuted = {
            let mut data = Vec::new();
            for &p in &perm {
                data.extend_from_slice(&x.data()[p * 8..(p + 1) * 8]);
            }
            Tensor::from_vec(&[4, 8], data).unwrap()
        };
        let run = |x: &Tensor<f64>| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            let tv = tape.leaf(table.clone());
            let xin = add_positions(&mut tape, xv, tv).unwrap();
            let y = stack.forward(&mut tape, &bound, xin, None).unwrap();
            // reduce: sum over all entries so permutations of rows would
            // cancel out if attention were still symmetric
            let mut tot = 0.0;
            for (i, v) in tape.value(y).data().iter().enumerate() {
                tot += v * (i % 8) as f64;
            }
            tot
        };
        assert!((run(&x) - run(&permuted)).abs() > 1e-9);
    }
}
