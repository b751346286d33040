//! Multi-head scaled dot-product attention. The corrector runs the cross
//! variant without a causal mask: queries come from the slot representation,
//! keys and values from the frame tokens, and no ordering is imposed on
//! either sequence.

use super::Linear;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Bound, Element, Params, Tape, Tensor, Var};

/// Additive mask value for positions a causal query must not see. Large
/// enough that the masked terms underflow to exactly zero after softmax.
const MASK_NEG: f64 = -1e9;

#[derive(Clone, Copy, Debug)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Mask keys at positions greater than the query position.
    pub causal: bool,
    /// Keys/values come from a second sequence.
    pub cross: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::contract(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Per-head scaled dot-product attention, heads concatenated, no output
/// projection. With identical keys the result is the plain average of the
/// value rows, which is what the tests pin down.
pub fn scaled_dot_attention<T: Element>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    cfg: &AttentionConfig,
) -> Result<Var> {
    cfg.validate()?;
    let d = cfg.d_model;
    let (sq, sk, sv) = (tape.value(q).shape(), tape.value(k).shape(), tape.value(v).shape());
    if sq.len() != 2 || sq[1] != d || sk.len() != 2 || sk[1] != d || sv != sk {
        return Err(Error::dim(format!(
            "attention expects q [n_q, {d}], k/v [n_k, {d}]; got {sq:?}, {sk:?}, {sv:?}"
        )));
    }
    let (n_q, n_k) = (sq[0], sk[0]);
    if cfg.causal && n_q != n_k {
        return Err(Error::contract(format!(
            "causal attention needs matching lengths, got n_q {n_q} vs n_k {n_k}"
        )));
    }

    // One score multiply-accumulate per (query, key, model-dim) triple;
    // summing d_head over heads gives exactly n_q * n_k * d_model.
    tape.stats.attn_score_macs += (n_q * n_k * d) as u64;

    let d_head = d / cfg.n_heads;
    let scale = 1.0 / (d_head as f64).sqrt();
    let mask = if cfg.causal { Some(causal_mask::<T>(n_q)) } else { None };

    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = tape.slice_cols(q, h * d_head, d_head)?;
        let kh = tape.slice_cols(k, h * d_head, d_head)?;
        let vh = tape.slice_cols(v, h * d_head, d_head)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let mut scores = tape.scale(scores, scale);
        if let Some(m) = &mask {
            let mv = tape.constant(m.clone());
            scores = tape.add(scores, mv)?;
        }
        let attn = tape.softmax(scores, 1)?;
        heads.push(tape.matmul(attn, vh)?);
    }
    tape.concat_cols(&heads)
}

fn causal_mask<T: Element>(n: usize) -> Tensor<T> {
    let mut data = vec![T::ZERO; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = T::from_f64(MASK_NEG);
        }
    }
    Tensor::from_vec(&[n, n], data).expect("mask shape")
}

/// Scaled dot-product attention per head, concatenated and projected.
pub fn multi_head_attention<T: Element>(
    tape: &mut Tape<T>,
    bound: &Bound,
    q: Var,
    k: Var,
    v: Var,
    out_proj: &Linear,
    cfg: &AttentionConfig,
) -> Result<Var> {
    let h = scaled_dot_attention(tape, q, k, v, cfg)?;
    out_proj.forward(tape, bound, h)
}

/// Query/key/value/output projections for one attention layer.
pub struct AttentionParams {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl AttentionParams {
    pub fn init<T: Element>(
        params: &mut Params<T>,
        rng: &mut Rng,
        name: &str,
        d_model: usize,
    ) -> Result<Self> {
        Ok(AttentionParams {
            wq: Linear::init(params, rng, &format!("{name}.wq"), d_model, d_model, true)?,
            wk: Linear::init(params, rng, &format!("{name}.wk"), d_model, d_model, true)?,
            wv: Linear::init(params, rng, &format!("{name}.wv"), d_model, d_model, true)?,
            wo: Linear::init(params, rng, &format!("{name}.wo"), d_model, d_model, true)?,
        })
    }

    /// Projects inputs and applies [`multi_head_attention`]. `kv` is the
    /// second sequence for cross attention, or `q_in` itself when absent.
    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        q_in: Var,
        kv_in: Var,
        cfg: &AttentionConfig,
    ) -> Result<Var> {
        let q = self.wq.forward(tape, bound, q_in)?;
        let k = self.wk.forward(tape, bound, kv_in)?;
        let v = self.wv.forward(tape, bound, kv_in)?;
        multi_head_attention(tape, bound, q, k, v, &self.wo, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn uniform_attention_averages_values() {
        // single query, all keys identical -> pre-projection output is the
        // mean of the value rows
        let mut tape = Tape::new();
        let q = tape.leaf(t(&[1, 4], vec![0.3, -0.7, 1.1, 0.2]));
        let k = tape.leaf(t(&[3, 4], vec![0.5, 0.1, -0.2, 0.9].repeat(3)));
        let v = tape.leaf(t(
            &[3, 4],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0],
        ));
        let cfg = AttentionConfig { d_model: 4, n_heads: 2, causal: false, cross: true };
        let out = scaled_dot_attention(&mut tape, q, k, v, &cfg).unwrap();
        let got = tape.value(out).data();
        for (j, want) in [5.0, 6.0, 7.0, 8.0].iter().enumerate() {
            assert!((got[j] - want).abs() < 1e-9, "col {j}: {} vs {want}", got[j]);
        }
    }

    #[test]
    fn causal_first_position_ignores_suffix() {
        let mut rng = crate::rng::Rng::seed_from_u64(7);
        let cfg = AttentionConfig { d_model: 8, n_heads: 2, causal: true, cross: false };
        let q = Tensor::<f64>::randn(&mut rng, &[4, 8], 1.0);
        let k = Tensor::<f64>::randn(&mut rng, &[4, 8], 1.0);
        let v = Tensor::<f64>::randn(&mut rng, &[4, 8], 1.0);

        let run = |k: &Tensor<f64>, v: &Tensor<f64>| {
            let mut tape = Tape::new();
            let qv = tape.leaf(q.clone());
            let kv = tape.leaf(k.clone());
            let vv = tape.leaf(v.clone());
            let out = scaled_dot_attention(&mut tape, qv, kv, vv, &cfg).unwrap();
            tape.value(out).data().to_vec()
        };

        let base = run(&k, &v);
        let mut k2 = k.clone();
        let mut v2 = v.clone();
        for i in 8..32 {
            k2.data_mut()[i] += 3.0;
            v2.data_mut()[i] -= 2.0;
        }
        let edited = run(&k2, &v2);
        // row 0 is bit-identical, later rows differ
        assert_eq!(&base[..8], &edited[..8]);
        assert_ne!(&base[8..], &edited[8..]);
    }

    #[test]
    fn causal_demands_square_lengths() {
        let mut tape = Tape::<f64>::new();
        let q = tape.leaf(Tensor::zeros(&[2, 4]));
        let k = tape.leaf(Tensor::zeros(&[3, 4]));
        let v = tape.leaf(Tensor::zeros(&[3, 4]));
        let cfg = AttentionConfig { d_model: 4, n_heads: 1, causal: true, cross: false };
        match scaled_dot_attention(&mut tape, q, k, v, &cfg) {
            Err(Error::Contract(_)) => {}
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn noncausal_output_is_permutation_invariant_in_kv() {
        let mut rng = crate::rng::Rng::seed_from_u64(9);
        let cfg = AttentionConfig { d_model: 6, n_heads: 3, causal: false, cross: true };
        let q = Tensor::<f64>::randn(&mut rng, &[2, 6], 1.0);
        let k = Tensor::<f64>::randn(&mut rng, &[5, 6], 1.0);
        let v = Tensor::<f64>::randn(&mut rng, &[5, 6], 1.0);
        let perm = [3usize, 0, 4, 2, 1];
        let permute = |x: &Tensor<f64>| {
            let mut data = Vec::new();
            for &p in &perm {
                data.extend_from_slice(&x.data()[p * 6..(p + 1) * 6]);
            }
            t(&[5, 6], data)
        };
        let run = |k: Tensor<f64>, v: Tensor<f64>| {
            let mut tape = Tape::new();
            let qv = tape.leaf(q.clone());
            let kv = tape.leaf(k);
            let vv = tape.leaf(v);
            let out = scaled_dot_attention(&mut tape, qv, kv, vv, &cfg).unwrap();
            tape.value(out).data().to_vec()
        };
        let a = run(k.clone(), v.clone());
        let b = run(permute(&k), permute(&v));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn score_mac_counter_is_exact() {
        let mut tape = Tape::<f64>::new();
        let q = tape.leaf(Tensor::zeros(&[3, 8]));
        let k = tape.leaf(Tensor::zeros(&[5, 8]));
        let v = tape.leaf(Tensor::zeros(&[5, 8]));
        let cfg = AttentionConfig { d_model: 8, n_heads: 4, causal: false, cross: true };
        scaled_dot_attention(&mut tape, q, k, v, &cfg).unwrap();
        assert_eq!(tape.stats.attn_score_macs, (3 * 5 * 8) as u64);
    }
}
