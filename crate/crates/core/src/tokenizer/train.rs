//! Tokenizer training: Adam on the three-term loss over a frame dataset.

use super::{TokenizerConfig, TokenizerParams};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, OptimizerState, Tape, Tensor, ADAM_LR_DEFAULT};

#[derive(Clone, Copy, Debug)]
pub struct TokenizerTrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Loss is recorded every `eval_every` steps (and at step 0).
    pub eval_every: usize,
}

impl Default for TokenizerTrainOptions {
    fn default() -> Self {
        TokenizerTrainOptions {
            steps: 1000,
            batch_size: 4,
            learning_rate: ADAM_LR_DEFAULT,
            eval_every: 50,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainPoint {
    pub step: usize,
    pub loss: f64,
}

/// Trains a fresh tokenizer on a set of frames. The returned params are
/// meant to be frozen afterwards; downstream training never touches them.
pub fn train_tokenizer<T: Element>(
    frames: &[Tensor<T>],
    cfg: TokenizerConfig,
    opts: TokenizerTrainOptions,
    seed: u64,
) -> Result<(TokenizerParams<T>, Vec<TrainPoint>)> {
    if frames.is_empty() {
        return Err(Error::input("train_tokenizer: empty dataset"));
    }
    let mut tok = TokenizerParams::init(cfg, seed)?;
    let mut opt = OptimizerState::adam(opts.learning_rate, &tok.params);
    let mut rng = Rng::seed_from_u64(seed ^ 0x746f_6b5f_7472);
    let mut curve = Vec::new();

    for step in 0..opts.steps {
        let mut tape = Tape::new();
        let bound = tok.params.bind(&mut tape);
        let mut loss = None;
        for _ in 0..opts.batch_size {
            let frame = &frames[rng.below(frames.len())];
            let f = tape.constant(frame.clone());
            let l = tok.training_loss(&mut tape, &bound, f)?;
            loss = Some(match loss {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
        }
        let total = loss.expect("batch_size >= 1");
        let mean = tape.scale(total, 1.0 / opts.batch_size as f64);
        if step % opts.eval_every == 0 {
            curve.push(TrainPoint { step, loss: tape.value(mean).data()[0].to_f64() });
        }
        tape.backward(mean)?;
        let grads = bound.grads(&tape);
        opt.step(&mut tok.params, &grads)?;
    }
    Ok((tok, curve))
}

/// Mean absolute reconstruction error of the full encode/quantize/decode
/// path over a frame set.
pub fn reconstruction_mae<T: Element>(tok: &TokenizerParams<T>, frames: &[Tensor<T>]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::input("reconstruction_mae: no frames"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for frame in frames {
        let latents = tok.encode(frame)?;
        let grid = tok.quantize(&latents)?;
        let recon = tok.decode(&grid)?;
        for (a, b) in recon.data().iter().zip(frame.data()) {
            total += (a.to_f64() - b.to_f64()).abs();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TokenizerConfig {
        TokenizerConfig {
            frame_side: 8,
            channels: 6,
            res_layers: 1,
            attn_layers: 1,
            downsamplings: 1,
            d_code: 4,
            codebook_size: 8,
            beta: 0.25,
        }
    }

    fn blob_frames(n: usize) -> Vec<Tensor<f32>> {
        // simple synthetic frames: white background with a dark square
        (0..n)
            .map(|i| {
                let mut data = vec![1.0f32; 3 * 8 * 8];
                let x0 = i % 5;
                let y0 = (i * 3) % 5;
                for y in y0..y0 + 3 {
                    for x in x0..x0 + 3 {
                        for c in 0..3 {
                            data[(c * 8 + y) * 8 + x] = if c == i % 3 { 0.8 } else { 0.1 };
                        }
                    }
                }
                Tensor::from_vec(&[3, 8, 8], data).unwrap()
            })
            .collect()
    }

    #[test]
    fn empty_dataset_rejected() {
        let r = train_tokenizer::<f32>(&[], tiny_cfg(), TokenizerTrainOptions::default(), 0);
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let frames = blob_frames(6);
        let opts =
            TokenizerTrainOptions { steps: 5, batch_size: 2, learning_rate: 1e-3, eval_every: 1 };
        let (tok_a, curve_a) = train_tokenizer(&frames, tiny_cfg(), opts, 42).unwrap();
        let (tok_b, curve_b) = train_tokenizer(&frames, tiny_cfg(), opts, 42).unwrap();
        assert_eq!(tok_a.params.checksum(), tok_b.params.checksum());
        let last = curve_a.last().unwrap().loss;
        assert_eq!(last.to_bits(), curve_b.last().unwrap().loss.to_bits());
    }

    #[test]
    fn short_training_reduces_loss() {
        let frames = blob_frames(8);
        let opts =
            TokenizerTrainOptions { steps: 60, batch_size: 4, learning_rate: 3e-3, eval_every: 59 };
        let (_, curve) = train_tokenizer(&frames, tiny_cfg(), opts, 7).unwrap();
        assert!(curve.len() >= 2);
        assert!(
            curve.last().unwrap().loss < curve[0].loss,
            "loss did not drop: {curve:?}"
        );
    }
}
