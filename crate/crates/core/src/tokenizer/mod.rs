//! Frame tokenizer: a VQ-VAE that encodes a frame to a latent grid,
//! quantizes each latent against a codebook, and decodes back to pixels.
//! Trained in isolation, then frozen for all downstream training.

mod train;

pub use train::{reconstruction_mae, train_tokenizer, TokenizerTrainOptions, TrainPoint};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{scaled_dot_attention, AttentionConfig, AttentionParams};
use crate::rng::Rng;
use crate::tensor::{Bound, Element, ParamId, Params, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct TokenizerConfig {
    pub frame_side: usize,
    pub channels: usize,
    pub res_layers: usize,
    pub attn_layers: usize,
    pub downsamplings: usize,
    pub d_code: usize,
    pub codebook_size: usize,
    pub beta: f64,
}

impl TokenizerConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        TokenizerConfig {
            frame_side: cfg.frame_width,
            channels: cfg.vq_channels,
            res_layers: cfg.vq_res_layers,
            attn_layers: cfg.vq_attn_layers,
            downsamplings: cfg.vq_downsamplings,
            d_code: cfg.d_code,
            codebook_size: cfg.codebook_size,
            beta: cfg.vq_beta,
        }
    }

    pub fn latent_side(&self) -> usize {
        self.frame_side >> self.downsamplings
    }

    /// `L = (W / 2^D)^2`
    pub fn tokens_per_frame(&self) -> usize {
        self.latent_side() * self.latent_side()
    }

    fn validate(&self) -> Result<()> {
        if self.codebook_size < 2 || self.d_code == 0 {
            return Err(Error::contract("codebook needs K >= 2 and d_code >= 1"));
        }
        if self.frame_side % (1 << self.downsamplings) != 0 || self.latent_side() == 0 {
            return Err(Error::dim(format!(
                "frame side {} incompatible with {} downsamplings",
                self.frame_side, self.downsamplings
            )));
        }
        Ok(())
    }

    /// Residual blocks hosted by downsampling stage `s`, spreading
    /// `res_layers` as evenly as the stage count allows, extras first.
    fn res_blocks_at(&self, stage: usize) -> usize {
        let base = self.res_layers / self.downsamplings.max(1);
        let extra = self.res_layers % self.downsamplings.max(1);
        base + usize::from(stage < extra)
    }
}

/// One frame's latent grid: pre-quantization latents, the chosen token ids,
/// and the quantized vectors (exact codebook rows).
#[derive(Clone, Debug)]
pub struct LatentGrid<T: Element> {
    pub latents: Tensor<T>,
    pub token_ids: Vec<usize>,
    pub quantized: Tensor<T>,
}

/// Nearest-codebook-row quantization under Euclidean distance. Equidistant
/// candidates resolve to the lowest index, which keeps the op deterministic
/// and idempotent.
pub fn quantize<T: Element>(latents: &Tensor<T>, codebook: &Tensor<T>) -> Result<LatentGrid<T>> {
    let sl = latents.shape();
    let sc = codebook.shape();
    if sl.len() != 2 || sc.len() != 2 || sl[1] != sc[1] {
        return Err(Error::dim(format!("quantize: latents {sl:?} vs codebook {sc:?}")));
    }
    let (l, d) = (sl[0], sl[1]);
    let k = sc[0];
    let mut token_ids = Vec::with_capacity(l);
    let mut quantized = Vec::with_capacity(l * d);
    for row in 0..l {
        let lat = &latents.data()[row * d..(row + 1) * d];
        let mut best = 0usize;
        let mut best_d2 = T::from_f64(f64::INFINITY);
        for j in 0..k {
            let vec = &codebook.data()[j * d..(j + 1) * d];
            let mut d2 = T::ZERO;
            for (a, b) in lat.iter().zip(vec) {
                let diff = *a - *b;
                d2 += diff * diff;
            }
            if d2 < best_d2 {
                best_d2 = d2;
                best = j;
            }
        }
        token_ids.push(best);
        quantized.extend_from_slice(&codebook.data()[best * d..(best + 1) * d]);
    }
    Ok(LatentGrid {
        latents: latents.clone(),
        token_ids,
        quantized: Tensor::from_vec(&[l, d], quantized)?,
    })
}

/// `MAE(frame, recon) + ||sg(latents) - quantized||^2 + beta * ||latents - sg(quantized)||^2`.
/// The squared terms are element means, `sg` is stop-gradient: the codebook
/// term reaches only the codebook (through `quantized`), the commitment term
/// only the encoder (through `latents`).
pub fn vqvae_loss<T: Element>(
    tape: &mut Tape<T>,
    frame: Var,
    reconstruction: Var,
    latents: Var,
    quantized: Var,
    beta: f64,
) -> Result<Var> {
    let diff = tape.sub(reconstruction, frame)?;
    let adiff = tape.abs(diff);
    let mae = tape.mean_all(adiff);

    let lat_sg = tape.detach(latents);
    let d1 = tape.sub(lat_sg, quantized)?;
    let sq1 = tape.mul(d1, d1)?;
    let codebook_term = tape.mean_all(sq1);

    let quant_sg = tape.detach(quantized);
    let d2 = tape.sub(latents, quant_sg)?;
    let sq2 = tape.mul(d2, d2)?;
    let commit = tape.mean_all(sq2);
    let commit = tape.scale(commit, beta);

    let s = tape.add(mae, codebook_term)?;
    tape.add(s, commit)
}

struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn init<T: Element>(
        params: &mut Params<T>,
        rng: &mut Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bias_init: f64,
    ) -> Result<Self> {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let w = params.add(format!("{name}.w"), Tensor::randn(rng, &[c_out, c_in, k, k], std))?;
        let b = params.add(format!("{name}.b"), Tensor::full(&[c_out], T::from_f64(bias_init)))?;
        Ok(Conv { w, b, stride, padding: k / 2 })
    }

    fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let h = tape.conv2d(x, bound.var(self.w), self.stride, self.padding)?;
        tape.add_channel_bias(h, bound.var(self.b))
    }
}

struct ResBlock {
    conv1: Conv,
    conv2: Conv,
}

impl ResBlock {
    fn init<T: Element>(params: &mut Params<T>, rng: &mut Rng, name: &str, c: usize) -> Result<Self> {
        Ok(ResBlock {
            conv1: Conv::init(params, rng, &format!("{name}.conv1"), c, c, 3, 1, 0.0)?,
            conv2: Conv::init(params, rng, &format!("{name}.conv2"), c, c, 3, 1, 0.0)?,
        })
    }

    fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, bound, x)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, bound, h)?;
        tape.add(x, h)
    }
}

/// Single-head self-attention over the spatial grid, residual.
struct AttnBlock {
    attn: AttentionParams,
}

impl AttnBlock {
    fn init<T: Element>(params: &mut Params<T>, rng: &mut Rng, name: &str, c: usize) -> Result<Self> {
        Ok(AttnBlock { attn: AttentionParams::init(params, rng, name, c)? })
    }

    fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let (c, h, w) = {
            let s = tape.value(x).shape();
            (s[0], s[1], s[2])
        };
        let flat = tape.reshape(x, &[c, h * w])?;
        let seq = tape.transpose(flat)?;
        let cfg = AttentionConfig { d_model: c, n_heads: 1, causal: false, cross: false };
        let q = self.attn.wq.forward(tape, bound, seq)?;
        let k = self.attn.wk.forward(tape, bound, seq)?;
        let v = self.attn.wv.forward(tape, bound, seq)?;
        let a = scaled_dot_attention(tape, q, k, v, &cfg)?;
        let a = self.attn.wo.forward(tape, bound, a)?;
        let res = tape.add(seq, a)?;
        let back = tape.transpose(res)?;
        tape.reshape(back, &[c, h, w])
    }
}

struct Encoder {
    stem: Conv,
    stages: Vec<(Vec<ResBlock>, Conv)>,
    attn: Vec<AttnBlock>,
    head: Conv,
}

struct Decoder {
    stem: Conv,
    attn: Vec<AttnBlock>,
    stages: Vec<(Vec<ResBlock>, Conv)>,
    head: Conv,
}

/// Encoder conv stack, decoder mirror, and the codebook.
pub struct TokenizerParams<T: Element> {
    pub cfg: TokenizerConfig,
    pub params: Params<T>,
    pub codebook: ParamId,
    enc: Encoder,
    dec: Decoder,
}

impl<T: Element> TokenizerParams<T> {
    pub fn init(cfg: TokenizerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let c = cfg.channels;

        let stem = Conv::init(&mut params, &mut rng, "enc.stem", 3, c, 3, 1, 0.0)?;
        let mut enc_stages = Vec::new();
        for s in 0..cfg.downsamplings {
            let mut blocks = Vec::new();
            for r in 0..cfg.res_blocks_at(s) {
                blocks.push(ResBlock::init(&mut params, &mut rng, &format!("enc.s{s}.res{r}"), c)?);
            }
            let down = Conv::init(&mut params, &mut rng, &format!("enc.s{s}.down"), c, c, 3, 2, 0.0)?;
            enc_stages.push((blocks, down));
        }
        let mut enc_attn = Vec::new();
        for a in 0..cfg.attn_layers {
            enc_attn.push(AttnBlock::init(&mut params, &mut rng, &format!("enc.attn{a}"), c)?);
        }
        let enc_head = Conv::init(&mut params, &mut rng, "enc.head", c, cfg.d_code, 3, 1, 0.0)?;

        let codebook = params.add(
            "codebook",
            Tensor::randn(&mut rng, &[cfg.codebook_size, cfg.d_code], 1.0 / cfg.d_code as f64),
        )?;

        let dec_stem = Conv::init(&mut params, &mut rng, "dec.stem", cfg.d_code, c, 3, 1, 0.0)?;
        let mut dec_attn = Vec::new();
        for a in 0..cfg.attn_layers {
            dec_attn.push(AttnBlock::init(&mut params, &mut rng, &format!("dec.attn{a}"), c)?);
        }
        let mut dec_stages = Vec::new();
        for s in (0..cfg.downsamplings).rev() {
            let up = Conv::init(&mut params, &mut rng, &format!("dec.s{s}.up"), c, c, 3, 1, 0.0)?;
            let mut blocks = Vec::new();
            for r in 0..cfg.res_blocks_at(s) {
                blocks.push(ResBlock::init(&mut params, &mut rng, &format!("dec.s{s}.res{r}"), c)?);
            }
            dec_stages.push((blocks, up));
        }
        // mid-gray bias so the clamped output starts inside [0,1]
        let dec_head = Conv::init(&mut params, &mut rng, "dec.head", c, 3, 3, 1, 0.5)?;

        Ok(TokenizerParams {
            cfg,
            params,
            codebook,
            enc: Encoder { stem, stages: enc_stages, attn: enc_attn, head: enc_head },
            dec: Decoder { stem: dec_stem, attn: dec_attn, stages: dec_stages, head: dec_head },
        })
    }

    /// Tape-level encoder: frame `[3, H, W]` to latents `[L, d_code]`,
    /// flattened row-major over the latent grid.
    pub fn encode_var(&self, tape: &mut Tape<T>, bound: &Bound, frame: Var) -> Result<Var> {
        let side = self.cfg.frame_side;
        if tape.value(frame).shape() != [3, side, side] {
            return Err(Error::dim(format!(
                "encode: expected [3, {side}, {side}], got {:?}",
                tape.value(frame).shape()
            )));
        }
        let mut h = self.enc.stem.forward(tape, bound, frame)?;
        for (blocks, down) in &self.enc.stages {
            for b in blocks {
                h = b.forward(tape, bound, h)?;
            }
            h = down.forward(tape, bound, h)?;
        }
        for a in &self.enc.attn {
            h = a.forward(tape, bound, h)?;
        }
        let h = self.enc.head.forward(tape, bound, h)?;
        let l = self.cfg.tokens_per_frame();
        let flat = tape.reshape(h, &[self.cfg.d_code, l])?;
        tape.transpose(flat)
    }

    /// Tape-level decoder: codes `[L, d_code]` to a frame `[3, H, W]`,
    /// clamped to `[0, 1]`.
    pub fn decode_var(&self, tape: &mut Tape<T>, bound: &Bound, codes: Var) -> Result<Var> {
        let l = self.cfg.tokens_per_frame();
        if tape.value(codes).shape() != [l, self.cfg.d_code] {
            return Err(Error::dim(format!(
                "decode: expected [{l}, {}], got {:?}",
                self.cfg.d_code,
                tape.value(codes).shape()
            )));
        }
        let side = self.cfg.latent_side();
        let tr = tape.transpose(codes)?;
        let grid = tape.reshape(tr, &[self.cfg.d_code, side, side])?;
        let mut h = self.dec.stem.forward(tape, bound, grid)?;
        for a in &self.dec.attn {
            h = a.forward(tape, bound, h)?;
        }
        for (blocks, up) in &self.dec.stages {
            let upsampled = tape.upsample_nearest2(h)?;
            h = up.forward(tape, bound, upsampled)?;
            for b in blocks {
                h = b.forward(tape, bound, h)?;
            }
        }
        let out = self.dec.head.forward(tape, bound, h)?;
        Ok(tape.clamp01(out))
    }

    /// Off-tape encode for inference paths.
    pub fn encode(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let f = tape.constant(frame.clone());
        let latents = self.encode_var(&mut tape, &bound, f)?;
        Ok(tape.value(latents).clone())
    }

    pub fn quantize(&self, latents: &Tensor<T>) -> Result<LatentGrid<T>> {
        quantize(latents, self.params.get(self.codebook))
    }

    pub fn decode(&self, grid: &LatentGrid<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let codes = tape.constant(grid.quantized.clone());
        let frame = self.decode_var(&mut tape, &bound, codes)?;
        Ok(tape.value(frame).clone())
    }

    /// Frame straight to token ids.
    pub fn tokenize(&self, frame: &Tensor<T>) -> Result<Vec<usize>> {
        let latents = self.encode(frame)?;
        Ok(self.quantize(&latents)?.token_ids)
    }

    /// One training graph: encode, quantize, decode through the
    /// straight-through estimator, and assemble the three-term loss.
    pub fn training_loss(&self, tape: &mut Tape<T>, bound: &Bound, frame: Var) -> Result<Var> {
        let latents = self.encode_var(tape, bound, frame)?;
        let grid = self.quantize(tape.value(latents))?;
        let quantized = tape.embedding_lookup(bound.var(self.codebook), &grid.token_ids)?;
        let st = tape.straight_through(latents, grid.quantized)?;
        let recon = self.decode_var(tape, bound, st)?;
        vqvae_loss(tape, frame, recon, latents, quantized, self.cfg.beta)
    }
}
