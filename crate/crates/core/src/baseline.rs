//! Decoder-only baseline: one causal transformer predicts the next frame's
//! tokens directly from the previous frame's, with no internal
//! representation. Rollout generates the hidden frames autoregressively and
//! hands the final token sequence to the classifier.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::nn::{add_positions, embedding_table, BlockLayout, Linear, StackConfig, TransformerStack};
use crate::physics::Split;
use crate::rng::Rng;
use crate::tensor::{Bound, Element, OptimizerState, ParamId, Params, Tape, Tensor, Var};
use crate::worldmodel::{FrameTokens, WmTrainOptions};

#[derive(Clone, Copy, Debug)]
pub struct BaselineConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Codebook size K; input vocabulary is K+1 with BOS = K.
    pub vocab: usize,
    pub tokens_per_frame: usize,
}

impl BaselineConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        BaselineConfig {
            d_model: cfg.d_model,
            n_heads: cfg.n_heads,
            n_layers: cfg.n_layers_decoder,
            vocab: cfg.codebook_size,
            tokens_per_frame: cfg.tokens_per_frame(),
        }
    }

    pub fn bos_id(&self) -> usize {
        self.vocab
    }

    /// One source frame plus one generated frame.
    pub fn context_capacity(&self) -> usize {
        2 * self.tokens_per_frame
    }
}

pub struct DecoderOnlyParams<T: Element> {
    pub cfg: BaselineConfig,
    pub params: Params<T>,
    token_emb: ParamId,
    pos: ParamId,
    stack: TransformerStack,
    head: Linear,
}

impl<T: Element> DecoderOnlyParams<T> {
    pub fn init(cfg: BaselineConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let d = cfg.d_model;
        let token_emb = embedding_table(&mut params, &mut rng, "token_emb", cfg.vocab + 1, d)?;
        let pos = embedding_table(&mut params, &mut rng, "pos", cfg.context_capacity(), d)?;
        let stack = TransformerStack::init(
            &mut params,
            &mut rng,
            "stack",
            StackConfig {
                d_model: d,
                n_heads: cfg.n_heads,
                n_layers: cfg.n_layers,
                layout: BlockLayout::SelfOnly { causal: true },
            },
        )?;
        let head = Linear::init(&mut params, &mut rng, "head", d, cfg.vocab, true)?;
        Ok(DecoderOnlyParams { cfg, params, token_emb, pos, stack, head })
    }

    fn check_ids(&self, ids: &[usize], what: &str) -> Result<()> {
        if ids.len() != self.cfg.tokens_per_frame {
            return Err(Error::dim(format!(
                "{what} has {} tokens, model expects {}",
                ids.len(),
                self.cfg.tokens_per_frame
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.cfg.vocab) {
            return Err(Error::index(format!("token id {bad} >= K {}", self.cfg.vocab)));
        }
        Ok(())
    }

    /// Runs the causal stack over an id sequence and projects every position.
    fn forward_ids(&self, tape: &mut Tape<T>, bound: &Bound, ids: &[usize]) -> Result<Var> {
        let emb = tape.embedding_lookup(bound.var(self.token_emb), ids)?;
        let x = add_positions(tape, emb, bound.var(self.pos))?;
        let h = self.stack.forward(tape, bound, x, None)?;
        self.head.forward(tape, bound, h)
    }

    /// Teacher-forced logits for the next frame: the context is the source
    /// frame's tokens followed by BOS and the shifted teacher tokens, causal
    /// attention over the whole 2L sequence, logits for the L target
    /// positions. Every source position is visible to every target position.
    pub fn next_frame_logits_var(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        z_t: &FrameTokens,
        teacher: &FrameTokens,
    ) -> Result<Var> {
        self.check_ids(&z_t.ids, "source frame")?;
        self.check_ids(&teacher.ids, "teacher frame")?;
        let l = self.cfg.tokens_per_frame;
        let mut ids = Vec::with_capacity(2 * l);
        ids.extend_from_slice(&z_t.ids);
        ids.push(self.cfg.bos_id());
        ids.extend_from_slice(&teacher.ids[..l - 1]);
        let logits = self.forward_ids(tape, bound, &ids)?;
        tape.slice_rows(logits, l, l)
    }

    pub fn next_frame_logits(&self, z_t: &FrameTokens, teacher: &FrameTokens) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let out = self.next_frame_logits_var(&mut tape, &bound, z_t, teacher)?;
        Ok(tape.value(out).clone())
    }

    /// Mean cross-entropy over the video's frame transitions, each frame
    /// predicted directly from its predecessor.
    pub fn sequence_loss_var(&self, tape: &mut Tape<T>, bound: &Bound, video: &[FrameTokens]) -> Result<Var> {
        if video.len() < 2 {
            return Err(Error::input(format!("sequence_loss needs T >= 2, got {}", video.len())));
        }
        let mut total: Option<Var> = None;
        for t in 0..video.len() - 1 {
            let logits = self.next_frame_logits_var(tape, bound, &video[t], &video[t + 1])?;
            let ce = tape.cross_entropy_logits(logits, &video[t + 1].ids)?;
            total = Some(match total {
                None => ce,
                Some(acc) => tape.add(acc, ce)?,
            });
        }
        let sum = total.expect("T >= 2");
        Ok(tape.scale(sum, 1.0 / (video.len() - 1) as f64))
    }

    /// Greedy token-by-token generation of frames N+1..T, each conditioned
    /// on its predecessor; returns the generated z_T.
    pub fn autoregressive_rollout(&self, given: &[FrameTokens], total_frames: usize) -> Result<FrameTokens> {
        let n = given.len();
        if n == 0 || n >= total_frames {
            return Err(Error::input(format!(
                "rollout needs 1 <= N < T, got N={n}, T={total_frames}"
            )));
        }
        for z in given {
            self.check_ids(&z.ids, "given frame")?;
        }
        let l = self.cfg.tokens_per_frame;
        let mut prev = given[n - 1].clone();
        for frame_index in n + 1..=total_frames {
            let mut generated: Vec<usize> = Vec::with_capacity(l);
            for _ in 0..l {
                let mut ids = Vec::with_capacity(l + 1 + generated.len());
                ids.extend_from_slice(&prev.ids);
                ids.push(self.cfg.bos_id());
                ids.extend_from_slice(&generated);
                let mut tape = Tape::new();
                let bound = self.params.bind_frozen(&mut tape);
                let logits = self.forward_ids(&mut tape, &bound, &ids)?;
                let lv = tape.value(logits);
                let k = self.cfg.vocab;
                let last = lv.shape()[0] - 1;
                let row = &lv.data()[last * k..(last + 1) * k];
                let mut arg = 0usize;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[arg] {
                        arg = j;
                    }
                }
                generated.push(arg);
            }
            prev = FrameTokens::new(generated, frame_index);
        }
        Ok(prev)
    }
}

/// Same schedule as the triplet trainer, driving the baseline loss.
pub fn train_decoder_only<T: Element>(
    train_videos: &[Vec<FrameTokens>],
    eval_videos: &[Vec<FrameTokens>],
    cfg: BaselineConfig,
    opts: &WmTrainOptions,
) -> Result<(DecoderOnlyParams<T>, Vec<MetricsRecord>)> {
    if train_videos.is_empty() {
        return Err(Error::input("train_decoder_only: empty dataset"));
    }
    if opts.batch_size == 0 || opts.steps_per_epoch % opts.batch_size != 0 {
        return Err(Error::input("steps_per_epoch must be a multiple of batch_size"));
    }
    let mut model = DecoderOnlyParams::<T>::init(cfg, opts.seed)?;
    let mut opt =
        OptimizerState::adamw(opts.learning_rate, opts.weight_decay, opts.betas, &model.params);
    let mut rng = Rng::seed_from_u64(opts.seed ^ 0x6261_7365_6c69_6e65);
    let steps = opts.steps_per_epoch / opts.batch_size;
    let mut records = Vec::new();

    for epoch in 1..=opts.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let mut batch_loss = None;
            for _ in 0..opts.batch_size {
                let vi = rng.below(train_videos.len());
                let loss = model.sequence_loss_var(&mut tape, &bound, &train_videos[vi])?;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let total = batch_loss.expect("batch_size >= 1");
            let mean = tape.scale(total, 1.0 / opts.batch_size as f64);
            epoch_loss += tape.value(mean).data()[0].to_f64();
            tape.backward(mean)?;
            let grads = bound.grads(&tape);
            opt.step(&mut model.params, &grads)?;
        }
        let cumulative = epoch * opts.steps_per_epoch;
        records.push(MetricsRecord {
            epoch,
            step: cumulative,
            split: Split::Train,
            loss: epoch_loss / steps as f64,
            accuracy: 0.0,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        });
        if !eval_videos.is_empty() {
            let mut eval_loss = 0.0;
            for video in eval_videos {
                let mut tape = Tape::new();
                let bound = model.params.bind_frozen(&mut tape);
                let loss = model.sequence_loss_var(&mut tape, &bound, video)?;
                eval_loss += tape.value(loss).data()[0].to_f64();
            }
            records.push(MetricsRecord {
                epoch,
                step: cumulative,
                split: Split::Eval,
                loss: eval_loss / eval_videos.len() as f64,
                accuracy: 0.0,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            });
        }
    }
    Ok((model, records))
}
