//! The corrector/predictor/decoder triplet. Frames arrive as token
//! sequences; per step the corrector aligns the slot representation with
//! the observed frame through cross-attention, the predictor advances it
//! one timestep through self-attention, and the decoder turns the advanced
//! representation into next-frame token logits, where the loss lives.
//!
//! Rollout processes the N given frames with correct+predict and then keeps
//! predicting without correction until the video's final timestep.

mod train;

pub use train::{evaluate, mean_token_ce, train_worldmodel, WmTrainOptions};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{add_positions, embedding_table, BlockLayout, Linear, StackConfig, TransformerStack};
use crate::rng::Rng;
use crate::tensor::{Bound, Element, ParamId, Params, Tape, Tensor, Var};

/// The slot matrix and its timestep, `t >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation<T: Element> {
    pub slots: Tensor<T>,
    pub timestep: usize,
}

/// Token ids of one frame; `frame_index` is 1-based like the timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTokens {
    pub ids: Vec<usize>,
    pub frame_index: usize,
}

impl FrameTokens {
    pub fn new(ids: Vec<usize>, frame_index: usize) -> Self {
        FrameTokens { ids, frame_index }
    }
}

/// Initial representation: i.i.d. standard normal scaled by `1/sqrt(d_model)`,
/// drawn from the run RNG; timestep 1.
pub fn init_representation<T: Element>(seed: u64, n_slots: usize, d_model: usize) -> Representation<T> {
    assert!(n_slots > 0 && d_model > 0, "representation dims must be positive");
    let mut rng = Rng::seed_from_u64(seed);
    let std = 1.0 / (d_model as f64).sqrt();
    Representation { slots: Tensor::randn(&mut rng, &[n_slots, d_model], std), timestep: 1 }
}

#[derive(Clone, Copy, Debug)]
pub struct WmConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_corrector: usize,
    pub n_layers_predictor: usize,
    pub n_layers_decoder: usize,
    pub n_slots: usize,
    /// Codebook size K; the decoder input vocabulary is K+1 with BOS = K,
    /// and BOS is never a valid target.
    pub vocab: usize,
    pub tokens_per_frame: usize,
    pub learned_init: bool,
    pub corrector_self_attention: bool,
}

impl WmConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        WmConfig {
            d_model: cfg.d_model,
            n_heads: cfg.n_heads,
            n_layers_corrector: cfg.n_layers_corrector,
            n_layers_predictor: cfg.n_layers_predictor,
            n_layers_decoder: cfg.n_layers_decoder,
            n_slots: cfg.n_slots,
            vocab: cfg.codebook_size,
            tokens_per_frame: cfg.tokens_per_frame(),
            learned_init: cfg.learned_init,
            corrector_self_attention: cfg.corrector_self_attention,
        }
    }

    pub fn bos_id(&self) -> usize {
        self.vocab
    }
}

/// Counters filled by [`TripletParams::rollout_with_stats`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RolloutStats {
    pub corrects: usize,
    pub predicts: usize,
}

pub struct TripletParams<T: Element> {
    pub cfg: WmConfig,
    pub params: Params<T>,
    token_emb: ParamId,
    token_pos: ParamId,
    slot_emb: ParamId,
    init_slots: Option<ParamId>,
    corrector: TransformerStack,
    predictor: TransformerStack,
    decoder: TransformerStack,
    head: Linear,
}

impl<T: Element> TripletParams<T> {
    pub fn init(cfg: WmConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let d = cfg.d_model;
        let token_emb = embedding_table(&mut params, &mut rng, "token_emb", cfg.vocab + 1, d)?;
        let token_pos = embedding_table(&mut params, &mut rng, "token_pos", cfg.tokens_per_frame, d)?;
        let slot_emb = embedding_table(&mut params, &mut rng, "slot_emb", cfg.n_slots, d)?;
        let init_slots = if cfg.learned_init {
            Some(params.add(
                "init_slots",
                Tensor::randn(&mut rng, &[cfg.n_slots, d], 1.0 / (d as f64).sqrt()),
            )?)
        } else {
            None
        };
        let corrector_layout = if cfg.corrector_self_attention {
            BlockLayout::SelfCross { causal: false }
        } else {
            BlockLayout::CrossOnly
        };
        let corrector = TransformerStack::init(
            &mut params,
            &mut rng,
            "corrector",
            StackConfig {
                d_model: d,
                n_heads: cfg.n_heads,
                n_layers: cfg.n_layers_corrector,
                layout: corrector_layout,
            },
        )?;
        let predictor = TransformerStack::init(
            &mut params,
            &mut rng,
            "predictor",
            StackConfig {
                d_model: d,
                n_heads: cfg.n_heads,
                n_layers: cfg.n_layers_predictor,
                layout: BlockLayout::SelfOnly { causal: false },
            },
        )?;
        let decoder = TransformerStack::init(
            &mut params,
            &mut rng,
            "decoder",
            StackConfig {
                d_model: d,
                n_heads: cfg.n_heads,
                n_layers: cfg.n_layers_decoder,
                layout: BlockLayout::SelfCross { causal: true },
            },
        )?;
        let head = Linear::init(&mut params, &mut rng, "head", d, cfg.vocab, true)?;
        Ok(TripletParams {
            cfg,
            params,
            token_emb,
            token_pos,
            slot_emb,
            init_slots,
            corrector,
            predictor,
            decoder,
            head,
        })
    }

    fn check_ids(&self, z: &FrameTokens) -> Result<()> {
        if z.ids.len() != self.cfg.tokens_per_frame {
            return Err(Error::dim(format!(
                "frame has {} tokens, model expects {}",
                z.ids.len(),
                self.cfg.tokens_per_frame
            )));
        }
        if let Some(&bad) = z.ids.iter().find(|&&id| id >= self.cfg.vocab) {
            return Err(Error::index(format!("token id {bad} >= K {}", self.cfg.vocab)));
        }
        Ok(())
    }

    /// Embeds and positions one frame's tokens.
    fn embed_frame(&self, tape: &mut Tape<T>, bound: &Bound, z: &FrameTokens) -> Result<Var> {
        self.check_ids(z)?;
        let emb = tape.embedding_lookup(bound.var(self.token_emb), &z.ids)?;
        add_positions(tape, emb, bound.var(self.token_pos))
    }

    /// Slot identity embeddings are added before every corrector and
    /// predictor call so the otherwise unordered slots stay distinguishable.
    fn with_slot_identity(&self, tape: &mut Tape<T>, bound: &Bound, slots: Var) -> Result<Var> {
        tape.add(slots, bound.var(self.slot_emb))
    }

    /// The graph-level initial representation for one video.
    fn init_var(&self, tape: &mut Tape<T>, bound: &Bound, seed: u64) -> Var {
        match self.init_slots {
            Some(id) => bound.var(id),
            None => {
                let rep = init_representation::<T>(seed, self.cfg.n_slots, self.cfg.d_model);
                tape.constant(rep.slots)
            }
        }
    }

    pub fn correct_var(&self, tape: &mut Tape<T>, bound: &Bound, slots: Var, z: &FrameTokens) -> Result<Var> {
        let q = self.with_slot_identity(tape, bound, slots)?;
        let ctx = self.embed_frame(tape, bound, z)?;
        self.corrector.forward(tape, bound, q, Some(ctx))
    }

    pub fn predict_var(&self, tape: &mut Tape<T>, bound: &Bound, slots: Var) -> Result<Var> {
        let q = self.with_slot_identity(tape, bound, slots)?;
        self.predictor.forward(tape, bound, q, None)
    }

    /// Teacher-forced decoding: input is BOS followed by the teacher ids
    /// shifted right, causal self-attention over token positions, cross
    /// attention to the slots; logits over K per position.
    pub fn decode_logits_var(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        slots: Var,
        teacher: &FrameTokens,
    ) -> Result<Var> {
        self.check_ids(teacher)?;
        let l = self.cfg.tokens_per_frame;
        let mut input_ids = Vec::with_capacity(l);
        input_ids.push(self.cfg.bos_id());
        input_ids.extend_from_slice(&teacher.ids[..l - 1]);
        let emb = tape.embedding_lookup(bound.var(self.token_emb), &input_ids)?;
        let x = add_positions(tape, emb, bound.var(self.token_pos))?;
        let h = self.decoder.forward(tape, bound, x, Some(slots))?;
        self.head.forward(tape, bound, h)
    }

    // ---- value-level operations (fresh frozen tape per call) ----

    /// Aligns the representation with an observed frame. The timestep is
    /// unchanged; the frame index must match it.
    pub fn correct(&self, rep: &Representation<T>, z: &FrameTokens) -> Result<Representation<T>> {
        if rep.timestep != z.frame_index {
            return Err(Error::contract(format!(
                "correct: representation at t={} but frame index {}",
                rep.timestep, z.frame_index
            )));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let slots = tape.constant(rep.slots.clone());
        let out = self.correct_var(&mut tape, &bound, slots, z)?;
        Ok(Representation { slots: tape.value(out).clone(), timestep: rep.timestep })
    }

    /// Advances the corrected representation one timestep. Pure function of
    /// the slots and parameters; no frame input exists in the signature.
    pub fn predict(&self, rep: &Representation<T>) -> Result<Representation<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let slots = tape.constant(rep.slots.clone());
        let out = self.predict_var(&mut tape, &bound, slots)?;
        Ok(Representation { slots: tape.value(out).clone(), timestep: rep.timestep + 1 })
    }

    pub fn decode_frame_logits(&self, rep: &Representation<T>, teacher: &FrameTokens) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let slots = tape.constant(rep.slots.clone());
        let out = self.decode_logits_var(&mut tape, &bound, slots, teacher)?;
        Ok(tape.value(out).clone())
    }

    /// The training loop over one video: for t = 1..T-1, correct on z_t,
    /// predict, decode against z_{t+1}. Mean cross-entropy over all steps
    /// and positions; z_T is only ever a target.
    pub fn sequence_loss_var(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        video: &[FrameTokens],
        seed: u64,
    ) -> Result<Var> {
        if video.len() < 2 {
            return Err(Error::input(format!("sequence_loss needs T >= 2, got {}", video.len())));
        }
        for (t, frame) in video.iter().enumerate() {
            if frame.frame_index != t + 1 {
                return Err(Error::contract(format!(
                    "sequence_loss: frame at position {} carries index {}",
                    t + 1,
                    frame.frame_index
                )));
            }
        }
        let mut slots = self.init_var(tape, bound, seed);
        let mut total: Option<Var> = None;
        for t in 0..video.len() - 1 {
            let corrected = self.correct_var(tape, bound, slots, &video[t])?;
            slots = self.predict_var(tape, bound, corrected)?;
            let logits = self.decode_logits_var(tape, bound, slots, &video[t + 1])?;
            let ce = tape.cross_entropy_logits(logits, &video[t + 1].ids)?;
            total = Some(match total {
                None => ce,
                Some(acc) => tape.add(acc, ce)?,
            });
        }
        let sum = total.expect("T >= 2 gives at least one step");
        Ok(tape.scale(sum, 1.0 / (video.len() - 1) as f64))
    }

    /// Value-level sequence loss on a frozen tape.
    pub fn sequence_loss(&self, video: &[FrameTokens], seed: u64) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let loss = self.sequence_loss_var(&mut tape, &bound, video, seed)?;
        Ok(tape.value(loss).clone())
    }

    /// Corrects on the N given frames with a predict after each, then keeps
    /// predicting without correction until timestep T. Returns the final
    /// representation the classifier consumes.
    pub fn rollout(&self, given: &[FrameTokens], total_frames: usize, seed: u64) -> Result<Representation<T>> {
        Ok(self.rollout_with_stats(given, total_frames, seed)?.0)
    }

    pub fn rollout_with_stats(
        &self,
        given: &[FrameTokens],
        total_frames: usize,
        seed: u64,
    ) -> Result<(Representation<T>, RolloutStats)> {
        let n = given.len();
        if n == 0 || n >= total_frames {
            return Err(Error::input(format!(
                "rollout needs 1 <= N < T, got N={n}, T={total_frames}"
            )));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let mut stats = RolloutStats::default();
        let mut slots = self.init_var(&mut tape, &bound, seed);
        for (t, frame) in given.iter().enumerate() {
            if frame.frame_index != t + 1 {
                return Err(Error::contract(format!(
                    "rollout: frame at position {} carries index {}",
                    t + 1,
                    frame.frame_index
                )));
            }
            let corrected = self.correct_var(&mut tape, &bound, slots, frame)?;
            stats.corrects += 1;
            slots = self.predict_var(&mut tape, &bound, corrected)?;
            stats.predicts += 1;
        }
        for _ in 0..total_frames - n - 1 {
            slots = self.predict_var(&mut tape, &bound, slots)?;
            stats.predicts += 1;
        }
        let rep = Representation { slots: tape.value(slots).clone(), timestep: total_frames };
        Ok((rep, stats))
    }
}
