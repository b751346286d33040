//! Success/failure classifier: a small bidirectional encoder over either the
//! world model's final representation or, for the decoder-only baseline, the
//! final frame's token sequence. A learned CLS vector is prepended and the
//! two-way head reads its position.

use crate::config::{Arch, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionCounts, MetricsRecord};
use crate::nn::{add_positions, embedding_table, BlockLayout, Linear, StackConfig, TransformerStack};
use crate::physics::{Label, Split};
use crate::rng::Rng;
use crate::tensor::{Bound, Element, OptimizerState, ParamId, Params, Tape, Tensor, Var};
use crate::worldmodel::{FrameTokens, Representation, WmTrainOptions};

/// Which input surface the classifier is wired for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdapterKind {
    /// Slot matrix `[n_slots, slot_width]` through a linear adapter.
    Slots { slot_width: usize },
    /// Token ids through an embedding table plus positions.
    Tokens { vocab: usize, seq_len: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub adapter: AdapterKind,
}

impl ClassifierConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        let adapter = match cfg.arch {
            Arch::Fptt => AdapterKind::Slots { slot_width: cfg.d_model },
            Arch::DecoderOnly => {
                AdapterKind::Tokens { vocab: cfg.codebook_size, seq_len: cfg.tokens_per_frame() }
            }
        };
        ClassifierConfig {
            d_model: cfg.d_model,
            n_heads: cfg.n_heads,
            n_layers: cfg.n_layers_classifier,
            adapter,
        }
    }
}

/// Owned classifier input, precomputed once per video with the world model
/// frozen.
#[derive(Clone, Debug)]
pub enum ClassInput<T: Element> {
    Slots(Tensor<T>),
    Tokens(Vec<usize>),
}

impl<T: Element> ClassInput<T> {
    pub fn from_representation(rep: &Representation<T>) -> Self {
        ClassInput::Slots(rep.slots.clone())
    }

    pub fn from_tokens(z: &FrameTokens) -> Self {
        ClassInput::Tokens(z.ids.clone())
    }
}

pub struct ClassifierParams<T: Element> {
    pub cfg: ClassifierConfig,
    pub params: Params<T>,
    slot_adapter: Option<Linear>,
    tok_emb: Option<ParamId>,
    tok_pos: Option<ParamId>,
    cls: ParamId,
    stack: TransformerStack,
    head: Linear,
}

impl<T: Element> ClassifierParams<T> {
    pub fn init(cfg: ClassifierConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let d = cfg.d_model;
        let (slot_adapter, tok_emb, tok_pos) = match cfg.adapter {
            AdapterKind::Slots { slot_width } => (
                Some(Linear::init(&mut params, &mut rng, "adapter", slot_width, d, true)?),
                None,
                None,
            ),
            AdapterKind::Tokens { vocab, seq_len } => (
                None,
                Some(embedding_table(&mut params, &mut rng, "tok_emb", vocab, d)?),
                Some(embedding_table(&mut params, &mut rng, "tok_pos", seq_len, d)?),
            ),
        };
        let cls = params.add("cls", Tensor::randn(&mut rng, &[1, d], 0.02))?;
        let stack = TransformerStack::init(
            &mut params,
            &mut rng,
            "encoder",
            StackConfig {
                d_model: d,
                n_heads: cfg.n_heads,
                n_layers: cfg.n_layers,
                layout: BlockLayout::SelfOnly { causal: false },
            },
        )?;
        let head = Linear::init(&mut params, &mut rng, "head", d, 2, true)?;
        Ok(ClassifierParams { cfg, params, slot_adapter, tok_emb, tok_pos, cls, stack, head })
    }

    fn adapt(&self, tape: &mut Tape<T>, bound: &Bound, input: &ClassInput<T>) -> Result<Var> {
        match (input, self.cfg.adapter) {
            (ClassInput::Slots(slots), AdapterKind::Slots { slot_width }) => {
                if slots.rank() != 2 || slots.shape()[1] != slot_width {
                    return Err(Error::contract(format!(
                        "classifier adapter expects [*, {slot_width}] slots, got {:?}",
                        slots.shape()
                    )));
                }
                let v = tape.constant(slots.clone());
                self.slot_adapter.as_ref().expect("slot adapter").forward(tape, bound, v)
            }
            (ClassInput::Tokens(ids), AdapterKind::Tokens { vocab, seq_len }) => {
                if ids.len() != seq_len {
                    return Err(Error::contract(format!(
                        "classifier adapter expects {seq_len} tokens, got {}",
                        ids.len()
                    )));
                }
                if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
                    return Err(Error::index(format!("token id {bad} >= vocab {vocab}")));
                }
                let emb = tape.embedding_lookup(bound.var(self.tok_emb.expect("token table")), ids)?;
                add_positions(tape, emb, bound.var(self.tok_pos.expect("token positions")))
            }
            _ => Err(Error::contract("classifier input does not match its configured adapter")),
        }
    }

    /// `[1, 2]` logits for {failure, success} read at the CLS position.
    pub fn classify_var(&self, tape: &mut Tape<T>, bound: &Bound, input: &ClassInput<T>) -> Result<Var> {
        let rows = self.adapt(tape, bound, input)?;
        let cls = bound.var(self.cls);
        let x = tape.concat_rows(&[cls, rows])?;
        let h = self.stack.forward(tape, bound, x, None)?;
        let at_cls = tape.slice_rows(h, 0, 1)?;
        self.head.forward(tape, bound, at_cls)
    }

    /// Value-level classification: logits `[2]`.
    pub fn classify(&self, input: &ClassInput<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let out = self.classify_var(&mut tape, &bound, input)?;
        let flat = tape.reshape(out, &[2])?;
        Ok(tape.value(flat).clone())
    }

    pub fn predict_label(&self, input: &ClassInput<T>) -> Result<Label> {
        let logits = self.classify(input)?;
        Ok(if logits.data()[1] > logits.data()[0] { Label::Success } else { Label::Failure })
    }
}

/// Supervised training over precomputed (input, label) pairs. Emits one
/// train and one eval row per epoch; eval F1 drives sample-efficiency
/// measurement downstream.
pub fn train_classifier<T: Element>(
    train_set: &[(ClassInput<T>, Label)],
    eval_set: &[(ClassInput<T>, Label)],
    cfg: ClassifierConfig,
    opts: &WmTrainOptions,
) -> Result<(ClassifierParams<T>, Vec<MetricsRecord>)> {
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(Error::input("train_classifier: empty train or eval set"));
    }
    if opts.batch_size == 0 || opts.steps_per_epoch % opts.batch_size != 0 {
        return Err(Error::input("steps_per_epoch must be a multiple of batch_size"));
    }
    let mut model = ClassifierParams::<T>::init(cfg, opts.seed)?;
    let mut opt =
        OptimizerState::adamw(opts.learning_rate, opts.weight_decay, opts.betas, &model.params);
    let mut rng = Rng::seed_from_u64(opts.seed ^ 0x636c_6173_7369_6679);
    let steps = opts.steps_per_epoch / opts.batch_size;
    let mut records = Vec::new();

    for epoch in 1..=opts.epochs {
        let mut epoch_loss = 0.0;
        let mut train_counts = ConfusionCounts::default();
        for _ in 0..steps {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let mut batch_loss = None;
            for _ in 0..opts.batch_size {
                let (input, label) = &train_set[rng.below(train_set.len())];
                let logits = model.classify_var(&mut tape, &bound, input)?;
                let lv = tape.value(logits);
                train_counts.record(lv.data()[1] > lv.data()[0], label.is_success());
                let ce = tape.cross_entropy_logits(logits, &[label.as_u8() as usize])?;
                batch_loss = Some(match batch_loss {
                    None => ce,
                    Some(acc) => tape.add(acc, ce)?,
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
        records.push(MetricsRecord::from_counts(
            epoch,
            cumulative,
            Split::Train,
            epoch_loss / steps as f64,
            &train_counts,
        )?);
        let (eval_loss, eval_counts) = evaluate_classifier(&model, eval_set)?;
        records.push(MetricsRecord::from_counts(
            epoch,
            cumulative,
            Split::Eval,
            eval_loss,
            &eval_counts,
        )?);
    }
    Ok((model, records))
}

/// Mean loss and confusion counts over a labeled set.
pub fn evaluate_classifier<T: Element>(
    model: &ClassifierParams<T>,
    set: &[(ClassInput<T>, Label)],
) -> Result<(f64, ConfusionCounts)> {
    if set.is_empty() {
        return Err(Error::input("evaluate_classifier: empty set"));
    }
    let mut counts = ConfusionCounts::default();
    let mut loss = 0.0;
    for (input, label) in set {
        let mut tape = Tape::new();
        let bound = model.params.bind_frozen(&mut tape);
        let logits = model.classify_var(&mut tape, &bound, input)?;
        let lv = tape.value(logits);
        counts.record(lv.data()[1] > lv.data()[0], label.is_success());
        let ce = tape.cross_entropy_logits(logits, &[label.as_u8() as usize])?;
        loss += tape.value(ce).data()[0].to_f64();
    }
    Ok((loss / set.len() as f64, counts))
}
