//! End-to-end training of the triplet on tokenized videos. The tokenizer is
//! already frozen at this point; videos arrive as token id sequences, so no
//! gradient can reach tokenizer parameters by construction.

use super::{FrameTokens, TripletParams, WmConfig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::physics::Split;
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Element, OptimizerState, Tape};

#[derive(Clone, Copy, Debug)]
pub struct WmTrainOptions {
    pub epochs: usize,
    /// Videos per optimizer step.
    pub batch_size: usize,
    /// Training samples per epoch; optimizer steps per epoch is
    /// `steps_per_epoch / batch_size`.
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub seed: u64,
}

impl WmTrainOptions {
    pub fn from_run(cfg: &RunConfig) -> Self {
        WmTrainOptions {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            steps_per_epoch: cfg.steps_per_epoch,
            learning_rate: cfg.wm_lr,
            weight_decay: cfg.wm_weight_decay,
            betas: (cfg.wm_beta1, cfg.wm_beta2),
            seed: cfg.seed,
        }
    }
}

/// Trains a fresh triplet. Per-video initial representations are seeded by
/// the video's index, fixed across epochs, so runs are bit-reproducible.
pub fn train_worldmodel<T: Element>(
    train_videos: &[Vec<FrameTokens>],
    eval_videos: &[Vec<FrameTokens>],
    cfg: WmConfig,
    opts: &WmTrainOptions,
) -> Result<(TripletParams<T>, Vec<MetricsRecord>)> {
    if train_videos.is_empty() {
        return Err(Error::input("train_worldmodel: empty dataset"));
    }
    if opts.batch_size == 0 || opts.steps_per_epoch % opts.batch_size != 0 {
        return Err(Error::input("steps_per_epoch must be a multiple of batch_size"));
    }
    let mut wm = TripletParams::<T>::init(cfg, opts.seed)?;
    let mut opt =
        OptimizerState::adamw(opts.learning_rate, opts.weight_decay, opts.betas, &wm.params);
    let mut rng = Rng::seed_from_u64(opts.seed ^ 0x776d_5f74_7261_696e);
    let steps = opts.steps_per_epoch / opts.batch_size;
    let mut records = Vec::new();

    for epoch in 1..=opts.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps {
            let mut tape = Tape::new();
            let bound = wm.params.bind(&mut tape);
            let mut batch_loss = None;
            for _ in 0..opts.batch_size {
                let vi = rng.below(train_videos.len());
                let loss = wm.sequence_loss_var(
                    &mut tape,
                    &bound,
                    &train_videos[vi],
                    derive_seed(opts.seed, vi as u64),
                )?;
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
            opt.step(&mut wm.params, &grads)?;
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
            let (loss, acc) = evaluate(&wm, eval_videos, opts.seed)?;
            records.push(MetricsRecord {
                epoch,
                step: cumulative,
                split: Split::Eval,
                loss,
                accuracy: acc,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            });
        }
    }
    Ok((wm, records))
}

/// Mean sequence loss and next-token accuracy over a video set.
pub fn evaluate<T: Element>(
    wm: &TripletParams<T>,
    videos: &[Vec<FrameTokens>],
    seed: u64,
) -> Result<(f64, f64)> {
    if videos.is_empty() {
        return Err(Error::input("evaluate: no videos"));
    }
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (vi, video) in videos.iter().enumerate() {
        let mut tape = Tape::new();
        let bound = wm.params.bind_frozen(&mut tape);
        let video_seed = derive_seed(seed, vi as u64);
        let loss = wm.sequence_loss_var(&mut tape, &bound, video, video_seed)?;
        total_loss += tape.value(loss).data()[0].to_f64();

        // replay for token accuracy
        let mut slots = wm.init_var(&mut tape, &bound, video_seed);
        for t in 0..video.len() - 1 {
            let corrected = wm.correct_var(&mut tape, &bound, slots, &video[t])?;
            slots = wm.predict_var(&mut tape, &bound, corrected)?;
            let logits = wm.decode_logits_var(&mut tape, &bound, slots, &video[t + 1])?;
            let lv = tape.value(logits);
            let k = wm.cfg.vocab;
            for (pos, &target) in video[t + 1].ids.iter().enumerate() {
                let row = &lv.data()[pos * k..(pos + 1) * k];
                let mut arg = 0usize;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[arg] {
                        arg = j;
                    }
                }
                correct += usize::from(arg == target);
                total += 1;
            }
        }
    }
    Ok((total_loss / videos.len() as f64, correct as f64 / total.max(1) as f64))
}

/// Mean per-token cross-entropy over a video set (the overfit criterion).
pub fn mean_token_ce<T: Element>(
    wm: &TripletParams<T>,
    videos: &[Vec<FrameTokens>],
    seed: u64,
) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::input("mean_token_ce: no videos"));
    }
    let mut total = 0.0;
    for (vi, video) in videos.iter().enumerate() {
        total += wm.sequence_loss(video, derive_seed(seed, vi as u64))?.data()[0].to_f64();
    }
    Ok(total / videos.len() as f64)
}
