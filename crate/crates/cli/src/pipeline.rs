//! Shared plumbing between the CLI commands: config resolution, dataset and
//! checkpoint loading, video tokenization, and classifier input precompute.

use std::path::Path;

use slotwm_core::baseline::{BaselineConfig, DecoderOnlyParams};
use slotwm_core::checkpoint;
use slotwm_core::classifier::ClassInput;
use slotwm_core::error::{Error, Result};
use slotwm_core::physics::{load_dataset, Label, Manifest, Split, VideoSample};
use slotwm_core::rng::derive_seed;
use slotwm_core::tokenizer::{TokenizerConfig, TokenizerParams};
use slotwm_core::worldmodel::{FrameTokens, TripletParams, WmConfig};
use slotwm_core::{Arch, Params, RunConfig, Tensor};

/// Builds a RunConfig from preset, optional config file, repeated
/// `--set key=value` overrides and an optional seed flag.
pub fn resolve_config(
    preset: &str,
    config_file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    arch: Option<Arch>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(preset)?;
    if let Some(path) = config_file {
        let text = std::fs::read_to_string(path)?;
        cfg.apply_text(&text)?;
    }
    for kv in sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(a) = arch {
        cfg.arch = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads the manifest under `dir` and loads every referenced sample,
/// partitioned into train and eval.
pub fn load_split_dataset(dir: &Path) -> Result<(Vec<VideoSample>, Vec<VideoSample>)> {
    let manifest = Manifest::read(&dir.join("manifest.txt"))?;
    let all = load_dataset(dir, &manifest)?;
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (sample, split) in all {
        match split {
            Split::Train => train.push(sample),
            Split::Eval => eval.push(sample),
        }
    }
    if train.is_empty() || eval.is_empty() {
        return Err(Error::input("dataset needs nonempty train and eval splits"));
    }
    Ok((train, eval))
}

/// Parses the config snapshot stored in a checkpoint.
pub fn config_from_snapshot(snapshot: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::desk();
    cfg.apply_text(snapshot)?;
    Ok(cfg)
}

pub fn save_params(params: &Params<f32>, cfg: &RunConfig, path: &Path) -> Result<()> {
    checkpoint::save(params, &cfg.to_text(), path)
}

/// Loads a tokenizer checkpoint, rebuilding the module structure from the
/// stored config snapshot and freezing every parameter.
pub fn load_tokenizer(path: &Path) -> Result<(TokenizerParams<f32>, RunConfig)> {
    let (saved, snapshot) = checkpoint::load(path)?;
    let cfg = config_from_snapshot(&snapshot)?;
    let mut tok = TokenizerParams::<f32>::init(TokenizerConfig::from_run(&cfg), 0)?;
    tok.params.load_from(&saved)?;
    tok.params.set_trainable_all(false);
    Ok((tok, cfg))
}

pub enum WorldModel {
    Fptt(TripletParams<f32>),
    DecoderOnly(DecoderOnlyParams<f32>),
}

impl WorldModel {
    pub fn arch(&self) -> Arch {
        match self {
            WorldModel::Fptt(_) => Arch::Fptt,
            WorldModel::DecoderOnly(_) => Arch::DecoderOnly,
        }
    }
}

/// Loads a world-model checkpoint; the architecture is read from the stored
/// config snapshot.
pub fn load_worldmodel(path: &Path) -> Result<(WorldModel, RunConfig)> {
    let (saved, snapshot) = checkpoint::load(path)?;
    let cfg = config_from_snapshot(&snapshot)?;
    let model = match cfg.arch {
        Arch::Fptt => {
            let mut wm = TripletParams::<f32>::init(WmConfig::from_run(&cfg), 0)?;
            wm.params.load_from(&saved)?;
            wm.params.set_trainable_all(false);
            WorldModel::Fptt(wm)
        }
        Arch::DecoderOnly => {
            let mut m = DecoderOnlyParams::<f32>::init(BaselineConfig::from_run(&cfg), 0)?;
            m.params.load_from(&saved)?;
            m.params.set_trainable_all(false);
            WorldModel::DecoderOnly(m)
        }
    };
    Ok((model, cfg))
}

/// Tokenizes every frame of a video with the frozen tokenizer; frame
/// indices are 1-based.
pub fn tokenize_video(tok: &TokenizerParams<f32>, sample: &VideoSample) -> Result<Vec<FrameTokens>> {
    let mut out = Vec::with_capacity(sample.frames_total);
    for t in 0..sample.frames_total {
        let frame: Tensor<f32> = sample.frame_tensor(t);
        let ids = tok.tokenize(&frame)?;
        out.push(FrameTokens::new(ids, t + 1));
    }
    Ok(out)
}

pub fn tokenize_videos(
    tok: &TokenizerParams<f32>,
    samples: &[VideoSample],
) -> Result<Vec<Vec<FrameTokens>>> {
    samples.iter().map(|s| tokenize_video(tok, s)).collect()
}

/// Precomputes the classifier input for every video: the world model sees
/// the first N frames, rolls out to the final timestep, and the result
/// (representation or generated final frame) is paired with the label.
pub fn classifier_inputs(
    model: &WorldModel,
    tok: &TokenizerParams<f32>,
    samples: &[VideoSample],
    n_given: usize,
    seed: u64,
) -> Result<Vec<(ClassInput<f32>, Label)>> {
    let mut out = Vec::with_capacity(samples.len());
    for sample in samples.iter() {
        let total = sample.frames_total;
        if n_given >= total {
            return Err(Error::input(format!(
                "video has {total} frames but N = {n_given} given frames were requested"
            )));
        }
        let mut given = Vec::with_capacity(n_given);
        for t in 0..n_given {
            let ids = tok.tokenize(&sample.frame_tensor(t))?;
            given.push(FrameTokens::new(ids, t + 1));
        }
        // one shared init seed across videos: differences between final
        // representations then come from scene content alone
        let input = match model {
            WorldModel::Fptt(wm) => {
                let rep = wm.rollout(&given, total, derive_seed(seed, 0))?;
                ClassInput::from_representation(&rep)
            }
            WorldModel::DecoderOnly(m) => {
                let z_t = m.autoregressive_rollout(&given, total)?;
                ClassInput::from_tokens(&z_t)
            }
        };
        out.push((input, sample.label));
    }
    Ok(out)
}
