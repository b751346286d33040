//! Run configuration. Two presets ship: `desk` (the scaled-down defaults all
//! tests run at) and `paper` (the full-scale recipe, recorded for reference).
//! Any field can be overridden from a flat `key = value` config file or a CLI
//! flag; file parsing is hand-rolled so configs stay diff-friendly.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Fptt,
    DecoderOnly,
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fptt" => Ok(Arch::Fptt),
            "decoder-only" => Ok(Arch::DecoderOnly),
            other => Err(Error::Config(format!("unknown arch {other:?} (fptt|decoder-only)"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Fptt => "fptt",
            Arch::DecoderOnly => "decoder-only",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub arch: Arch,
    pub seed: u64,

    // video geometry
    pub frame_width: usize,
    pub frame_height: usize,
    pub t_min: usize,
    pub t_max: usize,
    /// Frames shown to the world model before predict-only rollout.
    pub n_given: usize,

    // simulator
    pub sim_dt: f64,
    pub sim_steps_per_frame: usize,
    pub contact_epsilon: f64,

    // tokenizer
    pub vq_channels: usize,
    pub vq_res_layers: usize,
    pub vq_attn_layers: usize,
    pub vq_downsamplings: usize,
    pub d_code: usize,
    pub codebook_size: usize,
    pub vq_beta: f64,
    pub vq_lr: f64,
    pub vq_steps: usize,

    // transformers
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_corrector: usize,
    pub n_layers_predictor: usize,
    pub n_layers_decoder: usize,
    pub n_layers_classifier: usize,
    pub n_slots: usize,
    /// Learned initial representation instead of seeded noise; off by default.
    pub learned_init: bool,
    /// Slot-to-slot self-attention inside the corrector; off by default, the
    /// corrector then runs pure cross-attention and slot mixing is left to
    /// the predictor.
    pub corrector_self_attention: bool,

    // optimizer (transformers)
    pub wm_lr: f64,
    pub wm_weight_decay: f64,
    pub wm_beta1: f64,
    pub wm_beta2: f64,

    // schedule: one epoch is `steps_per_epoch` training samples followed by
    // an evaluation pass; optimizer steps per epoch = steps_per_epoch / batch
    pub epochs: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
}

impl RunConfig {
    /// Scaled-down defaults that train in minutes on a laptop core.
    pub fn desk() -> Self {
        RunConfig {
            arch: Arch::Fptt,
            seed: 0,
            frame_width: 16,
            frame_height: 16,
            t_min: 7,
            t_max: 12,
            n_given: 5,
            sim_dt: 0.01,
            sim_steps_per_frame: 10,
            contact_epsilon: 0.01,
            vq_channels: 16,
            vq_res_layers: 2,
            vq_attn_layers: 1,
            vq_downsamplings: 2,
            d_code: 16,
            codebook_size: 32,
            vq_beta: 0.25,
            vq_lr: 1e-4,
            vq_steps: 1000,
            d_model: 64,
            n_heads: 4,
            n_layers_corrector: 2,
            n_layers_predictor: 2,
            n_layers_decoder: 6,
            n_layers_classifier: 2,
            n_slots: 4,
            learned_init: false,
            corrector_self_attention: false,
            wm_lr: 6e-4,
            wm_weight_decay: 0.1,
            wm_beta1: 0.9,
            wm_beta2: 0.95,
            epochs: 50,
            batch_size: 5,
            steps_per_epoch: 50,
        }
    }

    /// Full-scale recipe. The transformer vocabulary is equated with the
    /// codebook size; anything beyond the codebook would be wasted capacity.
    pub fn paper() -> Self {
        RunConfig {
            frame_width: 64,
            frame_height: 64,
            t_max: 18,
            vq_channels: 64,
            vq_res_layers: 10,
            vq_attn_layers: 3,
            vq_downsamplings: 3,
            d_code: 64,
            codebook_size: 50304,
            d_model: 768,
            n_heads: 12,
            epochs: 100,
            batch_size: 50,
            steps_per_epoch: 500,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset {other:?} (desk|paper)"))),
        }
    }

    /// Side length of the latent grid after downsampling.
    pub fn latent_side(&self) -> usize {
        self.frame_width >> self.vq_downsamplings
    }

    /// Tokens per frame: `(W / 2^D)^2`.
    pub fn tokens_per_frame(&self) -> usize {
        self.latent_side() * self.latent_side()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_width != self.frame_height {
            return Err(Error::Config("frames must be square".into()));
        }
        if self.frame_width % (1 << self.vq_downsamplings) != 0 || self.latent_side() == 0 {
            return Err(Error::Config(format!(
                "frame width {} not divisible by 2^{} downsamplings",
                self.frame_width, self.vq_downsamplings
            )));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.codebook_size < 2 || self.d_code == 0 {
            return Err(Error::Config("codebook needs K >= 2 and d_code >= 1".into()));
        }
        if self.t_min < 2 || self.t_min > self.t_max {
            return Err(Error::Config(format!("bad frame bounds [{}, {}]", self.t_min, self.t_max)));
        }
        if self.n_given == 0 || self.n_given >= self.t_min {
            return Err(Error::Config(format!(
                "n_given {} must satisfy 1 <= N < T_min {}",
                self.n_given, self.t_min
            )));
        }
        if self.batch_size == 0
            || self.steps_per_epoch == 0
            || self.steps_per_epoch % self.batch_size != 0
        {
            return Err(Error::Config(format!(
                "steps_per_epoch {} must be a positive multiple of batch_size {}",
                self.steps_per_epoch, self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&(self.sim_dt)) || self.sim_dt <= 0.0 {
            return Err(Error::Config("sim_dt must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for key {key}")))
        }
        match key {
            "arch" => self.arch = value.parse()?,
            "seed" => self.seed = p(key, value)?,
            "frame_width" => self.frame_width = p(key, value)?,
            "frame_height" => self.frame_height = p(key, value)?,
            "t_min" => self.t_min = p(key, value)?,
            "t_max" => self.t_max = p(key, value)?,
            "n_given" => self.n_given = p(key, value)?,
            "sim_dt" => self.sim_dt = p(key, value)?,
            "sim_steps_per_frame" => self.sim_steps_per_frame = p(key, value)?,
            "contact_epsilon" => self.contact_epsilon = p(key, value)?,
            "vq_channels" => self.vq_channels = p(key, value)?,
            "vq_res_layers" => self.vq_res_layers = p(key, value)?,
            "vq_attn_layers" => self.vq_attn_layers = p(key, value)?,
            "vq_downsamplings" => self.vq_downsamplings = p(key, value)?,
            "d_code" => self.d_code = p(key, value)?,
            "codebook_size" => self.codebook_size = p(key, value)?,
            "vq_beta" => self.vq_beta = p(key, value)?,
            "vq_lr" => self.vq_lr = p(key, value)?,
            "vq_steps" => self.vq_steps = p(key, value)?,
            "d_model" => self.d_model = p(key, value)?,
            "n_heads" => self.n_heads = p(key, value)?,
            "n_layers_corrector" => self.n_layers_corrector = p(key, value)?,
            "n_layers_predictor" => self.n_layers_predictor = p(key, value)?,
            "n_layers_decoder" => self.n_layers_decoder = p(key, value)?,
            "n_layers_classifier" => self.n_layers_classifier = p(key, value)?,
            "n_slots" => self.n_slots = p(key, value)?,
            "learned_init" => self.learned_init = p(key, value)?,
            "corrector_self_attention" => self.corrector_self_attention = p(key, value)?,
            "wm_lr" => self.wm_lr = p(key, value)?,
            "wm_weight_decay" => self.wm_weight_decay = p(key, value)?,
            "wm_beta1" => self.wm_beta1 = p(key, value)?,
            "wm_beta2" => self.wm_beta2 = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = p(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over this config. `#` starts a comment,
    /// blank lines are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Serializes every field as `key = value` lines; `apply_text` of the
    /// output reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut w = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        w("arch", self.arch.to_string());
        w("seed", self.seed.to_string());
        w("frame_width", self.frame_width.to_string());
        w("frame_height", self.frame_height.to_string());
        w("t_min", self.t_min.to_string());
        w("t_max", self.t_max.to_string());
        w("n_given", self.n_given.to_string());
        w("sim_dt", format!("{:?}", self.sim_dt));
        w("sim_steps_per_frame", self.sim_steps_per_frame.to_string());
        w("contact_epsilon", format!("{:?}", self.contact_epsilon));
        w("vq_channels", self.vq_channels.to_string());
        w("vq_res_layers", self.vq_res_layers.to_string());
        w("vq_attn_layers", self.vq_attn_layers.to_string());
        w("vq_downsamplings", self.vq_downsamplings.to_string());
        w("d_code", self.d_code.to_string());
        w("codebook_size", self.codebook_size.to_string());
        w("vq_beta", format!("{:?}", self.vq_beta));
        w("vq_lr", format!("{:?}", self.vq_lr));
        w("vq_steps", self.vq_steps.to_string());
        w("d_model", self.d_model.to_string());
        w("n_heads", self.n_heads.to_string());
        w("n_layers_corrector", self.n_layers_corrector.to_string());
        w("n_layers_predictor", self.n_layers_predictor.to_string());
        w("n_layers_decoder", self.n_layers_decoder.to_string());
        w("n_layers_classifier", self.n_layers_classifier.to_string());
        w("n_slots", self.n_slots.to_string());
        w("learned_init", self.learned_init.to_string());
        w("corrector_self_attention", self.corrector_self_attention.to_string());
        w("wm_lr", format!("{:?}", self.wm_lr));
        w("wm_weight_decay", format!("{:?}", self.wm_weight_decay));
        w("wm_beta1", format!("{:?}", self.wm_beta1));
        w("wm_beta2", format!("{:?}", self.wm_beta2));
        w("epochs", self.epochs.to_string());
        w("batch_size", self.batch_size.to_string());
        w("steps_per_epoch", self.steps_per_epoch.to_string());
        s
    }
}
