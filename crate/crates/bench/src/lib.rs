//! Fixture builders shared by the benchmark targets.

use slotwm_core::baseline::{BaselineConfig, DecoderOnlyParams};
use slotwm_core::rng::Rng;
use slotwm_core::tokenizer::{TokenizerConfig, TokenizerParams};
use slotwm_core::worldmodel::{FrameTokens, TripletParams, WmConfig};
use slotwm_core::Tensor;

pub fn desk_wm_config() -> WmConfig {
    WmConfig {
        d_model: 64,
        n_heads: 4,
        n_layers_corrector: 2,
        n_layers_predictor: 2,
        n_layers_decoder: 6,
        n_slots: 4,
        vocab: 32,
        tokens_per_frame: 16,
        learned_init: false,
        corrector_self_attention: false,
    }
}

pub fn desk_baseline_config() -> BaselineConfig {
    BaselineConfig { d_model: 64, n_heads: 4, n_layers: 6, vocab: 32, tokens_per_frame: 16 }
}

pub fn desk_tokenizer_config() -> TokenizerConfig {
    TokenizerConfig {
        frame_side: 16,
        channels: 16,
        res_layers: 2,
        attn_layers: 1,
        downsamplings: 2,
        d_code: 16,
        codebook_size: 32,
        beta: 0.25,
    }
}

pub fn triplet() -> TripletParams<f32> {
    TripletParams::init(desk_wm_config(), 7).expect("triplet init")
}

pub fn baseline() -> DecoderOnlyParams<f32> {
    DecoderOnlyParams::init(desk_baseline_config(), 7).expect("baseline init")
}

pub fn tokenizer() -> TokenizerParams<f32> {
    TokenizerParams::init(desk_tokenizer_config(), 7).expect("tokenizer init")
}

pub fn random_frame(seed: u64) -> Tensor<f32> {
    let mut rng = Rng::seed_from_u64(seed);
    let data = (0..3 * 16 * 16).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
    Tensor::from_vec(&[3, 16, 16], data).expect("frame shape")
}

pub fn random_tokens(seed: u64, frame_index: usize, cfg: &WmConfig) -> FrameTokens {
    let mut rng = Rng::seed_from_u64(seed);
    FrameTokens::new((0..cfg.tokens_per_frame).map(|_| rng.below(cfg.vocab)).collect(), frame_index)
}
