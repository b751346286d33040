use criterion::{black_box, criterion_group, criterion_main, Criterion};

use slotwm_bench::{
    baseline, desk_wm_config, random_frame, random_tokens, tokenizer, triplet,
};
use slotwm_core::physics::{builtin_templates, run_task, simulate_step};
use slotwm_core::tokenizer::quantize;
use slotwm_core::rng::Rng;
use slotwm_core::Tensor;

/// Grounds the cost gap between the baseline's 2L-token self-attention and
/// the triplet's S-query cross-attention at matched sizes.
fn bench_attention_paths(c: &mut Criterion) {
    let cfg = desk_wm_config();
    let wm = triplet();
    let dec = baseline();
    let z1 = random_tokens(1, 1, &cfg);
    let z2 = random_tokens(2, 2, &cfg);
    let rep = slotwm_core::worldmodel::init_representation::<f32>(3, cfg.n_slots, cfg.d_model);

    let mut group = c.benchmark_group("next_frame_logits");
    group.bench_function("triplet_cross_attention", |b| {
        b.iter(|| {
            let corrected = wm.correct(black_box(&rep), black_box(&z1)).unwrap();
            let advanced = wm.predict(&corrected).unwrap();
            wm.decode_frame_logits(&advanced, &z2).unwrap()
        })
    });
    group.bench_function("decoder_only_self_attention", |b| {
        b.iter(|| dec.next_frame_logits(black_box(&z1), black_box(&z2)).unwrap())
    });
    group.finish();
}

fn bench_tokenizer(c: &mut Criterion) {
    let tok = tokenizer();
    let frame = random_frame(5);
    c.bench_function("tokenizer_encode_quantize", |b| {
        b.iter(|| {
            let latents = tok.encode(black_box(&frame)).unwrap();
            tok.quantize(&latents).unwrap()
        })
    });

    let mut rng = Rng::seed_from_u64(9);
    let latents = Tensor::<f32>::randn(&mut rng, &[64, 16], 1.0);
    let codebook = Tensor::<f32>::randn(&mut rng, &[32, 16], 1.0);
    c.bench_function("quantize_64x32", |b| {
        b.iter(|| quantize(black_box(&latents), black_box(&codebook)).unwrap())
    });
}

fn bench_simulator(c: &mut Criterion) {
    let templates = builtin_templates(7, 12, 0.01, 10);
    let (traj, _) = run_task(&templates[0], 3, 16, 16).unwrap();
    let state = traj.states[0].clone();
    c.bench_function("simulate_step", |b| {
        b.iter(|| simulate_step(black_box(&state), 0.01))
    });
    c.bench_function("run_task_drop_16px", |b| {
        b.iter(|| run_task(black_box(&templates[0]), 11, 16, 16).unwrap())
    });
}

criterion_group!(benches, bench_attention_paths, bench_tokenizer, bench_simulator);
criterion_main!(benches);
