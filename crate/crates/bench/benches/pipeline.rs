use criterion::{black_box, criterion_group, criterion_main, Criterion};

use socialpose_core::observation::{self, ObsSource};
use socialpose_core::sampler::ActionPolicy;
use socialpose_core::synthscene;
use socialpose_core::{Arch, DenoiserConfig, DiffusionPolicy, ObsMode, SamplerConfig};

fn observations(c: &mut Criterion) {
    let (frames, renderer) = socialpose_bench::scene(4);
    let frame = &frames[1];
    let raw = renderer.render(frame).unwrap();
    let mut g = c.benchmark_group("observation");
    g.bench_function("rasterize_keypoints", |b| {
        b.iter(|| {
            observation::make_observation(ObsMode::Plotted, ObsSource::Keypoints(black_box(frame)))
        })
    });
    g.bench_function("resize_raw_frame", |b| {
        b.iter(|| observation::make_observation(ObsMode::Raw, ObsSource::Image(black_box(&raw))))
    });
    g.bench_function("render_raw_frame", |b| {
        b.iter(|| renderer.render(black_box(frame)))
    });
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let (frames, renderer) = socialpose_bench::scene(4);
    let obs = synthscene::frame_observation(ObsMode::Plotted, &frames[1], &renderer).unwrap();
    let mut g = c.benchmark_group("diffusion_x");
    g.sample_size(10);
    for arch in [Arch::Transformer, Arch::Mlp] {
        let ckpt = socialpose_bench::checkpoint(DenoiserConfig {
            arch,
            ..DenoiserConfig::default()
        });
        let policy = DiffusionPolicy::from_checkpoint(&ckpt, SamplerConfig::default());
        g.bench_function(arch.to_string(), |b| {
            b.iter(|| policy.act(1, black_box(&obs), 0).unwrap())
        });
    }
    g.finish();
}

fn per_frame(c: &mut Criterion) {
    let (frames, renderer) = socialpose_bench::scene(4);
    let ckpt = socialpose_bench::checkpoint(DenoiserConfig::default());
    let policy = DiffusionPolicy::from_checkpoint(&ckpt, SamplerConfig::default());
    let mut g = c.benchmark_group("observe_and_sample");
    g.sample_size(10);
    for mode in ObsMode::ALL {
        let raw = renderer.render(&frames[1]).unwrap();
        g.bench_function(mode.as_str(), |b| {
            b.iter(|| {
                let obs = match mode {
                    ObsMode::Raw => observation::make_observation(mode, ObsSource::Image(&raw)),
                    ObsMode::Plotted => {
                        observation::make_observation(mode, ObsSource::Keypoints(&frames[1]))
                    }
                }
                .unwrap();
                policy.act(1, &obs, 0).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, observations, sampling, per_frame);
criterion_main!(benches);
