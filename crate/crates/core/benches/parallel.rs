use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use warpdepth::dataio::{synth_scene, SceneSpec};
use warpdepth::geometry::{warp_coordinates, Pose6};
use warpdepth::losses::{ssim_map, total_loss, LossWeights, ScenePyramid};
use warpdepth::optim::{SceneParams, View};
use warpdepth::par;
use warpdepth::sampler::bilinear_sample;

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", false), ("serial", true)]
}

fn run<R>(serial: bool, f: impl FnOnce() -> R) -> R {
    if serial {
        par::serial(f)
    } else {
        f()
    }
}

fn kernels(c: &mut Criterion) {
    let sample = synth_scene(&SceneSpec::default()).unwrap();
    let gt = sample.ground_truth.clone().unwrap();
    let k = sample.intrinsics;
    let depth = &gt.depths[View::Right.index()];
    let pose = Pose6::translation(sample.baseline, 0.0, 0.0);
    let grid = warp_coordinates(depth, &pose, &k).unwrap();
    let (l, r) = (&sample.images[0], &sample.images[1]);

    let mut g = c.benchmark_group("kernels");
    for (name, serial) in modes() {
        g.bench_function(BenchmarkId::new("warp", name), |b| {
            b.iter(|| run(serial, || warp_coordinates(black_box(depth), &pose, &k).unwrap()))
        });
        g.bench_function(BenchmarkId::new("sample", name), |b| {
            b.iter(|| run(serial, || bilinear_sample(black_box(l), &grid).unwrap()))
        });
        g.bench_function(BenchmarkId::new("ssim", name), |b| {
            b.iter(|| run(serial, || ssim_map(black_box(l), r, 0.01, 0.03).unwrap()))
        });
    }
    g.finish();
}

fn loss(c: &mut Criterion) {
    let sample = synth_scene(&SceneSpec::default()).unwrap();
    let pyramid =
        ScenePyramid::build(&sample.images, sample.intrinsics, sample.baseline, 4).unwrap();
    let weights = LossWeights::default();
    let mut g = c.benchmark_group("total_loss");
    g.sample_size(20);
    for level in [0usize, 2] {
        let k = pyramid.levels[level].intrinsics;
        let params = SceneParams::initial(k.width, k.height, sample.baseline, 0.3);
        for (name, serial) in modes() {
            g.bench_function(BenchmarkId::new(name, format!("level{level}")), |b| {
                b.iter(|| run(serial, || total_loss(black_box(&params), &pyramid, level, &weights).unwrap()))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, kernels, loss);
criterion_main!(benches);
