use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lapsr_bench::{page, random_tensor};
use lapsr_core::imaging::{bicubic_resize, rgb_to_luminance};
use lapsr_core::metrics::{ifc, ssim, IfcConfig, SsimConfig};
use lapsr_core::tensor::conv2d;
use lapsr_core::{Graph, ModelConfig, ModelParams, Scale};
use std::hint::black_box;

fn convolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3_64ch");
    for side in [32usize, 64] {
        let x = random_tensor([1, 64, side, side], 1);
        let w = random_tensor([64, 64, 3, 3], 2);
        let b = random_tensor([1, 64, 1, 1], 3);
        group.bench_with_input(BenchmarkId::new("forward", side), &side, |bench, _| {
            bench.iter(|| conv2d(black_box(&x), &w, &b, 1, 1).unwrap())
        });
        group.bench_with_input(
            BenchmarkId::new("forward_backward", side),
            &side,
            |bench, _| {
                bench.iter(|| {
                    let mut g = Graph::new();
                    let (xv, wv, bv) = (g.leaf(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
                    let y = g.conv2d(xv, wv, bv, 1, 1).unwrap();
                    let loss = g.sum(y);
                    g.backward(loss).unwrap();
                    g.grad(wv).map(|v| v[0])
                })
            },
        );
    }
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut cfg = ModelConfig::new(Scale::X4);
    cfg.depth = 2;
    let params = ModelParams::<f32>::build(cfg, 0).unwrap();
    let lr = random_tensor([1, 3, 16, 16], 4);
    c.bench_function("network_forward_x4_depth2_16px", |b| {
        b.iter(|| params.forward(black_box(&lr)).unwrap())
    });
}

fn imaging(c: &mut Criterion) {
    let img = page(256, 256);
    c.bench_function("bicubic_downscale_256_to_64", |b| {
        b.iter(|| bicubic_resize(black_box(&img), 64, 64).unwrap())
    });
    c.bench_function("bicubic_upscale_64_to_256", |b| {
        let small = bicubic_resize(&img, 64, 64).unwrap();
        b.iter(|| bicubic_resize(black_box(&small), 256, 256).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let img = page(256, 256);
    let reference = rgb_to_luminance(&img);
    let test = rgb_to_luminance(
        &bicubic_resize(&bicubic_resize(&img, 128, 128).unwrap(), 256, 256).unwrap(),
    );
    c.bench_function("ssim_256", |b| {
        b.iter(|| ssim(&reference, black_box(&test), &SsimConfig::default()).unwrap())
    });
    c.bench_function("ifc_256", |b| {
        b.iter(|| ifc(&reference, black_box(&test), &IfcConfig::default()).unwrap())
    });
}

criterion_group!(benches, convolution, network, imaging, metrics);
criterion_main!(benches);
