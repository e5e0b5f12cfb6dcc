//! Kernel throughput on the rayon pool versus a single worker.
//!
//! `cargo bench -p sar2opt-core` compares the default pool with a one-thread pool;
//! `cargo bench -p sar2opt-core --no-default-features` times the sequential fallback.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::{Array1, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sar2opt_core::nn::{conv2d_forward, ConvGeom};
use sar2opt_core::par;
use sar2opt_core::quality_metrics::{ssim, SsimParams};
use sar2opt_core::tensor::matmul;
use sar2opt_core::tile_store::{DType, Tile};

/// Pools for each configuration being compared.
fn variants() -> Vec<(String, rayon::ThreadPool)> {
    let build = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    if !par::is_parallel() {
        return vec![("sequential".into(), build(1))];
    }
    let all = rayon::current_num_threads();
    let mut v = vec![("rayon-1".to_string(), build(1))];
    if all > 1 {
        v.push((format!("rayon-{all}"), build(all)));
    }
    v
}

fn uniform2(r: &mut ChaCha8Rng, d: (usize, usize)) -> Array2<f32> {
    Array2::from_shape_simple_fn(d, || r.gen_range(-1.0..1.0))
}

fn bench_gemm(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let a = uniform2(&mut r, (256, 512));
    let b = uniform2(&mut r, (512, 1024));
    let mut g = c.benchmark_group("gemm_256x512x1024");
    for (name, pool) in variants() {
        g.bench_function(BenchmarkId::from_parameter(name), |bch| {
            pool.install(|| bch.iter(|| black_box(matmul(a.view(), b.view()))))
        });
    }
    g.finish();
}

fn bench_conv(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let x = Array4::from_shape_simple_fn((4, 32, 64, 64), || r.gen_range(-1.0f32..1.0));
    let w = Array4::from_shape_simple_fn((64, 32, 4, 4), || r.gen_range(-0.1f32..0.1));
    let bias = Array1::<f32>::zeros(64);
    let geom = ConvGeom::new(4, 2, 1);
    let mut g = c.benchmark_group("conv2d_4x32x64x64_k4s2");
    g.sample_size(20);
    for (name, pool) in variants() {
        g.bench_function(BenchmarkId::from_parameter(name), |bch| {
            pool.install(|| bch.iter(|| black_box(conv2d_forward(&x, w.view(), bias.view(), geom).unwrap())))
        });
    }
    g.finish();
}

fn bench_ssim(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut tile = || {
        Tile::new(
            Array3::from_shape_simple_fn((3, 256, 256), || r.gen_range(0..256) as f64),
            DType::U8,
            None,
        )
        .unwrap()
    };
    let (a, b) = (tile(), tile());
    let p = SsimParams::default();
    let mut g = c.benchmark_group("ssim_3x256x256");
    g.sample_size(20);
    for (name, pool) in variants() {
        g.bench_function(BenchmarkId::from_parameter(name), |bch| {
            pool.install(|| bch.iter(|| black_box(ssim(&a, &b, &p).unwrap())))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_gemm, bench_conv, bench_ssim);
criterion_main!(benches);
