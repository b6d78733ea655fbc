//! Inference-method benchmarks: exact decoding scales quadratically in the
//! label count, amortized inference linearly.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng as _;

use spen_core::infer::viterbi;
use spen_core::nets::{InferenceArch, InferenceNet};
use spen_core::rng;
use spen_core::tensor::Tensor;
use spen_core::Params;

fn bench_viterbi(c: &mut Criterion) {
    let mut group = c.benchmark_group("viterbi");
    for &l in &[16usize, 64, 256] {
        let mut rng = rng::stream(l as u64, "bench");
        let unary: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let wd: Vec<f64> = (0..l * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Tensor::matrix(l, l, wd);
        group.bench_with_input(BenchmarkId::from_parameter(l), &l, |b, _| {
            b.iter(|| black_box(viterbi(&unary, &w).unwrap()))
        });
    }
    group.finish();
}

fn bench_infnet_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("infnet-forward");
    for &l in &[16usize, 64, 256] {
        let net = InferenceNet::new(
            "infnet",
            InferenceArch::Cnn { widths: vec![1, 3], layers: 1 },
            50,
            8,
            8,
            l,
        );
        let mut params = Params::new();
        net.init(&mut params, &mut rng::stream(l as u64, "init"));
        let mut rng = rng::stream(l as u64, "bench");
        let tokens: Vec<usize> = (0..20).map(|_| rng.gen_range(0..50)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(l), &l, |b, _| {
            b.iter(|| black_box(net.forward_f64(&params, &tokens).unwrap()))
        });
    }
    group.finish();
}

fn bench_gd_step(c: &mut Criterion) {
    use spen_core::energy::{EnergyModel, StructuredTerm};
    use spen_core::infer::gd_infer;
    let energy = EnergyModel::new("energy", 8, 30, 12, 16, StructuredTerm::LinearChain).unwrap();
    let mut params = Params::new();
    energy.init(&mut params, &mut rng::stream(0, "init"));
    let mut rng = rng::stream(0, "bench");
    let tokens: Vec<usize> = (0..20).map(|_| rng.gen_range(0..30)).collect();
    c.bench_function("gd-infer-10-steps", |b| {
        b.iter(|| black_box(gd_infer(&energy, &params, &tokens, 10, 10.0, None).unwrap()))
    });
}

criterion_group!(benches, bench_viterbi, bench_infnet_forward, bench_gd_step);
criterion_main!(benches);
