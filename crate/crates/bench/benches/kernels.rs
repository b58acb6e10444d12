use std::hint::black_box;

use blflab_core::activations::{blf, blf_critical_points};
use blflab_core::attacks::{pgd, AttackConfig};
use blflab_core::data::synth_blobs;
use blflab_core::diagnostics::loss_surface;
use blflab_core::losses::LossSpec;
use blflab_core::nn::Model;
use criterion::{criterion_group, criterion_main, Criterion};

fn activations(c: &mut Criterion) {
    let zs: Vec<f64> = (0..1024).map(|i| (i as f64 - 512.0) / 64.0).collect();
    c.bench_function("blf_1024", |b| b.iter(|| zs.iter().map(|&z| blf(black_box(z))).sum::<f64>()));
    c.bench_function("blf_critical_points", |b| b.iter(blf_critical_points));
}

fn cnn(c: &mut Criterion) {
    let ds = synth_blobs(10, 4, 784, 0.15, 0).unwrap().reshape_samples(&[1, 28, 28]).unwrap();
    let model = Model::small_cnn(vec![1, 28, 28], [10, 20], 5, 50, 10, 0.5, 0).unwrap();
    c.bench_function("cnn_forward_40", |b| b.iter(|| model.forward(black_box(&ds.images)).unwrap()));
    c.bench_function("cnn_backward_40", |b| {
        b.iter(|| model.backward(black_box(&ds.images), &ds.labels, &LossSpec::CrossEntropy).unwrap())
    });
}

fn attacks(c: &mut Criterion) {
    let ds = synth_blobs(10, 10, 256, 0.5, 0).unwrap();
    let model = Model::mlp(vec![256], &[64], 10, 0).unwrap();
    let cfg = AttackConfig::pgd(0.1, 0.01, 10);
    c.bench_function("pgd_mlp_100x10", |b| b.iter(|| pgd(&model, black_box(&ds.images), &ds.labels, &cfg).unwrap()));
}

fn surface(c: &mut Criterion) {
    let ds = synth_blobs(10, 1, 256, 0.5, 0).unwrap();
    let model = Model::mlp(vec![256], &[64], 10, 0).unwrap();
    c.bench_function("loss_surface_65x65", |b| b.iter(|| loss_surface(&model, &ds, 0, [1, 2]).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = activations, cnn, attacks, surface
}
criterion_main!(benches);
