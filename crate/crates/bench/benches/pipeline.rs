use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use fids_bench::{blobs, parts, small_round_config};
use fids_core::federation::{decode_frame, deserialize_model, encode_frame, serialize_model, simulate, TransportKind};
use fids_core::gbdt::{fit, grid_search};
use fids_core::metrics::{confusion, MetricSummary};
use fids_core::preprocess::{fit_isolation_forest, remove_outliers, smote_resample};
use fids_core::{GbdtParams, GridSpec, ModelEnvelope, SmoteConfig};

fn gbdt(c: &mut Criterion) {
    let mut g = c.benchmark_group("gbdt");
    g.sample_size(10);
    for n in [200, 800] {
        let data = blobs(5, n, 1);
        g.throughput(Throughput::Elements(data.n_rows() as u64));
        g.bench_with_input(BenchmarkId::new("fit_depth4_50it", data.n_rows()), &data, |b, d| {
            let params = GbdtParams { depth: 4, iterations: 50, ..GbdtParams::default() };
            b.iter(|| fit(black_box(d), &params).unwrap())
        });
    }
    let data = blobs(5, 400, 2);
    let model = fit(&data, &GbdtParams::default()).unwrap();
    g.throughput(Throughput::Elements(data.n_rows() as u64));
    g.bench_function("predict_2000_rows", |b| {
        b.iter(|| data.rows().map(|x| model.predict(black_box(x)).unwrap()).sum::<usize>())
    });
    let grid = GridSpec { depths: vec![2, 3], iterations: vec![10, 20], learning_rates: vec![0.5, 1.0] };
    g.bench_function("grid_search_8_points", |b| b.iter(|| grid_search(black_box(&data), &grid, 0.25, 3).unwrap()));
    g.finish();
}

fn preprocess(c: &mut Criterion) {
    let mut g = c.benchmark_group("preprocess");
    g.sample_size(10);
    let data = blobs(3, 500, 4);
    let targets: BTreeMap<usize, usize> = [(0, 2000), (1, 1000)].into();
    let cfg = SmoteConfig::new(targets, 5, 4).unwrap();
    g.bench_function("smote_to_2000", |b| b.iter(|| smote_resample(black_box(&data), &cfg).unwrap()));
    g.bench_function("isolation_forest_100x256", |b| {
        b.iter(|| fit_isolation_forest(black_box(&data), 100, 256, 5).unwrap())
    });
    g.bench_function("remove_outliers_5pct", |b| b.iter(|| remove_outliers(black_box(&data), 0.05, 100, 256, 6).unwrap()));
    g.finish();
}

fn wire_and_metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("wire");
    let data = blobs(7, 100, 7);
    let model = fit(&data, &GbdtParams { depth: 4, iterations: 50, ..GbdtParams::default() }).unwrap();
    let bytes = serialize_model(&model);
    g.throughput(Throughput::Bytes(bytes.len() as u64));
    g.bench_function("serialize_model", |b| b.iter(|| serialize_model(black_box(&model))));
    g.bench_function("deserialize_model", |b| b.iter(|| deserialize_model(black_box(&bytes)).unwrap()));
    let frame = encode_frame(&ModelEnvelope::model_update(1, 1, &model));
    g.bench_function("decode_frame", |b| b.iter(|| decode_frame(black_box(&frame)).unwrap()));
    g.finish();

    let truth: Vec<usize> = (0..100_000).map(|i| i % 7).collect();
    let pred: Vec<usize> = (0..100_000).map(|i| (i * 31 / 29) % 7).collect();
    c.bench_function("metrics/confusion_and_summary_100k", |b| {
        b.iter(|| MetricSummary::from_matrix(&confusion(black_box(&truth), &pred, 7).unwrap()).unwrap())
    });
}

fn federation(c: &mut Criterion) {
    let mut g = c.benchmark_group("federation");
    g.sample_size(10);
    let p = parts(3, 150, 8);
    let cfg = small_round_config(2);
    g.bench_function("two_rounds_in_process", |b| b.iter(|| simulate(&p, &cfg, TransportKind::InProcess).unwrap()));
    g.bench_function("two_rounds_tcp", |b| b.iter(|| simulate(&p, &cfg, TransportKind::Tcp { port: 0 }).unwrap()));
    g.finish();
}

criterion_group!(benches, gbdt, preprocess, wire_and_metrics, federation);
criterion_main!(benches);
