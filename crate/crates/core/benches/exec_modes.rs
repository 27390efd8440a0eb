use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pcanet_core::dataio::{split, synth, SplitSpec};
use pcanet_core::eval::{Classifier, LabeledFeatures, NearestNeighbor, SplitTag};
use pcanet_core::pcanet::{extract_features, train_with_report, NetConfig};
use pcanet_core::sweep::{run_sweep, H2Mode, SweepGrid, SweepOptions};
use pcanet_core::{Exec, Overlap};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench(c: &mut Criterion) {
    let data = synth(10, 12, 32, 32, 3).unwrap();
    let spec = SplitSpec {
        train_count: 60,
        test_count: 60,
        seed: 1,
        stratified: true,
    };
    let (tr, te) = split(&data, &spec).unwrap();
    let cfg = NetConfig {
        l1: 6,
        l2: 6,
        ..NetConfig::default()
    };
    let net = train_with_report(&tr.images, &cfg, Exec::Sequential).unwrap().0;
    let train_feats = extract_features(&net, &tr.images, Exec::Sequential).unwrap();
    let test_feats = extract_features(&net, &te.images, Exec::Sequential).unwrap();
    let labeled = LabeledFeatures::new(train_feats, tr.labels.clone(), SplitTag::Train).unwrap();
    let grid = SweepGrid {
        l1: vec![2, 4],
        l2: vec![4],
        h1: vec![4, 8],
        h2: H2Mode::Diagonal,
        r: vec![Overlap::from_tenths(0).unwrap(), Overlap::from_tenths(5).unwrap()],
        seed: 1,
        train_count: 60,
        test_count: 60,
        stratified: true,
        k: 3,
        skip_second_mean_removal: false,
    };

    let mut g = c.benchmark_group("exec");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("train", name), &exec, |b, &e| {
            b.iter(|| train_with_report(&tr.images, &cfg, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("extract_features", name), &exec, |b, &e| {
            b.iter(|| extract_features(&net, &te.images, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("classify", name), &exec, |b, &e| {
            b.iter(|| NearestNeighbor.predict(&labeled, &test_feats, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("sweep", name), &exec, |b, &e| {
            let opts = SweepOptions {
                exec: e,
                ..SweepOptions::default()
            };
            b.iter(|| run_sweep(&data, &grid, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
