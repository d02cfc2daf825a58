//! Parallel kernels on the global rayon pool against the same kernels
//! inside a single-thread pool.

use barnmap::filters::dedup_overlaps;
use barnmap::forest::{fit_forest, grid_search_cv, spatial_blocks, Dataset, HyperGrid, HyperParams, MaxFeatures, SelectionMetric};
use barnmap::geometry::{Point, Ring};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(n: usize) -> (Dataset, Vec<Point>) {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut locs = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let mu = if c == 1 { 1.5 } else { -1.5 };
        rows.push((0..6).map(|k| if k == 0 { mu } else { 0.0 } + r.gen_range(-2.0..2.0)).collect());
        labels.push(c);
        locs.push(Point::new(r.gen_range(0.0..100_000.0), r.gen_range(0.0..100_000.0)));
    }
    let cols = (0..6).map(|k| format!("f{k}")).collect();
    let d = Dataset::classification(cols, &rows, labels, vec!["a".into(), "b".into()]).unwrap();
    (d.with_locations(locs.clone()).unwrap(), locs)
}

fn footprints(n: usize) -> Vec<Ring> {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    (0..n)
        .map(|_| {
            let c = Point::new(r.gen_range(0.0..20_000.0), r.gen_range(0.0..20_000.0));
            Ring::oriented_rectangle(c, r.gen_range(20.0..120.0), r.gen_range(10.0..30.0), r.gen_range(0.0..std::f64::consts::PI)).unwrap()
        })
        .collect()
}

fn kernels(c: &mut Criterion) {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (d, locs) = blobs(2000);
    let folds = spatial_blocks(&locs, 25_000.0, 5, 3).unwrap();
    let params = HyperParams::default();
    let grid = HyperGrid {
        n_trees: vec![50],
        max_depth: vec![None, Some(10)],
        min_split: vec![2],
        min_leaf: vec![1],
        max_features: vec![MaxFeatures::Sqrt],
    };
    let rings = footprints(20_000);

    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for (mode, pool) in [("parallel", None), ("sequential", Some(&single))] {
        let on = |f: &mut (dyn FnMut() + Send)| match pool {
            Some(p) => p.install(f),
            None => f(),
        };
        g.bench_function(BenchmarkId::new("fit_forest_100", mode), |b| {
            b.iter(|| on(&mut || drop(fit_forest(&d, &params, 7).unwrap())))
        });
        g.bench_function(BenchmarkId::new("grid_search_cv", mode), |b| {
            b.iter(|| on(&mut || drop(grid_search_cv(&d, &folds, &grid, SelectionMetric::F1, 7).unwrap())))
        });
        g.bench_function(BenchmarkId::new("dedup_overlaps", mode), |b| {
            b.iter(|| on(&mut || drop(dedup_overlaps(&rings).unwrap())))
        });
    }
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
