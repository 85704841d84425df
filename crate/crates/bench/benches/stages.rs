use std::hint::black_box;

use bankbm_core::cluster::{compute_validity_indices, kmeans_fit, scan_k};
use bankbm_core::forest::fit_forest;
use bankbm_core::interpret::contribution_matrix;
use bankbm_core::panel::{stratify_by_size, SizeConfig, SizeLabel};
use bankbm_core::stats::{mann_whitney_with, TestMethod};
use bankbm_core::synth::generate_panel;
use bankbm_core::{Component, ForestParams, KMeansConfig, PointSet, SynthSpec, TrainingData, ValidityIndex};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn medium_group(n_banks: usize) -> TrainingData {
    let spec = SynthSpec { n_banks, years: 10, ..SynthSpec::default() };
    let (panel, _) = generate_panel(&spec, 1).unwrap();
    let strat = stratify_by_size(&panel, &SizeConfig::default()).unwrap();
    TrainingData::from_observations(panel.select(&strat.group(SizeLabel::Medium).members)).unwrap()
}

fn forest(c: &mut Criterion) {
    let data = medium_group(200);
    let names = Component::names();
    let mut g = c.benchmark_group("fit_forest");
    g.sample_size(10);
    for n_trees in [50, 200] {
        let params = ForestParams { n_trees, ..ForestParams::default() };
        g.bench_with_input(BenchmarkId::from_parameter(n_trees), &params, |b, p| {
            b.iter(|| fit_forest(black_box(&data), &names, p, 3).unwrap())
        });
    }
    g.finish();

    let fitted = fit_forest(&data, &names, &ForestParams { n_trees: 200, ..ForestParams::default() }, 3).unwrap();
    c.bench_function("decompose/200_trees", |b| b.iter(|| contribution_matrix(black_box(&fitted), &data).unwrap()));
}

fn clustering(c: &mut Criterion) {
    let data = medium_group(200);
    let fitted =
        fit_forest(&data, &Component::names(), &ForestParams { n_trees: 100, ..ForestParams::default() }, 3).unwrap();
    let points = PointSet::from_contributions(&contribution_matrix(&fitted, &data).unwrap()).unwrap();
    let cfg = KMeansConfig::default();
    let mut g = c.benchmark_group("kmeans");
    g.sample_size(10);
    for k in [3, 8] {
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| kmeans_fit(black_box(&points), k, 5, &cfg).unwrap())
        });
    }
    g.finish();

    let (fits, _) = scan_k(&points, &(2..=8).collect::<Vec<_>>(), 5, &cfg);
    let mut g = c.benchmark_group("validity");
    g.sample_size(10);
    g.bench_function("all_indices_k2_8", |b| {
        b.iter(|| compute_validity_indices(black_box(&points), &fits, &ValidityIndex::ALL).unwrap())
    });
    g.finish();
}

fn mann_whitney(c: &mut Criterion) {
    let a: Vec<f64> = (0..10).map(|i| i as f64 * 1.7).collect();
    let b: Vec<f64> = (0..10).map(|i| i as f64 * 1.3 + 0.5).collect();
    c.bench_function("mann_whitney/exact_10_10", |bch| {
        bch.iter(|| mann_whitney_with(black_box(&a), &b, TestMethod::Exact).unwrap())
    });
    let big_a: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64).collect();
    let big_b: Vec<f64> = (0..4000).map(|i| ((i * 104729) % 4000) as f64 / 4.0).collect();
    c.bench_function("mann_whitney/normal_1000_4000", |bch| {
        bch.iter(|| mann_whitney_with(black_box(&big_a), &big_b, TestMethod::Auto).unwrap())
    });
}

criterion_group!(benches, forest, clustering, mann_whitney);
criterion_main!(benches);
