use bankbm_core::analysis::{analyze_group, compare_sizes, write_bundle, BUNDLE_FILES};
use bankbm_core::cluster::cluster_with_majority_rule;
use bankbm_core::forest::{cv_rmse, fit_forest, tune_hyperparameters};
use bankbm_core::interpret::contribution_matrix;
use bankbm_core::panel::{apply_filters, stratify_by_size, FilterConfig, SizeConfig};
use bankbm_core::synth::generate_panel;
use bankbm_core::{
    AnalysisBundle, CharacterizationConfig, Component, FittedForest, ForestParams, KMeansConfig, PointSet, SizeLabel,
    SynthSpec, TrainingData, ValidityIndex,
};

fn small_panel(seed: u64) -> (bankbm_core::PanelDataset, bankbm_core::panel::Stratification) {
    let spec = SynthSpec { n_banks: 80, years: 8, ..SynthSpec::default() };
    let (panel, _) = generate_panel(&spec, seed).unwrap();
    let data = apply_filters(&panel, &FilterConfig::default()).unwrap();
    let strat = stratify_by_size(&data, &SizeConfig::default()).unwrap();
    (data, strat)
}

#[test]
fn tuning_scores_match_standalone_cross_validation() {
    let (data, strat) = small_panel(3);
    let train = TrainingData::from_observations(data.select(&strat.group(SizeLabel::Medium).members)).unwrap();
    let mut grid = Vec::new();
    for n_trees in [10, 30] {
        for mtry in [3, 9] {
            grid.push(ForestParams { n_trees, mtry, min_leaf: 5, ..ForestParams::default() });
        }
    }
    let outcome = tune_hyperparameters(&train, &grid, 3, 17).unwrap();
    assert_eq!(outcome.scores.len(), grid.len());
    for (score, params) in outcome.scores.iter().zip(&grid) {
        assert_eq!(&score.params, params);
        assert_eq!(score.cv_rmse.to_bits(), cv_rmse(&train, params, 3, 17).unwrap().to_bits());
    }
    let best = outcome.scores.iter().map(|s| s.cv_rmse).fold(f64::INFINITY, f64::min);
    let chosen = outcome.scores.iter().find(|s| s.params == outcome.best).unwrap();
    assert_eq!(chosen.cv_rmse, best);
}

#[test]
fn forest_json_round_trip_predicts_identically() {
    let (data, strat) = small_panel(4);
    let train = TrainingData::from_observations(data.select(&strat.group(SizeLabel::Small).members)).unwrap();
    let forest =
        fit_forest(&train, &Component::names(), &ForestParams { n_trees: 25, ..ForestParams::default() }, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("forest.json");
    forest.save_json(&path).unwrap();
    let back = FittedForest::load_json(&path).unwrap();
    assert_eq!(back, forest);
    let a = forest.predict_all(&train).unwrap();
    let b = back.predict_all(&train).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn library_workflow_produces_a_report_bundle() {
    let (data, strat) = small_panel(5);
    let cfg = CharacterizationConfig::default();
    let kcfg = KMeansConfig { restarts: 5, ..KMeansConfig::default() };
    let mut groups = Vec::new();
    for g in &strat.groups {
        let obs = data.select(&g.members);
        let train = TrainingData::from_observations(obs.iter().copied()).unwrap();
        let forest =
            fit_forest(&train, &Component::names(), &ForestParams { n_trees: 60, ..ForestParams::default() }, 8)
                .unwrap();
        let contribs = contribution_matrix(&forest, &train).unwrap();
        let points = PointSet::from_contributions(&contribs).unwrap();
        let (chosen, table) =
            cluster_with_majority_rule(&points, &[2, 3, 4, 5], &ValidityIndex::ALL, 8, &kcfg).unwrap();
        assert_eq!(Some(chosen.k), table.winner);
        let raw: Vec<_> = obs.iter().map(|o| o.components).collect();
        let analysis = analyze_group(g.label, &contribs, &chosen.labels, chosen.k, &raw, &cfg).unwrap();
        let lambdas: Vec<usize> = analysis.profiles.iter().map(|p| p.lambda).collect();
        assert_eq!(lambdas, (1..=chosen.k).collect::<Vec<_>>());
        assert!(analysis.profiles.windows(2).all(|w| w[0].total_contribution >= w[1].total_contribution));
        assert_eq!(analysis.profiles.iter().map(|p| p.obs_count).sum::<usize>(), g.members.len());
        groups.push(analysis);
    }
    let bundle = AnalysisBundle {
        feature_names: Component::names(),
        size_comparison: compare_sizes(&data, &strat, &cfg).unwrap(),
        size_comparison_skipped: None,
        groups,
    };
    let dir = tempfile::tempdir().unwrap();
    let written = write_bundle(&bundle, dir.path()).unwrap();
    for name in BUNDLE_FILES {
        assert!(written.iter().any(|p| p.ends_with(name)), "{name}");
    }
    bundle.save_json(&dir.path().join("analysis.json")).unwrap();
    assert_eq!(AnalysisBundle::load_json(&dir.path().join("analysis.json")).unwrap(), bundle);
    let report = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.contains("BM1-M"));
}
