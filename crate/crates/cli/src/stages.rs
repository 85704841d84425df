//! Pipeline stages. Each reads its inputs from the output directory (or the
//! panel) and writes its artifacts there, so stages can run one at a time.

use std::path::{Path, PathBuf};

use bankbm_core::analysis::{analyze_group, compare_sizes, write_bundle, AnalysisBundle, SizeAnalysis};
use bankbm_core::cluster::{
    cluster_with_majority_rule, read_assignments_csv, write_assignments_csv, write_vote_table_csv, PointSet,
};
use bankbm_core::forest::{fit_forest, oob_rmse, tune_hyperparameters, FittedForest, GridScore, TrainingData};
use bankbm_core::interpret::{contribution_matrix_with, read_contributions_csv, write_contributions_csv, ObsId};
use bankbm_core::panel::{
    apply_filters, parse_panel, stratify_by_size, write_panel_csv, write_rejections_csv, PanelDataset, Rejection,
    SizeLabel, Stratification,
};
use bankbm_core::synth::{generate_panel, write_ground_truth_csv};
use bankbm_core::{derive_seed, Component, ForestParams, SynthSpec, N_COMPONENTS};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::CliError;

pub const FIT_SUMMARY: &str = "fit_summary.json";
pub const ANALYSIS: &str = "analysis.json";
pub const REJECTIONS: &str = "rejections.csv";

const SALT_TUNE: u64 = 0x10;
const SALT_FIT: u64 = 0x20;
const SALT_CLUSTER: u64 = 0x30;

pub fn forest_file(size: SizeLabel) -> String {
    format!("forest_{}.json", size.code())
}

pub fn contributions_file(size: SizeLabel) -> String {
    format!("contributions_{}.csv", size.code())
}

pub fn assignments_file(size: SizeLabel) -> String {
    format!("assignments_{}.csv", size.code())
}

pub fn votes_file(size: SizeLabel) -> String {
    format!("k_votes_{}.csv", size.code())
}

fn compute(stage: &'static str, e: impl std::fmt::Display) -> CliError {
    CliError::Compute { stage: stage.to_string(), message: e.to_string() }
}

fn compute_in(stage: &'static str, size: SizeLabel) -> impl Fn(bankbm_core::Error) -> CliError {
    move |e| CliError::Compute { stage: format!("{stage}/{}", size.code()), message: e.to_string() }
}

fn out_path(cfg: &PipelineConfig, file: &str) -> PathBuf {
    cfg.out_dir.join(file)
}

fn ensure_out_dir(cfg: &PipelineConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", cfg.out_dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T, stage: &'static str) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| compute(stage, e))?;
    std::fs::write(path, text + "\n").map_err(|e| compute(stage, format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &'static str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| compute(stage, format!("{}: {e} (run the earlier stages first)", path.display())))?;
    serde_json::from_str(&text).map_err(|e| compute(stage, format!("{}: {e}", path.display())))
}

/// The filtered, stratified panel every stage starts from.
pub struct Ingested {
    pub raw_rows: usize,
    pub data: PanelDataset,
    pub strat: Stratification,
}

impl Ingested {
    pub fn group(&self, size: SizeLabel) -> &[usize] {
        &self.strat.group(size).members
    }

    pub fn training(&self, size: SizeLabel) -> Result<TrainingData, bankbm_core::Error> {
        TrainingData::from_observations(self.data.select(self.group(size)))
    }

    pub fn rejections(&self) -> &[Rejection] {
        &self.data.rejection_log
    }
}

/// Parse, filter and stratify. Problems with the input are validation errors.
pub fn ingest(cfg: &PipelineConfig) -> Result<Ingested, CliError> {
    let path = cfg.input()?;
    let parsed = parse_panel(path, &cfg.columns, cfg.csv_format()?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let raw_rows = parsed.len() + parsed.rejection_log.len();
    let data =
        apply_filters(&parsed, &cfg.filter()?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let strat = stratify_by_size(&data, &cfg.size_config()?).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(Ingested { raw_rows, data, strat })
}

/// Checks the configuration and input; writes the rejection log.
pub fn validate(cfg: &PipelineConfig) -> Result<Ingested, CliError> {
    cfg.validate()?;
    ensure_out_dir(cfg)?;
    let ing = ingest(cfg)?;
    write_rejections_csv(ing.rejections(), &out_path(cfg, REJECTIONS)).map_err(|e| compute("validate", e))?;
    info!(
        "{} rows read, {} kept, {} rejected; sizes L={} M={} S={}",
        ing.raw_rows,
        ing.data.len(),
        ing.rejections().len(),
        ing.group(SizeLabel::Large).len(),
        ing.group(SizeLabel::Medium).len(),
        ing.group(SizeLabel::Small).len()
    );
    Ok(ing)
}

/// Writes a synthetic panel and its planted labels.
pub fn simulate(cfg: &PipelineConfig) -> Result<(PathBuf, PathBuf), CliError> {
    let seed = cfg.seed()?;
    ensure_out_dir(cfg)?;
    let spec = SynthSpec { n_banks: cfg.synth_banks, years: cfg.synth_years, ..SynthSpec::default() };
    let (panel, truth) = generate_panel(&spec, seed).map_err(|e| CliError::Validation(e.to_string()))?;
    let panel_path = out_path(cfg, "panel.csv");
    let truth_path = out_path(cfg, "ground_truth.csv");
    write_panel_csv(&panel, &panel_path).map_err(|e| compute("simulate", e))?;
    write_ground_truth_csv(&truth_path, &truth).map_err(|e| compute("simulate", e))?;
    Ok((panel_path, truth_path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub size: SizeLabel,
    pub obs_count: usize,
    /// Set when no forest was fitted.
    pub skipped: Option<String>,
    pub params: Option<ForestParams>,
    pub cv_scores: Vec<GridScore>,
    pub oob_rmse: Option<f64>,
    pub training_fingerprint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub input_digest: String,
    pub groups: Vec<GroupFit>,
}

impl FitSummary {
    pub fn fitted(&self) -> impl Iterator<Item = &GroupFit> {
        self.groups.iter().filter(|g| g.skipped.is_none())
    }
}

/// Tunes (unless skipped) and fits one forest per selected, populated size group.
pub fn fit(cfg: &PipelineConfig, ing: &Ingested) -> Result<FitSummary, CliError> {
    let seed = cfg.seed()?;
    let selected = cfg.selected_sizes()?;
    let names = Component::names();
    let mut groups = Vec::new();
    for (z, size) in SizeLabel::ALL.into_iter().enumerate() {
        let n = ing.group(size).len();
        let skip = |reason: String| GroupFit {
            size,
            obs_count: n,
            skipped: Some(reason),
            params: None,
            cv_scores: Vec::new(),
            oob_rmse: None,
            training_fingerprint: None,
        };
        if !selected.contains(&size) {
            groups.push(skip("not selected".into()));
            continue;
        }
        if n == 0 {
            warn!("{size} group is empty; skipped");
            groups.push(skip("empty group".into()));
            continue;
        }
        if n < cfg.min_group_size() {
            warn!("{size} group has {n} observations; skipped");
            groups.push(skip(format!("{n} observations, at least {} needed", cfg.min_group_size())));
            continue;
        }
        let err = compute_in("fit", size);
        let data = ing.training(size).map_err(&err)?;
        let (params, cv_scores) = if cfg.skip_tuning {
            (cfg.base_params(), Vec::new())
        } else {
            let out = tune_hyperparameters(&data, &cfg.grid(), cfg.folds, derive_seed(seed, SALT_TUNE + z as u64))
                .map_err(&err)?;
            (out.best, out.scores)
        };
        let forest = fit_forest(&data, &names, &params, derive_seed(seed, SALT_FIT + z as u64)).map_err(&err)?;
        let oob = match oob_rmse(&forest, &data) {
            Ok(v) => Some(v),
            Err(e) => {
                warn!("{size}: no out-of-bag estimate: {e}");
                None
            }
        };
        forest.save_json(&out_path(cfg, &forest_file(size))).map_err(&err)?;
        info!("{size}: fitted {} trees on {n} observations", forest.trees.len());
        groups.push(GroupFit {
            size,
            obs_count: n,
            skipped: None,
            params: Some(params),
            cv_scores,
            oob_rmse: oob,
            training_fingerprint: Some(forest.training_fingerprint.clone()),
        });
    }
    let summary = FitSummary { input_digest: ing.data.provenance.clone(), groups };
    write_json(&out_path(cfg, FIT_SUMMARY), &summary, "fit")?;
    Ok(summary)
}

fn load_summary(cfg: &PipelineConfig, ing: &Ingested, stage: &'static str) -> Result<FitSummary, CliError> {
    let summary: FitSummary = read_json(&out_path(cfg, FIT_SUMMARY), stage)?;
    if summary.input_digest != ing.data.provenance {
        return Err(compute(stage, "input file changed since the fit stage"));
    }
    Ok(summary)
}

/// Writes each fitted group's contribution matrix.
pub fn decompose(cfg: &PipelineConfig, ing: &Ingested) -> Result<(), CliError> {
    let summary = load_summary(cfg, ing, "decompose")?;
    for g in summary.fitted() {
        let err = compute_in("decompose", g.size);
        let forest = FittedForest::load_json(&out_path(cfg, &forest_file(g.size))).map_err(&err)?;
        let data = ing.training(g.size).map_err(&err)?;
        let rows = contribution_matrix_with(&forest, &data, cfg.decomposition).map_err(&err)?;
        let members = ing.group(g.size);
        let rows: Vec<_> = rows
            .into_iter()
            .zip(members)
            .map(|(mut r, &obs)| {
                r.obs_index = obs;
                r
            })
            .collect();
        let ids: Vec<ObsId> = members.iter().map(|&i| ObsId::from(&ing.data.observations[i])).collect();
        write_contributions_csv(&out_path(cfg, &contributions_file(g.size)), &forest.feature_names, &ids, &rows)
            .map_err(&err)?;
    }
    Ok(())
}

/// Scans k, votes, and writes assignments and vote tables.
pub fn cluster(cfg: &PipelineConfig, ing: &Ingested) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    let summary = load_summary(cfg, ing, "cluster")?;
    let ks = cfg.ks()?;
    let kcfg = cfg.kmeans()?;
    for g in summary.fitted() {
        let err = compute_in("cluster", g.size);
        let table = read_contributions_csv(&out_path(cfg, &contributions_file(g.size))).map_err(&err)?;
        let mut points = PointSet::from_contributions(&table.rows).map_err(&err)?;
        if cfg.standardize {
            points = points.standardized();
        }
        let z = SizeLabel::ALL.iter().position(|s| *s == g.size).expect("size label") as u64;
        let (assignment, votes) =
            cluster_with_majority_rule(&points, &ks, &cfg.indices, derive_seed(seed, SALT_CLUSTER + z), &kcfg)
                .map_err(&err)?;
        info!("{}: majority rule chose k = {} (votes {:?})", g.size, assignment.k, votes.votes);
        let obs: Vec<usize> = table.rows.iter().map(|r| r.obs_index).collect();
        write_assignments_csv(&out_path(cfg, &assignments_file(g.size)), &obs, &assignment).map_err(&err)?;
        write_vote_table_csv(&out_path(cfg, &votes_file(g.size)), &votes).map_err(&err)?;
    }
    Ok(())
}

/// Profiles, orders and characterizes business models; compares sizes.
pub fn characterize(cfg: &PipelineConfig, ing: &Ingested) -> Result<AnalysisBundle, CliError> {
    let summary = load_summary(cfg, ing, "characterize")?;
    let ccfg = cfg.characterization()?;
    let mut groups = Vec::new();
    for g in &summary.groups {
        if let Some(reason) = &g.skipped {
            groups.push(SizeAnalysis::skipped(g.size, g.obs_count, reason.clone()));
            continue;
        }
        let err = compute_in("characterize", g.size);
        let table = read_contributions_csv(&out_path(cfg, &contributions_file(g.size))).map_err(&err)?;
        let assigned = read_assignments_csv(&out_path(cfg, &assignments_file(g.size))).map_err(&err)?;
        let aligned = assigned.len() == table.rows.len()
            && assigned.iter().zip(&table.rows).all(|((obs, _), r)| *obs == r.obs_index);
        if !aligned {
            return Err(CliError::Compute {
                stage: format!("characterize/{}", g.size.code()),
                message: "assignments do not match the contribution matrix".into(),
            });
        }
        let labels: Vec<usize> = assigned.iter().map(|&(_, l)| l).collect();
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let raw: Vec<[f64; N_COMPONENTS]> =
            table.rows.iter().map(|r| ing.data.observations[r.obs_index].components).collect();
        groups.push(analyze_group(g.size, &table.rows, &labels, k, &raw, &ccfg).map_err(&err)?);
    }
    let (size_comparison, size_comparison_skipped) = match compare_sizes(&ing.data, &ing.strat, &ccfg) {
        Ok(v) => (v, None),
        Err(e) => {
            warn!("size comparison skipped: {e}");
            (Vec::new(), Some(e.to_string()))
        }
    };
    let bundle = AnalysisBundle { feature_names: Component::names(), size_comparison, size_comparison_skipped, groups };
    bundle.save_json(&out_path(cfg, ANALYSIS)).map_err(|e| compute("characterize", e))?;
    Ok(bundle)
}

/// Renders the report bundle from `analysis.json`.
pub fn report(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    let bundle = AnalysisBundle::load_json(&out_path(cfg, ANALYSIS))
        .map_err(|e| compute("report", format!("{e} (run characterize first)")))?;
    write_bundle(&bundle, &cfg.out_dir).map_err(|e| compute("report", e))
}
