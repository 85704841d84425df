//! From cluster labels to ranked business-model profiles and their
//! characterization by raw portfolio ratios.

mod render;
mod taxonomy;

use std::collections::BTreeSet;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::component::{Component, N_COMPONENTS};
use crate::error::{Error, Result};
use crate::interpret::ContributionVector;
use crate::panel::{PanelDataset, SizeLabel, Stratification};
use crate::stats::{mann_whitney_with, StarThresholds, Stars, TestMethod};

pub use render::{render_report, write_bundle, BUNDLE_FILES};
pub use taxonomy::{match_taxonomy, Taxonomy, TaxonomyMatch, DEFAULT_TAXONOMY_THRESHOLD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmProfile {
    pub size: SizeLabel,
    /// Label assigned by the clustering.
    pub cluster_id: usize,
    /// Rank by total contribution, 1 = best; 0 until [`order_bms`] runs.
    pub lambda: usize,
    /// Rows of the size group's contribution matrix.
    pub members: Vec<usize>,
    pub mean_contributions: Vec<f64>,
    pub total_contribution: f64,
    pub obs_count: usize,
}

/// One profile per cluster label in `0..k`, in label order.
pub fn profile_clusters(
    contribs: &[ContributionVector],
    labels: &[usize],
    k: usize,
    size: SizeLabel,
) -> Result<Vec<BmProfile>> {
    if contribs.len() != labels.len() {
        return Err(Error::LabelMismatch(format!("{} labels for {} contribution rows", labels.len(), contribs.len())));
    }
    let dim = contribs.first().map_or(0, |c| c.contributions.len());
    let mut members = vec![Vec::new(); k];
    for (row, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::LabelMismatch(format!("label {l} outside 0..{k}")));
        }
        members[l].push(row);
    }
    members
        .into_iter()
        .enumerate()
        .map(|(cluster_id, members)| {
            if members.is_empty() {
                return Err(Error::DegenerateClusters { k });
            }
            let mut sums = vec![0.0; dim];
            for &row in &members {
                let c = &contribs[row].contributions;
                if c.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: c.len() });
                }
                sums.iter_mut().zip(c).for_each(|(s, v)| *s += v);
            }
            let n = members.len() as f64;
            let mean_contributions: Vec<f64> = sums.into_iter().map(|s| s / n).collect();
            Ok(BmProfile {
                size,
                cluster_id,
                lambda: 0,
                obs_count: members.len(),
                total_contribution: mean_contributions.iter().sum(),
                mean_contributions,
                members,
            })
        })
        .collect()
}

/// Sorts best to worst and assigns λ = 1..n.
///
/// Ties in total contribution go to the larger BM, then the lower cluster id.
pub fn order_bms(mut profiles: Vec<BmProfile>) -> Vec<BmProfile> {
    profiles.sort_by(|a, b| {
        b.total_contribution
            .total_cmp(&a.total_contribution)
            .then(b.obs_count.cmp(&a.obs_count))
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    for (i, p) in profiles.iter_mut().enumerate() {
        p.lambda = i + 1;
    }
    profiles
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationConfig {
    pub stars: StarThresholds,
    pub test: TestMethod,
    pub taxonomy_threshold: usize,
}

impl Default for CharacterizationConfig {
    fn default() -> Self {
        CharacterizationConfig {
            stars: StarThresholds::default(),
            test: TestMethod::Auto,
            taxonomy_threshold: DEFAULT_TAXONOMY_THRESHOLD,
        }
    }
}

/// Component comparison of one population against its complement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub component: Component,
    pub mean_in: f64,
    pub mean_out: f64,
    /// `None` for cells built from published star levels.
    pub p_value: Option<f64>,
    pub stars: Stars,
    pub characterizing: bool,
}

impl Cell {
    pub fn from_samples(
        component: Component,
        inside: &[f64],
        outside: &[f64],
        cfg: &CharacterizationConfig,
    ) -> Result<Cell> {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mean_in, mean_out) = (mean(inside), mean(outside));
        let p = mann_whitney_with(inside, outside, cfg.test)?.p_value;
        let stars = cfg.stars.stars(p);
        Ok(Cell {
            component,
            mean_in,
            mean_out,
            p_value: Some(p),
            stars,
            characterizing: mean_in > mean_out && p <= cfg.stars.one,
        })
    }

    /// Applies the rule to published means and significance levels.
    pub fn from_published(component: Component, mean_in: f64, mean_out: f64, stars: Stars) -> Cell {
        Cell {
            component,
            mean_in,
            mean_out,
            p_value: None,
            stars,
            characterizing: mean_in > mean_out && stars.is_significant(),
        }
    }
}

pub fn characterizing_set(cells: &[Cell]) -> BTreeSet<Component> {
    cells.iter().filter(|c| c.characterizing).map(|c| c.component).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmCharacterization {
    pub size: SizeLabel,
    pub lambda: usize,
    pub cluster_id: usize,
    pub obs_count: usize,
    pub complement_count: usize,
    pub cells: Vec<Cell>,
    pub taxonomy: TaxonomyMatch,
}

impl BmCharacterization {
    pub fn characterizing(&self) -> BTreeSet<Component> {
        characterizing_set(&self.cells)
    }
}

fn component_cells(
    raw: &[[f64; N_COMPONENTS]],
    inside: &[usize],
    outside: &[usize],
    cfg: &CharacterizationConfig,
) -> Result<Vec<Cell>> {
    Component::ALL
        .iter()
        .map(|&c| {
            let j = c.index();
            let a: Vec<f64> = inside.iter().map(|&i| raw[i][j]).collect();
            let b: Vec<f64> = outside.iter().map(|&i| raw[i][j]).collect();
            Cell::from_samples(c, &a, &b, cfg)
        })
        .collect()
}

/// Compares each BM with the rest of its size group on raw portfolio ratios.
///
/// `raw` holds the group's ratio rows in the same order as the contribution
/// matrix the profiles were built from. With fewer than two profiles there is
/// no complement and nothing is returned.
pub fn characterize_bm(
    raw: &[[f64; N_COMPONENTS]],
    profiles: &[BmProfile],
    cfg: &CharacterizationConfig,
) -> Result<Vec<BmCharacterization>> {
    if profiles.len() < 2 {
        warn!("single business model in group; characterization skipped");
        return Ok(Vec::new());
    }
    let mut owner = vec![usize::MAX; raw.len()];
    for (p_idx, p) in profiles.iter().enumerate() {
        for &m in &p.members {
            if m >= raw.len() {
                return Err(Error::LabelMismatch(format!("member row {m} outside {} raw rows", raw.len())));
            }
            owner[m] = p_idx;
        }
    }
    profiles
        .iter()
        .enumerate()
        .map(|(p_idx, p)| {
            let outside: Vec<usize> = (0..raw.len()).filter(|&i| owner[i] != p_idx).collect();
            let cells = component_cells(raw, &p.members, &outside, cfg)?;
            let taxonomy = match_taxonomy(&characterizing_set(&cells), cfg.taxonomy_threshold);
            Ok(BmCharacterization {
                size: p.size,
                lambda: p.lambda,
                cluster_id: p.cluster_id,
                obs_count: p.obs_count,
                complement_count: outside.len(),
                cells,
                taxonomy,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeCharacterization {
    pub size: SizeLabel,
    pub obs_count: usize,
    pub complement_count: usize,
    pub cells: Vec<Cell>,
}

/// Each populated size group against all banks of the other sizes.
pub fn compare_sizes(
    data: &PanelDataset,
    groups: &Stratification,
    cfg: &CharacterizationConfig,
) -> Result<Vec<SizeCharacterization>> {
    let populated: Vec<_> = groups.non_empty().collect();
    if populated.len() < 2 {
        return Err(Error::TooFewSizeGroups(populated.len()));
    }
    let raw: Vec<[f64; N_COMPONENTS]> = data.observations.iter().map(|o| o.components).collect();
    populated
        .iter()
        .map(|g| {
            let outside: Vec<usize> =
                populated.iter().filter(|o| o.label != g.label).flat_map(|o| o.members.iter().copied()).collect();
            Ok(SizeCharacterization {
                size: g.label,
                obs_count: g.members.len(),
                complement_count: outside.len(),
                cells: component_cells(&raw, &g.members, &outside, cfg)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeAnalysis {
    pub size: SizeLabel,
    pub obs_count: usize,
    /// Set when the group was not analysed.
    pub skipped: Option<String>,
    pub k: Option<usize>,
    /// Ordered by λ.
    pub profiles: Vec<BmProfile>,
    pub characterization: Vec<BmCharacterization>,
}

impl SizeAnalysis {
    pub fn skipped(size: SizeLabel, obs_count: usize, reason: impl Into<String>) -> Self {
        SizeAnalysis {
            size,
            obs_count,
            skipped: Some(reason.into()),
            k: None,
            profiles: Vec::new(),
            characterization: Vec::new(),
        }
    }
}

/// Profile, order and characterize one size group.
pub fn analyze_group(
    size: SizeLabel,
    contribs: &[ContributionVector],
    labels: &[usize],
    k: usize,
    raw: &[[f64; N_COMPONENTS]],
    cfg: &CharacterizationConfig,
) -> Result<SizeAnalysis> {
    if raw.len() != contribs.len() {
        return Err(Error::LabelMismatch(format!("{} raw rows for {} contribution rows", raw.len(), contribs.len())));
    }
    let profiles = order_bms(profile_clusters(contribs, labels, k, size)?);
    let characterization = characterize_bm(raw, &profiles, cfg)?;
    Ok(SizeAnalysis { size, obs_count: contribs.len(), skipped: None, k: Some(k), profiles, characterization })
}

/// Everything the report renders, also persisted as JSON between stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub feature_names: Vec<String>,
    pub size_comparison: Vec<SizeCharacterization>,
    /// Set when the size comparison could not run.
    pub size_comparison_skipped: Option<String>,
    /// Always Large, Medium, Small.
    pub groups: Vec<SizeAnalysis>,
}

impl AnalysisBundle {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<AnalysisBundle> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
