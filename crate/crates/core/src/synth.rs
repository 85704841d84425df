//! Synthetic bank panels with planted sizes, planted business models and a
//! known linear profitability function.
//!
//! Every bank keeps its size class and business model for all years. Each
//! bank-year draws its nine ratios from the model's truncated normals and
//! earns `intercept + coefficients · ratios + noise`. Total assets are placed
//! so that the default per-year size thresholds recover the planted class
//! as long as large banks are not too numerous (fewer than about 150).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::component::{Component, N_COMPONENTS};
use crate::error::{Error, Result};
use crate::panel::{panel_csv_bytes, BankObservation, PanelDataset, SizeConfig, SizeLabel};
use crate::rng::{self, Purpose};

const COUNTRIES: [&str; 8] = ["AT", "BE", "DE", "ES", "FR", "IT", "NL", "PT"];
const LARGE_ASSETS: f64 = 1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedBm {
    pub name: String,
    /// Share of banks in every size class.
    pub weight: f64,
    pub means: [f64; N_COMPONENTS],
    pub sds: [f64; N_COMPONENTS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_banks: usize,
    pub years: usize,
    pub first_year: i32,
    /// Shares of Large, Medium and Small banks.
    pub size_mix: [f64; 3],
    pub bms: Vec<PlantedBm>,
    pub intercept: f64,
    pub coefficients: [f64; N_COMPONENTS],
    pub noise_sd: f64,
}

fn pattern(elevated: &[Component], high: f64, low: f64) -> [f64; N_COMPONENTS] {
    let mut v = [low; N_COMPONENTS];
    for c in elevated {
        v[c.index()] = high;
    }
    v
}

impl Default for SynthSpec {
    /// 400 banks over 25 years with three models, each elevating three
    /// components: loans, deposits and equity; the interbank pair and
    /// short-term funding; derivatives, securities and long-term funding.
    fn default() -> Self {
        use Component::*;
        let groups = [
            [CustomerLoans, CustomerDeposits, Equity],
            [InterbankLending, InterbankBorrowing, ShortTermFunding],
            [DerivativeExposures, Securities, LongTermFunding],
        ];
        let weights = [0.4, 0.35, 0.25];
        let bms = groups
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (g, weight))| PlantedBm {
                name: format!("planted-{}", i + 1),
                weight,
                means: pattern(g, 0.45, 0.2),
                sds: pattern(g, 0.04, 0.03),
            })
            .collect();
        let mut coefficients = [0.0; N_COMPONENTS];
        for (g, beta) in groups.iter().zip([0.04, 0.01, -0.03]) {
            for c in g {
                coefficients[c.index()] = beta;
            }
        }
        SynthSpec {
            n_banks: 400,
            years: 25,
            first_year: 2000,
            size_mix: [0.1, 0.55, 0.35],
            bms,
            intercept: 0.005,
            coefficients,
            noise_sd: 0.001,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.n_banks == 0 || self.years == 0 {
            return bad(format!("need banks and years, got {} x {}", self.n_banks, self.years));
        }
        if self.bms.is_empty() {
            return bad("no planted business models".into());
        }
        let shares_ok =
            |v: &[f64]| v.iter().all(|w| w.is_finite() && *w >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !shares_ok(&self.bms.iter().map(|b| b.weight).collect::<Vec<_>>()) {
            return bad("business model weights must be non-negative and sum to 1".into());
        }
        if !shares_ok(&self.size_mix) {
            return bad("size mix must be non-negative and sum to 1".into());
        }
        for b in &self.bms {
            if b.means.iter().any(|m| !(0.0..=1.0).contains(m)) || b.sds.iter().any(|s| !s.is_finite() || *s < 0.0) {
                return bad(format!("{}: means must lie in [0,1] and sds be non-negative", b.name));
            }
        }
        if !self.noise_sd.is_finite()
            || self.noise_sd < 0.0
            || !self.intercept.is_finite()
            || self.coefficients.iter().any(|c| !c.is_finite())
        {
            return bad("response parameters must be finite with non-negative noise".into());
        }
        Ok(())
    }

    /// Expected profitability of a model's banks (truncation ignored).
    pub fn planted_profitability(&self, bm: usize) -> f64 {
        self.intercept + self.coefficients.iter().zip(&self.bms[bm].means).map(|(b, m)| b * m).sum::<f64>()
    }

    /// Components whose mean in `bm` exceeds the bank-weighted mean over all models.
    pub fn signal_components(&self, bm: usize) -> Vec<Component> {
        Component::ALL
            .into_iter()
            .filter(|c| {
                let j = c.index();
                let overall: f64 = self.bms.iter().map(|b| b.weight * b.means[j]).sum();
                self.bms[bm].means[j] > overall + 1e-12
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub obs_index: usize,
    pub bank_id: String,
    pub year: i32,
    pub bm: usize,
    pub size: SizeLabel,
}

/// Counts per category proportional to `shares`, by largest remainder.
fn allocate(n: usize, shares: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, sd).expect("validated sd");
    for _ in 0..1000 {
        let v = normal.sample(rng);
        if (0.0..=1.0).contains(&v) {
            return v;
        }
    }
    mean
}

/// Generates a balanced panel and the planted labels of every observation.
///
/// Observations are ordered by year, then bank.
pub fn generate_panel(spec: &SynthSpec, seed: u64) -> Result<(PanelDataset, Vec<GroundTruth>)> {
    spec.validate()?;
    let sizes = allocate(spec.n_banks, &spec.size_mix);
    let weights: Vec<f64> = spec.bms.iter().map(|b| b.weight).collect();
    let mut plan: Vec<(SizeLabel, usize)> = Vec::with_capacity(spec.n_banks);
    for (label, &n) in SizeLabel::ALL.iter().zip(&sizes) {
        for (bm, &count) in allocate(n, &weights).iter().enumerate() {
            plan.extend(std::iter::repeat_n((*label, bm), count));
        }
    }
    plan.shuffle(&mut rng::stream(seed, Purpose::Synth, u64::MAX));

    // Reference aggregate such that medium banks sit at the geometric mean
    // of the two thresholds and small banks a decade below the lower one.
    let SizeConfig { large_frac, small_frac, .. } = SizeConfig::default();
    let medium_share = (large_frac * small_frac).sqrt();
    let small_share = 0.1 * small_frac;
    let denom = 1.0 - sizes[1] as f64 * medium_share - sizes[2] as f64 * small_share;
    let reference = if sizes[0] > 0 && denom > 0.0 { sizes[0] as f64 * LARGE_ASSETS / denom } else { LARGE_ASSETS };

    let mut banks = Vec::with_capacity(spec.n_banks);
    for (i, &(size, _)) in plan.iter().enumerate() {
        let mut r = rng::stream(seed, Purpose::Synth, i as u64);
        let base = match size {
            SizeLabel::Large => LARGE_ASSETS * r.random_range(-0.2f64..0.2).exp(),
            SizeLabel::Medium => medium_share * reference * r.random_range(-1.0f64..1.0).exp(),
            SizeLabel::Small => small_share * reference * r.random_range(-1.0f64..1.0).exp(),
        };
        banks.push((base, r));
    }

    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
    let mut observations = Vec::with_capacity(spec.n_banks * spec.years);
    let mut truth = Vec::with_capacity(spec.n_banks * spec.years);
    for t in 0..spec.years {
        let year = spec.first_year + t as i32;
        for (i, (base, r)) in banks.iter_mut().enumerate() {
            let (size, bm) = plan[i];
            let planted = &spec.bms[bm];
            let mut components = [0.0; N_COMPONENTS];
            for (j, c) in components.iter_mut().enumerate() {
                *c = truncated_normal(r, planted.means[j], planted.sds[j]);
            }
            let eps = if spec.noise_sd > 0.0 { noise.sample(r) } else { 0.0 };
            let profitability =
                spec.intercept + spec.coefficients.iter().zip(&components).map(|(b, x)| b * x).sum::<f64>() + eps;
            let total_assets = *base * r.random_range(-0.05f64..0.05).exp();
            let bank_id = format!("B{:04}", i + 1);
            truth.push(GroundTruth { obs_index: observations.len(), bank_id: bank_id.clone(), year, bm, size });
            observations.push(BankObservation {
                row: observations.len() + 1,
                bank_id,
                year,
                country: COUNTRIES[i % COUNTRIES.len()].to_string(),
                total_assets,
                components,
                profitability,
            });
        }
    }
    let provenance = hex::encode(Sha256::digest(panel_csv_bytes(&observations)?));
    Ok((PanelDataset::from_observations(observations, provenance), truth))
}

pub fn write_ground_truth_csv(path: &Path, truth: &[GroundTruth]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["obs_index", "bank_id", "year", "planted_bm", "planted_size"])?;
    for g in truth {
        w.write_record([
            g.obs_index.to_string(),
            g.bank_id.clone(),
            g.year.to_string(),
            (g.bm + 1).to_string(),
            g.size.code().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{apply_filters, parse_panel, stratify_by_size, ColumnSchema, CsvFormat, FilterConfig};

    fn small_spec() -> SynthSpec {
        SynthSpec { n_banks: 120, years: 5, ..SynthSpec::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let (a, ta) = generate_panel(&small_spec(), 3).unwrap();
        let (b, tb) = generate_panel(&small_spec(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate_panel(&small_spec(), 4).unwrap();
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn passes_validity_filters_and_round_trips() {
        let (panel, _) = generate_panel(&small_spec(), 1).unwrap();
        let filtered = apply_filters(&panel, &FilterConfig::validity_only()).unwrap();
        assert!(filtered.rejection_log.is_empty());
        assert_eq!(filtered.len(), panel.len());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        crate::panel::write_panel_csv(&panel, &path).unwrap();
        let parsed = parse_panel(&path, &ColumnSchema::default(), CsvFormat::default()).unwrap();
        assert_eq!(parsed.observations, panel.observations);
        assert_eq!(parsed.provenance, panel.provenance);
    }

    #[test]
    fn planted_sizes_are_recovered() {
        let (panel, truth) = generate_panel(&SynthSpec::default(), 9).unwrap();
        let strat = stratify_by_size(&panel, &SizeConfig::default()).unwrap();
        let labels = strat.label_of(panel.len());
        assert!(truth.iter().zip(&labels).all(|(t, l)| t.size == *l));
    }

    #[test]
    fn component_means_within_three_standard_errors() {
        let spec = SynthSpec::default();
        let (panel, truth) = generate_panel(&spec, 5).unwrap();
        for (b, planted) in spec.bms.iter().enumerate() {
            let rows: Vec<&BankObservation> =
                panel.observations.iter().zip(&truth).filter(|(_, t)| t.bm == b).map(|(o, _)| o).collect();
            let n = rows.len() as f64;
            for j in 0..N_COMPONENTS {
                let mean = rows.iter().map(|o| o.components[j]).sum::<f64>() / n;
                let se = planted.sds[j] / n.sqrt();
                assert!(
                    (mean - planted.means[j]).abs() < 3.0 * se,
                    "bm {b} component {j}: {mean} vs {}",
                    planted.means[j]
                );
            }
        }
    }

    #[test]
    fn planted_ordering_and_signals() {
        let spec = SynthSpec::default();
        let p: Vec<f64> = (0..3).map(|b| spec.planted_profitability(b)).collect();
        assert!(p[0] > p[1] && p[1] > p[2]);
        use Component::*;
        assert_eq!(spec.signal_components(0), vec![CustomerLoans, CustomerDeposits, Equity]);
    }

    #[test]
    fn constant_response_without_noise() {
        let spec = SynthSpec {
            bms: vec![PlantedBm { weight: 1.0, ..SynthSpec::default().bms[0].clone() }],
            coefficients: [0.0; N_COMPONENTS],
            noise_sd: 0.0,
            ..small_spec()
        };
        let (panel, truth) = generate_panel(&spec, 2).unwrap();
        assert!(panel.observations.iter().all(|o| o.profitability == spec.intercept));
        assert!(truth.iter().all(|t| t.bm == 0));
    }

    #[test]
    fn infeasible_specs() {
        assert!(generate_panel(&SynthSpec { n_banks: 0, ..SynthSpec::default() }, 0).is_err());
        let mut spec = SynthSpec::default();
        spec.bms[0].weight = 0.9;
        assert!(matches!(generate_panel(&spec, 0), Err(Error::InfeasibleSpec(_))));
    }

    #[test]
    fn allocation_sums() {
        assert_eq!(allocate(10, &[0.1, 0.55, 0.35]), vec![1, 6, 3]);
        assert_eq!(allocate(7, &[0.5, 0.5]).iter().sum::<usize>(), 7);
    }
}
