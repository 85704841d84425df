//! Pipeline configuration: a flat TOML file overridden by command-line flags.

use std::path::{Path, PathBuf};

use bankbm_core::analysis::CharacterizationConfig;
use bankbm_core::cluster::{KMeansAlgorithm, KMeansConfig, ValidityIndex};
use bankbm_core::forest::ForestParams;
use bankbm_core::panel::{ColumnSchema, CsvFormat, FilterConfig, SizeBasis, SizeConfig, SizeLabel};
use bankbm_core::stats::{StarThresholds, TestMethod};
use bankbm_core::{DecompositionMode, SynthSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Every setting of a run. Keys absent from the file take these defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Mandatory; there is no clock-derived fallback.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// `all`, `L`, `M` or `S`.
    pub size_group: String,
    /// Inclusive, written `2-8`.
    pub k_range: String,
    pub skip_tuning: bool,

    pub delimiter: char,
    pub decimal_separator: char,
    pub columns: ColumnSchema,

    pub trim: bool,
    pub trim_lower: f64,
    pub trim_upper: f64,

    pub size_basis: SizeBasis,
    pub large_frac: f64,
    pub small_frac: f64,

    /// Forest used as is with `skip_tuning`, and as the base of the grid.
    pub n_trees: usize,
    pub mtry: usize,
    pub min_leaf: usize,
    /// 0 means unbounded.
    pub max_depth: usize,
    pub bootstrap_fraction: f64,
    pub grid_n_trees: Vec<usize>,
    pub grid_mtry: Vec<usize>,
    pub grid_min_leaf: Vec<usize>,
    pub folds: usize,

    pub decomposition: DecompositionMode,

    pub indices: Vec<ValidityIndex>,
    pub restarts: usize,
    pub max_iter: usize,
    pub kmeans_algorithm: KMeansAlgorithm,
    pub standardize: bool,

    pub u_test: TestMethod,
    pub star_one: f64,
    pub star_two: f64,
    pub star_three: f64,
    pub taxonomy_threshold: usize,

    /// Panel shape for `simulate`.
    pub synth_banks: usize,
    pub synth_years: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let forest = ForestParams::default();
        let stars = StarThresholds::default();
        let size = SizeConfig::default();
        let synth = SynthSpec::default();
        PipelineConfig {
            input: None,
            out_dir: PathBuf::from("out"),
            seed: None,
            threads: None,
            size_group: "all".into(),
            k_range: "2-8".into(),
            skip_tuning: false,
            delimiter: ',',
            decimal_separator: '.',
            columns: ColumnSchema::default(),
            trim: true,
            trim_lower: 1.0,
            trim_upper: 99.0,
            size_basis: size.basis,
            large_frac: size.large_frac,
            small_frac: size.small_frac,
            n_trees: forest.n_trees,
            mtry: forest.mtry,
            min_leaf: forest.min_leaf,
            max_depth: 0,
            bootstrap_fraction: forest.bootstrap_fraction,
            grid_n_trees: vec![300, 500],
            grid_mtry: vec![3, 5, 9],
            grid_min_leaf: vec![5, 25],
            folds: 5,
            decomposition: DecompositionMode::InSample,
            indices: ValidityIndex::ALL.to_vec(),
            restarts: 25,
            max_iter: 300,
            kmeans_algorithm: KMeansAlgorithm::HartiganWong,
            standardize: false,
            u_test: TestMethod::Auto,
            star_one: stars.one,
            star_two: stars.two,
            star_three: stars.three,
            taxonomy_threshold: 2,
            synth_banks: synth.n_banks,
            synth_years: synth.years,
        }
    }
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub size_group: Option<String>,
    pub k_range: Option<String>,
    pub skip_tuning: bool,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

pub fn parse_k_range(text: &str) -> Result<(usize, usize), CliError> {
    let t = text.trim();
    let (a, b) = t
        .split_once("..=")
        .or_else(|| t.split_once(".."))
        .or_else(|| t.split_once('-'))
        .or_else(|| t.split_once(':'))
        .ok_or_else(|| invalid(format!("k range `{text}`: expected e.g. 2-8")))?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| invalid(format!("k range `{text}`: not an integer")));
    let (lo, hi) = (parse(a)?, parse(b)?);
    if lo < 2 || hi <= lo {
        return Err(invalid(format!("k range `{text}` must satisfy 2 <= low < high")));
    }
    Ok((lo, hi))
}

fn ascii_byte(c: char, what: &str) -> Result<u8, CliError> {
    u8::try_from(c).ok().filter(u8::is_ascii).ok_or_else(|| invalid(format!("{what} must be a single ASCII character")))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.input {
            self.input = Some(v.clone());
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = Some(v);
        }
        if let Some(v) = o.threads {
            self.threads = Some(v);
        }
        if let Some(v) = &o.size_group {
            self.size_group = v.clone();
        }
        if let Some(v) = &o.k_range {
            self.k_range = v.clone();
        }
        if o.skip_tuning {
            self.skip_tuning = true;
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| invalid("a seed is required (--seed or `seed` in the config)"))
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        let path = self.input.as_deref().ok_or_else(|| invalid("no input file (--input or `input` in the config)"))?;
        std::fs::File::open(path).map_err(|e| invalid(format!("input {} is not readable: {e}", path.display())))?;
        Ok(path)
    }

    pub fn csv_format(&self) -> Result<CsvFormat, CliError> {
        let f = CsvFormat {
            delimiter: ascii_byte(self.delimiter, "delimiter")?,
            decimal_separator: ascii_byte(self.decimal_separator, "decimal_separator")?,
        };
        if f.delimiter == f.decimal_separator {
            return Err(invalid("delimiter and decimal_separator must differ"));
        }
        Ok(f)
    }

    pub fn filter(&self) -> Result<FilterConfig, CliError> {
        if !self.trim {
            return Ok(FilterConfig::validity_only());
        }
        let ok = (0.0..=100.0).contains(&self.trim_lower)
            && (0.0..=100.0).contains(&self.trim_upper)
            && self.trim_lower < self.trim_upper;
        if !ok {
            return Err(invalid(format!(
                "trim percentiles {}..{} must lie in [0, 100] and increase",
                self.trim_lower, self.trim_upper
            )));
        }
        Ok(FilterConfig { trim_percentiles: Some((self.trim_lower, self.trim_upper)) })
    }

    pub fn size_config(&self) -> Result<SizeConfig, CliError> {
        if !(self.large_frac > self.small_frac && self.small_frac > 0.0) {
            return Err(invalid(format!(
                "size thresholds need large_frac > small_frac > 0, got {} and {}",
                self.large_frac, self.small_frac
            )));
        }
        Ok(SizeConfig { large_frac: self.large_frac, small_frac: self.small_frac, basis: self.size_basis })
    }

    pub fn selected_sizes(&self) -> Result<Vec<SizeLabel>, CliError> {
        if self.size_group.eq_ignore_ascii_case("all") {
            return Ok(SizeLabel::ALL.to_vec());
        }
        SizeLabel::from_code(&self.size_group)
            .map(|s| vec![s])
            .ok_or_else(|| invalid(format!("size group `{}`: expected L, M, S or all", self.size_group)))
    }

    pub fn ks(&self) -> Result<Vec<usize>, CliError> {
        let (lo, hi) = parse_k_range(&self.k_range)?;
        Ok((lo..=hi).collect())
    }

    pub fn base_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            mtry: self.mtry,
            max_depth: (self.max_depth > 0).then_some(self.max_depth),
            min_leaf: self.min_leaf,
            bootstrap_fraction: self.bootstrap_fraction,
            bootstrap: true,
        }
    }

    /// Cartesian product in n_trees, mtry, min_leaf order.
    pub fn grid(&self) -> Vec<ForestParams> {
        let base = self.base_params();
        let mut grid = Vec::new();
        for &n_trees in &self.grid_n_trees {
            for &mtry in &self.grid_mtry {
                for &min_leaf in &self.grid_min_leaf {
                    grid.push(ForestParams { n_trees, mtry, min_leaf, ..base.clone() });
                }
            }
        }
        grid
    }

    /// Smallest group the forest stage will fit.
    pub fn min_group_size(&self) -> usize {
        let leaf = if self.skip_tuning {
            self.min_leaf
        } else {
            self.grid_min_leaf.iter().copied().max().unwrap_or(self.min_leaf)
        };
        let tune = if self.skip_tuning { 0 } else { self.folds };
        (2 * leaf).max(tune).max(2)
    }

    pub fn kmeans(&self) -> Result<KMeansConfig, CliError> {
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(invalid("restarts and max_iter must be positive"));
        }
        Ok(KMeansConfig { restarts: self.restarts, max_iter: self.max_iter, algorithm: self.kmeans_algorithm })
    }

    pub fn characterization(&self) -> Result<CharacterizationConfig, CliError> {
        let stars = StarThresholds { one: self.star_one, two: self.star_two, three: self.star_three };
        stars.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(CharacterizationConfig { stars, test: self.u_test, taxonomy_threshold: self.taxonomy_threshold })
    }

    /// Checks everything a computing stage needs, before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.seed()?;
        self.input()?;
        self.csv_format()?;
        self.filter()?;
        self.size_config()?;
        self.selected_sizes()?;
        self.ks()?;
        self.kmeans()?;
        self.characterization()?;
        if self.threads == Some(0) {
            return Err(invalid("threads must be positive"));
        }
        if self.indices.is_empty() {
            return Err(invalid("at least one validity index is required"));
        }
        let n = bankbm_core::N_COMPONENTS;
        self.base_params().validate(n).map_err(|e| invalid(e.to_string()))?;
        if !self.skip_tuning {
            if self.folds < 2 {
                return Err(invalid("folds must be at least 2"));
            }
            let grid = self.grid();
            if grid.is_empty() {
                return Err(invalid("tuning grid is empty"));
            }
            for p in &grid {
                p.validate(n).map_err(|e| invalid(format!("grid point {p:?}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Settings that determine results; paths of outputs and thread counts are left out.
    pub fn effective(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.threads = None;
        c.out_dir = PathBuf::new();
        serde_json::to_value(&c).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        let text = serde_json::to_string(&self.effective()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
