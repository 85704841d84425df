//! Bank-year panel ingestion, filtering and size stratification.

use std::fmt;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::component::{Component, N_COMPONENTS};
use crate::error::{Error, Result};

/// One bank-year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankObservation {
    /// 1-based data row in the source file.
    pub row: usize,
    pub bank_id: String,
    pub year: i32,
    pub country: String,
    pub total_assets: f64,
    /// Portfolio ratios indexed by [`Component::index`].
    pub components: [f64; N_COMPONENTS],
    pub profitability: f64,
}

impl BankObservation {
    pub fn component(&self, c: Component) -> f64 {
        self.components[c.index()]
    }
}

/// A row excluded during parsing or filtering.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub row: usize,
    pub reason: String,
    pub detail: String,
}

/// Profitability trim bounds that were applied to a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimBounds {
    pub lower_pct: f64,
    pub upper_pct: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub observations: Vec<BankObservation>,
    /// SHA-256 of the source bytes (hex).
    pub provenance: String,
    pub rejection_log: Vec<Rejection>,
    /// Set once a percentile trim has been applied, so that re-filtering
    /// reuses the same bounds.
    pub trim_bounds: Option<TrimBounds>,
}

impl PanelDataset {
    pub fn from_observations(observations: Vec<BankObservation>, provenance: impl Into<String>) -> Self {
        PanelDataset { observations, provenance: provenance.into(), rejection_log: Vec::new(), trim_bounds: None }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn select(&self, members: &[usize]) -> Vec<&BankObservation> {
        members.iter().map(|&i| &self.observations[i]).collect()
    }
}

/// Maps the logical fields onto CSV header names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub bank_id: String,
    pub year: String,
    pub country: String,
    pub total_assets: String,
    pub profitability: String,
    pub customer_loans: String,
    pub interbank_lending: String,
    pub derivative_exposures: String,
    pub securities: String,
    pub customer_deposits: String,
    pub interbank_borrowing: String,
    pub short_term_funding: String,
    pub long_term_funding: String,
    pub equity: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        let c = |c: Component| c.column().to_string();
        ColumnSchema {
            bank_id: "bank_id".into(),
            year: "year".into(),
            country: "country".into(),
            total_assets: "total_assets".into(),
            profitability: "profitability".into(),
            customer_loans: c(Component::CustomerLoans),
            interbank_lending: c(Component::InterbankLending),
            derivative_exposures: c(Component::DerivativeExposures),
            securities: c(Component::Securities),
            customer_deposits: c(Component::CustomerDeposits),
            interbank_borrowing: c(Component::InterbankBorrowing),
            short_term_funding: c(Component::ShortTermFunding),
            long_term_funding: c(Component::LongTermFunding),
            equity: c(Component::Equity),
        }
    }
}

impl ColumnSchema {
    pub fn component_column(&self, c: Component) -> &str {
        match c {
            Component::CustomerLoans => &self.customer_loans,
            Component::InterbankLending => &self.interbank_lending,
            Component::DerivativeExposures => &self.derivative_exposures,
            Component::Securities => &self.securities,
            Component::CustomerDeposits => &self.customer_deposits,
            Component::InterbankBorrowing => &self.interbank_borrowing,
            Component::ShortTermFunding => &self.short_term_funding,
            Component::LongTermFunding => &self.long_term_funding,
            Component::Equity => &self.equity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvFormat {
    pub delimiter: u8,
    pub decimal_separator: u8,
}

impl Default for CsvFormat {
    fn default() -> Self {
        CsvFormat { delimiter: b',', decimal_separator: b'.' }
    }
}

struct ColumnIndex {
    bank_id: usize,
    year: usize,
    country: usize,
    total_assets: usize,
    profitability: usize,
    components: [usize; N_COMPONENTS],
}

impl ColumnIndex {
    fn resolve(headers: &csv::StringRecord, schema: &ColumnSchema) -> Result<Self> {
        let find = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn { column: name.to_string() })
        };
        let mut components = [0; N_COMPONENTS];
        for c in Component::ALL {
            components[c.index()] = find(schema.component_column(c))?;
        }
        Ok(ColumnIndex {
            bank_id: find(&schema.bank_id)?,
            year: find(&schema.year)?,
            country: find(&schema.country)?,
            total_assets: find(&schema.total_assets)?,
            profitability: find(&schema.profitability)?,
            components,
        })
    }
}

/// Reads a panel CSV. Malformed rows go to the rejection log.
pub fn parse_panel(path: &Path, schema: &ColumnSchema, format: CsvFormat) -> Result<PanelDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_panel_bytes(&bytes, schema, format).map_err(|e| match e {
        Error::EmptyInput(_) => Error::EmptyInput(path.display().to_string()),
        other => other,
    })
}

pub fn parse_panel_bytes(bytes: &[u8], schema: &ColumnSchema, format: CsvFormat) -> Result<PanelDataset> {
    if format.delimiter == format.decimal_separator {
        return Err(Error::InvalidConfig("delimiter and decimal separator must differ".into()));
    }
    let provenance = hex::encode(Sha256::digest(bytes));
    let mut reader =
        csv::ReaderBuilder::new().delimiter(format.delimiter).has_headers(true).flexible(true).from_reader(bytes);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::EmptyInput("missing header row".into()));
    }
    let cols = ColumnIndex::resolve(&headers, schema)?;

    let mut observations = Vec::new();
    let mut rejection_log = Vec::new();
    let mut row = 0;
    for record in reader.records() {
        row += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejection_log.push(Rejection { row, reason: "malformed record".into(), detail: e.to_string() });
                continue;
            }
        };
        match parse_record(&record, &cols, schema, format, row) {
            Ok(obs) => observations.push(obs),
            Err(rejection) => rejection_log.push(rejection),
        }
    }
    if row == 0 {
        return Err(Error::EmptyInput("no data rows".into()));
    }
    Ok(PanelDataset { observations, provenance, rejection_log, trim_bounds: None })
}

fn parse_record(
    record: &csv::StringRecord,
    cols: &ColumnIndex,
    schema: &ColumnSchema,
    format: CsvFormat,
    row: usize,
) -> std::result::Result<BankObservation, Rejection> {
    let field = |idx: usize, name: &str| -> std::result::Result<&str, Rejection> {
        match record.get(idx).map(str::trim) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Rejection { row, reason: format!("missing: {name}"), detail: String::new() }),
        }
    };
    let number = |idx: usize, name: &str| -> std::result::Result<f64, Rejection> {
        let raw = field(idx, name)?;
        let parsed = if format.decimal_separator == b'.' {
            raw.parse::<f64>()
        } else {
            raw.replace(format.decimal_separator as char, ".").parse::<f64>()
        };
        parsed.map_err(|_| Rejection { row, reason: format!("non-numeric: {name}"), detail: raw.to_string() })
    };

    let bank_id = field(cols.bank_id, &schema.bank_id)?.to_string();
    let year_raw = field(cols.year, &schema.year)?;
    let year = year_raw.parse::<i32>().map_err(|_| Rejection {
        row,
        reason: format!("non-numeric: {}", schema.year),
        detail: year_raw.to_string(),
    })?;
    let country = record.get(cols.country).map(str::trim).unwrap_or("").to_string();
    let total_assets = number(cols.total_assets, &schema.total_assets)?;
    let mut components = [0.0; N_COMPONENTS];
    for c in Component::ALL {
        components[c.index()] = number(cols.components[c.index()], schema.component_column(c))?;
    }
    let profitability = number(cols.profitability, &schema.profitability)?;
    Ok(BankObservation { row, bank_id, year, country, total_assets, components, profitability })
}

/// Observations serialized in the default ingestion schema.
pub fn panel_csv_bytes(observations: &[BankObservation]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let schema = ColumnSchema::default();
    let mut header =
        vec![schema.bank_id.as_str(), schema.year.as_str(), schema.country.as_str(), schema.total_assets.as_str()];
    header.extend(Component::ALL.iter().map(|c| c.column()));
    header.push(schema.profitability.as_str());
    w.write_record(&header)?;
    for obs in observations {
        let mut rec =
            vec![obs.bank_id.clone(), obs.year.to_string(), obs.country.clone(), obs.total_assets.to_string()];
        rec.extend(obs.components.iter().map(|v| v.to_string()));
        rec.push(obs.profitability.to_string());
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::io("<memory>", e.into_error()))
}

pub fn write_panel_csv(data: &PanelDataset, path: &Path) -> Result<()> {
    let bytes = panel_csv_bytes(&data.observations)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_rejections_csv(log: &[Rejection], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "reason", "detail"])?;
    for r in log {
        w.write_record([r.row.to_string(), r.reason.clone(), r.detail.clone()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Percentile trim on profitability, e.g. `(1.0, 99.0)`. `None` disables it.
    pub trim_percentiles: Option<(f64, f64)>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { trim_percentiles: Some((1.0, 99.0)) }
    }
}

impl FilterConfig {
    /// Only the validity rules: finite values, positive assets, ratios in [0, 1].
    pub fn validity_only() -> Self {
        FilterConfig { trim_percentiles: None }
    }
}

pub const REASON_ASSETS: &str = "non-positive total_assets";
pub const REASON_NON_FINITE: &str = "non-finite value";
pub const REASON_RATIO: &str = "ratio out of [0,1]";
pub const REASON_TRIM: &str = "profitability outside trim bounds";

fn validity_violation(obs: &BankObservation) -> Option<Rejection> {
    let reject = |reason: &str, detail: String| Some(Rejection { row: obs.row, reason: reason.into(), detail });
    if !obs.total_assets.is_finite() || !obs.profitability.is_finite() {
        return reject(REASON_NON_FINITE, "total_assets/profitability".into());
    }
    if obs.total_assets <= 0.0 {
        return reject(REASON_ASSETS, obs.total_assets.to_string());
    }
    for c in Component::ALL {
        let v = obs.components[c.index()];
        if !v.is_finite() {
            return reject(REASON_NON_FINITE, c.column().into());
        }
        if !(0.0..=1.0).contains(&v) {
            return reject(REASON_RATIO, format!("{}={}", c.column(), v));
        }
    }
    None
}

/// Linear-interpolation percentile (the "type 7" definition) of sorted data.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * (pct / 100.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Applies the validity rules and the profitability trim.
///
/// Trim bounds are computed on the rows that pass the validity rules and
/// recorded on the result; a later call with the same percentiles reuses
/// them, which makes the operation idempotent.
pub fn apply_filters(data: &PanelDataset, rules: &FilterConfig) -> Result<PanelDataset> {
    let mut log = data.rejection_log.clone();
    let mut kept = Vec::with_capacity(data.len());
    for obs in &data.observations {
        match validity_violation(obs) {
            Some(r) => log.push(r),
            None => kept.push(obs.clone()),
        }
    }

    let mut trim_bounds = data.trim_bounds;
    if let Some((lower_pct, upper_pct)) = rules.trim_percentiles {
        if !(0.0..=100.0).contains(&lower_pct) || !(0.0..=100.0).contains(&upper_pct) || lower_pct > upper_pct {
            return Err(Error::InvalidConfig(format!("bad trim percentiles ({lower_pct}, {upper_pct})")));
        }
        let bounds = match data.trim_bounds {
            Some(b) if b.lower_pct == lower_pct && b.upper_pct == upper_pct => Some(b),
            _ if kept.is_empty() => None,
            _ => {
                let mut ys: Vec<f64> = kept.iter().map(|o| o.profitability).collect();
                ys.sort_by(f64::total_cmp);
                Some(TrimBounds {
                    lower_pct,
                    upper_pct,
                    lower: percentile_sorted(&ys, lower_pct),
                    upper: percentile_sorted(&ys, upper_pct),
                })
            }
        };
        if let Some(b) = bounds {
            kept.retain(|o| {
                let inside = o.profitability >= b.lower && o.profitability <= b.upper;
                if !inside {
                    log.push(Rejection {
                        row: o.row,
                        reason: REASON_TRIM.into(),
                        detail: format!("{} not in [{}, {}]", o.profitability, b.lower, b.upper),
                    });
                }
                inside
            });
        }
        trim_bounds = bounds;
    }

    if kept.is_empty() {
        return Err(Error::AllExcluded { rejected: log.len() });
    }
    Ok(PanelDataset { observations: kept, provenance: data.provenance.clone(), rejection_log: log, trim_bounds })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeLabel {
    Large,
    Medium,
    Small,
}

impl SizeLabel {
    pub const ALL: [SizeLabel; 3] = [SizeLabel::Large, SizeLabel::Medium, SizeLabel::Small];

    pub fn code(self) -> &'static str {
        match self {
            SizeLabel::Large => "L",
            SizeLabel::Medium => "M",
            SizeLabel::Small => "S",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeLabel::Large => "Large",
            SizeLabel::Medium => "Medium",
            SizeLabel::Small => "Small",
        }
    }

    pub fn from_code(code: &str) -> Option<SizeLabel> {
        SizeLabel::ALL.into_iter().find(|s| s.code().eq_ignore_ascii_case(code))
    }
}

impl fmt::Display for SizeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether size thresholds are relative to each year's aggregate assets or
/// to the pooled panel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeBasis {
    #[default]
    PerYear,
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeConfig {
    pub large_frac: f64,
    pub small_frac: f64,
    pub basis: SizeBasis,
}

impl Default for SizeConfig {
    fn default() -> Self {
        SizeConfig { large_frac: 0.005, small_frac: 0.00005, basis: SizeBasis::PerYear }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeGroup {
    pub label: SizeLabel,
    /// Indices into the stratified dataset's observations, ascending.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    /// Always ordered Large, Medium, Small.
    pub groups: [SizeGroup; 3],
    pub warnings: Vec<String>,
}

impl Stratification {
    pub fn group(&self, label: SizeLabel) -> &SizeGroup {
        &self.groups[label as usize]
    }

    pub fn label_of(&self, n: usize) -> Vec<SizeLabel> {
        let mut labels = vec![SizeLabel::Medium; n];
        for g in &self.groups {
            for &i in &g.members {
                labels[i] = g.label;
            }
        }
        labels
    }

    pub fn non_empty(&self) -> impl Iterator<Item = &SizeGroup> {
        self.groups.iter().filter(|g| !g.members.is_empty())
    }
}

/// Classifies each observation by its share of aggregate assets.
pub fn stratify_by_size(data: &PanelDataset, thresholds: &SizeConfig) -> Result<Stratification> {
    let SizeConfig { large_frac, small_frac, basis } = *thresholds;
    if !(large_frac > small_frac && small_frac > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "size thresholds must satisfy large_frac > small_frac > 0 (got {large_frac}, {small_frac})"
        )));
    }
    let mut totals = std::collections::BTreeMap::<i32, f64>::new();
    let pooled: f64 = data.observations.iter().map(|o| o.total_assets).sum();
    if basis == SizeBasis::PerYear {
        for o in &data.observations {
            *totals.entry(o.year).or_insert(0.0) += o.total_assets;
        }
    }

    let mut members: [Vec<usize>; 3] = Default::default();
    for (i, o) in data.observations.iter().enumerate() {
        let aggregate = match basis {
            SizeBasis::PerYear => totals[&o.year],
            SizeBasis::Pooled => pooled,
        };
        let label = if o.total_assets >= large_frac * aggregate {
            SizeLabel::Large
        } else if o.total_assets < small_frac * aggregate {
            SizeLabel::Small
        } else {
            SizeLabel::Medium
        };
        members[label as usize].push(i);
    }

    let mut warnings = Vec::new();
    for label in SizeLabel::ALL {
        if members[label as usize].is_empty() {
            let msg = format!("size group {} is empty; per-size stages will skip it", label.name());
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    let [l, m, s] = members;
    Ok(Stratification {
        groups: [
            SizeGroup { label: SizeLabel::Large, members: l },
            SizeGroup { label: SizeLabel::Medium, members: m },
            SizeGroup { label: SizeLabel::Small, members: s },
        ],
        warnings,
    })
}
