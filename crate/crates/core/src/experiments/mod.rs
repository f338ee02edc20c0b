//! The evaluation sweeps: energy histogram, linear predicted-vs-actual,
//! success-band sweep, split stability and prefix-fraction sweep.
//!
//! Every experiment is a pure function of the cohort and its
//! [`ExperimentConfig`]; seeds derive from `seed_base` plus the iteration
//! index (plus 1000 × fraction index in the prefix sweep), so cells can be
//! evaluated in any order without changing results.

mod render;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use render::{fmt_sig6, parse_report_config, render_report, ReportFormat};

use crate::error::{Error, Result};
use crate::features::{encode_sequence, pad_matrix, pad_to, prefix, CodeSequence, FeatureMatrix};
use crate::learners::{
    accuracy, binarize, filter_labeled, fit_model, predict_linear, predict_logistic, split_indices, Dataset,
    LogisticHyper, SplitSpec, TargetKind,
};
use crate::model::{Cohort, Family, FeatureKind};

/// Histogram bins further than this many widths from zero are reported as
/// outliers instead of bars.
pub const HISTOGRAM_HALF_SPAN: i64 = 10;

/// Seed offset between consecutive fractions of the prefix sweep.
pub const FRACTION_SEED_STRIDE: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Success band E in kWh.
    pub band: f64,
    pub bands: Vec<f64>,
    pub bin_width: f64,
    pub iterations: usize,
    pub seed_base: u64,
    pub fractions: Vec<f64>,
    /// Features used by the stability run.
    pub feature_kind: FeatureKind,
    pub standardize: bool,
    pub test_fraction: f64,
    pub stratified: bool,
    pub threshold: f64,
    pub hyper: LogisticHyper,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            band: 10_000.0,
            bands: vec![1_000.0, 2_000.0, 5_000.0, 10_000.0, 20_000.0, 50_000.0],
            bin_width: 5_000.0,
            iterations: 10,
            seed_base: 7,
            fractions: (1..=10).map(|i| i as f64 / 10.0).collect(),
            feature_kind: FeatureKind::Tally,
            standardize: true,
            test_fraction: 0.2,
            stratified: false,
            threshold: 0.5,
            hyper: LogisticHyper::default(),
        }
    }
}

impl ExperimentConfig {
    fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            test_fraction: self.test_fraction,
            seed,
            stratified: self.stratified,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportName {
    Histogram,
    LinearPva,
    BandSweep,
    Stability,
    PrefixSweep,
    Baseline,
}

impl ReportName {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportName::Histogram => "histogram",
            ReportName::LinearPva => "linear_pva",
            ReportName::BandSweep => "band_sweep",
            ReportName::Stability => "stability",
            ReportName::PrefixSweep => "prefix_sweep",
            ReportName::Baseline => "baseline",
        }
    }
}

impl fmt::Display for ReportName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReportName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ReportName::Histogram,
            ReportName::LinearPva,
            ReportName::BandSweep,
            ReportName::Stability,
            ReportName::PrefixSweep,
            ReportName::Baseline,
        ]
        .into_iter()
        .find(|n| n.as_str() == s)
        .ok_or_else(|| Error::domain(format!("unknown report {s:?}")))
    }
}

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(x) => Some(*x),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: ReportName,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    /// Extra key/value facts (baselines, outliers), in insertion order.
    pub notes: Vec<(String, String)>,
    pub config: ExperimentConfig,
    pub seed_base: u64,
}

impl ExperimentReport {
    fn new(name: ReportName, columns: &[&'static str], config: &ExperimentConfig) -> Self {
        ExperimentReport {
            name,
            columns: columns.to_vec(),
            rows: Vec::new(),
            notes: Vec::new(),
            config: config.clone(),
            seed_base: config.seed_base,
        }
    }

    fn note(&mut self, key: &str, value: impl fmt::Display) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }

    /// Numeric values of a column, `None` for empty cells.
    pub fn values(&self, name: &str) -> Vec<Option<f64>> {
        match self.column(name) {
            Some(c) => self.rows.iter().map(|r| r[c].as_f64()).collect(),
            None => Vec::new(),
        }
    }

    pub fn note_value(&self, key: &str) -> Option<&str> {
        self.notes.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Whether a sweep cell produced an accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Ok,
    /// The training split held only one class, so no model was fit.
    SingleClass,
}

impl CellStatus {
    fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::SingleClass => "single_class",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub status: CellStatus,
    pub test_accuracy: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub pad_length: Option<usize>,
}

/// Labeled sessions with both feature representations precomputed.
pub struct PreparedCohort {
    pub ids: Vec<String>,
    pub energies: Vec<f64>,
    pub tallies: FeatureMatrix,
    pub sequences: Vec<CodeSequence>,
}

impl PreparedCohort {
    pub fn new(cohort: &Cohort) -> Self {
        let labeled = filter_labeled(cohort);
        PreparedCohort {
            ids: labeled.sessions.iter().map(|s| s.student_id.clone()).collect(),
            energies: labeled.energies().map(|e| e.unwrap_or_default()).collect(),
            tallies: FeatureMatrix::from_tallies(&labeled.sessions),
            sequences: labeled.sessions.iter().map(encode_sequence).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn labels(&self, band: f64) -> Result<Vec<u8>> {
        self.energies.iter().map(|&e| binarize(e, band)).collect()
    }

    /// Train and test feature matrices for one split. Sequence padding is
    /// fit on the training rows only.
    fn features(&self, kind: FeatureKind, fraction: f64, train: &[usize], test: &[usize]) -> Result<(FeatureMatrix, FeatureMatrix)> {
        match kind {
            FeatureKind::Tally => Ok((self.tallies.select(train), self.tallies.select(test))),
            FeatureKind::Sequence => {
                let pick = |idx: &[usize]| -> Result<(Vec<CodeSequence>, Vec<String>)> {
                    let seqs = idx
                        .iter()
                        .map(|&i| prefix(&self.sequences[i], fraction))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((seqs, idx.iter().map(|&i| self.ids[i].clone()).collect()))
                };
                let (train_seqs, train_ids) = pick(train)?;
                let (test_seqs, test_ids) = pick(test)?;
                let train_m = pad_matrix(&train_seqs, &train_ids)?;
                let test_m = pad_to(&test_seqs, &test_ids, train_m.pad_length.unwrap_or(0))?;
                Ok((train_m, test_m))
            }
        }
    }
}

/// Fits and scores one logistic model on one split.
pub fn evaluate_cell(
    prep: &PreparedCohort,
    kind: FeatureKind,
    fraction: f64,
    seed: u64,
    config: &ExperimentConfig,
) -> Result<CellResult> {
    let labels = prep.labels(config.band)?;
    let (train_idx, test_idx) = split_indices(prep.len(), &config.split_spec(seed), Some(&labels))?;
    let (train_x, test_x) = prep.features(kind, fraction, &train_idx, &test_idx)?;
    let pad_length = train_x.pad_length;
    let train_y: Vec<u8> = train_idx.iter().map(|&i| labels[i]).collect();
    let test_y: Vec<u8> = test_idx.iter().map(|&i| labels[i]).collect();
    if train_y.iter().all(|&y| y == train_y[0]) {
        return Ok(CellResult {
            status: CellStatus::SingleClass,
            test_accuracy: None,
            train_accuracy: None,
            pad_length,
        });
    }
    let train = Dataset::new(train_x, train_y.iter().map(|&y| y as f64).collect(), TargetKind::SuccessLabel)?;
    let w = fit_model(&train, Family::Logistic, &config.hyper, config.standardize)?;
    let train_pred = predict_logistic(&w, &train.features, config.threshold)?;
    let test_pred = predict_logistic(&w, &test_x, config.threshold)?;
    Ok(CellResult {
        status: CellStatus::Ok,
        test_accuracy: Some(accuracy(&test_pred, &test_y)?),
        train_accuracy: Some(accuracy(&train_pred, &train_y)?),
        pad_length,
    })
}

fn baseline_of(labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
    pos.max(1.0 - pos)
}

/// Accuracy of always predicting the more common class.
pub fn majority_baseline(cohort: &Cohort, band: f64) -> Result<f64> {
    let prep = PreparedCohort::new(cohort);
    if prep.is_empty() {
        return Err(Error::domain("no labeled sessions"));
    }
    Ok(baseline_of(&prep.labels(band)?))
}

fn require_labeled(prep: &PreparedCohort, min: usize) -> Result<()> {
    if prep.len() < min {
        return Err(Error::domain(format!(
            "need at least {min} labeled sessions, have {}",
            prep.len()
        )));
    }
    Ok(())
}

/// Counts of final net energies in bins of `config.bin_width` centred on 0.
pub fn histogram_final_energy(cohort: &Cohort, config: &ExperimentConfig) -> Result<ExperimentReport> {
    let w = config.bin_width;
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::domain(format!("bin width must be positive, got {w}")));
    }
    let prep = PreparedCohort::new(cohort);
    require_labeled(&prep, 1)?;
    let mut report = ExperimentReport::new(ReportName::Histogram, &["bin_low", "bin_high", "count"], config);

    let bin_of = |e: f64| ((e + w / 2.0) / w).floor() as i64;
    let mut counts = std::collections::BTreeMap::new();
    let mut n_outliers = 0;
    for (id, &e) in prep.ids.iter().zip(&prep.energies) {
        let k = bin_of(e);
        if k.abs() > HISTOGRAM_HALF_SPAN {
            n_outliers += 1;
            report.note("outlier", format!("{id}={}", fmt_sig6(e)));
        } else {
            *counts.entry(k).or_insert(0usize) += 1;
        }
    }
    if let (Some(&lo), Some(&hi)) = (counts.keys().next(), counts.keys().next_back()) {
        for k in lo..=hi {
            let centre = k as f64 * w;
            report.rows.push(vec![
                (centre - w / 2.0).into(),
                (centre + w / 2.0).into(),
                counts.get(&k).copied().unwrap_or(0).into(),
            ]);
        }
    }
    report.note("n_outliers", n_outliers);
    Ok(report)
}

/// Linear regression on tallies; predicted and actual energy for test rows.
pub fn linear_pred_vs_actual(cohort: &Cohort, config: &ExperimentConfig) -> Result<ExperimentReport> {
    let prep = PreparedCohort::new(cohort);
    require_labeled(&prep, 5)?;
    let data = Dataset::new(prep.tallies.clone(), prep.energies.clone(), TargetKind::Energy)?;
    let (train_idx, test_idx) = split_indices(data.len(), &config.split_spec(config.seed_base), None)?;
    let train = data.select(&train_idx);
    let test = data.select(&test_idx);
    let w = fit_model(&train, Family::Linear, &config.hyper, config.standardize)?;
    let predicted = predict_linear(&w, &test.features)?;

    let mut report = ExperimentReport::new(
        ReportName::LinearPva,
        &["student_id", "actual_kwh", "predicted_kwh"],
        config,
    );
    for ((id, actual), pred) in test.features.row_ids.iter().zip(&test.targets).zip(predicted) {
        report.rows.push(vec![id.as_str().into(), (*actual).into(), pred.into()]);
    }
    report.note("n_train", train.len());
    Ok(report)
}

/// Test accuracy as a function of the success band.
pub fn band_sweep(cohort: &Cohort, config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.bands.is_empty() || config.bands.iter().any(|b| b.is_nan() || *b <= 0.0) {
        return Err(Error::domain("bands must be nonempty and positive"));
    }
    let prep = PreparedCohort::new(cohort);
    require_labeled(&prep, 5)?;
    let mut report = ExperimentReport::new(
        ReportName::BandSweep,
        &[
            "band_kwh",
            "test_accuracy",
            "train_accuracy",
            "positive_fraction",
            "majority_baseline",
            "status",
        ],
        config,
    );
    for &band in &config.bands {
        let cell_config = ExperimentConfig {
            band,
            ..config.clone()
        };
        let labels = prep.labels(band)?;
        let positive = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
        let cell = evaluate_cell(&prep, FeatureKind::Tally, 1.0, config.seed_base, &cell_config)?;
        report.rows.push(vec![
            band.into(),
            cell.test_accuracy.into(),
            cell.train_accuracy.into(),
            positive.into(),
            baseline_of(&labels).into(),
            cell.status.as_str().into(),
        ]);
    }
    Ok(report)
}

/// Repeated splits at one band; iteration `i` uses seed `seed_base + i`.
pub fn stability_run(cohort: &Cohort, config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.iterations == 0 {
        return Err(Error::domain("iterations must be at least 1"));
    }
    let prep = PreparedCohort::new(cohort);
    require_labeled(&prep, 5)?;
    let mut report = ExperimentReport::new(
        ReportName::Stability,
        &["iteration", "seed", "test_accuracy", "train_accuracy", "status"],
        config,
    );
    for i in 0..config.iterations {
        let seed = config.seed_base + i as u64;
        let cell = evaluate_cell(&prep, config.feature_kind, 1.0, seed, config)?;
        report.rows.push(vec![
            i.into(),
            seed.into(),
            cell.test_accuracy.into(),
            cell.train_accuracy.into(),
            cell.status.as_str().into(),
        ]);
    }
    report.note("majority_baseline", fmt_sig6(baseline_of(&prep.labels(config.band)?)));
    report.note("feature_kind", config.feature_kind);
    Ok(report)
}

/// Accuracy of sequence models trained on leading fractions of each session.
pub fn prefix_sweep(cohort: &Cohort, config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.fractions.is_empty() || config.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::domain("fractions must be nonempty and in (0, 1]"));
    }
    if config.iterations == 0 {
        return Err(Error::domain("iterations must be at least 1"));
    }
    let prep = PreparedCohort::new(cohort);
    require_labeled(&prep, 5)?;
    let mut report = ExperimentReport::new(
        ReportName::PrefixSweep,
        &[
            "fraction",
            "iteration",
            "seed",
            "test_accuracy",
            "train_accuracy",
            "pad_length",
            "status",
        ],
        config,
    );
    for (fi, &fraction) in config.fractions.iter().enumerate() {
        for i in 0..config.iterations {
            let seed = config.seed_base + i as u64 + FRACTION_SEED_STRIDE * fi as u64;
            let cell = evaluate_cell(&prep, FeatureKind::Sequence, fraction, seed, config)?;
            report.rows.push(vec![
                fraction.into(),
                i.into(),
                seed.into(),
                cell.test_accuracy.into(),
                cell.train_accuracy.into(),
                cell.pad_length.unwrap_or(0).into(),
                cell.status.as_str().into(),
            ]);
        }
    }
    report.note("majority_baseline", fmt_sig6(baseline_of(&prep.labels(config.band)?)));
    Ok(report)
}

/// Majority-class baseline for each configured band.
pub fn baseline_report(cohort: &Cohort, config: &ExperimentConfig) -> Result<ExperimentReport> {
    let prep = PreparedCohort::new(cohort);
    require_labeled(&prep, 1)?;
    let mut report = ExperimentReport::new(
        ReportName::Baseline,
        &["band_kwh", "positive_fraction", "majority_baseline"],
        config,
    );
    for &band in &config.bands {
        let labels = prep.labels(band)?;
        let positive = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
        report
            .rows
            .push(vec![band.into(), positive.into(), baseline_of(&labels).into()]);
    }
    Ok(report)
}

/// Mean of the non-empty values.
pub fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}
