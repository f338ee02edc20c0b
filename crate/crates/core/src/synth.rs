//! Synthetic cohort generator.
//!
//! Each student gets a planted success label, a final net energy consistent
//! with it, and an action sequence whose category mix depends on the label.
//! Successful students mix in extra Analysis, SolarPanel and Thermal actions;
//! `signal` scales how often, and `early_signal` moves that mixing toward the
//! first 30% of the session. Files can optionally be corrupted with one fault
//! each so the repair path gets exercised.

use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::CategoryMapping;
use crate::ingest::parse_session;
use crate::learners::binarize;
use crate::model::{ActionCategory, Cohort};

/// Successes draw final energy uniformly from `[-SUCCESS_MAX, SUCCESS_MAX]`.
pub const SUCCESS_MAX_KWH: f64 = 8_000.0;
/// Failures draw |energy| uniformly from this range, with a random sign.
pub const FAILURE_RANGE_KWH: (f64, f64) = (15_000.0, 80_000.0);
pub const OUTLIER_RANGE_KWH: (f64, f64) = (150_000.0, 700_000.0);
pub const OUTLIER_PROBABILITY: f64 = 0.015;
/// Share of a session counted as its early part.
pub const EARLY_SHARE: f64 = 0.3;

const FOCUS: [ActionCategory; 3] = [
    ActionCategory::SolarPanel,
    ActionCategory::Analysis,
    ActionCategory::Thermal,
];

/// Background category weights, in code order.
const BASE_WEIGHTS: [f64; ActionCategory::COUNT] = [4.0, 3.0, 2.0, 14.0, 10.0, 8.0, 6.0, 3.0, 5.0, 6.0, 3.0, 4.0, 5.0];

const FINAL_ACTION: &str = "Run Energy Analysis";

// 2021-09-01T13:00:00Z
const START_MILLIS: i64 = 1_630_501_200_000;

fn action_names(c: ActionCategory) -> &'static [&'static str] {
    use ActionCategory::*;
    match c {
        Door => &["Add Door", "Edit Door", "Remove Door"],
        Floor => &["Add Floor", "Edit Floor", "Remove Floor"],
        Foundation => &["Add Foundation", "Resize Foundation", "Remove Foundation"],
        Wall => &["Add Wall", "Edit Wall", "Move Wall", "Remove Wall"],
        Window => &["Add Window", "Edit Window", "Remove Window"],
        Roof => &["Add Roof", "Edit Roof", "Remove Roof"],
        SolarPanel => &["Add Solar Panel", "Move Solar Panel", "Rotate Solar Panel", "Remove Solar Panel"],
        Tree => &["Add Tree", "Move Tree", "Remove Tree"],
        Building => &["Move Building", "Resize Building", "Rotate Building"],
        Analysis => &["Run Energy Analysis", "Show Heliodon", "Show Graph"],
        Parameters => &["Change Latitude", "Set Location", "Change Date", "Change Time"],
        Thermal => &["Edit Thermal Properties", "Change U-Value"],
        Color => &["Change Color", "Change Wall Color", "Change Roof Color"],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_students: usize,
    pub success_rate: f64,
    pub signal: f64,
    pub early_signal: f64,
    /// Inclusive bounds on actions per student.
    pub length_range: (usize, usize),
    pub corruption_rate: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_students: 128,
            success_rate: 0.7,
            signal: 0.9,
            early_signal: 0.5,
            length_range: (40, 300),
            corruption_rate: 0.0,
            seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length_range;
        if lo < 1 || hi < lo {
            return Err(Error::domain(format!("invalid length range {lo}..{hi}")));
        }
        if !(self.success_rate > 0.0 && self.success_rate < 1.0) {
            return Err(Error::domain("success_rate must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.signal) || !(0.0..=1.0).contains(&self.early_signal) {
            return Err(Error::domain("signal and early_signal must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.corruption_rate) {
            return Err(Error::domain("corruption_rate must be in [0, 1)"));
        }
        Ok(())
    }

    /// Probability that a successful student's action at relative position
    /// `u` is drawn from the focus categories.
    fn focus_probability(&self, u: f64) -> f64 {
        let share = if u < EARLY_SHARE {
            self.early_signal / EARLY_SHARE
        } else {
            (1.0 - self.early_signal) / (1.0 - EARLY_SHARE)
        };
        (0.5 * self.signal * share).min(1.0)
    }

    pub fn descriptor(&self) -> String {
        format!(
            "synth:n={},success_rate={},signal={},early_signal={},len={}..{},corrupt={},seed={}",
            self.n_students,
            self.success_rate,
            self.signal,
            self.early_signal,
            self.length_range.0,
            self.length_range.1,
            self.corruption_rate,
            self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    NonUtf8Byte,
    DeletedComma,
    Truncated,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: u8,
    pub planted_energy: f64,
    pub n_actions: usize,
    pub fault: Option<Fault>,
}

#[derive(Serialize)]
struct SessionFile<'a> {
    student: &'a str,
    events: Vec<EventOut>,
}

#[derive(Serialize)]
struct EventOut {
    ts: String,
    action: &'static str,
    #[serde(rename = "netEnergy", skip_serializing_if = "Option::is_none")]
    net_energy: Option<f64>,
}

/// One generated file, before it is written anywhere.
#[derive(Debug, Clone)]
pub struct GeneratedFile {
    pub entry: ManifestEntry,
    pub bytes: Vec<u8>,
}

fn student_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn timestamp(millis: i64) -> String {
    DateTime::<Utc>::from_timestamp_millis(millis)
        .expect("generator timestamps are in range")
        .to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn generate_one(config: &GenConfig, index: usize, base: &WeightedIndex<f64>) -> GeneratedFile {
    let mut rng = student_rng(config.seed, index);
    let id = format!("student_{index:04}");

    let (label, energy) = if rng.gen::<f64>() < OUTLIER_PROBABILITY {
        (0, rng.gen_range(OUTLIER_RANGE_KWH.0..=OUTLIER_RANGE_KWH.1))
    } else if rng.gen::<f64>() < config.success_rate {
        (1, rng.gen_range(-SUCCESS_MAX_KWH..=SUCCESS_MAX_KWH))
    } else {
        let magnitude = rng.gen_range(FAILURE_RANGE_KWH.0..=FAILURE_RANGE_KWH.1);
        (0, if rng.gen::<bool>() { magnitude } else { -magnitude })
    };
    let energy = (energy * 10.0).round() / 10.0;

    let n_actions = rng.gen_range(config.length_range.0..=config.length_range.1);
    let mut clock = START_MILLIS + index as i64 * 3_600_000 + rng.gen_range(0..600_000);
    let mut events = Vec::with_capacity(n_actions);
    for j in 0..n_actions - 1 {
        let u = j as f64 / n_actions as f64;
        let category = if label == 1 && rng.gen::<f64>() < config.focus_probability(u) {
            FOCUS[rng.gen_range(0..FOCUS.len())]
        } else {
            ActionCategory::ALL[base.sample(&mut rng)]
        };
        let names = action_names(category);
        events.push(EventOut {
            ts: timestamp(clock),
            action: names[rng.gen_range(0..names.len())],
            net_energy: None,
        });
        clock += rng.gen_range(500..90_000);
    }
    events.push(EventOut {
        ts: timestamp(clock),
        action: FINAL_ACTION,
        net_energy: Some(energy),
    });

    let mut bytes = serde_json::to_vec_pretty(&SessionFile { student: &id, events })
        .expect("session serialization cannot fail");

    let fault = (rng.gen::<f64>() < config.corruption_rate).then(|| match rng.gen_range(0..3) {
        0 => Fault::NonUtf8Byte,
        1 => Fault::DeletedComma,
        _ => Fault::Truncated,
    });
    match fault {
        Some(Fault::NonUtf8Byte) => {
            let at = rng.gen_range(1..bytes.len());
            let junk = [0xFF, 0xFE, 0x80, 0xC0][rng.gen_range(0..4)];
            bytes.insert(at, junk);
        }
        Some(Fault::DeletedComma) => {
            let commas: Vec<usize> = bytes
                .iter()
                .enumerate()
                .filter(|(_, &b)| b == b',')
                .map(|(i, _)| i)
                .collect();
            let at = commas[rng.gen_range(0..commas.len())];
            bytes.remove(at);
        }
        Some(Fault::Truncated) => {
            let cut = rng.gen_range(bytes.len() / 2..bytes.len() - 1);
            bytes.truncate(cut);
        }
        None => {}
    }

    GeneratedFile {
        entry: ManifestEntry {
            file: format!("{id}.json"),
            label,
            planted_energy: energy,
            n_actions,
            fault,
        },
        bytes,
    }
}

/// Generates every student's file in memory, in student order.
pub fn generate_files(config: &GenConfig) -> Result<Vec<GeneratedFile>> {
    config.validate()?;
    let base = WeightedIndex::new(BASE_WEIGHTS).expect("base weights are positive");
    Ok((0..config.n_students).map(|i| generate_one(config, i, &base)).collect())
}

/// Writes `n_students` session files into `out_dir` and returns the manifest.
pub fn generate(config: &GenConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let files = generate_files(config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Vec::with_capacity(files.len());
    for f in files {
        let path = out_dir.join(&f.entry.file);
        fs::write(&path, &f.bytes).map_err(|e| Error::io(&path, e))?;
        manifest.push(f.entry);
    }
    Ok(manifest)
}

/// Builds a cohort straight from generated files, skipping the filesystem.
/// Only valid for uncorrupted configurations.
pub fn generate_cohort(config: &GenConfig, mapping: &CategoryMapping) -> Result<Cohort> {
    if config.corruption_rate > 0.0 {
        return Err(Error::domain("in-memory cohorts cannot be corrupted; use generate + load_cohort"));
    }
    let sessions = generate_files(config)?
        .iter()
        .map(|f| {
            let stem = f.entry.file.trim_end_matches(".json");
            parse_session(&f.bytes, stem, mapping)
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(sessions, config.descriptor())
}

pub fn manifest_csv(manifest: &[ManifestEntry]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["file", "label", "net_energy_kwh", "n_actions", "corrupted"])?;
    for e in manifest {
        w.write_record([
            e.file.clone(),
            e.label.to_string(),
            e.planted_energy.to_string(),
            e.n_actions.to_string(),
            e.fault.is_some().to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::io("manifest.csv", e.into_error()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mismatch {
    /// Binarizing the planted energy disagrees with the planted label.
    Label { file: String, planted: u8, binarized: u8 },
    /// An uncorrupted file did not make it into the cohort.
    Missing { file: String },
    /// An uncorrupted file loaded with a different final energy.
    Energy { file: String, planted: f64, loaded: Option<f64> },
}

/// Checks a loaded cohort against the generator's manifest. An empty result
/// means full agreement.
pub fn verify_manifest(manifest: &[ManifestEntry], cohort: &Cohort, band: f64) -> Result<Vec<Mismatch>> {
    let mut out = Vec::new();
    for e in manifest {
        let binarized = binarize(e.planted_energy, band)?;
        if binarized != e.label {
            out.push(Mismatch::Label {
                file: e.file.clone(),
                planted: e.label,
                binarized,
            });
        }
        if e.fault.is_some() {
            continue;
        }
        let stem = e.file.trim_end_matches(".json");
        match cohort.sessions.iter().find(|s| s.student_id == stem) {
            None => out.push(Mismatch::Missing { file: e.file.clone() }),
            Some(s) if s.final_net_energy != Some(e.planted_energy) => out.push(Mismatch::Energy {
                file: e.file.clone(),
                planted: e.planted_energy,
                loaded: s.final_net_energy,
            }),
            Some(_) => {}
        }
    }
    Ok(out)
}
