//! Feature construction: per-category tallies and numerically coded action
//! sequences, plus the column standardizer shared by both learners.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{category_of_code, ActionCategory, ColumnStats, FeatureKind, SessionLog};

/// Code written into padded sequence slots; one past the last real code.
pub const PAD_CODE: u8 = 13;

/// Standard deviations below this are treated as a constant column.
pub const MIN_STDDEV: f64 = 1e-12;

pub const BUILTIN_MAPPING_VERSION: &str = "builtin-1";

/// Ordered keyword rules mapping raw action names to categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMapping {
    rules: Vec<(String, ActionCategory)>,
    version: String,
}

#[derive(Serialize, Deserialize)]
struct MappingFile {
    version: String,
    rules: Vec<RuleEntry>,
}

#[derive(Serialize, Deserialize)]
struct RuleEntry {
    keyword: String,
    code: i64,
}

impl Default for CategoryMapping {
    /// Built-in rules. Attribute keywords (color, thermal) come before
    /// building elements so that "Change Wall Color" is a color action, and
    /// the short parameter keywords ("date", "time") come last.
    fn default() -> Self {
        use ActionCategory::*;
        let rules = [
            ("color", Color),
            ("u-value", Thermal),
            ("thermal", Thermal),
            ("door", Door),
            ("floor", Floor),
            ("foundation", Foundation),
            ("wall", Wall),
            ("window", Window),
            ("roof", Roof),
            ("solar", SolarPanel),
            ("tree", Tree),
            ("building", Building),
            ("analy", Analysis),
            ("heliodon", Analysis),
            ("graph", Analysis),
            ("latitude", Parameters),
            ("location", Parameters),
            ("date", Parameters),
            ("time", Parameters),
        ];
        CategoryMapping {
            rules: rules.iter().map(|&(k, c)| (k.to_string(), c)).collect(),
            version: BUILTIN_MAPPING_VERSION.to_string(),
        }
    }
}

impl CategoryMapping {
    /// Validates and builds a mapping. Keywords are lowercased.
    pub fn new(rules: Vec<(String, ActionCategory)>, version: impl Into<String>) -> Result<Self> {
        let rules: Vec<_> = rules.into_iter().map(|(k, c)| (k.to_lowercase(), c)).collect();
        let mut seen = HashSet::new();
        for (k, _) in &rules {
            if k.is_empty() {
                return Err(Error::Mapping("empty keyword".into()));
            }
            if !seen.insert(k.as_str()) {
                return Err(Error::Mapping(format!("duplicate keyword {k:?}")));
            }
        }
        for c in ActionCategory::ALL {
            if !rules.iter().any(|(_, rc)| *rc == c) {
                return Err(Error::Mapping(format!("no rule for category {c}")));
            }
        }
        Ok(CategoryMapping {
            rules,
            version: version.into(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MappingFile = serde_json::from_str(text)?;
        let rules = file
            .rules
            .into_iter()
            .map(|r| Ok((r.keyword, category_of_code(r.code)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rules, file.version)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MappingFile {
            version: self.version.clone(),
            rules: self
                .rules
                .iter()
                .map(|(k, c)| RuleEntry {
                    keyword: k.clone(),
                    code: c.code() as i64,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn rules(&self) -> &[(String, ActionCategory)] {
        &self.rules
    }
}

/// Category of the first rule whose keyword occurs in the lowercased name.
pub fn categorize(raw_name: &str, mapping: &CategoryMapping) -> Result<ActionCategory> {
    let name = raw_name.to_lowercase();
    mapping
        .rules
        .iter()
        .find(|(k, _)| name.contains(k.as_str()))
        .map(|&(_, c)| c)
        .ok_or_else(|| Error::UnmappedAction(raw_name.to_string()))
}

/// Action counts indexed by category code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CountVector(pub [u32; ActionCategory::COUNT]);

impl CountVector {
    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| c as u64).sum()
    }

    pub fn as_features(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }
}

pub fn tally(session: &SessionLog) -> CountVector {
    let mut counts = CountVector::default();
    for a in &session.actions {
        counts.0[a.category.code() as usize] += 1;
    }
    counts
}

/// Category codes of a session's actions, in timestamp order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodeSequence(pub Vec<u8>);

impl CodeSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn encode_sequence(session: &SessionLog) -> CodeSequence {
    CodeSequence(session.actions.iter().map(|a| a.category.code()).collect())
}

/// `ceil(fraction * n)`, ignoring floating-point excess below 1e-9 so that
/// e.g. 0.2 * 55 counts as exactly 11.
pub fn ceil_count(fraction: f64, n: usize) -> usize {
    let exact = fraction * n as f64;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Leading `ceil(fraction * len)` codes of `seq`.
pub fn prefix(seq: &CodeSequence, fraction: f64) -> Result<CodeSequence> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::domain(format!("prefix fraction {fraction} outside (0, 1]")));
    }
    let mut keep = ceil_count(fraction, seq.len());
    if keep == 0 && !seq.is_empty() {
        keep = 1;
    }
    Ok(CodeSequence(seq.0[..keep].to_vec()))
}

/// Student-by-feature matrix with the metadata needed to rebuild it for new
/// students.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
    pub row_ids: Vec<String>,
    pub kind: FeatureKind,
    /// Sequence kind only.
    pub pad_code: Option<u8>,
    /// Sequence kind only.
    pub pad_length: Option<usize>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>, row_ids: Vec<String>, kind: FeatureKind) -> Result<Self> {
        if rows.len() != row_ids.len() {
            return Err(Error::domain(format!(
                "{} rows but {} row ids",
                rows.len(),
                row_ids.len()
            )));
        }
        if let Some(first) = rows.first() {
            if rows.iter().any(|r| r.len() != first.len()) {
                return Err(Error::domain("rows differ in length"));
            }
            if kind == FeatureKind::Tally && first.len() != ActionCategory::COUNT {
                return Err(Error::domain("tally rows must have 13 columns"));
            }
        }
        let (pad_code, pad_length) = match kind {
            FeatureKind::Tally => (None, None),
            FeatureKind::Sequence => (Some(PAD_CODE), Some(rows.first().map_or(0, Vec::len))),
        };
        Ok(FeatureMatrix {
            rows,
            row_ids,
            kind,
            pad_code,
            pad_length,
        })
    }

    /// Tally matrix for a list of sessions, one row per session.
    pub fn from_tallies(sessions: &[SessionLog]) -> Self {
        FeatureMatrix {
            rows: sessions.iter().map(|s| tally(s).as_features()).collect(),
            row_ids: sessions.iter().map(|s| s.student_id.clone()).collect(),
            kind: FeatureKind::Tally,
            pad_code: None,
            pad_length: None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        match self.rows.first() {
            Some(r) => r.len(),
            None if self.kind == FeatureKind::Tally => ActionCategory::COUNT,
            None => self.pad_length.unwrap_or(0),
        }
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        FeatureMatrix {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            row_ids: indices.iter().map(|&i| self.row_ids[i].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Right-pads every sequence with [`PAD_CODE`] to the longest length.
pub fn pad_matrix(seqs: &[CodeSequence], ids: &[String]) -> Result<FeatureMatrix> {
    let pad_length = seqs.iter().map(CodeSequence::len).max().unwrap_or(0);
    pad_to(seqs, ids, pad_length)
}

/// Pads or truncates every sequence to exactly `pad_length` codes.
pub fn pad_to(seqs: &[CodeSequence], ids: &[String], pad_length: usize) -> Result<FeatureMatrix> {
    if seqs.len() != ids.len() {
        return Err(Error::domain(format!(
            "{} sequences but {} ids",
            seqs.len(),
            ids.len()
        )));
    }
    let rows = seqs
        .iter()
        .map(|s| {
            (0..pad_length)
                .map(|i| s.0.get(i).copied().unwrap_or(PAD_CODE) as f64)
                .collect()
        })
        .collect();
    Ok(FeatureMatrix {
        rows,
        row_ids: ids.to_vec(),
        kind: FeatureKind::Sequence,
        pad_code: Some(PAD_CODE),
        pad_length: Some(pad_length),
    })
}

/// Column means and population standard deviations of `train`.
pub fn fit_standardizer(train: &FeatureMatrix) -> Result<Vec<ColumnStats>> {
    let n = train.n_rows();
    if n < 2 {
        return Err(Error::domain(format!("standardizer needs at least 2 rows, got {n}")));
    }
    let k = train.n_cols();
    let mut mean = vec![0.0; k];
    for row in &train.rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; k];
    for row in &train.rows {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    Ok(mean
        .into_iter()
        .zip(var)
        .map(|(mean, v)| {
            let sd = (v / n as f64).sqrt();
            ColumnStats {
                mean,
                stddev: if sd < MIN_STDDEV { 1.0 } else { sd },
            }
        })
        .collect())
}

fn check_width(m: &FeatureMatrix, stats: &[ColumnStats]) -> Result<()> {
    if m.n_rows() > 0 && m.n_cols() != stats.len() {
        return Err(Error::domain(format!(
            "matrix has {} columns but standardizer has {}",
            m.n_cols(),
            stats.len()
        )));
    }
    Ok(())
}

pub fn standardize_row(row: &[f64], stats: &[ColumnStats]) -> Vec<f64> {
    row.iter()
        .zip(stats)
        .map(|(x, s)| (x - s.mean) / s.stddev)
        .collect()
}

pub fn apply_standardizer(m: &FeatureMatrix, stats: &[ColumnStats]) -> Result<FeatureMatrix> {
    check_width(m, stats)?;
    Ok(FeatureMatrix {
        rows: m.rows.iter().map(|r| standardize_row(r, stats)).collect(),
        ..m.clone()
    })
}

/// Inverse of [`apply_standardizer`].
pub fn unapply_standardizer(m: &FeatureMatrix, stats: &[ColumnStats]) -> Result<FeatureMatrix> {
    check_width(m, stats)?;
    Ok(FeatureMatrix {
        rows: m
            .rows
            .iter()
            .map(|r| r.iter().zip(stats).map(|(z, s)| z * s.stddev + s.mean).collect())
            .collect(),
        ..m.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DesignAction;
    use chrono::DateTime;
    use proptest::prelude::*;

    fn session(cats: &[ActionCategory]) -> SessionLog {
        SessionLog {
            student_id: "s".into(),
            actions: cats
                .iter()
                .map(|&category| DesignAction {
                    timestamp: DateTime::UNIX_EPOCH,
                    raw_name: category.name().into(),
                    category,
                })
                .collect(),
            final_net_energy: None,
        }
    }

    fn seq(codes: &[u8]) -> CodeSequence {
        CodeSequence(codes.to_vec())
    }

    fn matrix(cols: &[&[f64]]) -> FeatureMatrix {
        let n = cols[0].len();
        let rows = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        FeatureMatrix::new(rows, (0..n).map(|i| i.to_string()).collect(), FeatureKind::Sequence).unwrap()
    }

    #[test]
    fn categorize_examples() {
        let m = CategoryMapping::default();
        assert_eq!(categorize("Add Wall", &m).unwrap(), ActionCategory::Wall);
        assert_eq!(categorize("Move Solar Panel", &m).unwrap(), ActionCategory::SolarPanel);
        assert_eq!(categorize("Show Heliodon", &m).unwrap(), ActionCategory::Analysis);
        assert_eq!(categorize("Change Latitude", &m).unwrap(), ActionCategory::Parameters);
        assert_eq!(categorize("Edit Wall U-Value", &m).unwrap(), ActionCategory::Thermal);
        assert_eq!(categorize("Change Roof Color", &m).unwrap(), ActionCategory::Color);
        assert_eq!(categorize("Update Window", &m).unwrap(), ActionCategory::Window);
        assert!(matches!(categorize("Teleport", &m), Err(Error::UnmappedAction(n)) if n == "Teleport"));
    }

    #[test]
    fn builtin_mapping_is_valid_and_round_trips() {
        let m = CategoryMapping::default();
        let again = CategoryMapping::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(again, m);
        assert_eq!(m.version(), BUILTIN_MAPPING_VERSION);
    }

    #[test]
    fn mapping_validation() {
        let text = r#"{"version":"v","rules":[{"keyword":"wall","code":3}]}"#;
        assert!(matches!(CategoryMapping::from_json(text), Err(Error::Mapping(_))));
        let mut rules: Vec<_> = ActionCategory::ALL.iter().map(|c| (c.name().to_string(), *c)).collect();
        rules.push(("DOOR".into(), ActionCategory::Door));
        assert!(matches!(CategoryMapping::new(rules, "v"), Err(Error::Mapping(_))));
        let text = r#"{"version":"v","rules":[{"keyword":"wall","code":13}]}"#;
        assert!(matches!(CategoryMapping::from_json(text), Err(Error::Domain(_))));
    }

    #[test]
    fn tally_examples() {
        use ActionCategory::*;
        assert_eq!(tally(&session(&[])), CountVector::default());
        let t = tally(&session(&[Wall, Wall, SolarPanel]));
        let mut expected = [0; 13];
        expected[3] = 2;
        expected[6] = 1;
        assert_eq!(t.0, expected);
        assert_eq!(t, tally(&session(&[SolarPanel, Wall, Wall])));
    }

    #[test]
    fn encode_examples() {
        use ActionCategory::*;
        assert_eq!(encode_sequence(&session(&[Door, SolarPanel])).0, [0, 6]);
        assert!(encode_sequence(&session(&[])).is_empty());
        assert_eq!(encode_sequence(&session(&[Wall, Roof, Wall])).0, [3, 5, 3]);
    }

    #[test]
    fn prefix_examples() {
        let ten = seq(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(prefix(&ten, 0.1).unwrap().0, [0]);
        assert_eq!(prefix(&ten, 1.0).unwrap(), ten);
        assert_eq!(prefix(&seq(&[1, 2, 3, 4, 5, 6, 7]), 0.5).unwrap().0, [1, 2, 3, 4]);
        assert!(prefix(&ten, 0.0).is_err());
        assert!(prefix(&ten, 1.5).is_err());
        assert!(prefix(&ten, f64::NAN).is_err());
        assert!(prefix(&seq(&[]), 0.3).unwrap().is_empty());
    }

    #[test]
    fn pad_examples() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let m = pad_matrix(&[seq(&[0, 6]), seq(&[3])], &ids).unwrap();
        assert_eq!(m.rows, vec![vec![0.0, 6.0], vec![3.0, 13.0]]);
        assert_eq!(m.pad_length, Some(2));
        assert_eq!(m.pad_code, Some(13));
        let m = pad_matrix(&[seq(&[1, 2]), seq(&[3, 4])], &ids).unwrap();
        assert_eq!(m.rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let m = pad_matrix(&[seq(&[]), seq(&[3])], &ids).unwrap();
        assert_eq!(m.rows, vec![vec![13.0], vec![3.0]]);
        let m = pad_to(&[seq(&[1, 2, 3]), seq(&[])], &ids, 2).unwrap();
        assert_eq!(m.rows, vec![vec![1.0, 2.0], vec![13.0, 13.0]]);
    }

    #[test]
    fn standardizer_examples() {
        let s = fit_standardizer(&matrix(&[&[0.0, 2.0]])).unwrap();
        assert_eq!(s, vec![ColumnStats { mean: 1.0, stddev: 1.0 }]);
        let s = fit_standardizer(&matrix(&[&[5.0, 5.0, 5.0]])).unwrap();
        assert_eq!(s, vec![ColumnStats { mean: 5.0, stddev: 1.0 }]);
        let s = fit_standardizer(&matrix(&[&[1.0, 3.0, 5.0]])).unwrap();
        assert_eq!(s[0].mean, 3.0);
        // sqrt(8/3)
        assert!((s[0].stddev - 1.632993161855452).abs() < 1e-12);
        assert!(fit_standardizer(&matrix(&[&[1.0]])).is_err());
    }

    #[test]
    fn apply_standardizer_examples() {
        let m = matrix(&[&[0.0, 2.0], &[4.0, -1.0]]);
        let identity = vec![ColumnStats { mean: 0.0, stddev: 1.0 }; 2];
        assert_eq!(apply_standardizer(&m, &identity).unwrap(), m);
        let col = matrix(&[&[0.0, 2.0]]);
        let z = apply_standardizer(&col, &fit_standardizer(&col).unwrap()).unwrap();
        assert_eq!(z.rows, vec![vec![-1.0], vec![1.0]]);
        assert_eq!(z.pad_length, col.pad_length);
        // Test rows are scaled with the training statistics only.
        let train_stats = fit_standardizer(&col).unwrap();
        let test = matrix(&[&[4.0, 6.0]]);
        assert_eq!(apply_standardizer(&test, &train_stats).unwrap().rows, vec![vec![3.0], vec![5.0]]);
        assert!(apply_standardizer(&m, &train_stats).is_err());
    }

    #[test]
    fn ceil_count_guards_rounding() {
        assert_eq!(ceil_count(0.2, 55), 11);
        assert_eq!(ceil_count(0.2, 128), 26);
        assert_eq!(ceil_count(0.7, 10), 7);
        assert_eq!(ceil_count(0.5, 7), 4);
    }

    fn arb_seq() -> impl Strategy<Value = CodeSequence> {
        prop::collection::vec(0u8..13, 0..60).prop_map(CodeSequence)
    }

    proptest! {
        #[test]
        fn tally_is_permutation_invariant(codes in prop::collection::vec(0i64..13, 0..80), seed in any::<u64>()) {
            let cats: Vec<_> = codes.iter().map(|&c| category_of_code(c).unwrap()).collect();
            let mut shuffled = cats.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let t = tally(&session(&cats));
            prop_assert_eq!(t, tally(&session(&shuffled)));
            prop_assert_eq!(t.total(), cats.len() as u64);
        }

        #[test]
        fn prefix_length_and_monotonicity(s in arb_seq(), a in 1u32..=100, b in 1u32..=100) {
            let (f1, f2) = (a.min(b) as f64 / 100.0, a.max(b) as f64 / 100.0);
            let p1 = prefix(&s, f1).unwrap();
            let p2 = prefix(&s, f2).unwrap();
            // Exact integer ceil(a * len / 100).
            let expected = (a.min(b) as usize * s.len()).div_ceil(100);
            prop_assert_eq!(p1.len(), expected);
            prop_assert!(p2.0.starts_with(&p1.0));
            prop_assert!(s.0.starts_with(&p2.0));
            prop_assert_eq!(s.is_empty(), p1.is_empty());
        }

        #[test]
        fn padded_rows_restrict_to_inputs(seqs in prop::collection::vec(arb_seq(), 1..8)) {
            let ids: Vec<String> = (0..seqs.len()).map(|i| i.to_string()).collect();
            let m = pad_matrix(&seqs, &ids).unwrap();
            for (row, s) in m.rows.iter().zip(&seqs) {
                let head: Vec<u8> = row[..s.len()].iter().map(|&x| x as u8).collect();
                prop_assert_eq!(&head, &s.0);
                prop_assert!(row[s.len()..].iter().all(|&x| x == PAD_CODE as f64));
            }
        }

        #[test]
        fn standardize_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e4f64..1e4, 4), 2..20)) {
            let ids = (0..rows.len()).map(|i| i.to_string()).collect();
            let m = FeatureMatrix::new(rows, ids, FeatureKind::Sequence).unwrap();
            let stats = fit_standardizer(&m).unwrap();
            let back = unapply_standardizer(&apply_standardizer(&m, &stats).unwrap(), &stats).unwrap();
            for (r, b) in m.rows.iter().zip(&back.rows) {
                for (x, y) in r.iter().zip(b) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
            }
        }
    }
}
