//! Linear and logistic regression written against plain row vectors, with
//! seeded train/test splitting and the outcome binarization rule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{apply_standardizer, ceil_count, fit_standardizer, standardize_row, FeatureMatrix};
use crate::model::{Cohort, Family, FitSummary, ModelWeights};

/// Diagonal jitter added to the normal-equation Gram matrix.
pub const RIDGE_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    /// Final net energy in kWh.
    Energy,
    /// 1 for a successful design, 0 otherwise.
    SuccessLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub targets: Vec<f64>,
    pub target_kind: TargetKind,
}

impl Dataset {
    pub fn new(features: FeatureMatrix, targets: Vec<f64>, target_kind: TargetKind) -> Result<Self> {
        if features.n_rows() != targets.len() {
            return Err(Error::domain(format!(
                "{} feature rows but {} targets",
                features.n_rows(),
                targets.len()
            )));
        }
        if target_kind == TargetKind::SuccessLabel && targets.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::domain("success labels must be 0 or 1"));
        }
        Ok(Dataset {
            features,
            targets,
            target_kind,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Dataset {
            features: self.features.select(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            target_kind: self.target_kind,
        }
    }

    /// Targets as 0/1 labels.
    pub fn labels(&self) -> Vec<u8> {
        self.targets.iter().map(|&t| (t >= 0.5) as u8).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    /// Preserve class proportions in both halves (labels only).
    #[serde(default)]
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            test_fraction: 0.2,
            seed,
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticHyper {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// L2 strength; the penalty is `l2_strength / (2n) * |coefficients|^2`.
    pub l2_strength: f64,
    /// Stop once the gradient's infinity norm falls below this.
    pub tolerance: f64,
}

impl Default for LogisticHyper {
    fn default() -> Self {
        LogisticHyper {
            learning_rate: 0.1,
            max_iters: 5000,
            l2_strength: 1.0,
            tolerance: 1e-6,
        }
    }
}

impl LogisticHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.l2_strength > 0.0 && self.tolerance > 0.0 && self.max_iters > 0) {
            return Err(Error::domain("logistic hyperparameters must all be positive"));
        }
        Ok(())
    }
}

/// 1 when `net_energy` lies in `[-band, band]`.
pub fn binarize(net_energy: f64, band: f64) -> Result<u8> {
    if !(band > 0.0 && band.is_finite()) {
        return Err(Error::domain(format!("band must be positive, got {band}")));
    }
    if !net_energy.is_finite() {
        return Err(Error::domain(format!("net energy {net_energy} is not finite")));
    }
    Ok((net_energy.abs() <= band) as u8)
}

/// Drops sessions without a final net energy.
pub fn filter_labeled(cohort: &Cohort) -> Cohort {
    Cohort {
        sessions: cohort
            .sessions
            .iter()
            .filter(|s| s.final_net_energy.is_some())
            .cloned()
            .collect(),
        provenance: cohort.provenance.clone(),
    }
}

/// Train and test row indices, each in ascending order.
pub fn split_indices(n: usize, spec: &SplitSpec, labels: Option<&[u8]>) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 5 {
        return Err(Error::domain(format!("need at least 5 rows to split, got {n}")));
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::domain(format!("test fraction {} outside (0, 1)", spec.test_fraction)));
    }
    let n_test = ceil_count(spec.test_fraction, n).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut test = if spec.stratified {
        let labels = labels.ok_or_else(|| Error::domain("stratified split needs labels"))?;
        if labels.len() != n {
            return Err(Error::domain("label count differs from row count"));
        }
        let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, &l) in labels.iter().enumerate() {
            groups[(l != 0) as usize].push(i);
        }
        let want_pos = ((n_test * groups[1].len()) as f64 / n as f64).round() as usize;
        let want_pos = want_pos.min(groups[1].len()).max(n_test.saturating_sub(groups[0].len()));
        let quota = [n_test - want_pos, want_pos];
        let mut test = Vec::with_capacity(n_test);
        for (g, q) in groups.iter_mut().zip(quota) {
            g.shuffle(&mut rng);
            test.extend_from_slice(&g[..q]);
        }
        test
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order.truncate(n_test);
        order
    };
    test.sort_unstable();
    let mut in_test = vec![false; n];
    for &i in &test {
        in_test[i] = true;
    }
    let train = (0..n).filter(|&i| !in_test[i]).collect();
    Ok((train, test))
}

pub fn split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let labels = (d.target_kind == TargetKind::SuccessLabel).then(|| d.labels());
    let (train, test) = split_indices(d.len(), spec, labels.as_deref())?;
    Ok((d.select(&train), d.select(&test)))
}

/// Solves `a x = b` for symmetric positive-definite `a` (row-major, k×k).
fn cholesky_solve(mut a: Vec<f64>, mut b: Vec<f64>, k: usize) -> Result<Vec<f64>> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(Error::domain("normal equations are not positive definite"));
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / d;
        }
    }
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= a[i * k + p] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for p in i + 1..k {
            s -= a[p * k + i] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    Ok(b)
}

/// Ordinary least squares on `[1 | X]` via the normal equations.
pub fn fit_linear(train: &Dataset) -> Result<ModelWeights> {
    if train.target_kind != TargetKind::Energy {
        return Err(Error::domain("linear regression needs energy targets"));
    }
    let n = train.len();
    if n < 2 {
        return Err(Error::domain(format!("linear regression needs at least 2 rows, got {n}")));
    }
    let k = train.features.n_cols() + 1;
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    let mut design = vec![0.0; k];
    for (row, &y) in train.features.rows.iter().zip(&train.targets) {
        design[0] = 1.0;
        design[1..].copy_from_slice(row);
        for i in 0..k {
            rhs[i] += design[i] * y;
            for j in 0..=i {
                gram[i * k + j] += design[i] * design[j];
            }
        }
    }
    for i in 0..k {
        gram[i * k + i] += RIDGE_JITTER;
        for j in 0..i {
            gram[j * k + i] = gram[i * k + j];
        }
    }
    let beta = cholesky_solve(gram, rhs, k)?;
    let mut w = ModelWeights::zeros(Family::Linear, train.features.kind, k - 1);
    w.intercept = beta[0];
    w.coefficients = beta[1..].to_vec();
    w.pad_length = train.features.pad_length;
    w.pad_code = train.features.pad_code;
    Ok(w)
}

fn linear_scores(w: &ModelWeights, features: &FeatureMatrix) -> Result<Vec<f64>> {
    if features.n_rows() > 0 && features.n_cols() != w.width() {
        return Err(Error::domain(format!(
            "model expects {} features, matrix has {}",
            w.width(),
            features.n_cols()
        )));
    }
    Ok(features
        .rows
        .iter()
        .map(|row| {
            let dot = match &w.standardization {
                Some(stats) => dot(&standardize_row(row, stats), &w.coefficients),
                None => dot(row, &w.coefficients),
            };
            w.intercept + dot
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn predict_linear(w: &ModelWeights, features: &FeatureMatrix) -> Result<Vec<f64>> {
    if w.family != Family::Linear {
        return Err(Error::domain("not a linear model"));
    }
    linear_scores(w, features)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Regularized mean cross-entropy and its gradient. The gradient vector holds
/// the intercept component first, then one entry per coefficient.
pub fn logistic_loss_grad(w: &ModelWeights, d: &Dataset, hyper: &LogisticHyper) -> (f64, Vec<f64>) {
    let n = d.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; w.width() + 1];
    for (row, &y) in d.features.rows.iter().zip(&d.targets) {
        let z = w.intercept + dot(row, &w.coefficients);
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        grad[0] += r;
        for (g, x) in grad[1..].iter_mut().zip(row) {
            *g += r * x;
        }
    }
    let lambda = hyper.l2_strength;
    loss = loss / n + lambda / (2.0 * n) * dot(&w.coefficients, &w.coefficients);
    grad[0] /= n;
    for (g, c) in grad[1..].iter_mut().zip(&w.coefficients) {
        *g = *g / n + lambda / n * c;
    }
    (loss, grad)
}

/// Full-batch gradient descent from zero weights.
///
/// A step that would increase the loss is retried at half the step size, and
/// the smaller step is kept from then on.
pub fn fit_logistic(train: &Dataset, hyper: &LogisticHyper) -> Result<ModelWeights> {
    if train.target_kind != TargetKind::SuccessLabel {
        return Err(Error::domain("logistic regression needs success labels"));
    }
    hyper.validate()?;
    let positives = train.targets.iter().filter(|&&t| t == 1.0).count();
    if positives == 0 {
        return Err(Error::DegenerateLabels(0));
    }
    if positives == train.len() {
        return Err(Error::DegenerateLabels(1));
    }

    let mut w = ModelWeights::zeros(Family::Logistic, train.features.kind, train.features.n_cols());
    w.pad_length = train.features.pad_length;
    w.pad_code = train.features.pad_code;
    let (mut loss, mut grad) = logistic_loss_grad(&w, train, hyper);
    let mut step = hyper.learning_rate;
    let mut iterations = 0;
    let mut converged = false;
    let mut candidate = w.clone();
    while iterations < hyper.max_iters {
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) <= hyper.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        loop {
            candidate.intercept = w.intercept - step * grad[0];
            for ((c, wc), g) in candidate.coefficients.iter_mut().zip(&w.coefficients).zip(&grad[1..]) {
                *c = wc - step * g;
            }
            let (new_loss, new_grad) = logistic_loss_grad(&candidate, train, hyper);
            if new_loss <= loss {
                std::mem::swap(&mut w, &mut candidate);
                loss = new_loss;
                grad = new_grad;
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                // No representable descent step left.
                iterations = hyper.max_iters;
                break;
            }
        }
    }
    w.fit = Some(FitSummary {
        iterations,
        final_loss: loss,
        converged,
    });
    Ok(w)
}

/// Labels with `sigmoid(score) >= threshold`.
pub fn predict_logistic(w: &ModelWeights, features: &FeatureMatrix, threshold: f64) -> Result<Vec<u8>> {
    if w.family != Family::Logistic {
        return Err(Error::domain("not a logistic model"));
    }
    Ok(linear_scores(w, features)?
        .into_iter()
        .map(|z| (sigmoid(z) >= threshold) as u8)
        .collect())
}

pub fn accuracy(predicted: &[u8], actual: &[u8]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != actual.len() {
        return Err(Error::domain(format!(
            "accuracy needs equal nonempty vectors, got {} and {}",
            predicted.len(),
            actual.len()
        )));
    }
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Fits either family, optionally standardizing with statistics from `train`.
/// The returned weights carry the standardization so that prediction on raw
/// features reproduces the fit.
pub fn fit_model(train: &Dataset, family: Family, hyper: &LogisticHyper, standardize: bool) -> Result<ModelWeights> {
    let stats = if standardize {
        Some(fit_standardizer(&train.features)?)
    } else {
        None
    };
    let scaled;
    let data = match &stats {
        Some(s) => {
            scaled = Dataset {
                features: apply_standardizer(&train.features, s)?,
                ..train.clone()
            };
            &scaled
        }
        None => train,
    };
    let mut w = match family {
        Family::Linear => fit_linear(data)?,
        Family::Logistic => fit_logistic(data, hyper)?,
    };
    w.standardization = stats;
    Ok(w)
}
