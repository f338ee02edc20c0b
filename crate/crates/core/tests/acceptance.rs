//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line per criterion and exits nonzero if any failed.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use designlog::experiments::{
    mean_of, prefix_sweep, render_report, stability_run, ExperimentConfig, ReportFormat,
};
use designlog::features::{CategoryMapping, FeatureMatrix};
use designlog::ingest::{clean_directory, load_cohort, repair, RepairOutcome};
use designlog::learners::{
    binarize, fit_linear, logistic_loss_grad, split_indices, Dataset, LogisticHyper, SplitSpec, TargetKind,
};
use designlog::synth::{generate, generate_cohort, generate_files, GenConfig};
use designlog::{Family, FeatureKind, ModelWeights};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
    let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
    FeatureMatrix::new(rows, ids, FeatureKind::Sequence).unwrap()
}

/// Regularized cross-entropy written out directly from its definition.
fn oracle_loss(intercept: f64, coef: &[f64], rows: &[Vec<f64>], y: &[f64], lambda: f64) -> f64 {
    let n = rows.len() as f64;
    let mut total = 0.0;
    for (row, &t) in rows.iter().zip(y) {
        let z = intercept + row.iter().zip(coef).map(|(x, c)| x * c).sum::<f64>();
        let p = 1.0 / (1.0 + (-z).exp());
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    total / n + lambda / (2.0 * n) * coef.iter().map(|c| c * c).sum::<f64>()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..=20);
        let k = rng.gen_range(1..=8);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
        y[0] = 0.0;
        y[1] = 1.0;
        let hyper = LogisticHyper {
            l2_strength: rng.gen_range(0.1..2.0),
            ..LogisticHyper::default()
        };
        let d = Dataset::new(matrix(rows.clone()), y.clone(), TargetKind::SuccessLabel).unwrap();
        let mut w = ModelWeights::zeros(Family::Logistic, FeatureKind::Tally, k);
        w.intercept = rng.gen_range(-1.0..1.0);
        w.coefficients.iter_mut().for_each(|c| *c = rng.gen_range(-1.0..1.0));

        let (loss, grad) = logistic_loss_grad(&w, &d, &hyper);
        let lambda = hyper.l2_strength;
        let base = oracle_loss(w.intercept, &w.coefficients, &rows, &y, lambda);
        check((loss - base).abs() <= 1e-12 * base.max(1.0), format!("loss {loss} vs oracle {base}"))?;

        for j in 0..=k {
            let shifted = |delta: f64| {
                let mut b0 = w.intercept;
                let mut c = w.coefficients.clone();
                if j == 0 {
                    b0 += delta;
                } else {
                    c[j - 1] += delta;
                }
                oracle_loss(b0, &c, &rows, &y, lambda)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-5, format!("max relative error {worst:.3e}"))?;
    check(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("max relative error {worst:.2e} in {elapsed:.2?}"))
}

fn linear_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let beta: Vec<f64> = (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| beta[0] + r.iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>())
        .collect();
    let d = Dataset::new(matrix(rows.clone()), y.clone(), TargetKind::Energy).unwrap();
    let w = fit_linear(&d).map_err(|e| e.to_string())?;
    let fitted: Vec<f64> = std::iter::once(w.intercept).chain(w.coefficients.iter().copied()).collect();

    let planted_err = fitted.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(planted_err <= 1e-6, format!("planted error {planted_err:.3e}"))?;

    let x = DMatrix::from_fn(20, 6, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let xt = x.transpose();
    let solved = (&xt * &x)
        .lu()
        .solve(&(&xt * DVector::from_vec(y)))
        .ok_or("oracle solve failed")?;
    let oracle_err = fitted.iter().zip(solved.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(oracle_err <= 1e-8, format!("oracle error {oracle_err:.3e}"))?;
    Ok(format!("planted error {planted_err:.1e}, oracle error {oracle_err:.1e}"))
}

fn split_arithmetic() -> Outcome {
    let (train, test) = split_indices(55, &SplitSpec::new(0), None).map_err(|e| e.to_string())?;
    check(test.len() == 11 && train.len() == 44, format!("55 rows split {}/{}", train.len(), test.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let seed = rng.gen::<u64>();
        let n = rng.gen_range(5..300);
        let (train, test) = split_indices(n, &SplitSpec::new(seed), None).map_err(|e| e.to_string())?;
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        check(all == (0..n).collect::<Vec<_>>(), format!("seed {seed}: not a partition of {n}"))?;
        check(test.len() == (n as f64 * 0.2).ceil() as usize, format!("seed {seed}: test size {}", test.len()))?;
    }
    Ok("55 -> 44/11, 100 random partitions disjoint and complete".into())
}

fn band_rule() -> Outcome {
    let b = |e: f64| binarize(e, 10_000.0).unwrap();
    for e in [-10_000.0, -9_999.9, 0.0, 10_000.0] {
        check(b(e) == 1, format!("{e} should be a success"))?;
    }
    for e in [-10_000.1, 10_000.1, 210_000.0, 660_000.0] {
        check(b(e) == 0, format!("{e} should be a failure"))?;
    }
    Ok("inclusive ±10000 band, outliers fail".into())
}

fn stability_analogue() -> Outcome {
    let start = Instant::now();
    let cohort = generate_cohort(&GenConfig::default(), &CategoryMapping::default()).map_err(|e| e.to_string())?;
    let report = stability_run(&cohort, &ExperimentConfig::default()).map_err(|e| e.to_string())?;
    let baseline: f64 = report.note_value("majority_baseline").unwrap().parse().unwrap();
    let acc: Vec<f64> = report.values("test_accuracy").into_iter().flatten().collect();
    let elapsed = start.elapsed();
    check(acc.len() == 10, format!("{} of 10 iterations produced an accuracy", acc.len()))?;
    check(acc.iter().all(|&a| a > 0.5), format!("accuracies {acc:?}"))?;
    let above = acc.iter().filter(|&&a| a > baseline).count();
    check(above >= 7, format!("{above}/10 above baseline {baseline}: {acc:?}"))?;
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    let min = acc.iter().copied().fold(1.0, f64::min);
    Ok(format!("min {min:.3}, {above}/10 above baseline {baseline:.3}, {elapsed:.2?}"))
}

fn prefix_analogue() -> Outcome {
    let start = Instant::now();
    let gen = GenConfig {
        early_signal: 0.6,
        ..GenConfig::default()
    };
    let cohort = generate_cohort(&gen, &CategoryMapping::default()).map_err(|e| e.to_string())?;
    let report = prefix_sweep(&cohort, &ExperimentConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let fractions = report.values("fraction");
    let acc = report.values("test_accuracy");
    let mean_at = |f: f64| {
        let cells: Vec<Option<f64>> = fractions
            .iter()
            .zip(&acc)
            .filter(|(fr, _)| (fr.unwrap() - f).abs() < 1e-9)
            .map(|(_, a)| *a)
            .collect();
        mean_of(&cells).unwrap_or(0.0)
    };
    let (m01, m06, m10) = (mean_at(0.1), mean_at(0.6), mean_at(1.0));
    check(m06 >= 0.60, format!("mean at 0.6 is {m06:.3}"))?;
    check(m10 >= m01 - 0.03, format!("mean at 1.0 {m10:.3} vs 0.1 {m01:.3}"))?;
    check(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!("mean@0.1 {m01:.3}, mean@0.6 {m06:.3}, mean@1.0 {m10:.3}, {elapsed:.2?}"))
}

fn null_signal() -> Outcome {
    let mut accs = Vec::new();
    let mut baselines = Vec::new();
    for seed in 0..10 {
        let gen = GenConfig {
            signal: 0.0,
            seed,
            ..GenConfig::default()
        };
        let cohort = generate_cohort(&gen, &CategoryMapping::default()).map_err(|e| e.to_string())?;
        let report = stability_run(&cohort, &ExperimentConfig::default()).map_err(|e| e.to_string())?;
        accs.extend(report.values("test_accuracy"));
        baselines.push(report.note_value("majority_baseline").unwrap().parse::<f64>().unwrap());
    }
    let mean_acc = mean_of(&accs).ok_or("no accuracies")?;
    let mean_base = baselines.iter().sum::<f64>() / baselines.len() as f64;
    check(
        (mean_acc - mean_base).abs() <= 0.10,
        format!("mean accuracy {mean_acc:.3} vs baseline {mean_base:.3}"),
    )?;
    Ok(format!("mean accuracy {mean_acc:.3}, mean baseline {mean_base:.3}"))
}

fn repair_corpus() -> Outcome {
    let gen = GenConfig {
        n_students: 200,
        corruption_rate: 0.3,
        seed: 8,
        ..GenConfig::default()
    };
    let files = generate_files(&gen).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for f in &files {
        fs::write(dir.path().join(&f.entry.file), &f.bytes).map_err(|e| e.to_string())?;
    }
    for i in 0..5 {
        fs::write(dir.path().join(format!("empty_{i}.json")), b"").map_err(|e| e.to_string())?;
    }
    let cleaned = clean_directory(dir.path(), &CategoryMapping::default()).map_err(|e| e.to_string())?;

    let mut corrupted = 0;
    let mut repaired = 0;
    for f in &files {
        let c = cleaned
            .iter()
            .find(|c| c.path.file_name().unwrap().to_str() == Some(f.entry.file.as_str()))
            .ok_or("missing cleaned file")?;
        match f.entry.fault {
            Some(_) => {
                corrupted += 1;
                if c.log.outcome == RepairOutcome::Repaired && c.session.is_some() {
                    repaired += 1;
                }
            }
            None => {
                check(c.log.outcome == RepairOutcome::CleanAsIs, format!("{} not clean", f.entry.file))?;
                check(c.bytes.as_deref() == Some(&f.bytes[..]), format!("{} bytes changed", f.entry.file))?;
            }
        }
        let (once, _) = repair(&f.bytes);
        let (twice, log) = repair(&once);
        if c.log.outcome != RepairOutcome::Unrepairable {
            check(twice == once && log.outcome == RepairOutcome::CleanAsIs, format!("{} not idempotent", f.entry.file))?;
        }
    }
    for c in cleaned.iter().filter(|c| c.path.to_string_lossy().contains("empty_")) {
        check(c.log.outcome == RepairOutcome::SkippedEmpty, format!("{:?} not skipped", c.path))?;
    }
    check(corrupted > 0, "no corrupted files generated")?;
    let rate = repaired as f64 / corrupted as f64;
    check(rate >= 0.95, format!("repaired {repaired}/{corrupted}"))?;
    Ok(format!("repaired {repaired}/{corrupted} corrupted files ({:.1}%)", rate * 100.0))
}

fn pipeline_outputs(root: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let gen = GenConfig {
        n_students: 60,
        corruption_rate: 0.2,
        seed: 9,
        ..GenConfig::default()
    };
    let dir = root.join("cohort");
    generate(&gen, &dir).map_err(|e| e.to_string())?;
    let (cohort, _) = load_cohort(&dir, &CategoryMapping::default()).map_err(|e| e.to_string())?;
    let report = prefix_sweep(&cohort, &ExperimentConfig::default()).map_err(|e| e.to_string())?;
    Ok((
        render_report(&report, ReportFormat::Csv).map_err(|e| e.to_string())?,
        render_report(&report, ReportFormat::Svg).map_err(|e| e.to_string())?,
    ))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline_outputs(a.path())?;
    let second = pipeline_outputs(b.path())?;
    check(first.0 == second.0, "CSV differs between runs")?;
    check(first.1 == second.1, "SVG differs between runs")?;
    Ok(format!("{} CSV bytes and {} SVG bytes identical", first.0.len(), first.1.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("gradient matches finite differences", gradient_check),
        ("linear fit matches planted and oracle solutions", linear_oracle),
        ("split arithmetic and partition", split_arithmetic),
        ("success band rule", band_rule),
        ("stability on synthetic cohort", stability_analogue),
        ("prefix sweep on synthetic cohort", prefix_analogue),
        ("null signal stays near baseline", null_signal),
        ("repair corpus", repair_corpus),
        ("pipeline determinism", determinism),
    ];
    let start = Instant::now();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL criterion {}: {name} ({why})", i + 1);
            }
        }
    }
    let total = start.elapsed();
    if total < Duration::from_secs(300) {
        println!("PASS criterion 10: suite finished in {total:.2?}");
    } else {
        failures += 1;
        println!("FAIL criterion 10: suite took {total:.2?}");
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
