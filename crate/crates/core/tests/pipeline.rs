use std::fs;

use designlog::experiments::{
    band_sweep, histogram_final_energy, linear_pred_vs_actual, mean_of, prefix_sweep, render_report,
    stability_run, ExperimentConfig, ReportFormat,
};
use designlog::features::CategoryMapping;
use designlog::ingest::{load_cohort, repairs_csv, RepairOutcome};
use designlog::synth::{generate, generate_cohort, manifest_csv, verify_manifest, GenConfig};

fn mapping() -> CategoryMapping {
    CategoryMapping::default()
}

fn mean_accuracy(gen: &GenConfig, cfg: &ExperimentConfig) -> f64 {
    let cohort = generate_cohort(gen, &mapping()).unwrap();
    mean_of(&stability_run(&cohort, cfg).unwrap().values("test_accuracy")).unwrap()
}

#[test]
fn synth_clean_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let gen = GenConfig {
        n_students: 80,
        corruption_rate: 0.25,
        seed: 5,
        ..GenConfig::default()
    };
    let manifest = generate(&gen, dir.path()).unwrap();
    let (cohort, logs) = load_cohort(dir.path(), &mapping()).unwrap();
    assert_eq!(logs.len(), 80);
    assert!(verify_manifest(&manifest, &cohort, 10_000.0).unwrap().is_empty());

    for (entry, log) in manifest.iter().zip(&logs) {
        let expected = if entry.fault.is_some() {
            RepairOutcome::Repaired
        } else {
            RepairOutcome::CleanAsIs
        };
        assert_eq!(log.outcome, expected, "{}", entry.file);
    }

    let csv = String::from_utf8(repairs_csv(&logs).unwrap()).unwrap();
    assert_eq!(csv.lines().count(), 81);
    let manifest_text = String::from_utf8(manifest_csv(&manifest).unwrap()).unwrap();
    assert!(manifest_text.starts_with("file,label,net_energy_kwh,n_actions,corrupted\n"));
}

#[test]
fn every_report_renders_from_loaded_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let gen = GenConfig {
        n_students: 50,
        ..GenConfig::default()
    };
    generate(&gen, dir.path()).unwrap();
    let (cohort, _) = load_cohort(dir.path(), &mapping()).unwrap();
    let cfg = ExperimentConfig {
        iterations: 3,
        fractions: vec![0.2, 1.0],
        ..ExperimentConfig::default()
    };
    let reports = [
        histogram_final_energy(&cohort, &cfg).unwrap(),
        linear_pred_vs_actual(&cohort, &cfg).unwrap(),
        band_sweep(&cohort, &cfg).unwrap(),
        stability_run(&cohort, &cfg).unwrap(),
        prefix_sweep(&cohort, &cfg).unwrap(),
    ];
    for r in &reports {
        let csv = render_report(r, ReportFormat::Csv).unwrap();
        let svg = String::from_utf8(render_report(r, ReportFormat::Svg).unwrap()).unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(!csv.is_empty());
    }
}

#[test]
fn empty_files_are_skipped_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    generate(
        &GenConfig {
            n_students: 10,
            ..GenConfig::default()
        },
        dir.path(),
    )
    .unwrap();
    fs::write(dir.path().join("blank.json"), b"").unwrap();
    fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
    let (cohort, logs) = load_cohort(dir.path(), &mapping()).unwrap();
    assert_eq!(cohort.len(), 10);
    assert_eq!(logs.len(), 11);
    assert_eq!(logs[0].outcome, RepairOutcome::SkippedEmpty);
}

/// Known gap: raw-code sequence features give the linear learner only a few
/// reliably informative columns at fraction 0.1, so the short-prefix mean
/// trails the full-length mean by 0.03 to 0.13 depending on the seed.
#[test]
#[ignore = "known gap: fraction 0.1 trails 1.0 by more than 0.05 with raw-code features"]
fn full_early_signal_makes_short_prefixes_enough() {
    let gen = GenConfig {
        signal: 1.0,
        early_signal: 1.0,
        ..GenConfig::default()
    };
    let cohort = generate_cohort(&gen, &mapping()).unwrap();
    let cfg = ExperimentConfig {
        fractions: vec![0.1, 1.0],
        ..ExperimentConfig::default()
    };
    let r = prefix_sweep(&cohort, &cfg).unwrap();
    let acc = r.values("test_accuracy");
    let early = mean_of(&acc[..10]).unwrap();
    let full = mean_of(&acc[10..]).unwrap();
    assert!((early - full).abs() <= 0.05, "0.1 -> {early}, 1.0 -> {full}");
}

#[test]
fn accuracy_grows_with_signal() {
    let cfg = ExperimentConfig::default();
    let acc: Vec<f64> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&signal| {
            let total: f64 = (0..10)
                .map(|seed| {
                    mean_accuracy(
                        &GenConfig {
                            signal,
                            seed,
                            ..GenConfig::default()
                        },
                        &cfg,
                    )
                })
                .sum();
            total / 10.0
        })
        .collect();
    assert!(acc[1] >= acc[0] - 0.03 && acc[2] >= acc[1] - 0.03, "{acc:?}");
}
