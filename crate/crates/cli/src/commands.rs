use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use designlog::experiments::{
    band_sweep, baseline_report, fmt_sig6, histogram_final_energy, linear_pred_vs_actual, prefix_sweep,
    render_report, stability_run, ExperimentConfig, ReportFormat,
};
use designlog::features::{ceil_count, encode_sequence, pad_matrix, prefix, CategoryMapping, FeatureMatrix};
use designlog::ingest::{clean_directory, load_cohort, repairs_csv, RepairOutcome};
use designlog::learners::{
    accuracy, binarize, fit_model, predict_linear, predict_logistic, split, Dataset, LogisticHyper, SplitSpec,
    TargetKind,
};
use designlog::synth::{generate, manifest_csv, GenConfig};
use designlog::{Cohort, Family, FeatureKind};
use serde_json::json;
use thiserror::Error;

use crate::{
    CleanArgs, Cli, Command, EncodeArgs, ExperimentArgs, ExperimentKind, SynthArgs, TrainArgs,
};

const DEFAULT_SEED: u64 = 7;
const DEFAULT_SYNTH_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl From<designlog::Error> for Failure {
    fn from(e: designlog::Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Io(e.to_string())
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

struct Context {
    seed: Option<u64>,
    quiet: bool,
    mapping: CategoryMapping,
}

impl Context {
    fn echo(&self, config: serde_json::Value) {
        if !self.quiet {
            eprintln!("config: {config}");
        }
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Failure::Io(format!("cannot create {}: {e}", path.display())))
}

pub fn run(cli: Cli) -> Result<()> {
    let mapping = match &cli.mapping {
        Some(path) => CategoryMapping::load(path)?,
        None => CategoryMapping::default(),
    };
    let ctx = Context {
        seed: cli.seed,
        quiet: cli.quiet,
        mapping,
    };
    match cli.command {
        Command::Clean(a) => clean(&ctx, a),
        Command::Encode(a) => encode(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Experiment(a) => experiment(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
    }
}

fn load_nonempty(ctx: &Context, dir: &Path) -> Result<Cohort> {
    let (cohort, logs) = load_cohort(dir, &ctx.mapping)?;
    if cohort.is_empty() {
        return Err(Failure::Data(format!(
            "no usable session files in {} ({} scanned)",
            dir.display(),
            logs.len()
        )));
    }
    Ok(cohort)
}

fn clean(ctx: &Context, a: CleanArgs) -> Result<()> {
    ctx.echo(json!({
        "command": "clean",
        "input": a.input,
        "out": a.out,
        "report": a.report,
        "mapping": ctx.mapping.version(),
    }));
    let files = clean_directory(&a.input, &ctx.mapping)?;
    create_dir(&a.out)?;
    let mut usable = 0;
    for f in &files {
        if let (Some(bytes), Some(name)) = (&f.bytes, f.path.file_name()) {
            write(&a.out.join(name), bytes)?;
            usable += 1;
        }
    }
    if let Some(report) = &a.report {
        let logs: Vec<_> = files.iter().map(|f| f.log.clone()).collect();
        write(report, &repairs_csv(&logs)?)?;
    }
    let summary: Vec<String> = [
        RepairOutcome::CleanAsIs,
        RepairOutcome::Repaired,
        RepairOutcome::Unrepairable,
        RepairOutcome::SkippedEmpty,
    ]
    .iter()
    .map(|k| format!("{k}={}", files.iter().filter(|f| f.log.outcome == *k).count()))
    .collect();
    ctx.say(format!("clean: {usable} usable files ({})", summary.join(", ")));
    if usable == 0 {
        return Err(Failure::Data(format!("no usable session files in {}", a.input.display())));
    }
    Ok(())
}

fn encode(ctx: &Context, a: EncodeArgs) -> Result<()> {
    let kind = FeatureKind::from(a.kind);
    ctx.echo(json!({
        "command": "encode",
        "input": a.input,
        "kind": kind,
        "prefix": a.prefix,
        "out": a.out,
        "mapping": ctx.mapping.version(),
    }));
    let cohort = load_nonempty(ctx, &a.input)?;
    let ids: Vec<String> = cohort.sessions.iter().map(|s| s.student_id.clone()).collect();
    let matrix = match kind {
        FeatureKind::Tally => {
            let truncated: Vec<_> = cohort
                .sessions
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.actions.truncate(ceil_count(a.prefix, s.actions.len()));
                    s
                })
                .collect();
            FeatureMatrix::from_tallies(&truncated)
        }
        FeatureKind::Sequence => {
            let seqs = cohort
                .sessions
                .iter()
                .map(|s| prefix(&encode_sequence(s), a.prefix))
                .collect::<designlog::Result<Vec<_>>>()?;
            pad_matrix(&seqs, &ids)?
        }
    };

    let mut text = format!(
        "# kind: {kind}\n# prefix: {}\n# mapping: {}\n",
        fmt_sig6(a.prefix),
        ctx.mapping.version()
    );
    if let Some(p) = matrix.pad_length {
        text.push_str(&format!("# pad_length: {p}\n"));
    }
    let mut w = csv::Writer::from_writer(text.into_bytes());
    let mut header = vec!["student_id".to_string()];
    header.extend((0..matrix.n_cols()).map(|j| format!("f{j}")));
    header.push("final_net_energy".into());
    w.write_record(&header).map_err(designlog::Error::from)?;
    for (session, row) in cohort.sessions.iter().zip(&matrix.rows) {
        let mut record = vec![session.student_id.clone()];
        record.extend(row.iter().map(|x| x.to_string()));
        record.push(session.final_net_energy.map(|e| e.to_string()).unwrap_or_default());
        w.write_record(&record).map_err(designlog::Error::from)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Failure::Io(format!("cannot buffer features: {}", e.error())))?;
    write(&a.out, &bytes)?;
    ctx.say(format!("encode: {} students, {} features", matrix.n_rows(), matrix.n_cols()));
    Ok(())
}

/// A features table read back from disk. Rows without an energy are dropped.
struct FeatureTable {
    matrix: FeatureMatrix,
    energies: Vec<f64>,
}

fn read_features(path: &Path) -> Result<FeatureTable> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    let meta: BTreeMap<&str, &str> = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').split_once(':'))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();

    let bad = |msg: String| Failure::Data(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let n = header.len();
    if n < 3 || &header[0] != "student_id" || &header[n - 1] != "final_net_energy" {
        return Err(bad("expected columns student_id, f0.., final_net_energy".into()));
    }
    let kind = match meta.get("kind") {
        Some(k) => k.parse::<FeatureKind>().map_err(|e| bad(e.to_string()))?,
        None if n - 2 == designlog::ActionCategory::COUNT => FeatureKind::Tally,
        None => FeatureKind::Sequence,
    };

    let (mut rows, mut ids, mut energies) = (Vec::new(), Vec::new(), Vec::new());
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let energy = record[n - 1].trim();
        if energy.is_empty() {
            continue;
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: {s:?} is not a number", line + 1)))
        };
        energies.push(parse(energy)?);
        rows.push(record.iter().skip(1).take(n - 2).map(parse).collect::<Result<Vec<_>>>()?);
        ids.push(record[0].to_string());
    }
    let mut matrix = FeatureMatrix::new(rows, ids, kind)?;
    if let Some(p) = meta.get("pad_length").and_then(|p| p.parse().ok()) {
        matrix.pad_length = Some(p);
    }
    Ok(FeatureTable { matrix, energies })
}

fn rmse(predicted: &[f64], actual: &[f64]) -> f64 {
    let sq: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    (sq / actual.len().max(1) as f64).sqrt()
}

fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let family = Family::from(a.family);
    let seed = ctx.seed.unwrap_or(DEFAULT_SEED);
    let standardize = !a.no_standardize;
    let hyper = LogisticHyper::default();
    let config = json!({
        "command": "train",
        "family": family,
        "band": a.band,
        "seed": seed,
        "test_fraction": a.test_fraction,
        "stratified": a.stratify,
        "standardize": standardize,
        "hyper": hyper,
    });
    ctx.echo(json!({"features": a.features, "out": a.out, "metrics": a.metrics, "config": config}));

    let table = read_features(&a.features)?;
    let (targets, target_kind) = match family {
        Family::Logistic => (
            table
                .energies
                .iter()
                .map(|&e| binarize(e, a.band).map(f64::from))
                .collect::<designlog::Result<Vec<_>>>()?,
            TargetKind::SuccessLabel,
        ),
        Family::Linear => (table.energies.clone(), TargetKind::Energy),
    };
    let data = Dataset::new(table.matrix, targets, target_kind)?;
    let spec = SplitSpec {
        test_fraction: a.test_fraction,
        seed,
        stratified: a.stratify,
    };
    let (train_set, test_set) = split(&data, &spec)?;
    let weights = fit_model(&train_set, family, &hyper, standardize)?;
    write(&a.out, weights.to_json()?.as_bytes())?;

    let mut metrics: Vec<(&str, String)> = vec![
        ("n_train", train_set.len().to_string()),
        ("n_test", test_set.len().to_string()),
    ];
    match family {
        Family::Logistic => {
            let train_acc = accuracy(&predict_logistic(&weights, &train_set.features, 0.5)?, &train_set.labels())?;
            let test_acc = accuracy(&predict_logistic(&weights, &test_set.features, 0.5)?, &test_set.labels())?;
            let positive = data.targets.iter().sum::<f64>() / data.len() as f64;
            metrics.push(("train_accuracy", fmt_sig6(train_acc)));
            metrics.push(("test_accuracy", fmt_sig6(test_acc)));
            metrics.push(("majority_baseline", fmt_sig6(positive.max(1.0 - positive))));
            if let Some(fit) = &weights.fit {
                metrics.push(("iterations", fit.iterations.to_string()));
                metrics.push(("final_loss", fmt_sig6(fit.final_loss)));
                metrics.push(("converged", fit.converged.to_string()));
            }
            ctx.say(format!("train: test accuracy {}", fmt_sig6(test_acc)));
        }
        Family::Linear => {
            let train_rmse = rmse(&predict_linear(&weights, &train_set.features)?, &train_set.targets);
            let test_rmse = rmse(&predict_linear(&weights, &test_set.features)?, &test_set.targets);
            metrics.push(("train_rmse_kwh", fmt_sig6(train_rmse)));
            metrics.push(("test_rmse_kwh", fmt_sig6(test_rmse)));
            ctx.say(format!("train: test RMSE {} kWh", fmt_sig6(test_rmse)));
        }
    }
    if let Some(path) = &a.metrics {
        let mut text = format!("# report: train\n# config: {config}\n# mapping: {}\nmetric,value\n", ctx.mapping.version());
        for (k, v) in metrics {
            text.push_str(&format!("{k},{v}\n"));
        }
        write(path, text.as_bytes())?;
    }
    Ok(())
}

fn experiment(ctx: &Context, a: ExperimentArgs) -> Result<()> {
    let defaults = ExperimentConfig::default();
    let config = ExperimentConfig {
        band: a.band,
        bands: a.bands.unwrap_or(defaults.bands),
        bin_width: a.bin_width,
        iterations: a.iters,
        seed_base: ctx.seed.unwrap_or(DEFAULT_SEED),
        fractions: a.fractions.unwrap_or(defaults.fractions),
        feature_kind: a.kind.into(),
        standardize: !a.no_standardize,
        test_fraction: a.test_fraction,
        stratified: a.stratify,
        ..defaults
    };
    ctx.echo(json!({
        "command": "experiment",
        "cohort": a.cohort,
        "out": a.out,
        "svg": a.svg,
        "mapping": ctx.mapping.version(),
        "config": config,
    }));
    let cohort = load_nonempty(ctx, &a.cohort)?;
    let mut report = match a.which {
        ExperimentKind::Hist => histogram_final_energy(&cohort, &config)?,
        ExperimentKind::Linear => linear_pred_vs_actual(&cohort, &config)?,
        ExperimentKind::Band => band_sweep(&cohort, &config)?,
        ExperimentKind::Stability => stability_run(&cohort, &config)?,
        ExperimentKind::Prefix => prefix_sweep(&cohort, &config)?,
        ExperimentKind::Baseline => baseline_report(&cohort, &config)?,
    };
    report.notes.push(("mapping".into(), ctx.mapping.version().into()));
    write(&a.out, &render_report(&report, ReportFormat::Csv)?)?;
    if let Some(svg) = &a.svg {
        write(svg, &render_report(&report, ReportFormat::Svg)?)?;
    }
    ctx.say(format!("experiment {}: {} rows", report.name, report.rows.len()));
    Ok(())
}

fn synth(ctx: &Context, a: SynthArgs) -> Result<()> {
    let config = GenConfig {
        n_students: a.n,
        success_rate: a.success_rate,
        signal: a.signal,
        early_signal: a.early_signal,
        length_range: (a.min_len, a.max_len),
        corruption_rate: a.corrupt,
        seed: ctx.seed.unwrap_or(DEFAULT_SYNTH_SEED),
    };
    ctx.echo(json!({"command": "synth", "out": a.out, "manifest": a.manifest, "config": config}));
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let manifest = generate(&config, &a.out)?;
    if let Some(path) = &a.manifest {
        write(path, &manifest_csv(&manifest)?)?;
    }
    let corrupted = manifest.iter().filter(|m| m.fault.is_some()).count();
    ctx.say(format!("synth: {} files, {corrupted} corrupted", manifest.len()));
    Ok(())
}
