//! Command implementations. Each command loads and validates its inputs,
//! does its work through the library, writes outputs atomically, and leaves
//! a run manifest next to its primary output.

use super::config::{assemble_train_config, parse_delimiter, parse_experiment_file};
use super::manifest::RunManifest;
use super::{
    CliError, EvalArgs, IngestArgs, InjectArgs, InjectKind, ReportArgs, ScoreArgs, TrainArgs,
};
use crate::anomaly_eval::{
    ha_score, inject_spatial, inject_temporal, roc_auc, run_experiment, score_dataset,
    HourOfWeekStats, InjectionConfig, LabeledDataset,
};
use crate::bytesio::write_atomic;
use crate::od_graph::{
    build_snapshots, parse_od_records, parse_zone_features, scale_zone_features, select_top_zones,
    Dataset, ODRecord, ParsedRecords, RowError, SchemaMapping, TimeColumns, WeightScaler,
};
use crate::training::Trainer;
use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

fn data_err(path: &Path, e: impl Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn open_reader(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| data_err(path, e))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path).map_err(|e| CliError::from(e).with_path(path))
}

fn load_trainer(path: &Path) -> Result<Trainer, CliError> {
    Trainer::load(path).map_err(|e| CliError::from(e).with_path(path))
}

fn load_labeled(path: &Path) -> Result<LabeledDataset, CliError> {
    LabeledDataset::load(path).map_err(|e| CliError::from(e).with_path(path))
}

/// Loads either container kind, sniffing the kind byte that follows the
/// 8-byte magic and 4-byte version. Labels are None for plain datasets.
fn load_any(path: &Path) -> Result<(Dataset, Option<Vec<bool>>), CliError> {
    let bytes = std::fs::read(path).map_err(|e| data_err(path, e))?;
    if bytes.get(12) == Some(&1) {
        let labeled =
            LabeledDataset::from_bytes(&bytes).map_err(|e| CliError::from(e).with_path(path))?;
        let labels = labeled.labels().to_vec();
        Ok((labeled.dataset().clone(), Some(labels)))
    } else {
        let dataset = Dataset::from_bytes(&bytes).map_err(|e| CliError::from(e).with_path(path))?;
        Ok((dataset, None))
    }
}

fn warn_skipped(path: &Path, skipped: &[RowError]) {
    for row in skipped {
        eprintln!(
            "warning: {}: line {}: {}",
            path.display(),
            row.line,
            row.message
        );
    }
    if !skipped.is_empty() {
        eprintln!(
            "warning: {}: skipped {} malformed rows",
            path.display(),
            skipped.len()
        );
    }
}

fn parse_records(
    path: &Path,
    schema: &SchemaMapping,
    delimiter: u8,
    lenient: bool,
) -> Result<ParsedRecords, CliError> {
    let parsed = parse_od_records(open_reader(path)?, schema, delimiter, lenient)
        .map_err(|e| CliError::from(e).with_path(path))?;
    warn_skipped(path, &parsed.skipped);
    if parsed.records.is_empty() {
        return Err(data_err(path, "no usable records"));
    }
    Ok(parsed)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(|e| data_err(path, e))
}

fn ingest_schema(args: &IngestArgs) -> SchemaMapping {
    // clap enforces that date and hour columns come together and exclude
    // the single-timestamp column.
    let time = match (&args.date_col, &args.hour_col) {
        (Some(date), Some(hour)) => TimeColumns::Split {
            date: date.clone(),
            hour: hour.clone(),
        },
        _ => TimeColumns::Single {
            column: args.time_col.clone(),
        },
    };
    SchemaMapping {
        origin: args.origin_col.clone(),
        dest: args.dest_col.clone(),
        time,
        travel_time: args.travel_col.clone(),
    }
}

pub(super) fn cmd_ingest(args: &IngestArgs) -> Result<(), CliError> {
    let schema = ingest_schema(args);
    let delimiter = parse_delimiter(&args.delimiter)?;
    let parsed = parse_records(&args.records, &schema, delimiter, args.lenient)?;
    let raw_zones = parse_zone_features(open_reader(&args.zones)?, delimiter)
        .map_err(|e| CliError::from(e).with_path(&args.zones))?;

    let selected = match args.top_zones {
        Some(k) => select_top_zones(&parsed.records, k)?,
        None => {
            let mut ids: Vec<String> = raw_zones.iter().map(|z| z.zone_id.clone()).collect();
            ids.sort();
            ids.dedup();
            ids
        }
    };
    let zones = scale_zone_features(&raw_zones, &selected)?;

    // The scaler's percentile anchors come from the records that survive
    // zone selection, so dropped zones cannot skew the weight range.
    let in_zone: BTreeSet<&str> = zones.iter().map(|z| z.zone_id.as_str()).collect();
    let used: Vec<ODRecord> = parsed
        .records
        .iter()
        .filter(|r| {
            r.origin != r.dest
                && in_zone.contains(r.origin.as_str())
                && in_zone.contains(r.dest.as_str())
        })
        .cloned()
        .collect();
    let scaler = WeightScaler::fit(&used)?;
    let dataset = build_snapshots(&parsed.records, &zones, &scaler)?;
    dataset
        .save(&args.out)
        .map_err(|e| CliError::from(e).with_path(&args.out))?;

    let mut m = RunManifest::new("ingest");
    m.input("records", &args.records)?;
    m.input("zones", &args.zones)?;
    if let Some(k) = args.top_zones {
        m.push("top_zones", k);
    }
    m.push("records_parsed", parsed.records.len());
    m.push("records_skipped", parsed.skipped.len());
    m.push("records_used", used.len());
    m.push("zones", dataset.zones().len());
    m.push("snapshots", dataset.snapshots().len());
    m.push("missing_rate", dataset.missing_rate());
    m.output("dataset", &args.out);
    m.write(&args.out)?;

    println!(
        "ingested {} zones, {} hourly snapshots, {:.1} edges per graph, {:.1}% of OD pairs missing",
        dataset.zones().len(),
        dataset.snapshots().len(),
        dataset.avg_edges_per_snapshot(),
        100.0 * dataset.missing_rate(),
    );
    Ok(())
}

fn default_report_path(checkpoint: &Path) -> PathBuf {
    let mut os = OsString::from(checkpoint.as_os_str());
    os.push(".report.csv");
    PathBuf::from(os)
}

pub(super) fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.dataset)?;
    let mut trainer = if args.resume {
        if args.overrides.any_besides_epochs() {
            return Err(CliError::Usage(
                "--resume keeps the checkpoint's configuration; only --epochs may change".into(),
            ));
        }
        load_trainer(&args.out)?
    } else {
        Trainer::new(&dataset, assemble_train_config(&args.overrides)?)?
    };
    let total = match (args.resume, args.overrides.epochs) {
        (true, Some(epochs)) => epochs,
        (true, None) => trainer.config().epochs,
        (false, _) => trainer.config().epochs,
    };
    let report = trainer.train_until(&dataset, total)?;
    trainer
        .save(&args.out)
        .map_err(|e| CliError::from(e).with_path(&args.out))?;

    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| default_report_path(&args.out));
    write_text(&report_path, &report.to_csv())?;

    let mut m = RunManifest::new("train");
    m.input("dataset", &args.dataset)?;
    m.push("resume", args.resume);
    m.push_train_config(trainer.config());
    m.push("epochs_run", trainer.epochs_run());
    if let Some(e) = report.best_epoch {
        m.push("best_epoch", e);
    }
    if let Some(v) = report.best_val_loss {
        m.push("best_val_loss", v);
    }
    m.push("stopped_early", report.stopped_early);
    m.output("checkpoint", &args.out);
    m.output("report", &report_path);
    m.write(&args.out)?;

    match (report.best_epoch, report.best_val_loss) {
        (Some(epoch), Some(val)) => println!(
            "trained {} epochs; best validation loss {val:.6e} at epoch {epoch}{}",
            trainer.epochs_run(),
            if report.stopped_early {
                " (stopped early)"
            } else {
                ""
            },
        ),
        _ => println!(
            "trained {} epochs; no validation pass recorded",
            trainer.epochs_run()
        ),
    }
    Ok(())
}

pub(super) fn cmd_score(args: &ScoreArgs) -> Result<(), CliError> {
    let (dataset, labels) = load_any(&args.dataset)?;
    let trainer = load_trainer(&args.checkpoint)?;
    let variant = trainer.config().variant;
    let scores = score_dataset(trainer.best_model(), &dataset, variant)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(CliError::Numeric(format!(
            "non-finite anomaly score at snapshot {i}"
        )));
    }

    let mut csv = String::from("timestamp,score,label\n");
    for (i, (snap, score)) in dataset.snapshots().iter().zip(&scores).enumerate() {
        let label = labels.as_ref().map_or(0, |l| u8::from(l[i]));
        csv.push_str(&format!(
            "{},{score},{label}\n",
            snap.timestamp().format("%Y-%m-%dT%H:%M:%S"),
        ));
    }
    write_text(&args.out, &csv)?;

    let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
    let mut m = RunManifest::new("score");
    m.input("dataset", &args.dataset)?;
    m.input("checkpoint", &args.checkpoint)?;
    m.push("variant", variant.name());
    m.push("snapshots", scores.len());
    m.push("labeled", labels.is_some());
    m.push("mean_score", mean);
    m.output("scores", &args.out);
    m.write(&args.out)?;

    println!(
        "scored {} snapshots with {}; mean score {mean:.6e}",
        scores.len(),
        variant.name()
    );
    Ok(())
}

pub(super) fn cmd_inject(args: &InjectArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.dataset)?;
    let cfg = InjectionConfig {
        gamma: args.gamma,
        alpha: args.alpha,
        beta: args.beta,
        seed: args.seed,
    };
    let (kind, labeled) = match args.kind {
        InjectKind::Spatial => ("spatial", inject_spatial(&dataset, &cfg)?),
        InjectKind::Temporal => ("temporal", inject_temporal(&dataset, &cfg)?),
    };
    labeled
        .save(&args.out)
        .map_err(|e| CliError::from(e).with_path(&args.out))?;

    let mut m = RunManifest::new("inject");
    m.input("dataset", &args.dataset)?;
    m.push("type", kind);
    m.push("gamma", cfg.gamma);
    m.push("alpha", cfg.alpha);
    m.push("beta", cfg.beta);
    m.push("seed", cfg.seed);
    m.push("polluted", labeled.positives());
    m.push("snapshots", labeled.labels().len());
    m.output("labeled", &args.out);
    m.write(&args.out)?;

    println!(
        "polluted {} of {} snapshots with {kind} anomalies",
        labeled.positives(),
        labeled.labels().len(),
    );
    Ok(())
}

pub(super) fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let labeled = load_labeled(&args.labeled)?;
    let trainer = load_trainer(&args.checkpoint)?;
    let variant = trainer.config().variant;
    let scores = score_dataset(trainer.best_model(), labeled.dataset(), variant)?;
    let mut rows = vec![(
        variant.name().to_string(),
        roc_auc(&scores, labeled.labels())?,
    )];

    if args.ha {
        let train_path = args
            .train_dataset
            .as_ref()
            .expect("clap ties --ha to --train-dataset");
        let stats = HourOfWeekStats::fit_dataset(&load_dataset(train_path)?);
        let ha = ha_score(&labeled, &stats);
        if !ha.unmatched.is_empty() {
            eprintln!(
                "warning: {} snapshots had no baseline statistics and scored 0",
                ha.unmatched.len(),
            );
        }
        rows.push(("ha".to_string(), roc_auc(&ha.scores, labeled.labels())?));
    }

    let mut csv = String::from("method,auc\n");
    for (method, auc) in &rows {
        csv.push_str(&format!("{method},{auc}\n"));
    }
    write_text(&args.out, &csv)?;

    let mut m = RunManifest::new("eval");
    m.input("labeled", &args.labeled)?;
    m.input("checkpoint", &args.checkpoint)?;
    if let Some(p) = &args.train_dataset {
        m.input("train_dataset", p)?;
    }
    m.push("snapshots", labeled.labels().len());
    m.push("positives", labeled.positives());
    for (method, auc) in &rows {
        m.push(&format!("auc.{method}"), auc);
    }
    m.output("results", &args.out);
    m.write(&args.out)?;

    for (method, auc) in &rows {
        println!("{method}: AUC {auc:.4}");
    }
    Ok(())
}

pub(super) fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let mut spec = parse_experiment_file(&args.experiment)?;
    if let Some(repeats) = args.repeats {
        spec.plan.repeats = repeats;
    }
    if let Some(seed) = args.seed {
        spec.plan.seed = seed;
    }

    let train = load_dataset(&spec.train_dataset)?;
    let parsed = parse_records(
        &spec.test_records,
        &spec.schema,
        spec.delimiter,
        spec.lenient,
    )?;
    let table = run_experiment(&train, &parsed.records, &spec.plan, &spec.train_config)?;
    write_text(&args.out, &table.to_csv())?;

    let mut m = RunManifest::new("report");
    m.input("experiment", &args.experiment)?;
    m.input("train_dataset", &spec.train_dataset)?;
    m.input("test_records", &spec.test_records)?;
    m.push("repeats", spec.plan.repeats);
    m.push("experiment_seed", spec.plan.seed);
    m.push("cells", spec.plan.grid.len());
    let methods: Vec<&str> = spec.plan.methods.iter().map(|ms| ms.name()).collect();
    m.push("methods", methods.join(","));
    m.push_train_config(&spec.train_config);
    m.output("results", &args.out);
    m.write(&args.out)?;

    for row in table.rows() {
        println!(
            "{} alpha={} beta={} gamma={} {:<16} AUC {:.4} (std {:.4} over {} repeats)",
            row.anomaly,
            row.alpha,
            row.beta,
            row.gamma,
            row.method,
            row.auc_mean,
            row.auc_std,
            row.repeats,
        );
    }
    Ok(())
}
