//! Flat key=value configuration: training config assembly with
//! flags-over-file-over-profile precedence, and the experiment file format
//! consumed by the report command.

use super::CliError;
use crate::anomaly_eval::{AnomalyType, ExperimentPlan, InjectionSpec, MethodSpec};
use crate::encoder::ModelVariant;
use crate::od_graph::{SchemaMapping, TimeColumns};
use crate::training::TrainConfig;
use clap::Args;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Training hyperparameter overrides shared by the train and report commands.
/// Precedence: explicit flags > config file entries > profile defaults.
#[derive(Debug, Default, Clone, Args)]
pub struct TrainOverrides {
    /// Hyperparameter profile: uber, nyc, or chicago (default uber).
    #[arg(long)]
    pub profile: Option<String>,
    /// Flat key=value config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated graph-layer output widths, e.g. `300,150`.
    #[arg(long)]
    pub sage_dims: Option<String>,
    /// Hour-of-day embedding width.
    #[arg(long)]
    pub d_hour: Option<usize>,
    /// Day-of-week embedding width.
    #[arg(long)]
    pub d_week: Option<usize>,
    /// Graph embedding width.
    #[arg(long)]
    pub d_g: Option<usize>,
    /// Edge-prediction hidden width.
    #[arg(long)]
    pub d_e: Option<usize>,
    /// Dropout probability.
    #[arg(long)]
    pub p_drop: Option<f64>,
    /// Input edge dropout probability.
    #[arg(long)]
    pub p_edge_drop: Option<f64>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Multiplicative learning-rate decay factor.
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Epochs between learning-rate decays.
    #[arg(long)]
    pub lr_decay_every: Option<usize>,
    /// Training epoch budget.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Snapshots per gradient step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Fraction of the most recent snapshots held out for validation.
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Master seed for initialization, shuffling, and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model variant: congae, congae-sp, congae-t, congae-fc, nonweightedenc,
    /// or noncontextdec.
    #[arg(long)]
    pub variant: Option<String>,
}

impl TrainOverrides {
    /// True when any field other than --epochs is set (resume allows only
    /// the epoch budget to change).
    pub fn any_besides_epochs(&self) -> bool {
        self.profile.is_some()
            || self.config.is_some()
            || self.sage_dims.is_some()
            || self.d_hour.is_some()
            || self.d_week.is_some()
            || self.d_g.is_some()
            || self.d_e.is_some()
            || self.p_drop.is_some()
            || self.p_edge_drop.is_some()
            || self.lr.is_some()
            || self.lr_decay.is_some()
            || self.lr_decay_every.is_some()
            || self.batch_size.is_some()
            || self.val_frac.is_some()
            || self.patience.is_some()
            || self.seed.is_some()
            || self.variant.is_some()
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("config key `{key}`: cannot parse `{value}`: {e}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "config key `{key}`: expected true or false, got `{value}`"
        ))),
    }
}

pub(crate) fn parse_dims(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    let dims: Result<Vec<usize>, CliError> =
        value.split(',').map(|p| parse_num(key, p.trim())).collect();
    let dims = dims?;
    if dims.is_empty() {
        return Err(CliError::Usage(format!(
            "config key `{key}`: no layer widths given"
        )));
    }
    Ok(dims)
}

pub(crate) fn parse_variant(value: &str) -> Result<ModelVariant, CliError> {
    ModelVariant::from_name(value).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown variant `{value}`; expected one of {}",
            ModelVariant::ALL_NAMES.join(", ")
        ))
    })
}

/// A single delimiter character, or the word `tab`.
pub(crate) fn parse_delimiter(value: &str) -> Result<u8, CliError> {
    if value == "tab" {
        return Ok(b'\t');
    }
    let mut bytes = value.bytes();
    match (bytes.next(), bytes.next()) {
        (Some(b), None) => Ok(b),
        _ => Err(CliError::Usage(format!(
            "delimiter must be one character or `tab`, got `{value}`"
        ))),
    }
}

/// Parses key=value lines; `#` starts a comment, blank lines are skipped,
/// repeated keys are preserved in file order.
pub(crate) fn parse_kv(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {}: expected key=value, got `{line}`",
                idx + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_kv_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_kv(&text).map_err(|e| e.with_path(path))
}

/// Applies one training config entry; unknown keys are usage errors.
fn apply_train_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<(), CliError> {
    match key {
        "sage_dims" => cfg.sage_dims = parse_dims(key, value)?,
        "d_hour" => cfg.d_hour = parse_num(key, value)?,
        "d_week" => cfg.d_week = parse_num(key, value)?,
        "d_g" => cfg.d_g = parse_num(key, value)?,
        "d_e" => cfg.d_e = parse_num(key, value)?,
        "p_drop" => cfg.p_drop = parse_num(key, value)?,
        "p_edge_drop" => cfg.p_edge_drop = parse_num(key, value)?,
        "lr" => cfg.lr = parse_num(key, value)?,
        "lr_decay" => cfg.lr_decay = parse_num(key, value)?,
        "lr_decay_every" => cfg.lr_decay_every = parse_num(key, value)?,
        "epochs" => cfg.epochs = parse_num(key, value)?,
        "batch_size" => cfg.batch_size = parse_num(key, value)?,
        "val_frac" => cfg.val_frac = parse_num(key, value)?,
        "patience" => cfg.patience = parse_num(key, value)?,
        "seed" => cfg.seed = parse_num(key, value)?,
        "variant" => cfg.variant = parse_variant(value)?,
        _ => return Err(CliError::Usage(format!("unknown config key `{key}`"))),
    }
    Ok(())
}

fn profile_named(name: &str) -> Result<TrainConfig, CliError> {
    TrainConfig::profile(name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown profile `{name}`; expected uber, nyc, or chicago"
        ))
    })
}

/// Builds the effective training config: profile defaults, then config file
/// entries in order, then explicit flags. The profile itself is chosen by
/// flag, else by the file's last `profile` key, else uber.
pub(crate) fn assemble_train_config(ov: &TrainOverrides) -> Result<TrainConfig, CliError> {
    let entries = match &ov.config {
        Some(path) => parse_kv_file(path)?,
        None => Vec::new(),
    };
    let profile = ov
        .profile
        .clone()
        .or_else(|| {
            entries
                .iter()
                .rev()
                .find(|(k, _)| k == "profile")
                .map(|(_, v)| v.clone())
        })
        .unwrap_or_else(|| "uber".to_string());
    let mut cfg = profile_named(&profile)?;
    for (k, v) in &entries {
        if k == "profile" {
            continue;
        }
        apply_train_key(&mut cfg, k, v)?;
    }
    if let Some(v) = &ov.sage_dims {
        cfg.sage_dims = parse_dims("sage_dims", v)?;
    }
    if let Some(v) = ov.d_hour {
        cfg.d_hour = v;
    }
    if let Some(v) = ov.d_week {
        cfg.d_week = v;
    }
    if let Some(v) = ov.d_g {
        cfg.d_g = v;
    }
    if let Some(v) = ov.d_e {
        cfg.d_e = v;
    }
    if let Some(v) = ov.p_drop {
        cfg.p_drop = v;
    }
    if let Some(v) = ov.p_edge_drop {
        cfg.p_edge_drop = v;
    }
    if let Some(v) = ov.lr {
        cfg.lr = v;
    }
    if let Some(v) = ov.lr_decay {
        cfg.lr_decay = v;
    }
    if let Some(v) = ov.lr_decay_every {
        cfg.lr_decay_every = v;
    }
    if let Some(v) = ov.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = ov.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = ov.val_frac {
        cfg.val_frac = v;
    }
    if let Some(v) = ov.patience {
        cfg.patience = v;
    }
    if let Some(v) = ov.seed {
        cfg.seed = v;
    }
    if let Some(v) = &ov.variant {
        cfg.variant = parse_variant(v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A fully parsed experiment file: data locations, record schema, the
/// injection plan, and the training config for every model method.
#[derive(Debug, Clone)]
pub(crate) struct ExperimentSpec {
    pub train_dataset: PathBuf,
    pub test_records: PathBuf,
    pub schema: SchemaMapping,
    pub delimiter: u8,
    pub lenient: bool,
    pub plan: ExperimentPlan,
    pub train_config: TrainConfig,
}

fn parse_methods(value: &str) -> Result<Vec<MethodSpec>, CliError> {
    let mut methods = Vec::new();
    for name in value.split(',').map(str::trim) {
        if name == "ha" {
            methods.push(MethodSpec::HistoricalAverage);
        } else {
            methods.push(MethodSpec::ConGae(parse_variant(name)?));
        }
    }
    if methods.is_empty() {
        return Err(CliError::Usage(
            "config key `methods`: empty method list".into(),
        ));
    }
    Ok(methods)
}

/// `cell=TYPE,ALPHA,BETA,GAMMA` with TYPE spatial or temporal.
fn parse_cell(value: &str) -> Result<InjectionSpec, CliError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    let [kind, alpha, beta, gamma] = parts.as_slice() else {
        return Err(CliError::Usage(format!(
            "config key `cell`: expected TYPE,ALPHA,BETA,GAMMA, got `{value}`"
        )));
    };
    let anomaly = match *kind {
        "spatial" => AnomalyType::Spatial,
        "temporal" => AnomalyType::Temporal,
        other => {
            return Err(CliError::Usage(format!(
                "config key `cell`: type must be spatial or temporal, got `{other}`"
            )))
        }
    };
    Ok(InjectionSpec {
        anomaly,
        alpha: parse_num("cell alpha", alpha)?,
        beta: parse_num("cell beta", beta)?,
        gamma: parse_num("cell gamma", gamma)?,
    })
}

/// Parses the report command's experiment file. Training keys share the
/// train-config vocabulary (`seed` is the training seed); experiment-level
/// keys are `train_dataset`, `test_records`, `methods`, `cell` (repeatable),
/// `repeats`, `experiment_seed`, plus the record-schema keys `origin_col`,
/// `dest_col`, `travel_col`, `time_col` or `date_col`+`hour_col`,
/// `delimiter`, and `lenient`.
pub(crate) fn parse_experiment_file(path: &Path) -> Result<ExperimentSpec, CliError> {
    let entries = parse_kv_file(path)?;
    let profile = entries
        .iter()
        .rev()
        .find(|(k, _)| k == "profile")
        .map(|(_, v)| v.clone())
        .unwrap_or_else(|| "uber".to_string());
    let mut cfg = profile_named(&profile).map_err(|e| e.with_path(path))?;

    let mut train_dataset: Option<PathBuf> = None;
    let mut test_records: Option<PathBuf> = None;
    let mut methods = vec![
        MethodSpec::ConGae(ModelVariant::full()),
        MethodSpec::HistoricalAverage,
    ];
    let mut grid: Vec<InjectionSpec> = Vec::new();
    let mut repeats = 5usize;
    let mut experiment_seed = 1u64;
    let mut schema = SchemaMapping::default();
    let mut date_col: Option<String> = None;
    let mut hour_col: Option<String> = None;
    let mut delimiter = b',';
    let mut lenient = false;

    for (k, v) in &entries {
        let applied: Result<(), CliError> = (|| {
            match k.as_str() {
                "profile" => {}
                "train_dataset" => train_dataset = Some(PathBuf::from(v)),
                "test_records" => test_records = Some(PathBuf::from(v)),
                "methods" => methods = parse_methods(v)?,
                "cell" => grid.push(parse_cell(v)?),
                "repeats" => repeats = parse_num(k, v)?,
                "experiment_seed" => experiment_seed = parse_num(k, v)?,
                "origin_col" => schema.origin = v.to_string(),
                "dest_col" => schema.dest = v.to_string(),
                "travel_col" => schema.travel_time = v.to_string(),
                "time_col" => {
                    schema.time = TimeColumns::Single {
                        column: v.to_string(),
                    }
                }
                "date_col" => date_col = Some(v.to_string()),
                "hour_col" => hour_col = Some(v.to_string()),
                "delimiter" => delimiter = parse_delimiter(v)?,
                "lenient" => lenient = parse_bool(k, v)?,
                _ => apply_train_key(&mut cfg, k, v)?,
            }
            Ok(())
        })();
        applied.map_err(|e| e.with_path(path))?;
    }

    match (date_col, hour_col) {
        (Some(d), Some(h)) => schema.time = TimeColumns::Split { date: d, hour: h },
        (None, None) => {}
        _ => {
            return Err(CliError::Usage(format!(
                "{}: date_col and hour_col must be set together",
                path.display()
            )))
        }
    }
    let missing =
        |key: &str| CliError::Usage(format!("{}: missing required key `{key}`", path.display()));
    let train_dataset = train_dataset.ok_or_else(|| missing("train_dataset"))?;
    let test_records = test_records.ok_or_else(|| missing("test_records"))?;
    if grid.is_empty() {
        return Err(missing("cell"));
    }
    cfg.validate()?;
    Ok(ExperimentSpec {
        train_dataset,
        test_records,
        schema,
        delimiter,
        lenient,
        plan: ExperimentPlan {
            methods,
            grid,
            repeats,
            seed: experiment_seed,
        },
        train_config: cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing_handles_comments_blanks_and_repeats() {
        let text = "# comment\n\n a = 1 \nb=two\na=3\n";
        let kv = parse_kv(text).unwrap();
        assert_eq!(
            kv,
            vec![
                ("a".to_string(), "1".to_string()),
                ("b".to_string(), "two".to_string()),
                ("a".to_string(), "3".to_string()),
            ]
        );
        let err = parse_kv("novalue\n").unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn delimiter_accepts_chars_and_tab_keyword() {
        assert_eq!(parse_delimiter(",").unwrap(), b',');
        assert_eq!(parse_delimiter("tab").unwrap(), b'\t');
        assert_eq!(parse_delimiter(";").unwrap(), b';');
        assert!(parse_delimiter("ab").is_err());
        assert!(parse_delimiter("").is_err());
    }

    #[test]
    fn defaults_are_the_uber_profile() {
        let cfg = assemble_train_config(&TrainOverrides::default()).unwrap();
        assert_eq!(cfg, TrainConfig::uber());
    }

    #[test]
    fn flags_override_file_which_overrides_profile() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        std::fs::write(&path, "profile=nyc\nepochs=40\nlr=0.01\nseed=7\n").unwrap();
        let ov = TrainOverrides {
            config: Some(path),
            lr: Some(0.5),
            ..TrainOverrides::default()
        };
        let cfg = assemble_train_config(&ov).unwrap();
        assert_eq!(cfg.sage_dims, vec![150, 50], "profile base from the file");
        assert_eq!(cfg.epochs, 40, "file overrides profile");
        assert_eq!(cfg.lr, 0.5, "flag overrides file");
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn profile_flag_beats_file_profile_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        std::fs::write(&path, "profile=nyc\n").unwrap();
        let ov = TrainOverrides {
            config: Some(path),
            profile: Some("chicago".into()),
            ..TrainOverrides::default()
        };
        let cfg = assemble_train_config(&ov).unwrap();
        assert_eq!(cfg.sage_dims, vec![300, 25]);
    }

    #[test]
    fn unknown_keys_profiles_and_variants_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        std::fs::write(&path, "not_a_key=1\n").unwrap();
        let err = assemble_train_config(&TrainOverrides {
            config: Some(path),
            ..TrainOverrides::default()
        })
        .unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{err}");
        assert!(err.to_string().contains("not_a_key"));

        let err = assemble_train_config(&TrainOverrides {
            profile: Some("boston".into()),
            ..TrainOverrides::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("boston"));

        let err = assemble_train_config(&TrainOverrides {
            variant: Some("congae-xl".into()),
            ..TrainOverrides::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("congae-xl"));
    }

    #[test]
    fn invalid_values_fail_validation_as_usage() {
        let err = assemble_train_config(&TrainOverrides {
            p_drop: Some(1.5),
            ..TrainOverrides::default()
        })
        .unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn experiment_file_round_trips_all_sections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(
            &path,
            "train_dataset=train.ds\n\
             test_records=test.csv\n\
             profile=nyc\n\
             epochs=3\n\
             seed=9\n\
             methods=congae,congae-sp,ha\n\
             cell=spatial,0.5,0.2,0.1\n\
             cell=temporal,0,0,0.1\n\
             repeats=2\n\
             experiment_seed=42\n\
             delimiter=tab\n\
             lenient=true\n\
             origin_col=src\n",
        )
        .unwrap();
        let spec = parse_experiment_file(&path).unwrap();
        assert_eq!(spec.train_dataset, PathBuf::from("train.ds"));
        assert_eq!(spec.test_records, PathBuf::from("test.csv"));
        assert_eq!(spec.train_config.epochs, 3);
        assert_eq!(spec.train_config.seed, 9);
        assert_eq!(spec.train_config.sage_dims, vec![150, 50]);
        assert_eq!(spec.plan.repeats, 2);
        assert_eq!(spec.plan.seed, 42);
        assert_eq!(spec.plan.methods.len(), 3);
        assert_eq!(spec.plan.methods[2], MethodSpec::HistoricalAverage);
        assert_eq!(spec.plan.grid.len(), 2);
        assert_eq!(spec.plan.grid[0].anomaly, AnomalyType::Spatial);
        assert_eq!(spec.plan.grid[0].alpha, 0.5);
        assert_eq!(spec.plan.grid[1].anomaly, AnomalyType::Temporal);
        assert_eq!(spec.delimiter, b'\t');
        assert!(spec.lenient);
        assert_eq!(spec.schema.origin, "src");
    }

    #[test]
    fn experiment_file_requires_paths_and_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "test_records=t.csv\ncell=spatial,0.5,0.2,0.1\n").unwrap();
        let err = parse_experiment_file(&path).unwrap_err();
        assert!(err.to_string().contains("train_dataset"));

        std::fs::write(&path, "train_dataset=t.ds\ntest_records=t.csv\n").unwrap();
        let err = parse_experiment_file(&path).unwrap_err();
        assert!(err.to_string().contains("cell"));

        std::fs::write(
            &path,
            "train_dataset=t.ds\ntest_records=t.csv\ncell=sideways,0.5,0.2,0.1\n",
        )
        .unwrap();
        let err = parse_experiment_file(&path).unwrap_err();
        assert!(err.to_string().contains("sideways"));

        std::fs::write(
            &path,
            "train_dataset=t.ds\ntest_records=t.csv\ncell=spatial,0.1,0.1,0.1\ndate_col=d\n",
        )
        .unwrap();
        let err = parse_experiment_file(&path).unwrap_err();
        assert!(err.to_string().contains("hour_col"));
    }
}
