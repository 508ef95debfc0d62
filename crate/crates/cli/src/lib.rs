//! Batch experiment surface: dataset generation, training, evaluation,
//! sweeps and collapse analysis over flat key=value experiment configs.
//!
//! Every command is deterministic given its flags, config and seed, and
//! writes only inside its output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ipa_core::collapse::{collapse_report, write_collapse_csv};
use ipa_core::data::{
    generate_synthetic, load_categorical_csv, load_criteo_tsv, load_synthetic_csv,
    save_synthetic_csv, split, split_indices, FeatureHasher, SyntheticSpec, TabularDataset, Task,
};
use ipa_core::model::{
    count_params, evaluate, load_checkpoint, parse_code, preset, save_checkpoint, train,
    ClassifierSpec, EvalReport, IpaModel, ModelConfig, TrainHistory, TrainOptions, PRESET_NAMES,
};
use ipa_core::Error;

/// Fixed feature-hashing seed so every command sees identical ids.
pub const HASH_SEED: u64 = 0x1BA5_E0F5;

/// Command error carrying its process exit code: 2 for usage/config
/// problems, 3 for data and I/O problems.
#[derive(Debug)]
pub struct CliError {
    /// Exit code (2 or 3).
    pub code: i32,
    /// Human-readable message.
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError { code: 2, message: msg.into() }
    }

    fn data(msg: impl Into<String>) -> Self {
        CliError { code: 3, message: msg.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse(_) | Error::Config(_) | Error::Contract(_) => 2,
            _ => 3,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(format!("io error: {e}"))
    }
}

/// Command result.
pub type CliResult<T> = Result<T, CliError>;

/// Caps the worker pool from the `IPA_THREADS` environment variable.
/// Call once at process start.
pub fn init_thread_pool() {
    if let Ok(val) = std::env::var("IPA_THREADS") {
        if let Ok(n) = val.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Experiment config
// ---------------------------------------------------------------------------

/// Parsed flat key=value experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Model code or preset name.
    pub model: String,
    /// Dataset path.
    pub data: PathBuf,
    /// Expected task (validated against the data).
    pub task: Option<Task>,
    /// Optional expected field count (validated against the data).
    pub m: Option<usize>,
    /// Embedding dimension.
    pub k: usize,
    /// Layer count override.
    pub l: Option<usize>,
    /// Global pooling width.
    pub h: usize,
    /// Field pooling self-pair override.
    pub include_self: Option<bool>,
    /// Symmetric weight sharing override.
    pub symmetric_share: Option<bool>,
    /// Classifier override.
    pub classifier: Option<ClassifierSpec>,
    /// First-order part override.
    pub first_order: Option<bool>,
    /// Dropout rate on the representation.
    pub dropout: f64,
    /// Adam learning rate.
    pub lr: f64,
    /// Mini-batch size.
    pub batch_size: usize,
    /// Maximum epochs.
    pub epochs: usize,
    /// Early-stopping patience.
    pub patience: usize,
    /// Seed for splits, init, shuffling and dropout.
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    /// Split ratios (train:val:test).
    pub split: Vec<f64>,
    /// Hash buckets per categorical field.
    pub cat_buckets: u32,
    /// Bucket limit for Criteo numeric fields.
    pub numeric_buckets: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: String::new(),
            data: PathBuf::new(),
            task: None,
            m: None,
            k: 16,
            l: None,
            h: 10,
            include_self: None,
            symmetric_share: None,
            classifier: None,
            first_order: None,
            dropout: 0.2,
            lr: 0.001,
            batch_size: 2048,
            epochs: 100,
            patience: 3,
            seed: 42,
            out: PathBuf::from("runs/out"),
            split: vec![8.0, 1.0, 1.0],
            cat_buckets: 100_000,
            numeric_buckets: 64,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::usage(format!("config key '{key}': bad boolean '{value}'"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("config key '{key}': bad value '{value}'")))
}

fn parse_classifier(value: &str) -> CliResult<ClassifierSpec> {
    let v = value.to_ascii_lowercase();
    if v == "sum" {
        Ok(ClassifierSpec::SumPool)
    } else if v == "linear" {
        Ok(ClassifierSpec::Linear)
    } else if let Some(sizes) = v.strip_prefix("mlp:") {
        let hidden: CliResult<Vec<usize>> =
            sizes.split(',').map(|s| parse_num("classifier", s.trim())).collect();
        let hidden = hidden?;
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(CliError::usage("classifier mlp needs positive hidden sizes"));
        }
        Ok(ClassifierSpec::Mlp(hidden))
    } else {
        Err(CliError::usage(format!(
            "classifier '{value}' not recognized (sum | linear | mlp:a,b)"
        )))
    }
}

fn classifier_to_string(c: &ClassifierSpec) -> String {
    match c {
        ClassifierSpec::SumPool => "sum".into(),
        ClassifierSpec::Linear => "linear".into(),
        ClassifierSpec::Mlp(sizes) => format!(
            "mlp:{}",
            sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
        ),
    }
}

/// Parses the flat key=value config format. Unknown keys are rejected;
/// `#` starts a comment.
pub fn parse_experiment_config(text: &str) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut saw_model = false;
    let mut saw_data = false;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::usage(format!("config line {}: expected key = value", ln + 1)));
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        match key.as_str() {
            "model" => {
                cfg.model = value.to_string();
                saw_model = true;
            }
            "data" => {
                cfg.data = PathBuf::from(value);
                saw_data = true;
            }
            "task" => {
                cfg.task = Some(match value.to_ascii_lowercase().as_str() {
                    "classification" => Task::Classification,
                    "regression" => Task::Regression,
                    _ => {
                        return Err(CliError::usage(format!(
                            "task '{value}' not recognized (classification | regression)"
                        )))
                    }
                })
            }
            "m" => cfg.m = Some(parse_num(&key, value)?),
            "k" => cfg.k = parse_num(&key, value)?,
            "l" => cfg.l = Some(parse_num(&key, value)?),
            "h" => cfg.h = parse_num(&key, value)?,
            "include_self" => cfg.include_self = Some(parse_bool(&key, value)?),
            "symmetric_share" => cfg.symmetric_share = Some(parse_bool(&key, value)?),
            "classifier" => cfg.classifier = Some(parse_classifier(value)?),
            "first_order" => cfg.first_order = Some(parse_bool(&key, value)?),
            "dropout" => cfg.dropout = parse_num(&key, value)?,
            "lr" => cfg.lr = parse_num(&key, value)?,
            "batch_size" => cfg.batch_size = parse_num(&key, value)?,
            "epochs" => cfg.epochs = parse_num(&key, value)?,
            "patience" => cfg.patience = parse_num(&key, value)?,
            "seed" => cfg.seed = parse_num(&key, value)?,
            "out" => cfg.out = PathBuf::from(value),
            "split" => {
                let parts: CliResult<Vec<f64>> =
                    value.split(':').map(|p| parse_num("split", p.trim())).collect();
                cfg.split = parts?;
                if cfg.split.len() != 3 || cfg.split.iter().any(|&r| r <= 0.0) {
                    return Err(CliError::usage(
                        "split must be three positive ratios, e.g. 8:1:1",
                    ));
                }
            }
            "cat_buckets" => cfg.cat_buckets = parse_num(&key, value)?,
            "numeric_buckets" => cfg.numeric_buckets = parse_num(&key, value)?,
            other => {
                return Err(CliError::usage(format!(
                    "unknown config key '{other}' on line {}",
                    ln + 1
                )))
            }
        }
    }
    if !saw_model {
        return Err(CliError::usage("config is missing the 'model' key"));
    }
    if !saw_data {
        return Err(CliError::usage("config is missing the 'data' key"));
    }
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn read_experiment_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
    parse_experiment_config(&text)
}

// ---------------------------------------------------------------------------
// Data loading
// ---------------------------------------------------------------------------

fn sniff_csv_header(path: &Path) -> CliResult<String> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    let mut line = String::new();
    std::io::BufReader::new(file)
        .read_line(&mut line)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(line.trim_end().to_string())
}

/// Loads a dataset with uniform hashing buckets from the experiment config.
///
/// `.tsv`/`.txt` files load as Criteo format; `.csv` files load as the
/// synthetic numeric format (`x1,...,y` header) or the generic categorical
/// format (`label,...` header).
pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<TabularDataset> {
    let path = &cfg.data;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let ds = match ext {
        "tsv" | "txt" => {
            let hasher = FeatureHasher::uniform(26, cfg.cat_buckets, HASH_SEED);
            let (ds, malformed) = load_criteo_tsv(path, &hasher, cfg.numeric_buckets)?;
            if malformed > 0 {
                eprintln!("note: skipped {malformed} malformed lines in {}", path.display());
            }
            ds
        }
        "csv" => {
            let header = sniff_csv_header(path)?;
            if header.starts_with("label,") {
                let fields = header.split(',').count() - 1;
                let hasher = FeatureHasher::uniform(fields, cfg.cat_buckets, HASH_SEED);
                load_categorical_csv(path, &hasher)?
            } else {
                load_synthetic_csv(path)?
            }
        }
        other => {
            return Err(CliError::usage(format!(
                "data file {} has unsupported extension '{other}' (csv, tsv, txt)",
                path.display()
            )))
        }
    };
    if let Some(task) = cfg.task {
        if task != ds.task {
            return Err(CliError::usage(format!(
                "config expects {task:?} but {} contains {:?} data",
                path.display(),
                ds.task
            )));
        }
    }
    if let Some(m) = cfg.m {
        if m != ds.num_fields() {
            return Err(CliError::usage(format!(
                "config expects m={m} but {} has {} fields",
                path.display(),
                ds.num_fields()
            )));
        }
    }
    Ok(ds)
}

/// Loads a dataset whose per-field vocabularies must match a checkpoint's.
pub fn load_dataset_matching(path: &Path, vocabs: &[u32]) -> CliResult<TabularDataset> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let ds = match ext {
        "tsv" | "txt" => {
            if vocabs.len() != 39 {
                return Err(CliError::data(format!(
                    "checkpoint has {} fields, Criteo data has 39",
                    vocabs.len()
                )));
            }
            let hasher = FeatureHasher { buckets: vocabs[13..].to_vec(), seed: HASH_SEED };
            let (ds, _) = load_criteo_tsv(path, &hasher, vocabs[0])?;
            ds
        }
        "csv" => {
            let header = sniff_csv_header(path)?;
            if header.starts_with("label,") {
                let hasher = FeatureHasher { buckets: vocabs.to_vec(), seed: HASH_SEED };
                load_categorical_csv(path, &hasher)?
            } else {
                load_synthetic_csv(path)?
            }
        }
        other => {
            return Err(CliError::usage(format!(
                "data file {} has unsupported extension '{other}'",
                path.display()
            )))
        }
    };
    if ds.vocabs() != vocabs {
        return Err(CliError::data(
            "dataset schema does not match the checkpoint's fields".to_string(),
        ));
    }
    Ok(ds)
}

/// Resolves the full model configuration for a dataset.
pub fn build_model_config(cfg: &ExperimentConfig, ds: &TabularDataset) -> CliResult<ModelConfig> {
    let m = ds.num_fields();
    let vocabs = ds.vocabs();
    let is_preset = PRESET_NAMES.iter().any(|p| p.eq_ignore_ascii_case(cfg.model.trim()));
    let mut mc = if is_preset {
        preset(&cfg.model, m, cfg.k, &vocabs, ds.task)?
    } else {
        let code = parse_code(&cfg.model)?;
        ModelConfig::from_code(code, m, cfg.k, cfg.l.unwrap_or(4), &vocabs, ds.task)
    };
    if let Some(l) = cfg.l {
        mc.l = l;
    }
    mc.global_width = cfg.h;
    if let Some(v) = cfg.include_self {
        mc.include_self = v;
    }
    if let Some(v) = cfg.symmetric_share {
        mc.symmetric_share = v;
    }
    if let Some(c) = &cfg.classifier {
        mc.classifier = c.clone();
    }
    if let Some(v) = cfg.first_order {
        mc.first_order = v;
    }
    mc.dropout_rate = cfg.dropout;
    mc.validate()?;
    Ok(mc)
}

/// Renders the fully resolved config in the same key=value format, keys
/// sorted, so runs archive their exact settings.
pub fn resolved_config_text(cfg: &ExperimentConfig, mc: &ModelConfig) -> String {
    let mut pairs: Vec<(&str, String)> = vec![
        ("batch_size", cfg.batch_size.to_string()),
        ("cat_buckets", cfg.cat_buckets.to_string()),
        ("classifier", classifier_to_string(&mc.classifier)),
        ("data", cfg.data.display().to_string()),
        ("dropout", format!("{}", mc.dropout_rate)),
        ("epochs", cfg.epochs.to_string()),
        ("first_order", mc.first_order.to_string()),
        ("h", mc.global_width.to_string()),
        ("include_self", mc.include_self.to_string()),
        ("k", mc.k.to_string()),
        ("l", mc.l.to_string()),
        ("lr", format!("{}", cfg.lr)),
        ("m", mc.m.to_string()),
        ("model", cfg.model.clone()),
        ("numeric_buckets", cfg.numeric_buckets.to_string()),
        ("out", cfg.out.display().to_string()),
        ("patience", cfg.patience.to_string()),
        ("seed", cfg.seed.to_string()),
        (
            "split",
            cfg.split.iter().map(|r| format!("{r}")).collect::<Vec<_>>().join(":"),
        ),
        ("symmetric_share", mc.symmetric_share.to_string()),
        (
            "task",
            match mc.task {
                Task::Classification => "classification".into(),
                Task::Regression => "regression".into(),
            },
        ),
    ];
    pairs.sort_by_key(|(k, _)| *k);
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Flags of the `generate` subcommand.
#[derive(Debug, Clone)]
pub struct GenerateArgs {
    /// Maximum cross-term order.
    pub order: usize,
    /// Feature count.
    pub features: usize,
    /// Row count.
    pub samples: usize,
    /// Label noise standard deviation.
    pub noise: f64,
    /// Generator seed.
    pub seed: u64,
    /// Output CSV path.
    pub out: PathBuf,
}

/// Generates a synthetic cross-term dataset CSV.
pub fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    let spec = SyntheticSpec {
        features: args.features,
        order: args.order,
        samples: args.samples,
        noise_sigma: args.noise,
        seed: args.seed,
        max_combinations: None,
    };
    let ds = generate_synthetic(&spec)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_synthetic_csv(&ds, &args.out)?;
    Ok(())
}

/// Everything `train` produced, for callers that keep going (sweeps, tests).
#[derive(Debug)]
pub struct TrainOutcome {
    /// Run directory holding history.jsonl, model.ckpt, resolved.cfg, split.txt.
    pub run_dir: PathBuf,
    /// Training history.
    pub history: TrainHistory,
    /// Validation metrics of the restored best model.
    pub val: EvalReport,
    /// Test metrics of the restored best model.
    pub test: EvalReport,
    /// Trainable scalar count.
    pub param_count: usize,
}

/// Trains a model from a config file and writes the run directory.
pub fn cmd_train(config_path: &Path) -> CliResult<TrainOutcome> {
    let cfg = read_experiment_config(config_path)?;
    train_with_config(&cfg)
}

/// Trains from an already-parsed config.
pub fn train_with_config(cfg: &ExperimentConfig) -> CliResult<TrainOutcome> {
    let ds = load_dataset(cfg)?;
    let mc = build_model_config(cfg, &ds)?;
    let parts = split(&ds, &cfg.split, cfg.seed)?;
    let (train_ds, val_ds, test_ds) = (&parts[0], &parts[1], &parts[2]);

    let mut model = IpaModel::new(mc.clone(), cfg.seed)?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        patience: cfg.patience,
        seed: cfg.seed,
        lr: cfg.lr,
    };
    let history = train(&mut model, train_ds, val_ds, &opts)?;
    let val = evaluate(&model, val_ds)?;
    let test = evaluate(&model, test_ds)?;

    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("history.jsonl"), history.to_jsonl())?;
    std::fs::write(cfg.out.join("resolved.cfg"), resolved_config_text(cfg, &mc))?;
    save_checkpoint(&model, &cfg.out.join("model.ckpt"))?;
    write_split_manifest(&cfg.out.join("split.txt"), ds.len(), &cfg.split, cfg.seed)?;

    Ok(TrainOutcome {
        run_dir: cfg.out.clone(),
        history,
        val,
        test,
        param_count: count_params(&mc)?,
    })
}

fn write_split_manifest(path: &Path, n: usize, ratios: &[f64], seed: u64) -> CliResult<()> {
    let parts = split_indices(n, ratios, seed)?;
    let names = ["train", "val", "test"];
    let mut out = String::new();
    for (name, indices) in names.iter().zip(&parts) {
        let _ = writeln!(out, "[{name}]");
        for i in indices {
            let _ = writeln!(out, "{i}");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Evaluates a checkpoint on a dataset file.
pub fn cmd_evaluate(checkpoint: &Path, data: &Path) -> CliResult<EvalReport> {
    let model = load_checkpoint(checkpoint)?;
    let ds = load_dataset_matching(data, &model.config.vocabs)?;
    Ok(evaluate(&model, &ds)?)
}

/// One sweep row.
#[derive(Debug, Clone)]
pub struct SweepRow {
    /// Variant id, e.g. `L=4` or `model=PFL`.
    pub variant: String,
    /// Headline validation metric at the best epoch (AUC or RMSE).
    pub val_metric: f64,
    /// Same metric on the test partition.
    pub test_metric: f64,
    /// Trainable scalar count.
    pub params: usize,
    /// Wall-clock seconds for the variant.
    pub wall_time_s: f64,
}

fn headline_metric(report: &EvalReport, task: Task) -> f64 {
    match task {
        Task::Classification => report.auc.unwrap_or(f64::NAN),
        Task::Regression => report.rmse.unwrap_or(f64::NAN),
    }
}

/// Parses `--vary` into (key, values), e.g. `L=3..8` or `model=PFL,WGT`.
fn parse_vary(vary: &str) -> CliResult<(String, Vec<String>)> {
    let Some((key, values)) = vary.split_once('=') else {
        return Err(CliError::usage("--vary expects key=values, e.g. L=3..8 or model=PFL,WGT"));
    };
    let key = key.trim().to_ascii_lowercase();
    let values = values.trim();
    let list: Vec<String> = if let Some((a, b)) = values.split_once("..") {
        let a: usize = parse_num("vary range start", a.trim())?;
        let b: usize = parse_num("vary range end", b.trim())?;
        if a > b {
            return Err(CliError::usage(format!("empty vary range {a}..{b}")));
        }
        (a..=b).map(|v| v.to_string()).collect()
    } else {
        values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect()
    };
    if list.is_empty() {
        return Err(CliError::usage("empty sweep set"));
    }
    Ok((key, list))
}

/// Runs a sweep over one config key and writes `results.csv` in the config's
/// output directory. Variants run independently on the worker pool; the
/// results file is written by a single collector in variant order.
pub fn cmd_sweep(config_path: &Path, vary: &str) -> CliResult<PathBuf> {
    let base = read_experiment_config(config_path)?;
    let (key, values) = parse_vary(vary)?;

    let variants: Vec<(String, ExperimentConfig)> = values
        .iter()
        .map(|value| -> CliResult<(String, ExperimentConfig)> {
            let mut cfg = base.clone();
            match key.as_str() {
                "l" => cfg.l = Some(parse_num("vary L", value)?),
                "k" => cfg.k = parse_num("vary K", value)?,
                "h" => cfg.h = parse_num("vary H", value)?,
                "model" => cfg.model = value.clone(),
                other => {
                    return Err(CliError::usage(format!(
                        "cannot vary '{other}' (supported: l, k, h, model)"
                    )))
                }
            }
            let id = format!("{key}={value}");
            cfg.out = base.out.join(format!("sweep_{}", id.replace(['=', '\''], "_")));
            Ok((id, cfg))
        })
        .collect::<CliResult<Vec<_>>>()?;

    use rayon::prelude::*;
    let rows: Vec<SweepRow> = variants
        .par_iter()
        .map(|(id, cfg)| -> CliResult<SweepRow> {
            let started = Instant::now();
            let outcome = train_with_config(cfg)?;
            let task = if outcome.val.rmse.is_some() { Task::Regression } else { Task::Classification };
            Ok(SweepRow {
                variant: id.clone(),
                val_metric: headline_metric(&outcome.val, task),
                test_metric: headline_metric(&outcome.test, task),
                params: outcome.param_count,
                wall_time_s: started.elapsed().as_secs_f64(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    std::fs::create_dir_all(&base.out)?;
    let path = base.out.join("results.csv");
    let mut text = String::from("variant,val_metric,test_metric,params,wall_time_s\n");
    for row in &rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{:.3}",
            row.variant, row.val_metric, row.test_metric, row.params, row.wall_time_s
        );
    }
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Writes the collapse report CSV of a checkpoint over a dataset.
pub fn cmd_collapse(checkpoint: &Path, data: &Path, out: &Path) -> CliResult<()> {
    let model = load_checkpoint(checkpoint)?;
    let ds = load_dataset_matching(data, &model.config.vocabs)?;
    let report = collapse_report(&model, &ds)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_collapse_csv(&report, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_rejects_unknown_keys() {
        let good = "model = PFL\ndata = d.csv\nk = 8 # comment\n";
        let cfg = parse_experiment_config(good).unwrap();
        assert_eq!(cfg.model, "PFL");
        assert_eq!(cfg.k, 8);

        let bad = "model = PFL\ndata = d.csv\nwat = 1\n";
        let err = parse_experiment_config(bad).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("wat"));

        let missing = "data = d.csv\n";
        assert_eq!(parse_experiment_config(missing).unwrap_err().code, 2);
    }

    #[test]
    fn vary_parsing() {
        let (k, vs) = parse_vary("L=3..5").unwrap();
        assert_eq!(k, "l");
        assert_eq!(vs, vec!["3", "4", "5"]);
        let (k, vs) = parse_vary("model=PFL,PF'D,WGT").unwrap();
        assert_eq!(k, "model");
        assert_eq!(vs.len(), 3);
        assert_eq!(parse_vary("model=").unwrap_err().code, 2);
        assert_eq!(parse_vary("L=5..3").unwrap_err().code, 2);
    }

    #[test]
    fn classifier_strings() {
        assert_eq!(parse_classifier("sum").unwrap(), ClassifierSpec::SumPool);
        assert_eq!(parse_classifier("linear").unwrap(), ClassifierSpec::Linear);
        assert_eq!(
            parse_classifier("mlp:64,32").unwrap(),
            ClassifierSpec::Mlp(vec![64, 32])
        );
        assert!(parse_classifier("dnn").is_err());
        assert_eq!(classifier_to_string(&ClassifierSpec::Mlp(vec![8])), "mlp:8");
    }
}
