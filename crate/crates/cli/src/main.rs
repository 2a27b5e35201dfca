mod config;
mod manifest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dlnagg::data::{
    self, load_dataset, split, write_raw, write_tokenized, Dataset, LabelKind, Loaded, Metric,
    Schema, SplitFractions,
};
use dlnagg::sfe::{self, TokenTable, TokenizerConfig};
use dlnagg::train::{self, LossKind, Monitor};
use dlnagg::AggModel;
use log::{info, warn};

use config::RunConfig;
use manifest::{sidecar, ManifestBuilder};

/// Monotonic lattice aggregation functions over sets, and the token
/// feature pipeline that feeds them.
#[derive(Parser, Debug)]
#[command(name = "dlnagg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON pipeline config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a dataset into train, validation and test files.
    Split {
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Train, validation and test fractions, e.g. 0.7,0.1,0.2.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        fractions: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Build and filter a token table from raw categorical data.
    BuildTable {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Largest category subset to count.
        #[arg(long, conflicts_with = "ngrams")]
        max_size: Option<usize>,
        /// Tokenize as word ngrams up to this order instead of subsets.
        #[arg(long)]
        ngrams: Option<usize>,
        #[arg(long)]
        count_threshold: Option<u64>,
        #[arg(long)]
        ci_threshold: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Turn raw categorical data into token feature rows.
    AssembleFeatures {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write it with its loss trace.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Token table, when `--data` holds raw categories.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Validation set for monitoring and tuning.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Search the config's grid and keep the best validation model.
        #[arg(long)]
        tune: bool,
        /// Validation metric.
        #[arg(long)]
        metric: Option<Metric>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a dataset and write a metric report.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Metrics to report, comma separated.
        #[arg(long, value_delimiter = ',')]
        metric: Vec<Metric>,
        #[command(flatten)]
        common: Common,
    },
    /// Write one score per example.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write per-token breakdowns of predictions.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Only explain these example ids.
        #[arg(long)]
        id: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Write every calibrator of a model as CSV.
    ExportCurves {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Bad invocation or missing input.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<dlnagg::Error>() {
            return match e {
                dlnagg::Error::Divergence { .. } => 3,
                dlnagg::Error::Schema(_) | dlnagg::Error::Shape(_) => 4,
                _ => 1,
            };
        }
    }
    1
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(UsageError(format!("{what} '{}' does not exist", path.display())).into());
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("AGG_NUM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| UsageError(format!("AGG_NUM_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(UsageError("AGG_NUM_THREADS must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn load_table(path: &Path) -> Result<TokenTable> {
    require(path, "token table")?;
    TokenTable::load(path).with_context(|| format!("loading token table {}", path.display()))
}

/// Loads a dataset, assembling token features first when the file holds
/// raw categories.
fn load_examples(path: &Path, table: Option<&Path>) -> Result<Dataset> {
    require(path, "data file")?;
    let schema = Schema::load_sidecar(path)
        .with_context(|| format!("reading schema {}", Schema::sidecar_path(path).display()))?;
    match load_dataset(path, &schema).with_context(|| format!("loading {}", path.display()))? {
        Loaded::Tokens(d) => Ok(d),
        Loaded::Raw(raw) => {
            let Some(table) = table else {
                return Err(UsageError(format!(
                    "{} holds raw categories; pass --table",
                    path.display()
                ))
                .into());
            };
            Ok(sfe::assemble_dataset(&raw, &load_table(table)?)?)
        }
    }
}

fn load_model(path: &Path) -> Result<AggModel> {
    require(path, "model file")?;
    AggModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn check_width(model: &AggModel, data: &Dataset) -> Result<()> {
    if model.num_features != data.num_features() {
        return Err(dlnagg::Error::Schema(format!(
            "model expects {} features per token, data has {}",
            model.num_features,
            data.num_features()
        ))
        .into());
    }
    Ok(())
}

/// Ranking metrics only make sense when every row has a group and some
/// group holds more than one row.
fn has_groups(data: &Dataset) -> bool {
    let mut sizes = std::collections::HashMap::new();
    for e in &data.examples {
        let Some(g) = &e.group_id else {
            return false;
        };
        *sizes.entry(g.as_str()).or_insert(0usize) += 1;
    }
    sizes.values().any(|&n| n > 1)
}

fn default_metric(data: &Dataset) -> Metric {
    match data.label_kind {
        LabelKind::Real => Metric::Mse,
        LabelKind::Pm1Binary if has_groups(data) => Metric::PrecisionAt(1),
        LabelKind::Pm1Binary => Metric::Accuracy,
    }
}

fn default_metrics(data: &Dataset) -> Vec<Metric> {
    match data.label_kind {
        LabelKind::Real => vec![Metric::Mae, Metric::Mse],
        LabelKind::Pm1Binary if has_groups(data) => {
            vec![Metric::Accuracy, Metric::PrecisionAt(1), Metric::PrecisionAt(3)]
        }
        LabelKind::Pm1Binary => vec![Metric::Accuracy],
    }
}

fn default_loss(kind: LabelKind) -> LossKind {
    match kind {
        LabelKind::Real => LossKind::SquaredError,
        LabelKind::Pm1Binary => LossKind::LogisticPm1,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split {
            data,
            out,
            fractions,
            common,
        } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let seed = common.seed.unwrap_or(cfg.train.seed);
            let fractions = match fractions {
                Some(f) => SplitFractions {
                    train: f[0],
                    validation: f[1],
                    test: f[2],
                },
                None => cfg.split,
            };
            require(&data, "data file")?;
            let schema = Schema::load_sidecar(&data)?;
            std::fs::create_dir_all(&out)?;
            let mut m = ManifestBuilder::new("split", common.config.as_deref());
            m.input("data", &data).seed(seed);
            let names = ["train", "validation", "test"];
            match load_dataset(&data, &schema)? {
                Loaded::Raw(raw) => {
                    let (a, b, c) = split(&raw.examples, fractions, seed)?;
                    for (name, part) in names.iter().zip([a, b, c]) {
                        let path = out.join(format!("{name}.jsonl"));
                        info!("{name}: {} rows", part.len());
                        write_raw(
                            &data::RawDataset {
                                examples: part,
                                label_kind: raw.label_kind,
                            },
                            &path,
                        )?;
                        m.output(&path);
                    }
                }
                Loaded::Tokens(ds) => {
                    let (a, b, c) = data::split_dataset(&ds, fractions, seed)?;
                    for (name, part) in names.iter().zip([a, b, c]) {
                        let path = out.join(format!("{name}.csv"));
                        info!("{name}: {} examples", part.examples.len());
                        write_tokenized(&part, &path)?;
                        m.output(&path);
                    }
                }
            }
            m.finish(&out.join("split"))?;
        }

        Command::BuildTable {
            data,
            out,
            max_size,
            ngrams,
            count_threshold,
            ci_threshold,
            common,
        } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let tokenizer = match (ngrams, max_size) {
                (Some(q), _) => TokenizerConfig::Ngrams { max_order: q },
                (None, Some(k)) => TokenizerConfig::Subsets { max_size: k },
                (None, None) => cfg.tokenizer,
            };
            let count_threshold = count_threshold.unwrap_or(cfg.count_threshold);
            let ci_threshold = ci_threshold.or(cfg.ci_threshold);
            require(&data, "data file")?;
            let raw = data::load_raw(&data)?;
            let full = sfe::build_token_table(&raw.examples, raw.label_kind, tokenizer)?;
            let table = sfe::filter_table(&full, count_threshold, ci_threshold)?;
            println!("entries before filtering: {}", full.len());
            println!("entries after filtering: {}", table.len());
            if table.is_empty() {
                warn!("no token survived the filters; the table is empty");
            }
            table.write(create(&out)?)?;
            let mut m = ManifestBuilder::new("build-table", common.config.as_deref());
            m.input("data", &data).output(&out);
            m.finish(&out)?;
        }

        Command::AssembleFeatures {
            data,
            table,
            out,
            common,
        } => {
            require(&data, "data file")?;
            let raw = data::load_raw(&data)?;
            let table_file = load_table(&table)?;
            let ds = sfe::assemble_dataset(&raw, &table_file)?;
            let missing = ds
                .examples
                .iter()
                .filter(|e| e.tokens.len() == 1 && e.tokens[0].iter().all(Option::is_none))
                .count();
            info!(
                "{} examples assembled, {missing} with no table hit",
                ds.examples.len()
            );
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_tokenized(&ds, &out)?;
            let mut m = ManifestBuilder::new("assemble-features", common.config.as_deref());
            m.input("data", &data).input("table", &table).output(&out);
            m.finish(&out)?;
        }

        Command::Train {
            data,
            table,
            validation,
            out,
            tune,
            metric,
            epochs,
            common,
        } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let train_set = load_examples(&data, table.as_deref())?;
            let val_set = validation
                .as_deref()
                .map(|v| load_examples(v, table.as_deref()))
                .transpose()?;
            if let Some(v) = &val_set {
                if v.num_features() != train_set.num_features() {
                    return Err(dlnagg::Error::Schema(
                        "training and validation sets have different feature counts".into(),
                    )
                    .into());
                }
            }
            let mut tc = cfg.train.clone();
            tc.loss = cfg.loss.unwrap_or_else(|| default_loss(train_set.label_kind));
            if let Some(s) = common.seed {
                tc.seed = s;
            }
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            let metric = metric.or(cfg.metric).unwrap_or_else(|| default_metric(&train_set));
            let d = train_set.num_features();

            let mut m = ManifestBuilder::new("train", common.config.as_deref());
            m.input("data", &data).seed(tc.seed);
            if let Some(t) = &table {
                m.input("table", t);
            }
            if let Some(v) = &validation {
                m.input("validation", v);
            }

            let model = if tune {
                let Some(val) = &val_set else {
                    return Err(UsageError("--tune needs --validation".into()).into());
                };
                let mut grid = cfg.grid.expand(&cfg.architecture, &tc);
                if epochs.is_some() {
                    for c in &mut grid {
                        c.config.epochs = tc.epochs;
                    }
                }
                info!("tuning {} candidates on {metric}", grid.len());
                let (model, report) =
                    train::tune(&grid, &train_set.examples, &val.examples, d, metric)?;
                let report_path = sidecar(&out, "tune.json");
                write_json(&report_path, &report)?;
                m.output(&report_path);
                info!("best candidate {} ({metric} = {:?})", report.best, report.rows[report.best].metric);
                model
            } else {
                let init = AggModel::init_from_examples(&cfg.architecture, &train_set.examples, d)?;
                let monitor = val_set.as_ref().map(|v| Monitor {
                    examples: &v.examples,
                    metric,
                });
                let (model, trace) =
                    train::train_monitored(init, &train_set.examples, &tc, monitor)?;
                if let Some(last) = trace.epochs.last() {
                    info!("final epoch mean loss {:.6}", last.mean_loss);
                }
                let trace_path = sidecar(&out, "trace.csv");
                trace.write_csv(create(&trace_path)?)?;
                m.output(&trace_path);
                model
            };
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            model.save(&out)?;
            m.output(&out);
            m.finish(&out)?;
        }

        Command::Evaluate {
            model,
            data,
            table,
            out,
            metric,
            common,
        } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let agg = load_model(&model)?;
            let ds = load_examples(&data, table.as_deref())?;
            check_width(&agg, &ds)?;
            let metrics = if !metric.is_empty() {
                metric
            } else if !cfg.metrics.is_empty() {
                cfg.metrics.clone()
            } else {
                default_metrics(&ds)
            };
            let report = data::evaluate(&agg, &ds.examples, &metrics)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            write_json(&out, &report)?;
            let mut m = ManifestBuilder::new("evaluate", common.config.as_deref());
            m.input("model", &model).input("data", &data).output(&out);
            m.finish(&out)?;
        }

        Command::Predict {
            model,
            data,
            table,
            out,
            common,
        } => {
            let agg = load_model(&model)?;
            let ds = load_examples(&data, table.as_deref())?;
            check_width(&agg, &ds)?;
            let scores = data::predict(&agg, &ds.examples)?;
            let mut w = csv_writer(&out)?;
            w.write_record(["id", "group", "label", "score"])?;
            for (e, s) in ds.examples.iter().zip(scores) {
                w.write_record([
                    e.id.clone(),
                    e.group_id.clone().unwrap_or_default(),
                    format!("{:?}", e.label),
                    format!("{s:?}"),
                ])?;
            }
            w.flush()?;
            let mut m = ManifestBuilder::new("predict", common.config.as_deref());
            m.input("model", &model).input("data", &data).output(&out);
            m.finish(&out)?;
        }

        Command::Explain {
            model,
            data,
            table,
            out,
            id,
            common,
        } => {
            let agg = load_model(&model)?;
            let ds = load_examples(&data, table.as_deref())?;
            check_width(&agg, &ds)?;
            let chosen: Vec<_> = ds
                .examples
                .iter()
                .filter(|e| id.is_empty() || id.contains(&e.id))
                .collect();
            if chosen.is_empty() && !id.is_empty() {
                bail!(UsageError(format!("no example with id {}", id.join(", "))));
            }
            let reports = chosen
                .iter()
                .map(|e| agg.explain(e))
                .collect::<dlnagg::Result<Vec<_>>>()?;
            for r in reports.iter().take(5) {
                println!("example {}:\n{}", r.id, r.to_text());
            }
            write_json(&out, &reports)?;
            let mut m = ManifestBuilder::new("explain", common.config.as_deref());
            m.input("model", &model).input("data", &data).output(&out);
            m.finish(&out)?;
        }

        Command::ExportCurves { model, out, common } => {
            let agg = load_model(&model)?;
            let curves = agg.export_calibrator_curves();
            dlnagg::model::write_curves_csv(&curves, create(&out)?)?;
            info!("{} curves written", curves.len());
            let mut m = ManifestBuilder::new("export-curves", common.config.as_deref());
            m.input("model", &model).output(&out);
            m.finish(&out)?;
        }
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
