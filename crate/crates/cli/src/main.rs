mod dataset;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gcascade::complexity::{profile, FlopConvention};
use gcascade::decoder::{Aggregation, DecoderConfig};
use gcascade::gradcheck::{run_suite, GradCheckConfig};
use gcascade::metrics::write_eval_csv;
use gcascade::training::{
    load_checkpoint, save_checkpoint, synth_splits, train, write_log_csv, EpochLog, Manifest,
    Splits, TrainConfig,
};
use gcascade::{build_knn_graph, gten, DType, GraphConvVariant, Scalar, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dataset::{read_dataset, write_dataset, Meta};

pub const PRECISION_ENV: &str = "GCASCADE_PRECISION";
pub const LOG_FILE: &str = "train_log.csv";

/// G-CASCADE decoder toolkit: synthetic data, training, evaluation,
/// complexity accounting and gradient checks.
#[derive(Parser, Debug)]
#[command(name = "gcascade", version)]
struct Cli {
    /// Flat `key = value` config file; unset keys keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic segmentation dataset directory.
    Synth(SynthArgs),
    /// Train on a dataset directory (or the in-memory synthetic task).
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation split.
    Eval(EvalArgs),
    /// Print the parameter and FLOP breakdown of a decoder.
    Count(CountArgs),
    /// Run the finite-difference gradient suite; exits 0 iff it passes.
    Gradcheck(GradcheckArgs),
    /// Build a KNN graph and write it as CSV (batch,node,slot,neighbor).
    GraphDump(GraphDumpArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `synth`; generated in memory if absent.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Checkpoint directory; also receives the epoch log.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Dataset directory; the checkpoint's synthetic split is regenerated if absent.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Per-sample, per-class metrics CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CountArgs {
    #[arg(long, default_value_t = 224)]
    input_size: usize,
    #[arg(long)]
    variant: Option<GraphConvVariant>,
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// Stage widths from the lowest resolution to the highest.
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<usize>>,
    #[arg(long)]
    classes: Option<usize>,
    /// `macs` (multiply-accumulates of convolutions) or `full`.
    #[arg(long, default_value = "macs")]
    flops: String,
    /// Print CSV (path,params,flops) instead of the table, or write it to FILE.
    #[arg(long, value_name = "FILE", num_args = 0..=1)]
    csv: Option<Option<PathBuf>>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Entries sampled per tensor.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug)]
struct GraphDumpArgs {
    /// Feature tensor (GTEN); random normal features are used if absent.
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 8)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 9)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    dilation: usize,
    #[arg(long, default_value_t = 1)]
    reduction: usize,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn precision_override() -> Result<Option<DType>> {
    match std::env::var(PRECISION_ENV) {
        Ok(v) => match v.trim() {
            "f32" => Ok(Some(DType::F32)),
            "f64" => Ok(Some(DType::F64)),
            other => bail!("{PRECISION_ENV} must be f32 or f64, got '{other}'"),
        },
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{PRECISION_ENV}: {e}"),
    }
}

fn train_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            TrainConfig::load(path).with_context(|| format!("loading config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every check of the command passed.
fn run(cli: &Cli) -> Result<bool> {
    let precision = precision_override()?;
    let dtype = precision.unwrap_or(DType::F32);
    match &cli.command {
        Command::Synth(a) => {
            let cfg = train_config(cli)?;
            let meta = Meta {
                size: a.size.unwrap_or(cfg.image_size),
                classes: a.classes.unwrap_or(cfg.decoder.classes),
                seed: cfg.seed,
                train: a.train.unwrap_or(cfg.train_samples),
                val: a.val.unwrap_or(cfg.val_samples),
            };
            match dtype {
                DType::F32 => write_dataset::<f32>(&a.out, meta)?,
                DType::F64 => write_dataset::<f64>(&a.out, meta)?,
            }
            println!(
                "wrote {} train + {} val samples to {}",
                meta.train,
                meta.val,
                a.out.display()
            );
            Ok(true)
        }
        Command::Train(a) => {
            let mut cfg = train_config(cli)?;
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            match dtype {
                DType::F32 => run_train::<f32>(&cfg, a),
                DType::F64 => run_train::<f64>(&cfg, a),
            }
        }
        Command::Eval(a) => {
            let manifest = Manifest::read(&a.checkpoint)
                .with_context(|| format!("reading checkpoint {}", a.checkpoint.display()))?;
            match precision.unwrap_or(manifest.dtype) {
                DType::F32 => run_eval::<f32>(a),
                DType::F64 => run_eval::<f64>(a),
            }
        }
        Command::Count(a) => run_count(cli, a),
        Command::Gradcheck(a) => {
            let mut cfg = GradCheckConfig {
                seed: cli.seed.unwrap_or(0),
                ..GradCheckConfig::default()
            };
            if let Some(s) = a.samples {
                cfg.samples_per_tensor = s;
            }
            let report = run_suite(&cfg)?;
            for r in &report.results {
                let status = if r.max_rel_err < report.tolerance {
                    "ok"
                } else {
                    "FAIL"
                };
                println!(
                    "{status:<4} {:<32} max_rel_err {:.3e}  entries {:>5}  refined {:>4}  skipped {:>3}  worst {}",
                    r.name, r.max_rel_err, r.entries, r.refined, r.skipped, r.worst
                );
            }
            println!(
                "max relative error {:.3e} (tolerance {:.0e})",
                report.max_rel_err(),
                report.tolerance
            );
            Ok(report.passed())
        }
        Command::GraphDump(a) => match dtype {
            DType::F32 => run_graph_dump::<f32>(cli, a),
            DType::F64 => run_graph_dump::<f64>(cli, a),
        },
    }
}

fn load_splits<T: Scalar>(cfg: &TrainConfig, data: Option<&Path>) -> Result<Splits<T>> {
    let Some(dir) = data else {
        return Ok(synth_splits(cfg)?);
    };
    let (meta, splits) = read_dataset(dir)?;
    if meta.size != cfg.image_size || meta.classes != cfg.decoder.classes {
        bail!(
            "dataset {} is {}x{} with {} classes, config expects image_size {} and {} classes",
            dir.display(),
            meta.size,
            meta.size,
            meta.classes,
            cfg.image_size,
            cfg.decoder.classes
        );
    }
    Ok(splits)
}

fn run_train<T: Scalar>(cfg: &TrainConfig, a: &TrainArgs) -> Result<bool> {
    let (train_set, val_set) = load_splits::<T>(cfg, a.data.as_deref())?;
    println!("{}", EpochLog::CSV_HEADER);
    let outcome = train(cfg, &train_set, &val_set, |log| {
        println!("{}", log.csv_row())
    })?;
    save_checkpoint(&a.out, &outcome.trained, cfg, outcome.final_epoch())?;
    let mut log = fs::File::create(a.out.join(LOG_FILE))?;
    write_log_csv(&outcome.logs, &mut log)?;
    if let Some(last) = outcome.logs.last() {
        println!("val_dice = {:.6}", last.val_dice);
    }
    Ok(true)
}

fn run_eval<T: Scalar>(a: &EvalArgs) -> Result<bool> {
    let (mut trained, manifest) = load_checkpoint::<T>(&a.checkpoint)?;
    let (_, val_set) = load_splits::<T>(&manifest.config, a.data.as_deref())?;
    let report = trained.evaluate(&val_set, manifest.config.batch_size)?;
    if let Some(path) = &a.csv {
        write_eval_csv(&report, fs::File::create(path)?)?;
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
    println!("# {}", gcascade::metrics::MetricsReport::CONVENTIONS);
    println!("epoch = {}", manifest.epoch);
    println!("val_dice = {:.6}", report.mean_dice);
    println!("val_miou = {:.6}", report.miou);
    println!("val_hd95 = {}", fmt(report.mean_hd95));
    println!("acc = {}", fmt(report.acc));
    println!("sen = {}", fmt(report.sen));
    println!("sp = {}", fmt(report.sp));
    for (c, d) in report.per_class_dice.iter().enumerate() {
        println!("dice[{c}] = {d:.6}");
    }
    Ok(true)
}

fn run_count(cli: &Cli, a: &CountArgs) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => TrainConfig::load(path)?.decoder,
        None => DecoderConfig::default(),
    };
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(g) = a.aggregation {
        cfg.aggregation = g;
    }
    if let Some(ch) = &a.channels {
        cfg.stage_channels = ch
            .as_slice()
            .try_into()
            .context("--channels needs 4 values")?;
    }
    if let Some(c) = a.classes {
        cfg.classes = c;
    }
    cfg.validate()?;
    if a.input_size == 0 || !a.input_size.is_multiple_of(32) {
        bail!(
            "--input-size {} must be a positive multiple of 32",
            a.input_size
        );
    }
    let convention = FlopConvention::parse(&a.flops)
        .with_context(|| format!("unknown FLOP convention '{}'", a.flops))?;
    let report = profile(&cfg, (a.input_size, a.input_size), convention);
    match &a.csv {
        Some(Some(path)) => {
            fs::write(path, report.to_csv())?;
            print!("{}", report.to_table());
        }
        Some(None) => print!("{}", report.to_csv()),
        None => print!("{}", report.to_table()),
    }
    Ok(true)
}

fn run_graph_dump<T: Scalar>(cli: &Cli, a: &GraphDumpArgs) -> Result<bool> {
    let features: Tensor<T> = match &a.features {
        Some(path) => gten::read(path).with_context(|| format!("reading {}", path.display()))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
            Tensor::randn(
                Shape::new(a.batch, a.channels, a.height, a.width),
                1.0,
                &mut rng,
            )
        }
    };
    let graph = build_knn_graph(&features, a.k, a.dilation, a.reduction)?;
    let csv = graph.to_csv();
    match &a.out {
        Some(path) => fs::write(path, csv)?,
        None => io::stdout().lock().write_all(csv.as_bytes())?,
    }
    Ok(true)
}
