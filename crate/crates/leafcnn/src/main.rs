//! Command-line entry point: train, eval, predict, summary.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use leafcnn::config::RunConfig;
use leafcnn::data::{scan_dataset, split, write_split_manifest, DatasetIndex};
use leafcnn::error::Error;
use leafcnn::layers::network::{build_network, Network};
use leafcnn::model_io::{load_model, model_precision, save_model};
use leafcnn::tensor::{Element, Precision};
use leafcnn::train::{evaluate, export_metrics, predict, train, EvalReport};

/// Class names used when no dataset is at hand, in the class-index order a
/// scan of the standard layout produces.
const DEFAULT_CLASSES: [&str; 3] = ["Early_blight", "Healthy", "Late_blight"];

#[derive(Parser)]
#[command(name = "leafcnn", version, about = "Train and run a potato leaf disease classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.leaf, metrics.csv, split_manifest.tsv
    Train(TrainArgs),
    /// Evaluate a saved model on one split; writes eval_report.csv
    Eval(EvalArgs),
    /// Classify images, one tab-separated line per image
    Predict(PredictArgs),
    /// Print the layer table of a saved model or a fresh build
    Summary(SummaryArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Flat key = value config file; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root with one subdirectory per class
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory for artifacts
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable training-time augmentation
    #[arg(long)]
    no_augment: bool,
    /// Single-threaded run with zeroed wall-clock metrics; identical seeds
    /// give byte-identical artifacts
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Saved model file
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Partition to score
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
    /// Split seed; defaults to the seed stored in the model
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for eval_report.csv
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Images to classify
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(clap::Args)]
struct SummaryArgs {
    /// Saved model file; a fresh canonical network when omitted
    #[arg(long)]
    model: Option<PathBuf>,
}

/// Message plus the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Dataset(_) | Error::Decode { .. } | Error::Io(_) => 3,
            Error::Numeric(_) | Error::Shape(_) => 4,
            Error::Format { .. } | Error::State(_) => 5,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// Model files are exit-code 5 territory even when the underlying error is
/// plain I/O (missing file).
fn model_failure(e: Error) -> Failure {
    match e {
        Error::Io(io) => Failure {
            code: 5,
            message: format!("cannot read model: {io}"),
        },
        other => other.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Summary(args) => cmd_summary(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn resolve_config(args: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &args.dataset {
        cfg.dataset_root = Some(d.clone());
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.no_augment {
        cfg.augment = false;
    }
    if args.deterministic {
        cfg.deterministic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = resolve_config(&args)?;
    if cfg.deterministic {
        leafcnn::parallel::set_parallel(false);
    }
    let root = cfg.dataset_root.as_deref().ok_or_else(|| Failure {
        code: 2,
        message: "no dataset root given (use --dataset or dataset_root in the config)".into(),
    })?;
    // Touch the dataset before creating any artifact.
    let index = scan_dataset(root)?;
    let (train_idx, val_idx, test_idx) = split(&index, &cfg.split_spec()?)?;
    println!(
        "dataset: {} images, {} classes; split {}/{}/{}",
        index.len(),
        index.class_names.len(),
        train_idx.len(),
        val_idx.len(),
        test_idx.len()
    );
    std::fs::create_dir_all(&cfg.output_dir).map_err(Error::Io)?;
    write_split_manifest(
        &cfg.output_dir.join("split_manifest.tsv"),
        root,
        &[
            ("train", &train_idx),
            ("validation", &val_idx),
            ("test", &test_idx),
        ],
    )?;
    let mut net = build_network::<f32>(cfg.seed);
    let train_cfg = cfg.train_config();
    let epochs = train_cfg.epochs;
    let history = train(&mut net, &train_idx, &val_idx, &train_cfg, &mut |m| {
        println!(
            "epoch {:>3}/{epochs}  train_loss {:.4}  train_acc {:.4}  val_loss {:.4}  val_acc {:.4}  ({:.1}s)",
            m.epoch + 1,
            m.train_loss,
            m.train_accuracy,
            m.val_loss,
            m.val_accuracy,
            m.wall_seconds
        );
    })?;
    save_model(&net, &cfg.output_dir.join("model.leaf"))?;
    export_metrics(&history, &cfg.output_dir.join("metrics.csv"))?;
    let last = history.last().expect("at least one epoch");
    println!(
        "final: train_acc {:.4}  val_acc {:.4}",
        last.train_accuracy, last.val_accuracy
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    match model_precision(&args.model).map_err(model_failure)? {
        Precision::Single => eval_with::<f32>(&args),
        Precision::Double => eval_with::<f64>(&args),
    }
}

fn eval_with<E: Element>(args: &EvalArgs) -> Result<(), Failure> {
    let net = load_model::<E>(&args.model).map_err(model_failure)?;
    let index = scan_dataset(&args.dataset)?;
    let seed = args.seed.unwrap_or(net.seed);
    let spec = leafcnn::data::SplitSpec::default_with_seed(seed);
    let (train_idx, val_idx, test_idx) = split(&index, &spec)?;
    let (name, part): (&str, &DatasetIndex) = match args.split {
        SplitName::Train => ("train", &train_idx),
        SplitName::Validation => ("validation", &val_idx),
        SplitName::Test => ("test", &test_idx),
    };
    let report = evaluate(&net, part)?;
    println!(
        "{name} split: {} images, loss {:.4}, accuracy {:.4}",
        report.samples, report.loss, report.accuracy
    );
    println!("confusion matrix (rows = true class):");
    for (i, row) in report.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
        println!("  {:<16}{}", index.class_names[i], cells.join(" "));
    }
    std::fs::create_dir_all(&args.out).map_err(Error::Io)?;
    write_eval_report(
        &args.out.join("eval_report.csv"),
        &index.class_names,
        &report,
    )?;
    Ok(())
}

/// `class,true_count,predicted_count,recall` per class, then a summary row
/// with totals and overall accuracy.
fn write_eval_report(path: &Path, class_names: &[String], report: &EvalReport) -> Result<(), Error> {
    let k = class_names.len();
    let mut out = String::from("class,true_count,predicted_count,recall\n");
    for (i, name) in class_names.iter().enumerate() {
        let true_count: usize = report.confusion[i].iter().sum();
        let predicted_count: usize = (0..k).map(|r| report.confusion[r][i]).sum();
        out.push_str(&format!(
            "{name},{true_count},{predicted_count},{:.6}\n",
            report.per_class_recall[i]
        ));
    }
    out.push_str(&format!(
        "total,{},{},{:.6}\n",
        report.samples, report.samples, report.accuracy
    ));
    std::fs::write(path, out).map_err(Error::Io)
}

fn cmd_predict(args: PredictArgs) -> Result<(), Failure> {
    match model_precision(&args.model).map_err(model_failure)? {
        Precision::Single => predict_with::<f32>(&args),
        Precision::Double => predict_with::<f64>(&args),
    }
}

fn predict_with<E: Element>(args: &PredictArgs) -> Result<(), Failure> {
    let net = load_model::<E>(&args.model).map_err(model_failure)?;
    let classes: Vec<String> = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
    let mut succeeded = 0usize;
    for image in &args.images {
        match predict(&net, &classes, image) {
            Ok(p) => {
                let probs: Vec<String> =
                    p.distribution.iter().map(|v| format!("{v:.6}")).collect();
                println!(
                    "{}\t{}\t{:.6}\t{}",
                    image.display(),
                    p.class_name,
                    p.confidence,
                    probs.join("\t")
                );
                succeeded += 1;
            }
            Err(e) => eprintln!("warning: {}: {e}", image.display()),
        }
    }
    if succeeded == 0 {
        return Err(Failure {
            code: 6,
            message: "no image could be processed".into(),
        });
    }
    Ok(())
}

fn cmd_summary(args: SummaryArgs) -> Result<(), Failure> {
    match &args.model {
        Some(path) => match model_precision(path).map_err(model_failure)? {
            Precision::Single => {
                print_summary(&load_model::<f32>(path).map_err(model_failure)?)
            }
            Precision::Double => {
                print_summary(&load_model::<f64>(path).map_err(model_failure)?)
            }
        },
        None => print_summary(&build_network::<f32>(42)),
    }
    Ok(())
}

fn print_summary<E: Element>(net: &Network<E>) {
    println!("{:<16}{:<20}{:>10}", "Layer", "Output Shape", "Params");
    for (name, shape, params) in net.summary() {
        let dims: Vec<String> = shape[1..].iter().map(|d| d.to_string()).collect();
        println!("{name:<16}{:<20}{params:>10}", format!("({})", dims.join(", ")));
    }
    println!("Total {}", net.parameter_count());
}
