use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use misalign_core::harness::config::Config;
use misalign_core::harness::dataset::{build_dataset, generate_scene_specs, manifest_root, DatasetManifest, Split};
use misalign_core::harness::pipeline::{
    self, attach_predictions, binary_eval, coral_baseline, correct_map, dataset_config_from, eval_report, feature_config_from,
    featurize, metric_study, metric_study_config_from, parse_predictions_csv, predict_split, predictions_csv, train_config_from,
    write_metric_study, write_visibility, Prediction,
};
use misalign_core::harness::scene::SceneSpec;
use misalign_core::io::write_atomic;
use misalign_core::models::mlp::history_csv;
use misalign_core::models::{LossKind, MlpParams};
use misalign_core::{Error, Result, Scheme};

/// Misalignment classification for registered lidar point-cloud pairs.
#[derive(Debug, Parser)]
#[command(name = "misalign", version)]
struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Flat key=value parameter file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes a JSON list of randomized scene descriptions.
    GenScenes {
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Sensor poses per scene.
        #[arg(long, default_value_t = 4)]
        poses: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scans every scene and writes clouds plus a labelled manifest.
    BuildDataset {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        scheme: Scheme,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extracts a feature map per manifest entry.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the classifier on the train split.
    Train {
        #[command(flatten)]
        data: FeatureArgs,
        #[arg(long, default_value = "rbc")]
        loss: LossKind,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss and accuracy CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Writes report.json, confusion.csv, xi.csv and predictions.csv.
    Eval {
        #[command(flatten)]
        source: PredictionArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Mapped binary accuracy of a multi-class model on two classes.
    BinaryEval {
        #[command(flatten)]
        source: PredictionArgs,
        #[arg(long, value_parser = parse_classes)]
        classes: (usize, usize),
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fits and scores the CorAl entropy baseline on two classes.
    CoralBaseline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = parse_classes)]
        classes: (usize, usize),
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Alignment metrics against ε and the true label, as CSV, SVG and JSON.
    MetricStudy {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Adds the model's predicted label as a series.
        #[arg(long, requires = "features")]
        model: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output path without extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Selects pairs predicted at or above a class and reports ε before and after reset.
    CorrectMap {
        #[command(flatten)]
        source: PredictionArgs,
        #[arg(long, default_value_t = 3)]
        threshold: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes both clouds of an entry as PLY with co-visibility as vertex quality.
    Visibility {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        id: String,
        /// Output path prefix; `_cloud0.ply` and `_cloud1.ply` are appended.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct FeatureArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features: PathBuf,
}

#[derive(Debug, Args)]
struct PredictionArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, requires = "features", conflicts_with = "predictions")]
    model: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// CSV with `id` and `predicted` columns, used instead of a model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
}

fn parse_classes(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected two classes as a,b")?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad class {a:?}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad class {b:?}"))?;
    if a >= b {
        return Err("classes must be given as low,high".into());
    }
    Ok((a, b))
}

fn load_predictions(args: &PredictionArgs) -> Result<(DatasetManifest, Vec<Prediction>)> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let preds = match (&args.model, &args.features, &args.predictions) {
        (Some(model), Some(features), None) => predict_split(&MlpParams::load(model)?, &manifest, features, args.split)?,
        (None, _, Some(csv)) => attach_predictions(&manifest, &parse_predictions_csv(&std::fs::read_to_string(csv)?)?)?,
        _ => return Err(Error::InvalidParams("give either --model with --features, or --predictions".into())),
    };
    Ok((manifest, preds))
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::GenScenes { count, poses, out } => {
            let specs = generate_scene_specs(count, cli.seed, poses);
            write_atomic(&out, serde_json::to_string_pretty(&specs)?.as_bytes())?;
            println!("wrote {count} scene specs to {}", out.display());
        }
        Command::BuildDataset { scenes, scheme, out } => {
            let specs: Vec<SceneSpec> = serde_json::from_str(&std::fs::read_to_string(&scenes)?)?;
            let m = build_dataset(&specs, scheme, &out, &dataset_config_from(&cfg, cli.seed)?)?;
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} pairs, class counts {:?}", m.entries.len(), m.class_counts);
        }
        Command::Featurize { manifest, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let n = featurize(&m, &manifest_root(&manifest), &out, &feature_config_from(&cfg)?)?;
            println!("wrote {n} feature maps to {}", out.display());
        }
        Command::Train { data, loss, out, history } => {
            let m = DatasetManifest::load(&data.manifest)?;
            let outcome = pipeline::train(&m, &data.features, &train_config_from(&cfg, cli.seed, loss)?)?;
            outcome.model.save(&out)?;
            if let Some(h) = history {
                write_atomic(&h, history_csv(&outcome.history).as_bytes())?;
            }
            println!("best epoch {} of {}; model written to {}", outcome.best_epoch, outcome.history.len(), out.display());
        }
        Command::Eval { source, out_dir } => {
            let (m, preds) = load_predictions(&source)?;
            let report = eval_report(&preds, m.scheme.class_count())?;
            std::fs::create_dir_all(&out_dir)?;
            write_json(Some(&out_dir.join("report.json")), &report)?;
            write_atomic(&out_dir.join("confusion.csv"), report.confusion.to_csv().as_bytes())?;
            write_atomic(&out_dir.join("xi.csv"), report.xi_table().as_bytes())?;
            write_atomic(&out_dir.join("predictions.csv"), predictions_csv(&preds).as_bytes())?;
            println!("accuracy {:.4} over {} pairs; xi {:?}", report.accuracy, preds.len(), report.xi);
        }
        Command::BinaryEval { source, classes, out } => {
            let (_, preds) = load_predictions(&source)?;
            write_json(out.as_deref(), &binary_eval(&preds, classes)?)?;
        }
        Command::CoralBaseline { manifest, classes, out } => {
            let m = DatasetManifest::load(&manifest)?;
            write_json(out.as_deref(), &coral_baseline(&m, &manifest_root(&manifest), classes, &feature_config_from(&cfg)?)?)?;
        }
        Command::MetricStudy { manifest, split, model, features, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let preds = match (model, features) {
                (Some(model), Some(features)) => Some(predict_split(&MlpParams::load(&model)?, &m, &features, split)?),
                _ => None,
            };
            let study = metric_study(&m, &manifest_root(&manifest), split, &metric_study_config_from(&cfg)?, preds.as_deref())?;
            write_metric_study(&study, &out)?;
            for (name, r) in &study.pearson_vs_label {
                println!("{name}: r = {}", r.map_or("undefined".to_string(), |r| format!("{r:.4}")));
            }
        }
        Command::CorrectMap { source, threshold, out } => {
            let (_, preds) = load_predictions(&source)?;
            write_json(out.as_deref(), &correct_map(&preds, threshold)?)?;
        }
        Command::Visibility { manifest, id, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let entry = m.entries.iter().find(|e| e.id == id).ok_or_else(|| Error::InvalidParams(format!("no entry {id}")))?;
            let f = feature_config_from(&cfg)?;
            for p in write_visibility(&manifest_root(&manifest), entry, f.flip_radius_factor, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
