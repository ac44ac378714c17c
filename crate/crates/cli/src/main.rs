use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ratscope_core::annotate::{export_predictions, import_predictions, import_voc, DatasetManifest};
use ratscope_core::detect::detect;
use ratscope_core::evalmetrics::{evaluate, ImageEval};
use ratscope_core::features::{feature_rows, write_feature_csv};
use ratscope_core::pipeline::{run, run_sweep, PipelineConfig, RunOptions, RunSummary, SweepKind, RUN_DIR_ENV};
use ratscope_core::spectro::{read_spectrogram, SpectrogramAxes};

#[derive(Parser)]
#[command(name = "ratscope", version, about = "Labelled LTE/WiFi spectrogram datasets, detection and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the generation pipeline over a parameter grid.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the baseline detector on spectrograms and write predictions JSONL.
    Detect {
        /// Spectrogram stems (`<stem>.spec.f32` + `<stem>.axes.json`). The
        /// image id is the stem's file name.
        stems: Vec<PathBuf>,
        /// Read spectrograms from a dataset manifest instead.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Pipeline config whose `[detector]` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compute per-box and per-image features from predictions.
    Extract {
        #[arg(long)]
        predictions: PathBuf,
        /// Directory holding `<image>.axes.json` files.
        #[arg(long, required_unless_present = "dataset")]
        spectrogram_dir: Option<PathBuf>,
        #[arg(long, conflicts_with = "spectrogram_dir")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against VOC labels.
    Eval {
        /// VOC files; the image id is the annotation's filename without extension.
        #[arg(long, num_args = 1.., required_unless_present = "dataset")]
        labels: Vec<PathBuf>,
        #[arg(long, conflicts_with = "labels")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
    /// Run a study sweep and write `sweeps/<kind>.csv`.
    Sweep {
        /// snr, interference or features.
        kind: SweepKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, env = RUN_DIR_ENV, default_value = "runs")]
    run_dir: PathBuf,
    /// Overrides `run.workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Stop after this many tasks; rerun to resume.
    #[arg(long)]
    max_tasks: Option<usize>,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            workers: self.workers,
            max_tasks: self.max_tasks,
        }
    }
}

/// A dataset manifest with its entries' paths resolved.
struct Dataset {
    /// (image id, spectrogram stem, labels file)
    images: Vec<(String, PathBuf, PathBuf)>,
}

impl Dataset {
    /// Images are keyed by the spectrogram's task directory, as in pipeline output.
    fn load(path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read_json(path)?;
        let root = path.parent().unwrap_or(Path::new("."));
        let images = manifest
            .entries
            .iter()
            .map(|e| {
                let id = e.spectrogram.parent().and_then(Path::file_name).unwrap_or(e.spectrogram.as_os_str());
                (id.to_string_lossy().into_owned(), root.join(&e.spectrogram), root.join(&e.labels))
            })
            .collect();
        Ok(Self { images })
    }
}

fn stem_name(path: &Path) -> Result<String> {
    let name = path.file_name().with_context(|| format!("{} has no file name", path.display()))?;
    Ok(name.to_string_lossy().into_owned())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn report_run(summary: &RunSummary) {
    println!(
        "executed {} tasks, reused {}, failed {}",
        summary.executed, summary.skipped, summary.failed
    );
    if summary.interrupted {
        println!("interrupted; rerun the same command to resume");
    }
}

fn cmd_detect(stems: &[PathBuf], dataset: Option<&Path>, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?.detector;
    let images: Vec<(String, PathBuf)> = match dataset {
        Some(d) => Dataset::load(d)?.images.into_iter().map(|(id, stem, _)| (id, stem)).collect(),
        None => stems.iter().map(|s| Ok((stem_name(s)?, s.clone()))).collect::<Result<_>>()?,
    };
    if images.is_empty() {
        bail!("no spectrograms given");
    }
    let mut items = Vec::new();
    for (image, stem) in &images {
        let spec = read_spectrogram(stem).with_context(|| format!("reading {}", stem.display()))?;
        let dets = detect(&spec, &cfg)?;
        log::info!("{image}: {} detections", dets.len());
        items.extend(dets.into_iter().map(|d| (image.clone(), d)));
    }
    export_predictions(out, &items)?;
    println!("{} detections over {} images -> {}", items.len(), images.len(), out.display());
    Ok(())
}

fn cmd_extract(predictions: &Path, spectrogram_dir: Option<&Path>, dataset: Option<&Path>, out: &Path) -> Result<()> {
    let set = import_predictions(predictions, None)?;
    let stems: BTreeMap<String, PathBuf> = match (dataset, spectrogram_dir) {
        (Some(d), _) => Dataset::load(d)?.images.into_iter().map(|(id, stem, _)| (id, stem)).collect(),
        (None, Some(dir)) => set.by_image.keys().map(|k| (k.clone(), dir.join(k))).collect(),
        (None, None) => bail!("either --spectrogram-dir or --dataset is required"),
    };
    let mut rows = Vec::new();
    for (image, dets) in &set.by_image {
        let stem = stems.get(image).with_context(|| format!("no spectrogram for image {image}"))?;
        let axes_path = PathBuf::from(format!("{}.axes.json", stem.display()));
        let axes = SpectrogramAxes::read_json(&axes_path)?;
        rows.extend(feature_rows(image, dets, &axes)?);
    }
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_feature_csv(file, &rows)?;
    println!("{} rows for {} images -> {}", rows.len(), set.by_image.len(), out.display());
    Ok(())
}

fn cmd_eval(labels: &[PathBuf], dataset: Option<&Path>, predictions: &Path, out: &Path, iou: f64) -> Result<()> {
    let label_files: Vec<(Option<String>, PathBuf)> = match dataset {
        Some(d) => Dataset::load(d)?.images.into_iter().map(|(id, _, l)| (Some(id), l)).collect(),
        None => labels.iter().map(|l| (None, l.clone())).collect(),
    };
    let mut gt: BTreeMap<String, ImageEval> = BTreeMap::new();
    for (id, path) in &label_files {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let ann = import_voc(&text).with_context(|| format!("parsing {}", path.display()))?;
        let key = match id {
            Some(id) => id.clone(),
            None => Path::new(&ann.filename)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or(ann.filename.clone()),
        };
        if gt.insert(key.clone(), ImageEval { gt: ann.boxes, dets: Vec::new() }).is_some() {
            bail!("image id {key} appears in more than one label file");
        }
    }
    let set = import_predictions(predictions, None)?;
    let mut unmatched = 0;
    for (image, dets) in set.by_image {
        match gt.get_mut(&image) {
            Some(im) => im.dets = dets,
            None => unmatched += dets.len(),
        }
    }
    if unmatched > 0 {
        log::warn!("{unmatched} predictions refer to images without labels");
    }
    let images: Vec<ImageEval> = gt.into_values().collect();
    let report = evaluate(&images, iou);
    fs::write(out, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", out.display()))?;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}%", 100.0 * v));
    println!(
        "{} images: detection rate {}, precision {}, mAP {}",
        report.images,
        pct(report.detection_rate),
        pct(report.precision),
        pct(report.map)
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Generate { config, run: args } => {
            let cfg = load_config(Some(&config))?;
            let summary = run(&cfg, &args.run_dir, args.options())?;
            report_run(&summary);
            if summary.manifest.is_some() {
                println!("manifest: {}", args.run_dir.join(format!("{}.manifest.json", cfg.run.name)).display());
            }
            if summary.failed > 0 {
                bail!("{} tasks failed", summary.failed);
            }
        }
        Command::Detect {
            stems,
            dataset,
            out,
            config,
        } => cmd_detect(&stems, dataset.as_deref(), &out, config.as_deref())?,
        Command::Extract {
            predictions,
            spectrogram_dir,
            dataset,
            out,
        } => cmd_extract(&predictions, spectrogram_dir.as_deref(), dataset.as_deref(), &out)?,
        Command::Eval {
            labels,
            dataset,
            predictions,
            out,
            iou,
        } => cmd_eval(&labels, dataset.as_deref(), &predictions, &out, iou)?,
        Command::Sweep { kind, config, run: args } => {
            let cfg = load_config(config.as_deref())?;
            let outcome = run_sweep(kind, &cfg, &args.run_dir, args.options())?;
            report_run(&outcome.summary);
            if let Some(csv) = outcome.csv {
                println!("{}", fs::read_to_string(&csv)?.trim_end());
                println!("-> {}", csv.display());
            }
        }
    }
    Ok(())
}
