//! Command-line orchestration: a single TOML run configuration drives
//! fetch, build-dataset, train, detect, evaluate, report, and the chained
//! pipeline, with append-only deterministic run directories.
//!
//! Exit codes: 0 success, 2 usage (argument parsing), 3 module contract
//! error, 4 training divergence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::acquisition::{fetch_images, write_records, write_triage_worksheet, FetchQuery, FixtureProvider};
use crate::annotation::{parse_via, rasterize_mask, scale_annotations, AnnotatedImage};
use crate::dataset::{
    make_split, make_split_stratified, read_manifest, write_manifest, AugmentationConfig, SplitManifest,
};
use crate::error::{Error, Result};
use crate::imageops::{load_image, save_png, Mask};
use crate::inference::{classify_image, detect, read_verdicts, render_overlay, rle_decode, rle_encode, write_verdicts, ImageVerdict, VerdictKind};
use crate::maskrcnn::checkpoint::{load_model, load_pretrained, save_model, write_synthetic_coco_checkpoint};
use crate::maskrcnn::model::build_model;
use crate::maskrcnn::train::{sample_from_masks, train, TrainSample};
use crate::maskrcnn::TrainConfig;
use crate::metrics::{class_report, frame_table, render_class_report, render_frame_table};
use crate::synthetic::{generate_dataset, write_via_fixture};
use crate::taxonomy::ClassLabel;

pub const RUNS_ROOT_ENV: &str = "SLIDEMASK_RUNS_ROOT";

// --------------------------------------------------------------------------
// Run configuration
// --------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DatasetSection {
    /// Train/validation/test counts; must sum to the dataset size.
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub seed: u64,
    pub set_name: String,
    /// Stratify the split by has-landslide so small datasets keep both
    /// classes everywhere.
    pub stratify: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            train: 101,
            validation: 28,
            test: 31,
            seed: 0,
            set_name: "Set A".into(),
            stratify: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct InferenceSection {
    pub threshold: f32,
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection { threshold: 0.8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ReportSection {
    /// Random frames sampled for the Table IV/V-style listing.
    pub frames: usize,
    pub seed: u64,
    pub model_name: String,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            frames: 10,
            seed: 0,
            model_name: "Mask R-CNN".into(),
        }
    }
}

/// The single configuration document driving a run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub run_id: String,
    /// Directory holding `images/` and the VIA annotation document.
    pub data_root: PathBuf,
    /// Annotation document, relative to data_root unless absolute.
    pub annotations: PathBuf,
    /// Root under which run directories are created (overridable via the
    /// SLIDEMASK_RUNS_ROOT environment variable).
    pub runs_root: PathBuf,
    /// Optional pretraining checkpoint to transfer-load; generated
    /// synthetically inside the run when absent.
    pub pretrained: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub augmentation: Option<AugmentationConfig>,
    pub train: TrainConfig,
    pub inference: InferenceSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run-001".into(),
            data_root: PathBuf::from("data"),
            annotations: PathBuf::from("annotations.json"),
            runs_root: PathBuf::from("runs"),
            pretrained: None,
            dataset: DatasetSection::default(),
            augmentation: None,
            train: TrainConfig::default(),
            inference: InferenceSection::default(),
            report: ReportSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn runs_root(&self) -> PathBuf {
        std::env::var_os(RUNS_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.runs_root.clone())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_root().join(&self.run_id)
    }

    pub fn annotations_path(&self) -> PathBuf {
        if self.annotations.is_absolute() {
            self.annotations.clone()
        } else {
            self.data_root.join(&self.annotations)
        }
    }
}

/// Create the append-only run directory and snapshot the config into it.
pub fn create_run_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.run_dir();
    if dir.exists() {
        return Err(Error::RunExists(config.run_id.clone()));
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let snapshot = toml::to_string_pretty(config).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("config_snapshot.toml"), snapshot)?;
    Ok(dir)
}

fn mark_failure(run_dir: &Path, err: &Error) {
    if run_dir.exists() {
        let _ = std::fs::write(run_dir.join("FAILED"), format!("{err}\n"));
    }
}

// --------------------------------------------------------------------------
// Dataset materialization
// --------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredInstance {
    pub label: String,
    pub height: usize,
    pub width: usize,
    /// Row-major alternating run lengths, zeros first.
    pub rle: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetItem {
    pub image_id: String,
    /// Resized image path relative to the run directory.
    pub image: String,
    pub has_landslide: bool,
    pub instances: Vec<StoredInstance>,
}

fn item_file_name(image_id: &str) -> String {
    let sanitized: String = image_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("{sanitized}.json")
}

/// Resize images and annotations to the network input size, rasterize the
/// polygons, split the ids, and persist everything under the run directory.
pub fn build_dataset(config: &RunConfig, run_dir: &Path) -> Result<SplitManifest> {
    let ann_path = config.annotations_path();
    let text = std::fs::read_to_string(&ann_path)
        .map_err(|e| Error::io(format!("reading annotations {}", ann_path.display()), e))?;
    let annotated = parse_via(&text)?;
    if annotated.is_empty() {
        return Err(Error::Contract("annotation document contains no images".into()));
    }
    let size = config.train.extras.image_size;
    let image_dir = run_dir.join("dataset").join("images");
    let item_dir = run_dir.join("dataset").join("items");
    std::fs::create_dir_all(&image_dir)?;
    std::fs::create_dir_all(&item_dir)?;

    let mut truth: BTreeMap<String, VerdictKind> = BTreeMap::new();
    let mut positives: BTreeMap<String, bool> = BTreeMap::new();
    for ann in &annotated {
        let src = config.data_root.join("images").join(&ann.image_id);
        let pixels = load_image(&src)?;
        let (h, w, _) = pixels.dim();
        if (h as u32, w as u32) != (ann.height, ann.width) {
            return Err(Error::Contract(format!(
                "{}: file is {h}x{w} but the annotation says {}x{}",
                ann.image_id, ann.height, ann.width
            )));
        }
        let resized = crate::imageops::resize_bilinear(&pixels, size, size);
        let scaled: AnnotatedImage = scale_annotations(ann, size as u32, size as u32)?;
        let mut instances = Vec::new();
        for region in &scaled.regions {
            if region.label == ClassLabel::Background {
                eprintln!(
                    "warning: {}: dropping explicit Background polygon (background is modelled implicitly)",
                    ann.image_id
                );
                continue;
            }
            let raster = rasterize_mask(region, size as u32, size as u32);
            if raster.degenerate || raster.mask.iter().all(|&v| v == 0) {
                eprintln!("warning: {}: dropping region that rasterizes to an empty mask", ann.image_id);
                continue;
            }
            instances.push(StoredInstance {
                label: region.label.name().to_string(),
                height: size,
                width: size,
                rle: rle_encode(&raster.mask),
            });
        }
        let stored_image = format!("dataset/images/{}", png_name(&ann.image_id));
        save_png(&run_dir.join(&stored_image), &resized)?;
        let item = DatasetItem {
            image_id: ann.image_id.clone(),
            image: stored_image,
            has_landslide: ann.has_landslide(),
            instances,
        };
        std::fs::write(
            item_dir.join(item_file_name(&ann.image_id)),
            serde_json::to_string_pretty(&item)?,
        )?;
        truth.insert(
            ann.image_id.clone(),
            if ann.has_landslide() {
                VerdictKind::Landslide
            } else {
                VerdictKind::NonLandslide
            },
        );
        positives.insert(ann.image_id.clone(), ann.has_landslide());
    }

    let ids: Vec<String> = annotated.iter().map(|a| a.image_id.clone()).collect();
    let counts = (config.dataset.train, config.dataset.validation, config.dataset.test);
    let manifest = if config.dataset.stratify {
        make_split_stratified(
            &ids,
            |id| positives.get(id).copied().unwrap_or(false),
            counts,
            config.dataset.seed,
            &config.dataset.set_name,
        )?
    } else {
        make_split(&ids, counts, config.dataset.seed, &config.dataset.set_name)?
    };
    write_manifest(&manifest, &run_dir.join("manifest.json"))?;
    std::fs::write(
        run_dir.join("dataset").join("truth.json"),
        serde_json::to_string_pretty(&truth)?,
    )?;
    Ok(manifest)
}

fn png_name(image_id: &str) -> String {
    let stem = Path::new(image_id)
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| image_id.to_string());
    format!("{stem}.png")
}

/// Load built dataset items back as training samples.
pub fn load_samples(run_dir: &Path, ids: &[String]) -> Result<Vec<TrainSample>> {
    let item_dir = run_dir.join("dataset").join("items");
    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let path = item_dir.join(item_file_name(id));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading dataset item {}", path.display()), e))?;
        let item: DatasetItem = serde_json::from_str(&text)?;
        let image = load_image(&run_dir.join(&item.image))?;
        let mut labeled: Vec<(usize, Mask)> = Vec::new();
        for inst in &item.instances {
            let label = ClassLabel::parse(&inst.label)?;
            let Some(head) = label.head_index() else { continue };
            labeled.push((head, rle_decode(&inst.rle, inst.height, inst.width)?));
        }
        samples.push(sample_from_masks(&item.image_id, image, labeled));
    }
    Ok(samples)
}

pub fn read_truth(path: &Path) -> Result<BTreeMap<String, VerdictKind>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading truth {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing truth {}", path.display()), e))
}

// --------------------------------------------------------------------------
// Stages
// --------------------------------------------------------------------------

/// Train from the built dataset: transfer-load the pretraining checkpoint
/// (generating the synthetic stand-in when none is configured), fit, log
/// losses, and save the best-validation weights.
pub fn run_train(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let manifest = read_manifest(&run_dir.join("manifest.json"))?;
    let train_samples = load_samples(run_dir, &manifest.train)?;
    let val_samples = load_samples(run_dir, &manifest.validation)?;
    if train_samples.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let mut train_cfg = config.train.clone();
    train_cfg.extras.augment = config.augmentation.clone();
    let mut model = build_model(&train_cfg)?;
    let weights_dir = run_dir.join("weights");
    std::fs::create_dir_all(&weights_dir)?;
    let pretrained_path = match &config.pretrained {
        Some(p) => p.clone(),
        None => {
            let p = weights_dir.join("pretrained.ckpt");
            write_synthetic_coco_checkpoint(&train_cfg, &p)?;
            p
        }
    };
    let report = load_pretrained(&mut model, &pretrained_path)?;
    eprintln!(
        "transfer-loaded {} tensors from {} ({} head tensors reinitialized)",
        report.loaded.len(),
        pretrained_path.display(),
        report.reinitialized.len()
    );

    let mut log = String::from("epoch\ttotal\tvalidation\trpn_class\trpn_bbox\tclass\tbbox\tmask\n");
    let outcome = train(&mut model, &train_samples, &val_samples, |rec| {
        eprintln!(
            "epoch {:>3}: train loss {:.4}, validation loss {:.4}",
            rec.epoch, rec.total, rec.validation
        );
    })?;
    for rec in &outcome.epochs {
        log.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            rec.epoch,
            rec.total,
            rec.validation,
            rec.components["rpn_class"],
            rec.components["rpn_bbox"],
            rec.components["class"],
            rec.components["bbox"],
            rec.components["mask"],
        ));
    }
    std::fs::write(run_dir.join("loss_log.tsv"), log)?;
    save_model(&model, &weights_dir.join("model.ckpt"))?;
    let metadata = serde_json::json!({
        "backbone": model.config.backbone.depth.name(),
        "trainable_scope": model.config.trainable_scope,
        "classes": ClassLabel::FOREGROUND.iter().map(|c| c.name()).collect::<Vec<_>>(),
        "pretrained": pretrained_path.display().to_string(),
        "tensors_loaded": report.loaded.len(),
        "tensors_reinitialized": report.reinitialized,
        "best_epoch": outcome.best_epoch,
        "epochs": outcome.epochs.len(),
    });
    std::fs::write(
        weights_dir.join("metadata.json"),
        serde_json::to_string_pretty(&metadata)?,
    )?;
    Ok(())
}

/// Run detection over the test split (default) or an explicit image
/// directory; writes verdicts and overlays under the run directory.
pub fn run_detect(run_dir: &Path, input: Option<&Path>, threshold: f32) -> Result<()> {
    let model = load_model(&run_dir.join("weights").join("model.ckpt"))?;
    let mut images: Vec<(String, PathBuf)> = Vec::new();
    match input {
        Some(dir) => {
            let mut entries: Vec<_> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                        Some(ref e) if ["png", "jpg", "jpeg"].contains(&e.as_str())
                    )
                })
                .collect();
            entries.sort();
            for p in entries {
                let id = p.file_name().unwrap().to_string_lossy().to_string();
                images.push((id, p));
            }
        }
        None => {
            let manifest = read_manifest(&run_dir.join("manifest.json"))?;
            for id in &manifest.test {
                images.push((id.clone(), run_dir.join("dataset").join("images").join(png_name(id))));
            }
        }
    }
    if images.is_empty() {
        return Err(Error::Contract("no images to run detection on".into()));
    }
    let overlay_dir = run_dir.join("overlays");
    std::fs::create_dir_all(&overlay_dir)?;
    let mut verdicts: Vec<ImageVerdict> = Vec::new();
    for (id, path) in &images {
        let pixels = load_image(path)?;
        let detections = detect(&model, &pixels, threshold)?;
        let overlay = render_overlay(&pixels, &detections);
        save_png(&overlay_dir.join(png_name(id)), &overlay)?;
        verdicts.push(classify_image(id, &detections, threshold));
    }
    write_verdicts(&verdicts, &run_dir.join("verdicts"))?;
    Ok(())
}

/// Build the class report and random-frame table from persisted verdicts.
pub fn run_report(config: &RunConfig, run_dir: &Path) -> Result<String> {
    let verdicts = read_verdicts(&run_dir.join("verdicts"))?;
    let truth = read_truth(&run_dir.join("dataset").join("truth.json"))?;
    let report = class_report(
        &config.report.model_name,
        &config.dataset.set_name,
        &verdicts,
        &truth,
    )?;
    let frames = frame_table(
        &verdicts,
        &truth,
        config.report.frames.min(verdicts.len()),
        config.report.seed,
    )?;
    let mut text = render_class_report(&report);
    text.push('\n');
    text.push_str(&render_frame_table(&config.report.model_name, &frames));
    std::fs::write(run_dir.join("report.txt"), &text)?;
    Ok(text)
}

// --------------------------------------------------------------------------
// Argument parsing
// --------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "slidemask",
    about = "Landslide detection from UAV photographs with Mask R-CNN transfer learning",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct ConfigArg {
    /// Run configuration document (TOML).
    #[arg(long, short = 'c')]
    pub config: PathBuf,
    /// Override the config's run_id.
    #[arg(long)]
    pub run_id: Option<String>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(id) = &self.run_id {
            cfg.run_id = id.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fetch candidate images from a provider into a directory.
    Fetch {
        /// Search terms recorded with the run.
        #[arg(long)]
        terms: String,
        /// Maximum records to keep.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        max: u64,
        /// Output directory for images, records, and the triage worksheet.
        #[arg(long)]
        out: PathBuf,
        /// Provider name; only the offline `fixture` provider ships built in.
        #[arg(long, default_value = "fixture")]
        provider: String,
        /// Directory served by the fixture provider.
        #[arg(long)]
        fixture_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        min_width: u32,
        #[arg(long, default_value_t = 0)]
        min_height: u32,
    },
    /// Resize, rasterize, split, and persist the dataset into a new run.
    BuildDataset {
        #[command(flatten)]
        config: ConfigArg,
        /// Override split counts as train,validation,test.
        #[arg(long)]
        counts: Option<String>,
        /// Override the split seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Transfer-load pretraining weights and train the heads.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Override the epoch count.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        epochs: Option<u64>,
    },
    /// Run detection over the test split (or --input) with the trained model.
    Detect {
        #[command(flatten)]
        config: ConfigArg,
        /// Detect on an explicit image directory instead of the test split.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Override the score threshold.
        #[arg(long)]
        threshold: Option<f32>,
    },
    /// Print a class report for persisted verdicts against a truth file.
    Evaluate {
        /// Verdict directory (or single verdict file).
        #[arg(long)]
        pred: PathBuf,
        /// Truth document: JSON map image_id -> landslide | non-landslide.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "Mask R-CNN")]
        model_name: String,
        #[arg(long, default_value = "test set")]
        dataset_name: String,
    },
    /// Write the class report + random-frame table for a run.
    Report {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Chain build-dataset -> train -> detect -> evaluate -> report.
    Pipeline {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Generate the synthetic blob fixture corpus (offline stand-in data).
    GenFixture {
        /// Output data root (images/ + annotations.json are created inside).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        count: usize,
        #[arg(long, default_value_t = 4)]
        negatives: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn apply_overrides(
    cfg: &mut RunConfig,
    counts: &Option<String>,
    seed: Option<u64>,
) -> Result<()> {
    if let Some(counts) = counts {
        let parts: Vec<&str> = counts.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "--counts expects train,validation,test but got {counts:?}"
            )));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("invalid count {s:?}")))
        };
        cfg.dataset.train = parse(parts[0])?;
        cfg.dataset.validation = parse(parts[1])?;
        cfg.dataset.test = parse(parts[2])?;
    }
    if let Some(seed) = seed {
        cfg.dataset.seed = seed;
    }
    Ok(())
}

/// Parse an explicit argv (exposed so tests can drive the full
/// argument-parsing path without spawning a process).
pub fn try_parse_from<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser as _;
    Cli::try_parse_from(args)
}

/// Execute a parsed command. Returns an error whose `exit_code` is the
/// process exit status.
pub fn run_command(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fetch {
            terms,
            max,
            out,
            provider,
            fixture_dir,
            min_width,
            min_height,
        } => {
            if provider != "fixture" {
                return Err(Error::Config(format!(
                    "unknown provider {provider:?}; only the offline fixture provider is built in"
                )));
            }
            let dir = fixture_dir
                .ok_or_else(|| Error::Config("--fixture-dir is required for the fixture provider".into()))?;
            let query = FetchQuery {
                terms,
                max_results: max as usize,
                min_width,
                min_height,
            };
            let provider = FixtureProvider::new(dir);
            let records = fetch_images(&query, &provider, &out)?;
            write_records(&records, &out.join("records.json"))?;
            if records.is_empty() {
                eprintln!("no records fetched");
            } else {
                write_triage_worksheet(&records, &out.join("triage.tsv"))?;
            }
            println!("fetched {} records into {}", records.len(), out.display());
            Ok(())
        }
        Command::BuildDataset { config, counts, seed } => {
            let mut cfg = config.load()?;
            apply_overrides(&mut cfg, &counts, seed)?;
            let run_dir = create_run_dir(&cfg)?;
            let manifest = build_dataset(&cfg, &run_dir).inspect_err(|e| mark_failure(&run_dir, e))?;
            println!(
                "built {} ({} train / {} validation / {} test) under {}",
                manifest.set_name,
                manifest.train.len(),
                manifest.validation.len(),
                manifest.test.len(),
                run_dir.display()
            );
            Ok(())
        }
        Command::Train { config, epochs } => {
            let mut cfg = config.load()?;
            if let Some(e) = epochs {
                cfg.train.epochs = e as usize;
            }
            let run_dir = cfg.run_dir();
            if !run_dir.exists() {
                return Err(Error::Contract(format!(
                    "run {} does not exist; run build-dataset first",
                    cfg.run_id
                )));
            }
            run_train(&cfg, &run_dir).inspect_err(|e| mark_failure(&run_dir, e))?;
            println!("trained model saved under {}", run_dir.join("weights").display());
            Ok(())
        }
        Command::Detect {
            config,
            input,
            threshold,
        } => {
            let cfg = config.load()?;
            let run_dir = cfg.run_dir();
            let threshold = threshold.unwrap_or(cfg.inference.threshold);
            run_detect(&run_dir, input.as_deref(), threshold).inspect_err(|e| mark_failure(&run_dir, e))?;
            println!("verdicts written to {}", run_dir.join("verdicts").display());
            Ok(())
        }
        Command::Evaluate {
            pred,
            truth,
            model_name,
            dataset_name,
        } => {
            let verdicts = read_verdicts(&pred)?;
            let truth = read_truth(&truth)?;
            let report = class_report(&model_name, &dataset_name, &verdicts, &truth)?;
            print!("{}", render_class_report(&report));
            Ok(())
        }
        Command::Report { config } => {
            let cfg = config.load()?;
            let run_dir = cfg.run_dir();
            let text = run_report(&cfg, &run_dir).inspect_err(|e| mark_failure(&run_dir, e))?;
            print!("{text}");
            Ok(())
        }
        Command::Pipeline { config } => {
            let cfg = config.load()?;
            let run_dir = create_run_dir(&cfg)?;
            let stage = |r: Result<()>| r.inspect_err(|e| mark_failure(&run_dir, e));
            stage(build_dataset(&cfg, &run_dir).map(|_| ()))?;
            stage(run_train(&cfg, &run_dir))?;
            stage(run_detect(&run_dir, None, cfg.inference.threshold))?;
            let text = run_report(&cfg, &run_dir).inspect_err(|e| mark_failure(&run_dir, e))?;
            print!("{text}");
            println!("pipeline complete: {}", run_dir.display());
            Ok(())
        }
        Command::GenFixture {
            out,
            count,
            negatives,
            size,
            seed,
        } => {
            if negatives > count {
                return Err(Error::Config("--negatives cannot exceed --count".into()));
            }
            let items = generate_dataset(count, negatives, size, seed);
            let path = write_via_fixture(&out, &items)?;
            println!(
                "wrote {count} images ({negatives} negatives) and {}",
                path.display()
            );
            Ok(())
        }
    }
}

/// Binary entry point: parse, run, map errors to exit codes.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run_command(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
