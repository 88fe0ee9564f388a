//! Command-line surface: `synth`, `train`, `train-proxy`, `manipulate` and
//! `evaluate`.

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Model, ModelConfig};
use crate::data::{load_manifest, load_native, save_image, synth_dataset, LoadedDataset, SyntheticSpec};
use crate::domain::{Ablation, DomainPair, ImageSample, SemanticCategory};
use crate::error::{Error, Result};
use crate::evaluation::{
    confusion, evaluate_translation, metrics_from_confusion, train_proxy, ConfusionMatrix, LabelMap, MetricsReport,
    ProxyClassifier, ProxyConfig,
};
use crate::maskpipe::{manipulate, CropOptions, IdentityGenerator};
use crate::networks::{DiscriminatorSpec, GeneratorSpec};
use crate::training::{train, RunOptions, TrainConfig};

/// Environment variable that forces single-threaded, bitwise-reproducible
/// execution.
pub const DETERMINISTIC_ENV: &str = "CONTRASTGAN_DETERMINISTIC";

#[derive(Debug, Parser)]
#[command(name = "contrastgan", version, about = "Mask-conditional contrast-GAN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic shape benchmark.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Total epochs; the split between constant and decaying learning
        /// rate keeps its configured proportion.
        #[arg(long)]
        epochs: Option<u64>,
        /// Checkpoint directory to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the proxy classifier used to score translations.
    TrainProxy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output weights file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Translate one masked object toward a category.
    Manipulate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Category name or numeric id.
        #[arg(long)]
        target: String,
        /// Output PNG; the original|result grid is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate a test split toward a category and write a metrics report.
    Evaluate {
        /// Model weights; omit together with `--identity` to score the
        /// untouched inputs.
        #[arg(long, required_unless_present = "identity")]
        checkpoint: Option<PathBuf>,
        /// Use the identity generator instead of a trained checkpoint.
        #[arg(long)]
        identity: bool,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        proxy: PathBuf,
        /// JSON list of predicted/ground-truth label map pairs.
        #[arg(long)]
        segmentation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write every translated image into this directory.
        #[arg(long)]
        save_images: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

/// Architecture part of a run configuration; category names come from the
/// dataset and the global discriminator follows the loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub image_size: usize,
    pub whole_image: bool,
    pub crop: CropOptions,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            image_size: 64,
            whole_image: false,
            crop: CropOptions::default(),
        }
    }
}

/// One JSON file per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Output directory of the command.
    pub out: PathBuf,
    pub dataset: Option<DatasetPaths>,
    pub synth: SyntheticSpec,
    pub model: ModelSection,
    pub train: TrainConfig,
    /// Named loss configuration; overrides `train.weights` when set.
    pub ablation: Option<Ablation>,
    /// Ordered `(source, target)` category pairs; defaults to every `i < j`.
    pub pairs: Option<Vec<[usize; 2]>>,
    pub proxy: ProxyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/default"),
            dataset: None,
            synth: SyntheticSpec::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            ablation: None,
            pairs: None,
            proxy: ProxyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Training settings with the ablation applied.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(a) = self.ablation {
            t.weights = a.weights();
        }
        t
    }

    pub fn model_config(&self, category_names: Vec<String>) -> ModelConfig {
        ModelConfig {
            generator: self.model.generator,
            discriminator: self.model.discriminator,
            category_names,
            global_disc: self.effective_train().weights.global_disc_active(),
            whole_image: self.model.whole_image,
            image_size: self.model.image_size,
            crop: self.model.crop,
        }
    }

    pub fn dataset(&self) -> Result<&DatasetPaths> {
        self.dataset
            .as_ref()
            .ok_or_else(|| Error::Config("run configuration has no dataset section".into()))
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate_for_training(&self) -> Result<()> {
        let d = self.dataset()?;
        if !d.train.exists() {
            return Err(Error::Config(format!(
                "training manifest {} does not exist",
                d.train.display()
            )));
        }
        self.effective_train().validate()?;
        self.model.generator.validate()?;
        self.model.discriminator.validate()?;
        Ok(())
    }

    pub fn domain_pairs(&self, num_categories: usize) -> Result<Vec<DomainPair>> {
        let raw: Vec<[usize; 2]> = match &self.pairs {
            Some(p) => p.clone(),
            None => (0..num_categories)
                .flat_map(|i| (i + 1..num_categories).map(move |j| [i, j]))
                .collect(),
        };
        raw.iter()
            .map(|[s, t]| {
                DomainPair::new(
                    SemanticCategory::new(*s, num_categories)?,
                    SemanticCategory::new(*t, num_categories)?,
                )
            })
            .collect()
    }
}

/// Single-threaded execution when the deterministic switch is set. Must run
/// before any parallel work starts.
pub fn apply_deterministic_env() {
    if std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1") {
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, seed, out } => {
            let cfg = RunConfig::load(&config)?;
            let mut spec = cfg.synth.clone();
            if let Some(s) = seed {
                spec.seed = s;
            }
            let out = out.unwrap_or(cfg.out);
            let res = synth_dataset(&spec, &out)?;
            log::info!(
                "wrote {} training and {} test samples under {}",
                res.train.samples.len(),
                res.test.samples.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            seed,
            out,
            epochs,
            resume,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(e) = epochs {
                let total = cfg.train.total_epochs().max(1);
                cfg.train.epochs_const = e * cfg.train.epochs_const / total;
                cfg.train.epochs_decay = e - cfg.train.epochs_const;
            }
            cmd_train(&cfg, resume)
        }
        Command::TrainProxy {
            config,
            seed,
            out,
            epochs,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.proxy.seed = s;
            }
            if let Some(e) = epochs {
                cfg.proxy.epochs = e;
            }
            cmd_train_proxy(&cfg, &out)
        }
        Command::Manipulate {
            checkpoint,
            image,
            mask,
            target,
            out,
        } => cmd_manipulate(&checkpoint, &image, &mask, &target, &out),
        Command::Evaluate {
            checkpoint,
            identity,
            manifest,
            target,
            proxy,
            segmentation,
            out,
            save_images,
        } => {
            let report = cmd_evaluate(&EvaluateArgs {
                checkpoint: if identity { None } else { checkpoint },
                manifest,
                target,
                proxy,
                segmentation,
                save_images,
            })?;
            write_json(&out, &report)
        }
    }
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<PathBuf>) -> Result<()> {
    cfg.validate_for_training()?;
    let manifest = load_manifest(&cfg.dataset()?.train)?;
    let model_cfg = cfg.model_config(manifest.category_names());
    model_cfg.validate()?;
    let pairs = cfg.domain_pairs(manifest.num_categories())?;
    let data = LoadedDataset::load(manifest, cfg.model.image_size)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    cfg.save(&cfg.out.join("config.json"))?;
    let outcome = train(
        &data,
        &pairs,
        &model_cfg,
        &cfg.effective_train(),
        &cfg.out,
        &RunOptions {
            resume,
            stop_after_epoch: None,
        },
    )?;
    log::info!(
        "trained {} steps; model at {}",
        outcome.state.step,
        outcome.model_path.display()
    );
    Ok(())
}

pub fn cmd_train_proxy(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_manifest(&cfg.dataset()?.train)?;
    let c = manifest.num_categories();
    let data = LoadedDataset::load(manifest, cfg.model.image_size)?;
    let refs: Vec<&ImageSample> = data.samples.iter().collect();
    let proxy = train_proxy(&refs, c, &cfg.proxy)?;
    log::info!("proxy training accuracy {:.4}", proxy.accuracy(&refs)?);
    if let Some(test) = cfg.dataset()?.test.as_ref() {
        let t = LoadedDataset::load(load_manifest(test)?, cfg.model.image_size)?;
        let trefs: Vec<&ImageSample> = t.samples.iter().collect();
        log::info!("proxy held-out accuracy {:.4}", proxy.accuracy(&trefs)?);
    }
    proxy.save(out)
}

/// Side-by-side `original | result` image.
pub fn pair_grid(original: &Tensor, result: &Tensor) -> Result<Tensor> {
    Ok(Tensor::cat(&[original, result], 1)?)
}

pub fn grid_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    out.with_file_name(format!("{stem}_grid.png"))
}

pub fn cmd_manipulate(checkpoint: &Path, image: &Path, mask: &Path, target: &str, out: &Path) -> Result<()> {
    let model = Model::load(checkpoint, &Device::Cpu)?;
    let cfg = model.config();
    let target = cfg.category_by_name(target)?;
    let (pixels, mask) = load_native(image, mask)?;
    // the source category only labels the input; the generator ignores it
    let source = SemanticCategory::new(if target.id() == 0 { 1 } else { 0 }, cfg.num_categories())?;
    let input = cfg.prepare(&ImageSample::new(pixels, Some(mask), source)?);
    let m = manipulate(&input, target, &model.generator, cfg.generator.region_size, &cfg.crop)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_image(m.output.pixels(), out)?;
    save_image(&pair_grid(input.pixels(), m.output.pixels())?, &grid_path(out))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    /// `None` evaluates the identity generator.
    pub checkpoint: Option<PathBuf>,
    pub manifest: PathBuf,
    pub target: String,
    pub proxy: PathBuf,
    pub segmentation: Option<PathBuf>,
    pub save_images: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
struct SegmentationPairs {
    num_classes: usize,
    pairs: Vec<SegmentationPair>,
}

#[derive(Debug, Clone, Deserialize)]
struct SegmentationPair {
    prediction: PathBuf,
    ground_truth: PathBuf,
}

fn segmentation_confusion(path: &Path) -> Result<ConfusionMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SegmentationPairs =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut total = ConfusionMatrix::zeros(spec.num_classes);
    for p in &spec.pairs {
        let pred = LabelMap::load_png(&base.join(&p.prediction))?;
        let gt = LabelMap::load_png(&base.join(&p.ground_truth))?;
        total.merge(&confusion(&pred, &gt, spec.num_classes)?)?;
    }
    Ok(total)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricsReport> {
    let proxy = ProxyClassifier::load(&args.proxy)?;
    let manifest = load_manifest(&args.manifest)?;
    let model = match &args.checkpoint {
        Some(p) => Some(Model::load(p, &Device::Cpu)?),
        None => None,
    };
    let config = match &model {
        Some(m) => m.config().clone(),
        None => ModelConfig {
            generator: GeneratorSpec {
                region_size: proxy.image_size(),
                ..GeneratorSpec::default()
            },
            discriminator: DiscriminatorSpec::default(),
            category_names: manifest.category_names(),
            global_disc: false,
            whole_image: false,
            image_size: proxy.image_size(),
            crop: CropOptions::default(),
        },
    };
    if config.image_size != proxy.image_size() {
        return Err(Error::Config(format!(
            "model works at {} px but the proxy at {} px",
            config.image_size,
            proxy.image_size()
        )));
    }
    let target = config.category_by_name(&args.target)?;
    let data = LoadedDataset::load(manifest, config.image_size)?;
    let sources: Vec<&ImageSample> = data.samples.iter().filter(|s| s.category() != target).collect();
    let (mut report, translated) = match &model {
        Some(m) => evaluate_translation(
            &m.generator,
            &config,
            &sources,
            target,
            &proxy,
            Some(m.discriminators.local(target)?),
        )?,
        None => evaluate_translation(&IdentityGenerator, &config, &sources, target, &proxy, None)?,
    };
    if let Some(seg) = &args.segmentation {
        report = report.with_segmentation(metrics_from_confusion(&segmentation_confusion(seg)?)?);
    }
    if let Some(dir) = &args.save_images {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, t) in translated.iter().enumerate() {
            let grid = pair_grid(t.input.pixels(), t.output.pixels())?;
            save_image(&grid, &dir.join(format!("{i:04}.png")))?;
        }
    }
    Ok(report)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
