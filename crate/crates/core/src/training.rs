//! Adversarial optimization of the shared generator against the
//! discriminator bank.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_archive, write_archive, Model, ModelConfig};
use crate::data::{LoadedDataset, UnpairedBatcher};
use crate::domain::{DomainPair, ImageSample, LossWeights, SemanticCategory};
use crate::error::{Error, Result};
use crate::maskpipe::{crop_region, manipulate, mask_bbox, CropTransform};
use crate::objectives::{
    contrasting_distance, cycle_loss, feature_center_rows, full_discriminator_loss, full_generator_loss,
    full_generator_objective, lsgan_discriminator_loss, lsgan_generator_loss, scalar, LossReport, TargetImageBuffer,
};
use crate::optim::{Adam, AdamSlot, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::rng::derived_rng;

const BUFFER_STREAM: u64 = 0xb0ff;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Epochs at the base learning rate.
    pub epochs_const: u64,
    /// Epochs of linear decay to zero that follow.
    pub epochs_decay: u64,
    pub base_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Save a checkpoint after every this many epochs; 0 saves only at the end.
    pub checkpoint_every: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_const: 100,
            epochs_decay: 100,
            base_lr: 2e-4,
            batch_size: 1,
            buffer_capacity: TargetImageBuffer::DEFAULT_CAPACITY,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 10,
            adam_beta1: ADAM_BETA1,
            adam_beta2: ADAM_BETA2,
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> u64 {
        self.epochs_const + self.epochs_decay
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs() == 0 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr {} must be positive", self.base_lr)));
        }
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "batch_size {} is not supported; training uses single-image steps",
                self.batch_size
            )));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::Config("buffer_capacity must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        self.weights.validate()
    }
}

/// Learning rate for `epoch`: constant, then linear decay reaching zero at
/// the last epoch.
pub fn lr_at(config: &TrainConfig, epoch: u64) -> Result<f64> {
    if epoch >= config.total_epochs() {
        return Err(Error::Range(format!(
            "epoch {epoch} outside [0, {})",
            config.total_epochs()
        )));
    }
    if epoch < config.epochs_const {
        return Ok(config.base_lr);
    }
    let into = (epoch - config.epochs_const + 1) as f64;
    Ok(config.base_lr * (1.0 - into / config.epochs_decay as f64))
}

/// Parameters, optimizer moments, buffers and counters of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub opt_g: Adam,
    pub opt_d: Adam,
    /// One buffer of real regions per category.
    pub buffers: Vec<TargetImageBuffer>,
    pub epoch: u64,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    epoch: u64,
    step: u64,
    opt_g_steps: BTreeMap<String, u64>,
    opt_d_steps: BTreeMap<String, u64>,
    buffer_lens: Vec<usize>,
}

impl TrainState {
    pub fn new(model: ModelConfig, config: &TrainConfig, device: &Device) -> Result<Self> {
        config.validate()?;
        let model = Model::new(model, config.seed, device)?;
        Self::from_model(model, config)
    }

    pub fn from_model(model: Model, config: &TrainConfig) -> Result<Self> {
        let r = model.config().generator.region_size;
        let buffers = (0..model.config().num_categories())
            .map(|_| TargetImageBuffer::new(config.buffer_capacity, [r, r, 3]))
            .collect::<Result<Vec<_>>>()?;
        let adam = Adam::new(config.adam_beta1, config.adam_beta2, ADAM_EPS);
        Ok(Self {
            model,
            opt_g: adam.clone(),
            opt_d: adam,
            buffers,
            epoch: 0,
            step: 0,
        })
    }

    /// Writes `model.safetensors` and `state.safetensors` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(&dir.join("model.safetensors"))?;
        let mut tensors = BTreeMap::new();
        let steps = |prefix: &str, opt: &Adam, tensors: &mut BTreeMap<String, Tensor>| {
            let mut out = BTreeMap::new();
            for (name, slot) in opt.slots() {
                tensors.insert(format!("{prefix}/{name}/m"), slot.m.clone());
                tensors.insert(format!("{prefix}/{name}/v"), slot.v.clone());
                out.insert(name.clone(), slot.t);
            }
            out
        };
        let opt_g_steps = steps("opt_g", &self.opt_g, &mut tensors);
        let opt_d_steps = steps("opt_d", &self.opt_d, &mut tensors);
        for (c, b) in self.buffers.iter().enumerate() {
            for (i, e) in b.entries().iter().enumerate() {
                tensors.insert(format!("buffer/{c}/{i:03}"), e.clone());
            }
        }
        let header = StateHeader {
            epoch: self.epoch,
            step: self.step,
            opt_g_steps,
            opt_d_steps,
            buffer_lens: self.buffers.iter().map(TargetImageBuffer::len).collect(),
        };
        write_archive(&dir.join("state.safetensors"), &tensors, &header)
    }

    pub fn load(dir: &Path, config: &TrainConfig, device: &Device) -> Result<Self> {
        let model = Model::load(&dir.join("model.safetensors"), device)?;
        let mut state = Self::from_model(model, config)?;
        let (tensors, header): (_, StateHeader) = read_archive(&dir.join("state.safetensors"), device)?;
        let get = |k: &str| {
            tensors
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing state tensor {k}")))
        };
        let slots = |prefix: &str, steps: &BTreeMap<String, u64>| -> Result<BTreeMap<String, AdamSlot>> {
            steps
                .iter()
                .map(|(name, &t)| {
                    Ok((
                        name.clone(),
                        AdamSlot {
                            m: get(&format!("{prefix}/{name}/m"))?,
                            v: get(&format!("{prefix}/{name}/v"))?,
                            t,
                        },
                    ))
                })
                .collect()
        };
        state.opt_g.restore(slots("opt_g", &header.opt_g_steps)?);
        state.opt_d.restore(slots("opt_d", &header.opt_d_steps)?);
        if header.buffer_lens.len() != state.buffers.len() {
            return Err(Error::Checkpoint("buffer count differs from the category count".into()));
        }
        for (c, &n) in header.buffer_lens.iter().enumerate() {
            let entries = (0..n)
                .map(|i| get(&format!("buffer/{c}/{i:03}")))
                .collect::<Result<Vec<_>>>()?;
            state.buffers[c].restore(entries)?;
        }
        state.epoch = header.epoch;
        state.step = header.step;
        Ok(state)
    }
}

/// Tensors of one forward pass toward a target category.
pub struct HalfForward {
    /// Composited full image, differentiable w.r.t. the generator.
    pub fake_image: Tensor,
    /// The fake image's object region under the input's crop.
    pub fake_region: Tensor,
    /// The input's object region under the same crop.
    pub input_region: Tensor,
    pub fake_sample: ImageSample,
    pub transform: CropTransform,
}

/// Object region of a real sample, cropped by its own mask.
pub fn object_region(sample: &ImageSample, config: &ModelConfig) -> Result<Tensor> {
    let t = mask_bbox(&sample.mask_or_full()?, config.generator.region_size, &config.crop)?;
    crop_region(sample.pixels(), &t)
}

pub fn forward_toward(model: &Model, x: &ImageSample, target: SemanticCategory) -> Result<HalfForward> {
    let cfg = model.config();
    let m = manipulate(x, target, &model.generator, cfg.generator.region_size, &cfg.crop)?;
    let fake_region = crop_region(m.output.pixels(), &m.transform)?;
    let input_region = crop_region(x.pixels(), &m.transform)?;
    Ok(HalfForward {
        fake_image: m.output.pixels().clone(),
        fake_region,
        input_region,
        fake_sample: m.output,
        transform: m.transform,
    })
}

/// The global discriminator takes part only when the weights enable it and
/// the model was built with one.
fn uses_global(model: &Model, weights: &LossWeights) -> bool {
    weights.global_disc_active() && model.discriminators.has_global()
}

fn buffer_for(state: &TrainState, target: SemanticCategory) -> Result<&TargetImageBuffer> {
    state
        .buffers
        .get(target.id())
        .ok_or_else(|| Error::Range(format!("no buffer for category {}", target.id())))
}

/// Contrasting distance of a fake region against the input region and the
/// buffered feature center of the target, under the target's discriminator.
/// Nothing is detached.
pub fn contrast_term(
    model: &Model,
    buffer: &TargetImageBuffer,
    target: SemanticCategory,
    fake_region: &Tensor,
    input_region: &Tensor,
) -> Result<Tensor> {
    let d = model.discriminators.local(target)?;
    let n = buffer.len();
    let batch = Tensor::cat(&[buffer.stacked()?, Tensor::stack(&[fake_region, input_region], 0)?], 0)?;
    let f = d.forward_batch(&batch)?.features;
    let center = feature_center_rows(&f.narrow(0, 0, n)?)?;
    contrasting_distance(&f.get(n)?, &f.get(n + 1)?, &center)
}

/// One discriminator update for the target of `fwd`: descends
/// `lambda * lsgan_d - Q` on the target's local discriminator and the
/// least-squares term alone on the global one. Returns `(Q, lsgan_d)`.
pub fn discriminator_update(
    state: &mut TrainState,
    fwd: &HalfForward,
    real: &ImageSample,
    real_region: &Tensor,
    target: SemanticCategory,
    weights: &LossWeights,
    lr: f64,
) -> Result<(f64, f64)> {
    let model = &state.model;
    let d = model.discriminators.local(target)?;
    let buffer = buffer_for(state, target)?;
    let n = buffer.len();
    let fake_region = fwd.fake_region.detach();
    let tail = Tensor::stack(&[real_region, &fake_region, &fwd.input_region], 0)?;
    let out = d.forward_batch(&Tensor::cat(&[buffer.stacked()?, tail], 0)?)?;
    let center = feature_center_rows(&out.features.narrow(0, 0, n)?)?;
    let q = contrasting_distance(&out.features.get(n + 1)?, &out.features.get(n + 2)?, &center)?;
    let mut lsgan = lsgan_discriminator_loss(&out.scores.get(n)?, &out.scores.get(n + 1)?)?;
    let mut vars = model.local_vars(target)?;
    if uses_global(model, weights) {
        let g = model.discriminators.global()?;
        let s = g
            .forward_batch(&Tensor::stack(&[real.pixels(), &fwd.fake_image.detach()], 0)?)?
            .scores;
        lsgan = (lsgan + lsgan_discriminator_loss(&s.get(0)?, &s.get(1)?)?)?;
        vars.extend(model.global_vars());
    }
    let mut terms = Vec::new();
    if weights.use_lsgan {
        terms.push((&lsgan * weights.lambda_lsgan)?);
    }
    if weights.use_contrast {
        terms.push(q.neg()?);
    }
    let loss = terms
        .into_iter()
        .reduce(|a, b| (a + b).expect("scalar add"))
        .ok_or_else(|| Error::Config("no discriminator loss term enabled".into()))?;
    let (qv, lv) = (scalar(&q)?, scalar(&lsgan)?);
    let grads = loss.backward()?;
    state.opt_d.step(&vars, &grads, lr)?;
    Ok((qv, lv))
}

/// One generator update toward the target of `fwd`, with the discriminators
/// frozen and the input feature and buffer center held constant.
/// Returns `(Q, lsgan_g, cycle, total_g)`.
pub fn generator_update(
    state: &mut TrainState,
    x: &ImageSample,
    fwd: &HalfForward,
    target: SemanticCategory,
    weights: &LossWeights,
    lr: f64,
) -> Result<(f64, f64, f64, f64)> {
    let model = &state.model;
    let d = model.discriminators.local(target)?;
    let buffer = buffer_for(state, target)?;
    let n = buffer.len();
    let reference = Tensor::cat(&[buffer.stacked()?, fwd.input_region.unsqueeze(0)?], 0)?;
    let f_ref = d.forward_batch(&reference)?.features.detach();
    let center = feature_center_rows(&f_ref.narrow(0, 0, n)?)?;
    let anchor = d.forward_batch(&fwd.fake_region.unsqueeze(0)?)?;
    let q = contrasting_distance(&anchor.features.get(0)?, &f_ref.get(n)?, &center)?;
    let mut lsgan = lsgan_generator_loss(&anchor.scores)?;
    if uses_global(model, weights) {
        let (s, _) = model.discriminators.global()?.forward(&fwd.fake_image)?;
        lsgan = (lsgan + lsgan_generator_loss(&s)?)?;
    }
    let cfg = model.config();
    let back = manipulate(
        &fwd.fake_sample,
        x.category(),
        &model.generator,
        cfg.generator.region_size,
        &cfg.crop,
    )?;
    let cycle = cycle_loss(x.pixels(), back.output.pixels())?;
    let total = full_generator_objective(&q, &lsgan, &cycle, weights)?;
    let (qv, lv, cv) = (scalar(&q)?, scalar(&lsgan)?, scalar(&cycle)?);
    let tv = full_generator_loss(qv, lv, cv, weights)?;
    let grads = total.backward()?;
    let vars = model.generator_vars();
    state.opt_g.step(&vars, &grads, lr)?;
    Ok((qv, lv, cv, tv))
}

fn half_step(
    state: &mut TrainState,
    x: &ImageSample,
    y: &ImageSample,
    weights: &LossWeights,
    lr: f64,
    rng_tag: u64,
    seed: u64,
) -> Result<LossReport> {
    let target = y.category();
    let real_region = object_region(y, state.model.config())?;
    let mut rng = derived_rng(seed, &[BUFFER_STREAM, state.step, rng_tag]);
    // an empty buffer is seeded with the current real sample first
    let seeded = buffer_for(state, target)?.is_empty();
    if seeded {
        state.buffers[target.id()].push(&real_region, &mut rng)?;
    }
    let fwd = forward_toward(&state.model, x, target)?;
    let (_, lsgan_d) = discriminator_update(state, &fwd, y, &real_region, target, weights, lr)?;
    if !seeded {
        state.buffers[target.id()].push(&real_region, &mut rng)?;
    }
    let (contrast, lsgan_g, cycle, total_g) = generator_update(state, x, &fwd, target, weights, lr)?;
    Ok(LossReport {
        step: state.step,
        contrast,
        lsgan_g,
        lsgan_d,
        cycle,
        total_g,
        total_d: full_discriminator_loss(contrast, lsgan_d, weights),
    })
}

/// Trains both directions of `pair` on one unpaired `(x, y)` draw and
/// advances the step counter. The report averages the two directions.
pub fn train_step(
    state: &mut TrainState,
    x: &ImageSample,
    y: &ImageSample,
    pair: DomainPair,
    config: &TrainConfig,
) -> Result<LossReport> {
    if x.category() != pair.source() || y.category() != pair.target() {
        return Err(Error::Config(format!(
            "sample categories ({}, {}) do not match the pair ({}, {})",
            x.category().id(),
            y.category().id(),
            pair.source().id(),
            pair.target().id()
        )));
    }
    let lr = lr_at(config, state.epoch)?;
    let forward = half_step(state, x, y, &config.weights, lr, 0, config.seed)?;
    let reverse = half_step(state, y, x, &config.weights, lr, 1, config.seed)?;
    let mut report = forward;
    report.accumulate(&reverse);
    let report = LossReport {
        step: state.step,
        contrast: report.contrast / 2.0,
        lsgan_g: report.lsgan_g / 2.0,
        lsgan_d: report.lsgan_d / 2.0,
        cycle: report.cycle / 2.0,
        total_g: report.total_g / 2.0,
        total_d: report.total_d / 2.0,
    };
    if !report.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss at step {} (epoch {}): {}",
            state.step,
            state.epoch,
            serde_json::to_string(&report).unwrap_or_default()
        )));
    }
    state.step += 1;
    Ok(report)
}

/// Mean held-out contrasting distance for `sources` translated toward
/// `target`, with the center taken over the target's real `references`.
pub fn mean_contrast(
    model: &Model,
    sources: &[&ImageSample],
    references: &[&ImageSample],
    target: SemanticCategory,
) -> Result<f64> {
    if sources.is_empty() || references.is_empty() {
        return Err(Error::EmptyEvaluation("no samples for the contrast estimate".into()));
    }
    let d = model.discriminators.local(target)?;
    let regions = references
        .iter()
        .map(|s| object_region(s, model.config()))
        .collect::<Result<Vec<_>>>()?;
    let center = feature_center_rows(&d.forward_batch(&Tensor::stack(&regions, 0)?)?.features)?;
    let mut total = 0.0;
    for x in sources {
        let fwd = forward_toward(model, x, target)?;
        let f = d
            .forward_batch(&Tensor::stack(&[&fwd.fake_region, &fwd.input_region], 0)?)?
            .features;
        total += scalar(&contrasting_distance(&f.get(0)?, &f.get(1)?, &center)?)?;
    }
    Ok(total / sources.len() as f64)
}

/// Mean cycle-reconstruction L1 over full images: each source is translated
/// toward `target` and back to its own category.
pub fn mean_cycle_l1(model: &Model, sources: &[&ImageSample], target: SemanticCategory) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::EmptyEvaluation("no samples for the cycle estimate".into()));
    }
    let cfg = model.config();
    let mut total = 0.0;
    for x in sources {
        let fwd = forward_toward(model, x, target)?;
        let back = manipulate(
            &fwd.fake_sample,
            x.category(),
            &model.generator,
            cfg.generator.region_size,
            &cfg.crop,
        )?;
        total += scalar(&cycle_loss(x.pixels(), back.output.pixels())?)?;
    }
    Ok(total / sources.len() as f64)
}

/// Written once at the start of every run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub pairs: Vec<[usize; 2]>,
    pub dataset_sha256: String,
    pub resumed_from_step: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Checkpoint directory to continue from.
    pub resume: Option<PathBuf>,
    /// Stop (with a checkpoint) once this many epochs are complete.
    pub stop_after_epoch: Option<u64>,
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub log_path: PathBuf,
    pub model_path: PathBuf,
    /// Reports produced by this invocation.
    pub reports: Vec<LossReport>,
}

pub const LOG_FILE: &str = "loss_log.jsonl";
pub const RUN_FILE: &str = "run.json";
pub const MODEL_FILE: &str = "model.safetensors";

/// Full training run over `data`, round-robin across `pairs`. One epoch is
/// one pass over the larger domain of every pair.
pub fn train(
    data: &LoadedDataset,
    pairs: &[DomainPair],
    model_config: &ModelConfig,
    config: &TrainConfig,
    out: &Path,
    options: &RunOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("no domain pairs to train".into()));
    }
    for p in pairs {
        if p.source().count() != model_config.num_categories() {
            return Err(Error::Config("pair categories do not match the model".into()));
        }
    }
    let samples: Vec<ImageSample> = data.samples.iter().map(|s| model_config.prepare(s)).collect();
    let categories: Vec<usize> = samples.iter().map(|s| s.category().id()).collect();
    let mut batchers = pairs
        .iter()
        .map(|p| UnpairedBatcher::new(&categories, *p, config.seed))
        .collect::<Result<Vec<_>>>()?;
    let steps_per_epoch: u64 = batchers.iter().map(|b| b.epoch_len() as u64).sum();

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let device = Device::Cpu;
    let mut state = match &options.resume {
        Some(dir) => {
            let s = TrainState::load(dir, config, &device)?;
            if s.model.config() != model_config {
                return Err(Error::Config(
                    "checkpoint model differs from the configured model".into(),
                ));
            }
            s
        }
        None => TrainState::new(model_config.clone(), config, &device)?,
    };
    let meta = RunMetadata {
        model: model_config.clone(),
        train: config.clone(),
        seed: config.seed,
        pairs: pairs.iter().map(|p| [p.source().id(), p.target().id()]).collect(),
        dataset_sha256: data.manifest.content_hash()?,
        resumed_from_step: options.resume.as_ref().map(|_| state.step),
    };
    let run_path = out.join(RUN_FILE);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&run_path, json + "\n").map_err(|e| Error::io(&run_path, e))?;

    let log_path = out.join(LOG_FILE);
    let mut log = open_log(&log_path, state.step, options.resume.is_some())?;
    for (p, b) in batchers.iter_mut().enumerate() {
        let p = p as u64;
        let n = pairs.len() as u64;
        // draws this pair has made before the current step
        b.seek((state.step + n - 1 - p) / n);
    }

    let total_epochs = config.total_epochs();
    let last_epoch = options.stop_after_epoch.unwrap_or(total_epochs).min(total_epochs);
    let mut reports = Vec::new();
    let checkpoints = out.join("checkpoints");
    while state.step < last_epoch * steps_per_epoch {
        state.epoch = state.step / steps_per_epoch;
        let p = (state.step % pairs.len() as u64) as usize;
        let (xi, yi) = batchers[p].next().expect("endless stream");
        let report = train_step(&mut state, &samples[xi], &samples[yi], pairs[p], config)?;
        let line = serde_json::to_string(&report).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        reports.push(report);
        if state.step % steps_per_epoch == 0 {
            let done = state.step / steps_per_epoch;
            state.epoch = done;
            log::info!(
                "epoch {done}/{total_epochs}: contrast {:.4} lsgan_g {:.4} cycle {:.4}",
                report.contrast,
                report.lsgan_g,
                report.cycle
            );
            if config.checkpoint_every > 0 && done.is_multiple_of(config.checkpoint_every) {
                log.flush().map_err(|e| Error::io(&log_path, e))?;
                state.save(&checkpoints.join(format!("epoch_{done:04}")))?;
            }
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    state.epoch = state.step / steps_per_epoch;
    let tag = if state.epoch >= total_epochs {
        "final".to_string()
    } else {
        format!("epoch_{:04}", state.epoch)
    };
    state.save(&checkpoints.join(tag))?;
    let model_path = out.join(MODEL_FILE);
    state.model.save(&model_path)?;
    Ok(TrainOutcome {
        state,
        log_path,
        model_path,
        reports,
    })
}

/// Opens the loss log for appending, keeping exactly the first `keep` lines
/// of an existing log when resuming.
fn open_log(path: &Path, keep: u64, resume: bool) -> Result<File> {
    if !resume {
        return File::create(path).map_err(|e| Error::io(path, e));
    }
    let mut kept = Vec::new();
    if path.exists() {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        for line in BufReader::new(f).lines().take(keep as usize) {
            kept.push(line.map_err(|e| Error::io(path, e))?);
        }
    }
    if (kept.len() as u64) < keep {
        log::warn!("loss log has {} of {keep} lines before the resume point", kept.len());
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    for l in &kept {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    drop(f);
    OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines loss log.
pub fn read_log(path: &Path) -> Result<Vec<LossReport>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
