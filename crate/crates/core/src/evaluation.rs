//! Segmentation metrics, the proxy-classifier realism rate, and background
//! preservation.

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use image::GrayImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{assign, read_archive, write_archive, ModelConfig};
use crate::domain::{image_hw, ImageSample, SemanticCategory};
use crate::error::{Error, Result};
use crate::maskpipe::{crop_region, manipulate, RegionGenerator};
use crate::networks::layers::{join, leaky_relu, to_nchw, Conv2d, Linear, ParamInit, Parameters};
use crate::networks::PatchDiscriminator;
use crate::objectives::scalar;
use crate::optim::Adam;
use crate::rng::derived_rng;

/// Label excluded from every tally.
pub const IGNORE_LABEL: u8 = 255;

/// Single-channel map of integer class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img: GrayImage = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
        let (w, h) = img.dimensions();
        Self::new(h as usize, w as usize, img.into_raw())
    }
}

/// `counts[i][j]`: pixels of ground-truth class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Adds another matrix of the same size.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(Error::Shape("confusion matrices differ in class count".into()));
        }
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
        Ok(())
    }
}

/// Tallies every pixel whose ground truth and prediction are not ignored.
pub fn confusion(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<ConfusionMatrix> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let mut m = ConfusionMatrix::zeros(num_classes);
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if p == IGNORE_LABEL || g == IGNORE_LABEL {
            continue;
        }
        if p as usize >= num_classes || g as usize >= num_classes {
            return Err(Error::Range(format!("label {} outside [0, {num_classes})", p.max(g))));
        }
        m.counts[g as usize][p as usize] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub per_pixel_acc: f64,
    pub per_class_acc: f64,
    pub mean_iou: f64,
}

/// Pixel accuracy, class-mean accuracy over classes present in the ground
/// truth, and mean IoU over classes present in ground truth or prediction.
pub fn metrics_from_confusion(m: &ConfusionMatrix) -> Result<SegmentationScores> {
    let total = m.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation("confusion matrix has no pixels".into()));
    }
    let c = m.num_classes();
    let diag: Vec<u64> = (0..c).map(|i| m.counts[i][i]).collect();
    let rows: Vec<u64> = m.counts.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..c).map(|j| m.counts.iter().map(|r| r[j]).sum()).collect();
    let trace: u64 = diag.iter().sum();
    let mut acc = Vec::new();
    let mut iou = Vec::new();
    for i in 0..c {
        if rows[i] > 0 {
            acc.push(diag[i] as f64 / rows[i] as f64);
        }
        let union = rows[i] + cols[i] - diag[i];
        if union > 0 {
            iou.push(diag[i] as f64 / union as f64);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SegmentationScores {
        per_pixel_acc: trace as f64 / total as f64,
        per_class_acc: mean(&acc),
        mean_iou: mean(&iou),
    })
}

/// Fraction of `images` the classifier assigns to `target`.
pub fn realism_rate<F>(classify: F, images: &[Tensor], target: SemanticCategory) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<usize>,
{
    if images.is_empty() {
        return Err(Error::EmptyEvaluation("no images to rate".into()));
    }
    let mut hits = 0usize;
    for im in images {
        if classify(im)? == target.id() {
            hits += 1;
        }
    }
    Ok(hits as f64 / images.len() as f64)
}

/// Largest absolute change over the background (mask = 0) pixels.
pub fn background_preservation(input: &ImageSample, output: &Tensor) -> Result<f64> {
    let mask = input
        .mask()
        .ok_or_else(|| Error::Config("background preservation needs a mask".into()))?;
    if output.dims() != input.pixels().dims() {
        return Err(Error::Shape(format!(
            "output {:?} differs from input {:?}",
            output.dims(),
            input.pixels().dims()
        )));
    }
    let a = input.pixels().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let b = output.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let m = mask.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let mut worst = 0.0f64;
    for (p, &mv) in m.iter().enumerate() {
        if mv < 0.5 {
            for ch in 0..3 {
                worst = worst.max((a[p * 3 + ch] - b[p * 3 + ch]).abs());
            }
        }
    }
    Ok(worst)
}

/// Metrics report; fields that were not measured serialize as `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_pixel_acc: Option<f64>,
    pub per_class_acc: Option<f64>,
    pub mean_iou: Option<f64>,
    pub realism_rate: Option<f64>,
    pub background_max_dev: Option<f64>,
    pub n_images: usize,
    /// Mean patch score of the target's local discriminator on the outputs;
    /// a real-vs-fake statistic reported next to the class-attainment rate.
    pub mean_disc_score: Option<f64>,
}

impl MetricsReport {
    pub fn with_segmentation(mut self, s: SegmentationScores) -> Self {
        self.per_pixel_acc = Some(s.per_pixel_acc);
        self.per_class_acc = Some(s.per_class_acc);
        self.mean_iou = Some(s.mean_iou);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    pub base_channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            epochs: 12,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProxyHeader {
    image_size: usize,
    num_categories: usize,
    base_channels: usize,
}

/// Small image classifier standing in for human raters: four stride-2
/// convolutions, global average pooling and a linear head.
#[derive(Debug, Clone)]
pub struct ProxyClassifier {
    header: ProxyHeader,
    convs: Vec<Conv2d>,
    head: Linear,
}

const PROXY_STAGES: usize = 4;

impl ProxyClassifier {
    pub fn new(image_size: usize, num_categories: usize, base_channels: usize, seed: u64) -> Result<Self> {
        if num_categories < 2 || base_channels == 0 || image_size < 1 << PROXY_STAGES {
            return Err(Error::Config("invalid proxy classifier shape".into()));
        }
        let mut init = ParamInit::new(seed, &Device::Cpu, DType::F32);
        let mut convs = Vec::new();
        let mut ch = 3;
        for i in 0..PROXY_STAGES {
            let out = base_channels << i.min(2);
            let std = (2.0 / (9 * ch) as f64).sqrt();
            convs.push(Conv2d::with_std(&mut init, ch, out, 3, 2, 1, std)?);
            ch = out;
        }
        let head = Linear::new(&mut init, ch, num_categories, (1.0 / ch as f64).sqrt())?;
        Ok(Self {
            header: ProxyHeader {
                image_size,
                num_categories,
                base_channels,
            },
            convs,
            head,
        })
    }

    pub fn image_size(&self) -> usize {
        self.header.image_size
    }

    pub fn num_categories(&self) -> usize {
        self.header.num_categories
    }

    /// `(n, h, w, 3)` images to `(n, C)` logits.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let mut xs = to_nchw(images)?;
        for c in &self.convs {
            xs = leaky_relu(&c.forward(&xs)?)?;
        }
        self.head.forward(&xs.flatten_from(2)?.mean(2)?)
    }

    pub fn predict_batch(&self, images: &Tensor) -> Result<Vec<usize>> {
        Ok(self
            .logits(images)?
            .argmax(D::Minus1)?
            .to_vec1::<u32>()?
            .into_iter()
            .map(|v| v as usize)
            .collect())
    }

    pub fn predict(&self, image: &Tensor) -> Result<usize> {
        image_hw(image)?;
        Ok(self.predict_batch(&image.unsqueeze(0)?)?[0])
    }

    /// Fraction of samples classified as their own category.
    pub fn accuracy(&self, samples: &[&ImageSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyEvaluation("no samples to score".into()));
        }
        let mut correct = 0;
        for chunk in samples.chunks(64) {
            let batch = Tensor::stack(&chunk.iter().map(|s| s.pixels()).collect::<Vec<_>>(), 0)?;
            for (p, s) in self.predict_batch(&batch)?.iter().zip(chunk) {
                correct += (*p == s.category().id()) as usize;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self
            .named_vars()
            .into_iter()
            .map(|(k, v)| (k, v.as_tensor().clone()))
            .collect();
        write_archive(path, &tensors, &self.header)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, h): (_, ProxyHeader) = read_archive(path, &Device::Cpu)?;
        let p = Self::new(h.image_size, h.num_categories, h.base_channels, 0)?;
        assign(&p.named_vars(), &tensors)?;
        Ok(p)
    }
}

impl Parameters for ProxyClassifier {
    fn visit(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &format!("conv{i}")), out);
        }
        self.head.visit(&join(prefix, "head"), out);
    }
}

/// Trains a proxy classifier with cross-entropy on clean labelled samples.
pub fn train_proxy(samples: &[&ImageSample], num_categories: usize, config: &ProxyConfig) -> Result<ProxyClassifier> {
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptyEvaluation("no samples to train the proxy on".into()))?;
    let size = first.height();
    let proxy = ProxyClassifier::new(size, num_categories, config.base_channels, config.seed)?;
    let vars = proxy.named_vars();
    let mut opt = Adam::new(0.9, 0.999, 1e-8);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut derived_rng(config.seed, &[0x9e0, epoch as u64]));
        for chunk in order.chunks(config.batch_size.max(1)) {
            let imgs = Tensor::stack(&chunk.iter().map(|&i| samples[i].pixels()).collect::<Vec<_>>(), 0)?;
            let labels: Vec<u32> = chunk.iter().map(|&i| samples[i].category().id() as u32).collect();
            let labels = Tensor::new(labels.as_slice(), &Device::Cpu)?;
            let loss = candle_nn::loss::cross_entropy(&proxy.logits(&imgs)?, &labels)?;
            opt.step(&vars, &loss.backward()?, config.lr)?;
        }
    }
    Ok(proxy)
}

/// One translated test image.
#[derive(Debug, Clone)]
pub struct Translated {
    pub input: ImageSample,
    pub output: ImageSample,
    pub predicted: usize,
}

/// Translates every source toward `target` and scores the outputs: proxy
/// realism rate, worst background deviation (over samples that carry a
/// mask) and, given the target's local discriminator, its mean patch score
/// on the translated regions.
pub fn evaluate_translation<G: RegionGenerator + ?Sized>(
    generator: &G,
    config: &ModelConfig,
    sources: &[&ImageSample],
    target: SemanticCategory,
    proxy: &ProxyClassifier,
    discriminator: Option<&PatchDiscriminator>,
) -> Result<(MetricsReport, Vec<Translated>)> {
    if sources.is_empty() {
        return Err(Error::EmptyEvaluation(format!(
            "no source images to translate toward category {}",
            target.id()
        )));
    }
    let mut translated = Vec::with_capacity(sources.len());
    let mut worst: Option<f64> = None;
    let mut disc_total = 0.0;
    for &s in sources {
        let m = manipulate(
            &config.prepare(s),
            target,
            generator,
            config.generator.region_size,
            &config.crop,
        )?;
        let output = m.output.detach();
        if s.mask().is_some() {
            let dev = background_preservation(s, output.pixels())?;
            worst = Some(worst.map_or(dev, |w| w.max(dev)));
        }
        if let Some(d) = discriminator {
            let region = crop_region(output.pixels(), &m.transform)?;
            disc_total += scalar(&d.forward(&region)?.0.mean_all()?)?;
        }
        let predicted = proxy.predict(output.pixels())?;
        translated.push(Translated {
            input: s.clone(),
            output,
            predicted,
        });
    }
    let hits = translated.iter().filter(|t| t.predicted == target.id()).count();
    let rate = hits as f64 / translated.len() as f64;
    let report = MetricsReport {
        realism_rate: Some(rate),
        background_max_dev: worst,
        n_images: translated.len(),
        mean_disc_score: discriminator.map(|_| disc_total / sources.len() as f64),
        ..Default::default()
    };
    Ok((report, translated))
}
