//! Training objectives: least-squares adversarial terms, the adversarial
//! contrasting distance, cycle reconstruction, and the buffered feature
//! center of real target-domain samples.

use candle_core::{DType, Tensor, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::LossWeights;
use crate::error::{Error, Result};

/// Added under the square root so the distance stays differentiable at zero.
const DISTANCE_EPS: f64 = 1e-24;

pub(crate) fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let v = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("{what} contains a non-finite value ({bad})")));
    }
    Ok(())
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn euclidean(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(((a - b)?.sqr()?.sum(D::Minus1)? + DISTANCE_EPS)?.sqrt()?)
}

/// Contrasting distance between an anchor feature, a contrasting feature and
/// the positive feature center:
///
/// `Q = -log(exp(-d_pos) / (exp(-d_pos) + exp(-d_neg)))`
///
/// with `d_pos = |anchor - center|` and `d_neg = |anchor - contrast|`. This is
/// `softplus(d_pos - d_neg)`, evaluated in a form that cannot overflow.
/// All three arguments are rank-1 tensors of the same length; the result is
/// a scalar tensor that carries gradients to every argument.
pub fn contrasting_distance(anchor: &Tensor, contrast: &Tensor, center: &Tensor) -> Result<Tensor> {
    let d = match anchor.dims() {
        [d] => *d,
        dims => return Err(Error::Shape(format!("feature vectors must be rank-1, got {dims:?}"))),
    };
    for (name, t) in [("contrast", contrast), ("center", center)] {
        if t.dims() != [d] {
            return Err(Error::Shape(format!(
                "{name} feature has shape {:?}, anchor has [{d}]",
                t.dims()
            )));
        }
    }
    ensure_finite(anchor, "anchor feature")?;
    ensure_finite(contrast, "contrasting feature")?;
    ensure_finite(center, "feature center")?;

    let d_pos = euclidean(anchor, center)?;
    let d_neg = euclidean(anchor, contrast)?;
    let z = (d_pos - d_neg)?;
    let abs = z.abs()?;
    // softplus(z) = max(z, 0) + log(1 + exp(-|z|)), with max(z, 0) = (z + |z|) / 2
    let relu = ((&z + &abs)? * 0.5)?;
    let tail = (abs.neg()?.exp()? + 1.0)?.log()?;
    Ok((relu + tail)?)
}

/// Elementwise mean of a nonempty set of equal-length feature vectors.
pub fn feature_center(features: &[Tensor]) -> Result<Tensor> {
    if features.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let dims = features[0].dims().to_vec();
    if dims.len() != 1 {
        return Err(Error::Shape(format!("feature vectors must be rank-1, got {dims:?}")));
    }
    if let Some(f) = features.iter().find(|f| f.dims() != dims.as_slice()) {
        return Err(Error::Shape(format!(
            "feature shape {:?} differs from {dims:?}",
            f.dims()
        )));
    }
    feature_center_rows(&Tensor::stack(features, 0)?)
}

/// Mean over the rows of an `(n, d)` feature matrix.
pub fn feature_center_rows(features: &Tensor) -> Result<Tensor> {
    match features.dims() {
        [0, _] => Err(Error::EmptyBuffer),
        [_, _] => Ok(features.mean(0)?),
        dims => Err(Error::Shape(format!("expected an (n, d) feature matrix, got {dims:?}"))),
    }
}

/// Least-squares discriminator loss: `mean((real - 1)^2) + mean(fake^2)`.
pub fn lsgan_discriminator_loss(scores_real: &Tensor, scores_fake: &Tensor) -> Result<Tensor> {
    ensure_finite(scores_real, "real scores")?;
    ensure_finite(scores_fake, "fake scores")?;
    let real = (scores_real - 1.0)?.sqr()?.mean_all()?;
    let fake = scores_fake.sqr()?.mean_all()?;
    Ok((real + fake)?)
}

/// Least-squares generator loss: `mean((fake - 1)^2)`.
pub fn lsgan_generator_loss(scores_fake: &Tensor) -> Result<Tensor> {
    ensure_finite(scores_fake, "fake scores")?;
    Ok((scores_fake - 1.0)?.sqr()?.mean_all()?)
}

/// Mean absolute difference between an image and its cycle reconstruction.
pub fn cycle_loss(original: &Tensor, reconstructed: &Tensor) -> Result<Tensor> {
    if original.dims() != reconstructed.dims() {
        return Err(Error::Shape(format!(
            "cycle reconstruction shape {:?} differs from original {:?}",
            reconstructed.dims(),
            original.dims()
        )));
    }
    Ok((original - reconstructed)?.abs()?.mean_all()?)
}

fn check_generator_terms(weights: &LossWeights) -> Result<()> {
    if !(weights.use_contrast || weights.use_lsgan || weights.use_cycle) {
        return Err(Error::Config("every generator loss term is disabled".into()));
    }
    Ok(())
}

/// Gated weighted sum `contrast + lambda * lsgan_g + beta * cycle`.
pub fn full_generator_loss(contrast: f64, lsgan_g: f64, cycle: f64, weights: &LossWeights) -> Result<f64> {
    check_generator_terms(weights)?;
    let mut total = 0.0;
    if weights.use_contrast {
        total += contrast;
    }
    if weights.use_lsgan {
        total += weights.lambda_lsgan * lsgan_g;
    }
    if weights.use_cycle {
        total += weights.beta_cycle * cycle;
    }
    Ok(total)
}

/// Tensor form of [`full_generator_loss`], used for backpropagation.
pub fn full_generator_objective(
    contrast: &Tensor,
    lsgan_g: &Tensor,
    cycle: &Tensor,
    weights: &LossWeights,
) -> Result<Tensor> {
    check_generator_terms(weights)?;
    let mut terms = Vec::with_capacity(3);
    if weights.use_contrast {
        terms.push(contrast.clone());
    }
    if weights.use_lsgan {
        terms.push((lsgan_g * weights.lambda_lsgan)?);
    }
    if weights.use_cycle {
        terms.push((cycle * weights.beta_cycle)?);
    }
    let mut total = terms[0].clone();
    for t in &terms[1..] {
        total = (total + t)?;
    }
    Ok(total)
}

/// Discriminator objective `lambda * lsgan_d - Q`, gated like the generator's.
pub fn full_discriminator_loss(contrast: f64, lsgan_d: f64, weights: &LossWeights) -> f64 {
    let mut total = 0.0;
    if weights.use_lsgan {
        total += weights.lambda_lsgan * lsgan_d;
    }
    if weights.use_contrast {
        total -= contrast;
    }
    total
}

/// Bounded store of recent real target-domain object regions.
///
/// Entries are detached `(h, w, 3)` tensors. Once full, each push replaces a
/// uniformly chosen entry.
#[derive(Debug, Clone)]
pub struct TargetImageBuffer {
    capacity: usize,
    region_shape: [usize; 3],
    entries: Vec<Tensor>,
}

impl TargetImageBuffer {
    pub const DEFAULT_CAPACITY: usize = 50;

    pub fn new(capacity: usize, region_shape: [usize; 3]) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            region_shape,
            entries: Vec::with_capacity(capacity),
        })
    }

    pub fn push<R: Rng + ?Sized>(&mut self, region: &Tensor, rng: &mut R) -> Result<()> {
        if region.dims() != self.region_shape {
            return Err(Error::Shape(format!(
                "buffer region shape {:?} differs from configured {:?}",
                region.dims(),
                self.region_shape
            )));
        }
        let region = region.detach();
        if self.entries.len() < self.capacity {
            self.entries.push(region);
        } else {
            let slot = rng.random_range(0..self.capacity);
            self.entries[slot] = region;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn region_shape(&self) -> [usize; 3] {
        self.region_shape
    }

    pub fn entries(&self) -> &[Tensor] {
        &self.entries
    }

    /// All entries stacked into an `(n, h, w, 3)` batch.
    pub fn stacked(&self) -> Result<Tensor> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok(Tensor::stack(&self.entries, 0)?)
    }

    pub(crate) fn restore(&mut self, entries: Vec<Tensor>) -> Result<()> {
        if entries.len() > self.capacity {
            return Err(Error::Checkpoint("buffer holds more entries than its capacity".into()));
        }
        for e in &entries {
            if e.dims() != self.region_shape {
                return Err(Error::Checkpoint("buffer entry has the wrong shape".into()));
            }
        }
        self.entries = entries;
        Ok(())
    }
}

/// Per-step loss values, one JSON object per line in the training log.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub contrast: f64,
    pub lsgan_g: f64,
    pub lsgan_d: f64,
    pub cycle: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.contrast,
            self.lsgan_g,
            self.lsgan_d,
            self.cycle,
            self.total_g,
            self.total_d,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Accumulates the loss components of another half-step into this one.
    pub fn accumulate(&mut self, other: &LossReport) {
        self.contrast += other.contrast;
        self.lsgan_g += other.lsgan_g;
        self.lsgan_d += other.lsgan_d;
        self.cycle += other.cycle;
        self.total_g += other.total_g;
        self.total_d += other.total_d;
    }
}
