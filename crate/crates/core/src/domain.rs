//! Domain types shared by every stage of the pipeline.
//!
//! Images are `(height, width, 3)` tensors with values in `[-1, 1]`; masks are
//! `(height, width)` tensors holding exactly `0.0` or `1.0`.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold applied to resampled masks.
pub const MASK_THRESHOLD: f64 = 0.5;

/// An object category: an id in `[0, count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticCategory {
    id: usize,
    count: usize,
}

impl SemanticCategory {
    pub fn new(id: usize, count: usize) -> Result<Self> {
        if id >= count {
            return Err(Error::Range(format!("category id {id} outside [0, {count})")));
        }
        Ok(Self { id, count })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn one_hot(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.count];
        v[self.id] = 1.0;
        v
    }
}

/// One-hot encoding of `category` over `num_categories` classes.
pub fn one_hot(category: SemanticCategory, num_categories: usize) -> Result<Vec<f32>> {
    if category.id >= num_categories {
        return Err(Error::Range(format!(
            "category id {} outside [0, {num_categories})",
            category.id
        )));
    }
    let mut v = vec![0.0; num_categories];
    v[category.id] = 1.0;
    Ok(v)
}

/// A source/target category pair for one translation direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainPair {
    source: SemanticCategory,
    target: SemanticCategory,
}

impl DomainPair {
    pub fn new(source: SemanticCategory, target: SemanticCategory) -> Result<Self> {
        if source.id == target.id {
            return Err(Error::Config(format!(
                "domain pair needs two distinct categories, got {} twice",
                source.id
            )));
        }
        if source.count != target.count {
            return Err(Error::Config(
                "domain pair categories disagree on the category count".into(),
            ));
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> SemanticCategory {
        self.source
    }

    pub fn target(&self) -> SemanticCategory {
        self.target
    }

    pub fn reversed(&self) -> Self {
        Self {
            source: self.target,
            target: self.source,
        }
    }
}

/// Loss-term weights and ablation toggles for the full objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_lsgan: f64,
    pub beta_cycle: f64,
    pub use_contrast: bool,
    pub use_lsgan: bool,
    pub use_cycle: bool,
    pub use_global_disc: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_lsgan: 10.0,
            beta_cycle: 10.0,
            use_contrast: true,
            use_lsgan: true,
            use_cycle: true,
            use_global_disc: true,
        }
    }
}

/// Named loss configurations used for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    ContrastAlone,
    /// Contrast plus the least-squares real/fake classification term.
    ContrastClassify,
    ContrastCycle,
    NoGlobalDisc,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::ContrastAlone,
        Ablation::ContrastClassify,
        Ablation::ContrastCycle,
        Ablation::NoGlobalDisc,
    ];

    pub fn weights(self) -> LossWeights {
        let base = LossWeights::default();
        match self {
            Ablation::Full => base,
            Ablation::ContrastAlone => LossWeights {
                use_lsgan: false,
                use_cycle: false,
                use_global_disc: false,
                ..base
            },
            Ablation::ContrastClassify => LossWeights {
                use_cycle: false,
                use_global_disc: false,
                ..base
            },
            Ablation::ContrastCycle => LossWeights {
                use_lsgan: false,
                use_global_disc: false,
                ..base
            },
            Ablation::NoGlobalDisc => LossWeights {
                use_global_disc: false,
                ..base
            },
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !self.use_contrast && !self.use_lsgan {
            return Err(Error::Config(
                "at least one of the contrast and LSGAN terms must be enabled".into(),
            ));
        }
        for (name, w) in [("lambda_lsgan", self.lambda_lsgan), ("beta_cycle", self.beta_cycle)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }

    /// Whether the global image discriminator takes part in training.
    pub fn global_disc_active(&self) -> bool {
        self.use_global_disc && self.use_lsgan
    }
}

/// An image with an optional object mask and its category.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pixels: Tensor,
    mask: Option<Tensor>,
    category: SemanticCategory,
}

impl ImageSample {
    /// Builds a sample, checking the pixel range and mask contract.
    pub fn new(pixels: Tensor, mask: Option<Tensor>, category: SemanticCategory) -> Result<Self> {
        let (h, w) = image_hw(&pixels)?;
        let flat = pixels.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        if let Some(bad) = flat.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!("pixel value {bad} outside [-1, 1]")));
        }
        if let Some(m) = &mask {
            check_binary_mask(m, h, w)?;
        }
        Ok(Self { pixels, mask, category })
    }

    /// Builds a sample from tensors already known to satisfy the invariants,
    /// e.g. the output of the compositing pipeline.
    pub(crate) fn from_parts(pixels: Tensor, mask: Option<Tensor>, category: SemanticCategory) -> Self {
        Self { pixels, mask, category }
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn mask(&self) -> Option<&Tensor> {
        self.mask.as_ref()
    }

    pub fn category(&self) -> SemanticCategory {
        self.category
    }

    pub fn height(&self) -> usize {
        self.pixels.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.dims()[1]
    }

    /// The mask, or an all-ones mask when the sample has none (whole-image mode).
    pub fn mask_or_full(&self) -> Result<Tensor> {
        match &self.mask {
            Some(m) => Ok(m.clone()),
            None => Ok(Tensor::ones(
                (self.height(), self.width()),
                self.pixels.dtype(),
                self.pixels.device(),
            )?),
        }
    }

    pub fn with_mask(mut self, mask: Option<Tensor>) -> Self {
        self.mask = mask;
        self
    }

    pub fn detach(&self) -> Self {
        Self {
            pixels: self.pixels.detach(),
            mask: self.mask.clone(),
            category: self.category,
        }
    }
}

/// `(height, width)` of a `(height, width, 3)` image tensor.
pub fn image_hw(t: &Tensor) -> Result<(usize, usize)> {
    match t.dims() {
        [h, w, 3] => Ok((*h, *w)),
        dims => Err(Error::Shape(format!(
            "expected a (height, width, 3) image, got {dims:?}"
        ))),
    }
}

/// Maps raw 8-bit intensities in `[0, 255]` to `[-1, 1]`.
pub fn normalize_image(raw: &Tensor) -> Result<Tensor> {
    image_hw(raw)?;
    Ok(raw.affine(1.0 / 127.5, -1.0)?)
}

/// Inverse of [`normalize_image`].
pub fn denormalize_image(normalized: &Tensor) -> Result<Tensor> {
    image_hw(normalized)?;
    Ok(((normalized + 1.0)? * 127.5)?)
}

/// Checks a mask's shape and binarizes it at [`MASK_THRESHOLD`].
pub fn validate_mask(mask: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    if mask.dims() != [height, width] {
        return Err(Error::Shape(format!(
            "mask shape {:?} does not match image {height}x{width}",
            mask.dims()
        )));
    }
    let binary = mask.ge(MASK_THRESHOLD)?.to_dtype(mask.dtype())?;
    let positives = binary.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if positives == 0.0 {
        return Err(Error::EmptyMask("mask has no positive pixels".into()));
    }
    Ok(binary)
}

fn check_binary_mask(mask: &Tensor, height: usize, width: usize) -> Result<()> {
    if mask.dims() != [height, width] {
        return Err(Error::Shape(format!(
            "mask shape {:?} does not match image {height}x{width}",
            mask.dims()
        )));
    }
    let flat = mask.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if flat.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Range("mask entries must be exactly 0 or 1".into()));
    }
    Ok(())
}

/// Number of positive pixels in a binary mask.
pub fn mask_area(mask: &Tensor) -> Result<f64> {
    Ok(mask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn filled(h: usize, w: usize, v: f32) -> Tensor {
        Tensor::full(v, (h, w, 3), &Device::Cpu).unwrap()
    }

    fn values(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        assert!(values(&normalize_image(&filled(2, 3, 0.0)).unwrap())
            .iter()
            .all(|&v| v == -1.0));
        assert!(values(&normalize_image(&filled(2, 3, 255.0)).unwrap())
            .iter()
            .all(|&v| v == 1.0));
        assert!(values(&normalize_image(&filled(2, 3, 127.5)).unwrap())
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_rejects_wrong_channel_count() {
        let raw = Tensor::zeros((4, 4, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(normalize_image(&raw), Err(Error::Shape(_))));
        let raw = Tensor::zeros((4, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(normalize_image(&raw), Err(Error::Shape(_))));
    }

    #[test]
    fn normalize_round_trips_every_byte_value() {
        let raw: Vec<f32> = (0..=255).flat_map(|v| [v as f32; 3]).collect();
        let raw = Tensor::from_vec(raw, (16, 16, 3), &Device::Cpu).unwrap();
        let back = denormalize_image(&normalize_image(&raw).unwrap()).unwrap();
        for (a, b) in values(&raw).iter().zip(values(&back)) {
            assert!((a - b).abs() <= f32::EPSILON * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn validate_mask_examples() {
        let dev = Device::Cpu;
        let ones = Tensor::ones((4, 4), DType::F32, &dev).unwrap();
        let v = validate_mask(&ones, 4, 4).unwrap();
        assert_eq!(values2(&v), vec![1.0; 16]);

        let mut data = vec![0.0f32; 16];
        data[5] = 0.7;
        data[6] = 0.3;
        let m = Tensor::from_vec(data, (4, 4), &dev).unwrap();
        let v = values2(&validate_mask(&m, 4, 4).unwrap());
        assert_eq!(v[5], 1.0);
        assert_eq!(v[6], 0.0);

        let zeros = Tensor::zeros((4, 4), DType::F32, &dev).unwrap();
        assert!(matches!(validate_mask(&zeros, 4, 4), Err(Error::EmptyMask(_))));
        assert!(matches!(validate_mask(&ones, 4, 5), Err(Error::Shape(_))));
    }

    fn values2(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
    }

    #[test]
    fn one_hot_examples() {
        let c0 = SemanticCategory::new(0, 3).unwrap();
        let c2 = SemanticCategory::new(2, 3).unwrap();
        assert_eq!(one_hot(c0, 3).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(one_hot(c2, 3).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(matches!(SemanticCategory::new(3, 3), Err(Error::Range(_))));
        let c5 = SemanticCategory::new(3, 5).unwrap();
        assert!(matches!(one_hot(c5, 3), Err(Error::Range(_))));
    }

    #[test]
    fn one_hot_dot_product_is_kronecker_delta() {
        for a in 0..4 {
            for b in 0..4 {
                let va = SemanticCategory::new(a, 4).unwrap().one_hot();
                let vb = SemanticCategory::new(b, 4).unwrap().one_hot();
                let dot: f32 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
                assert_eq!(dot, if a == b { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn domain_pair_requires_distinct_categories() {
        let a = SemanticCategory::new(1, 2).unwrap();
        assert!(matches!(DomainPair::new(a, a), Err(Error::Config(_))));
        let b = SemanticCategory::new(0, 2).unwrap();
        let p = DomainPair::new(a, b).unwrap();
        assert_eq!(p.reversed().source(), b);
    }

    #[test]
    fn loss_weights_need_contrast_or_lsgan() {
        let w = LossWeights {
            use_contrast: false,
            use_lsgan: false,
            ..LossWeights::default()
        };
        assert!(matches!(w.validate(), Err(Error::Config(_))));
        for a in Ablation::ALL {
            a.weights().validate().unwrap();
        }
    }

    #[test]
    fn image_sample_checks_invariants() {
        let dev = Device::Cpu;
        let cat = SemanticCategory::new(0, 2).unwrap();
        let px = filled(4, 4, 0.5);
        let ok_mask = Tensor::ones((4, 4), DType::F32, &dev).unwrap();
        assert!(ImageSample::new(px.clone(), Some(ok_mask), cat).is_ok());
        let bad_mask = Tensor::full(0.5f32, (4, 4), &dev).unwrap();
        assert!(ImageSample::new(px.clone(), Some(bad_mask), cat).is_err());
        let wrong = Tensor::ones((3, 4), DType::F32, &dev).unwrap();
        assert!(matches!(ImageSample::new(px, Some(wrong), cat), Err(Error::Shape(_))));
        assert!(matches!(
            ImageSample::new(filled(4, 4, 1.5), None, cat),
            Err(Error::Range(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn validate_mask_is_idempotent(data in proptest::collection::vec(0.0f32..1.0, 36)) {
            let dev = Device::Cpu;
            let mut data = data;
            data[0] = 1.0;
            let m = Tensor::from_vec(data, (6, 6), &dev).unwrap();
            let once = validate_mask(&m, 6, 6).unwrap();
            let twice = validate_mask(&once, 6, 6).unwrap();
            proptest::prop_assert_eq!(values2(&once), values2(&twice));
        }
    }
}
