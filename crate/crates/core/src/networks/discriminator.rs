use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::layers::{instance_norm, join, leaky_relu, to_nchw, Conv2d, ParamInit, Parameters};
use crate::domain::{image_hw, SemanticCategory};
use crate::error::{Error, Result};

/// Patch discriminator shape. Every stride-2 stage halves the resolution, so
/// the score grid is the input size divided by `2^n_downsample`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorSpec {
    pub base_channels: usize,
    pub n_downsample: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            base_channels: 32,
            n_downsample: 3,
        }
    }
}

impl DiscriminatorSpec {
    pub fn downsampling(&self) -> usize {
        1 << self.n_downsample
    }

    /// Channel count of the last feature map, which is also the length of
    /// the pooled feature vector.
    pub fn feature_dim(&self) -> usize {
        self.base_channels << self.n_downsample
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.n_downsample == 0 {
            return Err(Error::Config(
                "discriminator needs positive channels and at least one stride-2 stage".into(),
            ));
        }
        Ok(())
    }
}

/// Scores and pooled features for a batch.
#[derive(Debug, Clone)]
pub struct PatchOutput {
    /// `(n, h / s, w / s)` realism scores.
    pub scores: Tensor,
    /// `(n, feature_dim)` global-average-pooled last feature map.
    pub features: Tensor,
}

/// Fully convolutional patch discriminator: stride-2 stages with leaky ReLU
/// (instance norm after the first), one stride-1 feature stage, and a
/// one-channel score head.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    spec: DiscriminatorSpec,
    stages: Vec<Conv2d>,
    feature: Conv2d,
    head: Conv2d,
}

impl PatchDiscriminator {
    pub fn new(spec: DiscriminatorSpec, init: &mut ParamInit) -> Result<Self> {
        spec.validate()?;
        let b = spec.base_channels;
        let mut stages = Vec::with_capacity(spec.n_downsample);
        let mut ch = 3;
        for i in 0..spec.n_downsample {
            let out = b << i;
            stages.push(Conv2d::new(init, ch, out, 4, 2, 1)?);
            ch = out;
        }
        let feature = Conv2d::new(init, ch, spec.feature_dim(), 3, 1, 1)?;
        let head = Conv2d::new(init, spec.feature_dim(), 1, 3, 1, 1)?;
        Ok(Self {
            spec,
            stages,
            feature,
            head,
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn score_head(&self) -> &Conv2d {
        &self.head
    }

    /// `(n, h, w, 3)` batch of images.
    pub fn forward_batch(&self, images: &Tensor) -> Result<PatchOutput> {
        let (h, w) = match images.dims() {
            [_, h, w, 3] => (*h, *w),
            dims => {
                return Err(Error::Shape(format!(
                    "discriminator expects (n, h, w, 3), got {dims:?}"
                )))
            }
        };
        let s = self.spec.downsampling();
        if h % s != 0 || w % s != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "discriminator input {h}x{w} must be a multiple of {s}"
            )));
        }
        let mut xs = to_nchw(images)?;
        for (i, conv) in self.stages.iter().enumerate() {
            xs = conv.forward(&xs)?;
            if i > 0 {
                xs = instance_norm(&xs)?;
            }
            xs = leaky_relu(&xs)?;
        }
        let fmap = leaky_relu(&instance_norm(&self.feature.forward(&xs)?)?)?;
        let features = fmap.flatten_from(2)?.mean(2)?;
        let scores = self.head.forward(&fmap)?.squeeze(1)?;
        Ok(PatchOutput { scores, features })
    }

    /// Single `(h, w, 3)` image: `(h / s, w / s)` scores and a `(d,)` feature.
    pub fn forward(&self, image: &Tensor) -> Result<(Tensor, Tensor)> {
        image_hw(image)?;
        let out = self.forward_batch(&image.unsqueeze(0)?)?;
        Ok((out.scores.squeeze(0)?, out.features.squeeze(0)?))
    }
}

impl Parameters for PatchDiscriminator {
    fn visit(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        for (i, c) in self.stages.iter().enumerate() {
            c.visit(&join(prefix, &format!("stage{i}")), out);
        }
        self.feature.visit(&join(prefix, "feature"), out);
        self.head.visit(&join(prefix, "head"), out);
    }
}

/// One local discriminator per category plus an optional global one.
#[derive(Debug, Clone)]
pub struct DiscriminatorBank {
    locals: Vec<PatchDiscriminator>,
    global: Option<PatchDiscriminator>,
}

impl DiscriminatorBank {
    pub fn new(
        spec: DiscriminatorSpec,
        num_categories: usize,
        with_global: bool,
        init: &mut ParamInit,
    ) -> Result<Self> {
        let locals = (0..num_categories)
            .map(|_| PatchDiscriminator::new(spec, init))
            .collect::<Result<Vec<_>>>()?;
        let global = if with_global {
            Some(PatchDiscriminator::new(spec, init)?)
        } else {
            None
        };
        Ok(Self { locals, global })
    }

    pub fn num_categories(&self) -> usize {
        self.locals.len()
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        self.locals[0].spec()
    }

    pub fn local(&self, category: SemanticCategory) -> Result<&PatchDiscriminator> {
        self.locals.get(category.id()).ok_or_else(|| {
            Error::Range(format!(
                "no local discriminator for category {} (bank has {})",
                category.id(),
                self.locals.len()
            ))
        })
    }

    pub fn locals(&self) -> &[PatchDiscriminator] {
        &self.locals
    }

    pub fn global(&self) -> Result<&PatchDiscriminator> {
        self.global
            .as_ref()
            .ok_or_else(|| Error::Config("global discriminator is disabled".into()))
    }

    pub fn has_global(&self) -> bool {
        self.global.is_some()
    }

    /// Scores and feature vector of `region` under the category's discriminator.
    pub fn local_forward(&self, category: SemanticCategory, region: &Tensor) -> Result<(Tensor, Tensor)> {
        self.local(category)?.forward(region)
    }

    pub fn global_forward(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.global()?.forward(image)?.0)
    }
}

impl Parameters for DiscriminatorBank {
    fn visit(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        for (i, d) in self.locals.iter().enumerate() {
            d.visit(&join(prefix, &format!("local{i}")), out);
        }
        if let Some(g) = &self.global {
            g.visit(&join(prefix, "global"), out);
        }
    }
}
