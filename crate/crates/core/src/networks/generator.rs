use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::layers::{instance_norm, join, to_nchw, to_nhwc, Conv2d, ConvTranspose2d, Linear, ParamInit, Parameters};
use crate::domain::{one_hot, SemanticCategory};
use crate::error::{Error, Result};
use crate::maskpipe::RegionGenerator;

/// Number of stride-2 stages on each side of the bottleneck.
const STAGES: usize = 3;

/// Shape of the shared conditional generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    /// Side of the square object-region canvas.
    pub region_size: usize,
    pub base_channels: usize,
    pub n_residual_blocks: usize,
    pub category_embed_dim: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            region_size: 64,
            base_channels: 32,
            n_residual_blocks: 4,
            category_embed_dim: 64,
        }
    }
}

impl GeneratorSpec {
    /// The full-size configuration: 128 px regions, 16x16x512 bottleneck,
    /// six residual blocks.
    pub fn full_scale() -> Self {
        Self {
            region_size: 128,
            base_channels: 64,
            n_residual_blocks: 6,
            category_embed_dim: 64,
        }
    }

    pub fn bottleneck_spatial(&self) -> usize {
        self.region_size >> STAGES
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << STAGES
    }

    pub fn validate(&self) -> Result<()> {
        if self.region_size == 0 || !self.region_size.is_multiple_of(1 << STAGES) {
            return Err(Error::Config(format!(
                "region_size {} must be a positive multiple of {}",
                self.region_size,
                1 << STAGES
            )));
        }
        if self.base_channels == 0 || self.category_embed_dim == 0 {
            return Err(Error::Config("generator channel counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResidualBlock {
    fn new(init: &mut ParamInit, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(init, channels, channels, 3, 1, 1)?,
            conv2: Conv2d::new(init, channels, channels, 3, 1, 1)?,
        })
    }

    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = instance_norm(&self.conv1.forward(xs)?)?.relu()?;
        let ys = instance_norm(&self.conv2.forward(&ys)?)?;
        Ok((xs + ys)?)
    }
}

impl Parameters for ResidualBlock {
    fn visit(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        self.conv1.visit(&join(prefix, "conv1"), out);
        self.conv2.visit(&join(prefix, "conv2"), out);
    }
}

/// Conditional generator `G(region, category)`: an encoder down to the
/// bottleneck, a spatially tiled category embedding concatenated in depth,
/// residual blocks, and a fractionally strided decoder back to the region
/// size with a `tanh` output.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    num_categories: usize,
    stem: Conv2d,
    down: Vec<Conv2d>,
    embed: Linear,
    fuse: Conv2d,
    blocks: Vec<ResidualBlock>,
    up: Vec<ConvTranspose2d>,
    head: Conv2d,
}

impl Generator {
    pub fn new(spec: GeneratorSpec, num_categories: usize, init: &mut ParamInit) -> Result<Self> {
        spec.validate()?;
        if num_categories < 2 {
            return Err(Error::Config("at least two categories are required".into()));
        }
        let b = spec.base_channels;
        let stem = Conv2d::new(init, 3, b, 7, 1, 3)?;
        let down = (0..STAGES)
            .map(|i| Conv2d::new(init, b << i, b << (i + 1), 3, 2, 1))
            .collect::<Result<Vec<_>>>()?;
        let bottleneck = spec.bottleneck_channels();
        // unit-scale embedding so the conditioning is not drowned at init
        let embed = Linear::new(init, num_categories, spec.category_embed_dim, 1.0)?;
        let fuse = Conv2d::new(init, bottleneck + spec.category_embed_dim, bottleneck, 3, 1, 1)?;
        let blocks = (0..spec.n_residual_blocks)
            .map(|_| ResidualBlock::new(init, bottleneck))
            .collect::<Result<Vec<_>>>()?;
        let up = (0..STAGES)
            .map(|i| ConvTranspose2d::upsample2x(init, bottleneck >> i, bottleneck >> (i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let head = Conv2d::new(init, b, 3, 7, 1, 3)?;
        Ok(Self {
            spec,
            num_categories,
            stem,
            down,
            embed,
            fuse,
            blocks,
            up,
            head,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn embedding(&self) -> &Linear {
        &self.embed
    }

    /// Category embedding tiled over a `spatial x spatial` grid, as
    /// `(spatial, spatial, embed_dim)`.
    pub fn embed_category(&self, category: SemanticCategory, spatial: usize) -> Result<Tensor> {
        let maps = self.embedding_maps(category, spatial)?;
        Ok(to_nhwc(&maps)?.squeeze(0)?)
    }

    /// `(1, embed_dim, spatial, spatial)`
    fn embedding_maps(&self, category: SemanticCategory, spatial: usize) -> Result<Tensor> {
        let code = one_hot(category, self.num_categories)?;
        let dev = self.embed.weight().device();
        let dtype = self.embed.weight().dtype();
        let code = Tensor::from_vec(code, (1, self.num_categories), dev)?.to_dtype(dtype)?;
        let e = self.embed.forward(&code)?;
        let dim = self.spec.category_embed_dim;
        Ok(e.reshape((1, dim, 1, 1))?
            .broadcast_as((1, dim, spatial, spatial))?
            .contiguous()?)
    }

    /// `(r, r, 3)` region in `[-1, 1]` to a same-shape region in `[-1, 1]`.
    pub fn forward(&self, region: &Tensor, category: SemanticCategory) -> Result<Tensor> {
        let r = self.spec.region_size;
        if region.dims() != [r, r, 3] {
            return Err(Error::Shape(format!(
                "generator expects a ({r}, {r}, 3) region, got {:?}",
                region.dims()
            )));
        }
        let mut xs = instance_norm(&self.stem.forward(&to_nchw(region)?)?)?.relu()?;
        for conv in &self.down {
            xs = instance_norm(&conv.forward(&xs)?)?.relu()?;
        }
        let cond = self.embedding_maps(category, self.spec.bottleneck_spatial())?;
        let xs = Tensor::cat(&[&xs, &cond], 1)?;
        // no norm here: a per-channel constant is exactly what instance norm
        // removes, and the tiled embedding is constant over space
        let mut xs = self.fuse.forward(&xs)?.relu()?;
        for block in &self.blocks {
            xs = block.forward(&xs)?;
        }
        for conv in &self.up {
            xs = instance_norm(&conv.forward(&xs)?)?.relu()?;
        }
        let ys = self.head.forward(&xs)?.tanh()?;
        Ok(to_nhwc(&ys)?.squeeze(0)?)
    }
}

impl RegionGenerator for Generator {
    fn generate(&self, region: &Tensor, category: SemanticCategory) -> Result<Tensor> {
        self.forward(region, category)
    }
}

impl Parameters for Generator {
    fn visit(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        self.stem.visit(&join(prefix, "stem"), out);
        for (i, c) in self.down.iter().enumerate() {
            c.visit(&join(prefix, &format!("down{i}")), out);
        }
        self.embed.visit(&join(prefix, "embed"), out);
        self.fuse.visit(&join(prefix, "fuse"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), out);
        }
        for (i, c) in self.up.iter().enumerate() {
            c.visit(&join(prefix, &format!("up{i}")), out);
        }
        self.head.visit(&join(prefix, "head"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn small() -> GeneratorSpec {
        GeneratorSpec {
            region_size: 16,
            base_channels: 4,
            n_residual_blocks: 2,
            category_embed_dim: 8,
        }
    }

    fn generator(seed: u64) -> Generator {
        let mut init = ParamInit::new(seed, &Device::Cpu, DType::F32);
        Generator::new(small(), 3, &mut init).unwrap()
    }

    fn region(seed: u64) -> Tensor {
        let mut init = ParamInit::new(seed, &Device::Cpu, DType::F32);
        init.gaussian(&[16, 16, 3], 0.5)
            .unwrap()
            .as_tensor()
            .clamp(-1f32, 1f32)
            .unwrap()
    }

    fn flat(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
    }

    #[test]
    fn spec_geometry() {
        let p = GeneratorSpec::full_scale();
        assert_eq!(p.bottleneck_spatial(), 16);
        assert_eq!(p.bottleneck_channels(), 512);
        let bad = GeneratorSpec {
            region_size: 20,
            ..small()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn embedding_is_tiled_weight_column() {
        let g = generator(1);
        let cat = SemanticCategory::new(2, 3).unwrap();
        let e = g.embed_category(cat, 16).unwrap();
        assert_eq!(e.dims(), &[16, 16, 8]);
        // zero bias at init: the embedding is the weight column of the id
        let col = flat(
            &g.embedding()
                .weight()
                .as_tensor()
                .narrow(1, 2, 1)
                .unwrap()
                .contiguous()
                .unwrap(),
        );
        let v = flat(&e);
        for p in 0..256 {
            assert_eq!(&v[p * 8..p * 8 + 8], col.as_slice());
        }
        let other = flat(&g.embed_category(SemanticCategory::new(0, 3).unwrap(), 1).unwrap());
        assert_ne!(other, col);
        let out_of_range = SemanticCategory::new(4, 5).unwrap();
        assert!(matches!(g.embed_category(out_of_range, 4), Err(Error::Range(_))));
    }

    #[test]
    fn forward_contract() {
        let g = generator(2);
        let x = region(9);
        let c0 = SemanticCategory::new(0, 3).unwrap();
        let c1 = SemanticCategory::new(1, 3).unwrap();
        let a = g.forward(&x, c0).unwrap();
        let b = g.forward(&x, c0).unwrap();
        assert_eq!(a.dims(), &[16, 16, 3]);
        assert_eq!(flat(&a), flat(&b));
        assert!(flat(&a).iter().all(|v| v.abs() <= 1.0));
        let gap: f32 = flat(&a)
            .iter()
            .zip(flat(&g.forward(&x, c1).unwrap()))
            .map(|(p, q)| (p - q).powi(2))
            .sum();
        assert!(gap > 0.0);
        let wrong = Tensor::zeros((8, 8, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(g.forward(&wrong, c0), Err(Error::Shape(_))));
    }

    #[test]
    fn conditioning_reaches_the_output() {
        let g = generator(3);
        let cat = SemanticCategory::new(1, 3).unwrap();
        let out = g.forward(&region(4), cat).unwrap();
        let px = out.get(5).unwrap().get(7).unwrap().get(0).unwrap();
        let grads = px.backward().unwrap();
        let gw = grads.get(g.embedding().weight().as_tensor()).unwrap();
        let mag = gw.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(mag > 0.0);
    }
}
