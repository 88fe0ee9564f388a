//! Single-file model archives: every parameter tensor in safetensors layout,
//! with a JSON header in the archive metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{ImageSample, SemanticCategory};
use crate::error::{Error, Result};
use crate::maskpipe::CropOptions;
use crate::networks::{DiscriminatorBank, DiscriminatorSpec, Generator, GeneratorSpec, ParamInit, Parameters};

pub const FORMAT_VERSION: u32 = 1;
const HEADER_KEY: &str = "header";

/// Writes `tensors` and a serialized header to one archive.
pub fn write_archive<H: Serialize>(path: &Path, tensors: &BTreeMap<String, Tensor>, header: &H) -> Result<()> {
    let json = serde_json::to_string(header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta = HashMap::from([(HEADER_KEY.to_string(), json)]);
    let contiguous = tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), t.contiguous()?)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    safetensors::serialize_to_file(contiguous, Some(meta), path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Reads an archive written by [`write_archive`].
pub fn read_archive<H: DeserializeOwned>(path: &Path, device: &Device) -> Result<(HashMap<String, Tensor>, H)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(HEADER_KEY))
        .ok_or_else(|| bad("missing header".into()))?;
    let header = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, device).map_err(|e| bad(e.to_string()))?;
    Ok((tensors, header))
}

/// Copies archived values into existing variables, requiring an exact key
/// and shape match.
pub fn assign(vars: &[(String, Var)], tensors: &HashMap<String, Tensor>) -> Result<()> {
    for (name, var) in vars {
        let t = tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.dims() != var.dims() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.dims(),
                var.dims()
            )));
        }
        var.set(&t.to_dtype(var.dtype())?)?;
    }
    Ok(())
}

/// Everything needed to rebuild the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub category_names: Vec<String>,
    pub global_disc: bool,
    /// Translate the full image as one region with an all-ones mask.
    #[serde(default)]
    pub whole_image: bool,
    /// Side length full images are resized to.
    pub image_size: usize,
    #[serde(default)]
    pub crop: CropOptions,
}

impl ModelConfig {
    /// The sample as the model sees it: whole-image models drop the mask so
    /// the full frame is the region.
    pub fn prepare(&self, sample: &ImageSample) -> ImageSample {
        if self.whole_image {
            sample.clone().with_mask(None)
        } else {
            sample.clone()
        }
    }

    pub fn num_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn category(&self, id: usize) -> Result<SemanticCategory> {
        SemanticCategory::new(id, self.num_categories())
            .map_err(|_| Error::Config(format!("category {id} is unknown to this model")))
    }

    pub fn category_by_name(&self, name: &str) -> Result<SemanticCategory> {
        match self.category_names.iter().position(|n| n == name) {
            Some(id) => self.category(id),
            None => name
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("category {name:?} is unknown to this model")))
                .and_then(|id| self.category(id)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.num_categories() < 2 {
            return Err(Error::Config("at least two categories are required".into()));
        }
        let s = self.discriminator.downsampling();
        if self.image_size == 0 || !self.image_size.is_multiple_of(s) {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of {s}",
                self.image_size
            )));
        }
        if !self.generator.region_size.is_multiple_of(s) {
            return Err(Error::Config(format!(
                "region_size {} must be a multiple of the discriminator downsampling {s}",
                self.generator.region_size
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    model: ModelConfig,
}

/// The shared generator together with its discriminators.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    pub generator: Generator,
    pub discriminators: DiscriminatorBank,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut init = ParamInit::new(seed, device, DType::F32);
        let generator = Generator::new(config.generator, config.num_categories(), &mut init)?;
        let discriminators = DiscriminatorBank::new(
            config.discriminator,
            config.num_categories(),
            config.global_disc,
            &mut init,
        )?;
        Ok(Self {
            config,
            generator,
            discriminators,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn generator_vars(&self) -> Vec<(String, Var)> {
        prefixed("generator/", self.generator.named_vars())
    }

    pub fn local_vars(&self, category: SemanticCategory) -> Result<Vec<(String, Var)>> {
        let d = self.discriminators.local(category)?;
        Ok(prefixed(&format!("local_disc/{}/", category.id()), d.named_vars()))
    }

    pub fn global_vars(&self) -> Vec<(String, Var)> {
        match self.discriminators.global() {
            Ok(g) => prefixed("global_disc/", g.named_vars()),
            Err(_) => Vec::new(),
        }
    }

    pub fn discriminator_vars(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for (i, d) in self.discriminators.locals().iter().enumerate() {
            out.extend(prefixed(&format!("local_disc/{i}/"), d.named_vars()));
        }
        out.extend(self.global_vars());
        out
    }

    pub fn all_vars(&self) -> Vec<(String, Var)> {
        let mut out = self.generator_vars();
        out.extend(self.discriminator_vars());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self
            .all_vars()
            .into_iter()
            .map(|(k, v)| (k, v.as_tensor().clone()))
            .collect();
        let header = ModelHeader {
            format_version: FORMAT_VERSION,
            model: self.config.clone(),
        };
        write_archive(path, &tensors, &header)
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let (tensors, header): (_, ModelHeader) = read_archive(path, device)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format version {}",
                path.display(),
                header.format_version
            )));
        }
        let model = Self::new(header.model, 0, device)?;
        assign(&model.all_vars(), &tensors)?;
        Ok(model)
    }
}

fn prefixed(prefix: &str, vars: Vec<(String, Var)>) -> Vec<(String, Var)> {
    vars.into_iter().map(|(k, v)| (format!("{prefix}{k}"), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            generator: GeneratorSpec {
                region_size: 16,
                base_channels: 4,
                n_residual_blocks: 1,
                category_embed_dim: 4,
            },
            discriminator: DiscriminatorSpec {
                base_channels: 4,
                n_downsample: 3,
            },
            category_names: vec!["a".into(), "b".into(), "c".into()],
            global_disc: true,
            whole_image: false,
            image_size: 16,
            crop: CropOptions::default(),
        }
    }

    fn flat(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
    }

    #[test]
    fn key_layout() {
        let m = Model::new(tiny_config(), 1, &Device::Cpu).unwrap();
        let keys: Vec<String> = m.all_vars().into_iter().map(|(k, _)| k).collect();
        assert!(keys.iter().any(|k| k.starts_with("generator/stem.")));
        assert!(keys.iter().any(|k| k.starts_with("local_disc/2/stage0.")));
        assert!(keys.iter().any(|k| k.starts_with("global_disc/head.")));
        let unique: std::collections::BTreeSet<_> = keys.iter().collect();
        assert_eq!(unique.len(), keys.len());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.safetensors");
        let m = Model::new(tiny_config(), 5, &Device::Cpu).unwrap();
        m.save(&path).unwrap();
        let back = Model::load(&path, &Device::Cpu).unwrap();
        assert_eq!(back.config(), m.config());
        for ((ka, va), (kb, vb)) in m.all_vars().iter().zip(back.all_vars().iter()) {
            assert_eq!(ka, kb);
            assert_eq!(flat(va.as_tensor()), flat(vb.as_tensor()));
        }
        let x = Tensor::zeros((16, 16, 3), DType::F32, &Device::Cpu).unwrap();
        let c = SemanticCategory::new(1, 3).unwrap();
        assert_eq!(
            flat(&m.generator.forward(&x, c).unwrap()),
            flat(&back.generator.forward(&x, c).unwrap())
        );
    }

    #[test]
    fn unknown_category_is_config_error() {
        let cfg = tiny_config();
        assert_eq!(cfg.category_by_name("b").unwrap().id(), 1);
        assert_eq!(cfg.category_by_name("2").unwrap().id(), 2);
        assert!(matches!(cfg.category_by_name("zebra"), Err(Error::Config(_))));
        assert!(matches!(cfg.category(3), Err(Error::Config(_))));
    }

    #[test]
    fn corrupt_archive_is_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.safetensors");
        std::fs::write(&path, b"not an archive").unwrap();
        assert!(matches!(Model::load(&path, &Device::Cpu), Err(Error::Checkpoint(_))));
        assert!(matches!(
            Model::load(&dir.path().join("missing"), &Device::Cpu),
            Err(Error::Io { .. })
        ));
    }
}
