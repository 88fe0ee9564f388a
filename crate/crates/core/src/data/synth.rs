//! Synthetic two-domain shape benchmark with exact masks.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{CategoryEntry, DatasetManifest, MaskRef, SampleEntry, Split, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::rng::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Circle,
    Square,
}

impl ShapeFamily {
    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Circle => "circle",
            ShapeFamily::Square => "square",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Flat,
    Textured,
}

/// Flat background colour, dark enough to sit far from any object colour.
pub const BACKGROUND_RGB: [u8; 3] = [36, 36, 52];
const TEXTURE_AMPLITUDE: i32 = 14;
const OBJECT_MIN: u8 = 150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub image_size: usize,
    /// Family of domain 0 and domain 1; the category ids follow this order.
    pub shapes: [ShapeFamily; 2],
    pub count_per_domain: usize,
    pub test_count_per_domain: usize,
    pub seed: u64,
    pub background: Background,
    /// Range of the shape's diameter or side, in pixels.
    pub min_extent: usize,
    pub max_extent: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            shapes: [ShapeFamily::Circle, ShapeFamily::Square],
            count_per_domain: 200,
            test_count_per_domain: 50,
            seed: 7,
            background: Background::Flat,
            min_extent: 22,
            max_extent: 40,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shapes[0] == self.shapes[1] {
            return Err(Error::Config("the two domains need different shape families".into()));
        }
        if self.min_extent < 2 || self.min_extent > self.max_extent {
            return Err(Error::Config(format!(
                "shape extent range [{}, {}] is invalid",
                self.min_extent, self.max_extent
            )));
        }
        if self.max_extent + 2 > self.image_size {
            return Err(Error::Config(format!(
                "shape extent {} does not fit a {}x{} canvas with a one-pixel border",
                self.max_extent, self.image_size, self.image_size
            )));
        }
        if self.count_per_domain == 0 {
            return Err(Error::Config("count_per_domain must be positive".into()));
        }
        Ok(())
    }
}

/// One rendered image and its exact object mask.
pub struct Rendered {
    pub image: RgbImage,
    pub mask: GrayImage,
}

/// Renders one sample. The mask is the exact set of object pixels.
pub fn render<R: Rng + ?Sized>(spec: &SyntheticSpec, family: ShapeFamily, rng: &mut R) -> Rendered {
    let n = spec.image_size;
    let extent = rng.random_range(spec.min_extent..=spec.max_extent);
    let color = Rgb([
        rng.random_range(OBJECT_MIN..=255),
        rng.random_range(OBJECT_MIN..=255),
        rng.random_range(OBJECT_MIN..=255),
    ]);
    let inside: Box<dyn Fn(usize, usize) -> bool> = match family {
        ShapeFamily::Circle => {
            let r = extent as f64 / 2.0;
            let cx = rng.random_range(r + 1.0..=n as f64 - r - 1.0);
            let cy = rng.random_range(r + 1.0..=n as f64 - r - 1.0);
            Box::new(move |x, y| {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                dx * dx + dy * dy <= r * r
            })
        }
        ShapeFamily::Square => {
            let x0 = rng.random_range(1..=n - extent - 1);
            let y0 = rng.random_range(1..=n - extent - 1);
            Box::new(move |x, y| (x0..x0 + extent).contains(&x) && (y0..y0 + extent).contains(&y))
        }
    };
    let mut image = RgbImage::new(n as u32, n as u32);
    let mut mask = GrayImage::new(n as u32, n as u32);
    for y in 0..n {
        for x in 0..n {
            let bg = match spec.background {
                Background::Flat => Rgb(BACKGROUND_RGB),
                Background::Textured => {
                    let d = rng.random_range(-TEXTURE_AMPLITUDE..=TEXTURE_AMPLITUDE);
                    Rgb(BACKGROUND_RGB.map(|c| (c as i32 + d).clamp(0, 255) as u8))
                }
            };
            let on = inside(x, y);
            image.put_pixel(x as u32, y as u32, if on { color } else { bg });
            mask.put_pixel(x as u32, y as u32, Luma([if on { 255 } else { 0 }]));
        }
    }
    Rendered { image, mask }
}

/// Manifests written by [`synth_dataset`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
}

/// Renders the benchmark under `out`: `train/` and `test/` image folders and
/// the `train.json` / `test.json` manifests.
pub fn synth_dataset(spec: &SyntheticSpec, out: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    let categories: Vec<CategoryEntry> = spec
        .shapes
        .iter()
        .enumerate()
        .map(|(id, f)| CategoryEntry {
            name: f.name().to_string(),
            id,
        })
        .collect();
    let mut manifests = Vec::new();
    for (split_tag, split, count) in [
        (0u64, Split::Train, spec.count_per_domain),
        (1u64, Split::Test, spec.test_count_per_domain),
    ] {
        let dir_name = if split == Split::Train { "train" } else { "test" };
        let dir = out.join(dir_name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut samples = Vec::new();
        for (domain, family) in spec.shapes.iter().enumerate() {
            for i in 0..count {
                let mut rng = derived_rng(spec.seed, &[split_tag, domain as u64, i as u64]);
                let r = render(spec, *family, &mut rng);
                let stem = format!("{}_{i:04}", family.name());
                let img_rel = PathBuf::from(dir_name).join(format!("{stem}.png"));
                let mask_rel = PathBuf::from(dir_name).join(format!("{stem}_mask.png"));
                let img_path = out.join(&img_rel);
                let mask_path = out.join(&mask_rel);
                r.image.save(&img_path).map_err(|e| Error::image(&img_path, e))?;
                r.mask.save(&mask_path).map_err(|e| Error::image(&mask_path, e))?;
                samples.push(SampleEntry {
                    image: img_rel,
                    category: domain,
                    mask: Some(MaskRef::One(mask_rel)),
                });
            }
        }
        let manifest = DatasetManifest {
            schema_version: SCHEMA_VERSION,
            split,
            categories: categories.clone(),
            samples,
            root: out.to_path_buf(),
        };
        let path = out.join(format!("{dir_name}.json"));
        manifest.save(&path)?;
        manifests.push((manifest, path));
    }
    let (test, test_path) = manifests.pop().expect("two splits");
    let (train, train_path) = manifests.pop().expect("two splits");
    Ok(SynthOutput {
        train,
        test,
        train_path,
        test_path,
    })
}
