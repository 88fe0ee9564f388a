use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::imageops::FilterType;
use image::{GrayImage, ImageReader, RgbImage};

use super::manifest::{DatasetManifest, SampleEntry};
use crate::domain::{denormalize_image, image_hw, normalize_image, validate_mask, ImageSample};
use crate::error::{Error, Result};

fn decode(path: &Path) -> Result<image::DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e))
}

/// `(size, size, 3)` tensor in `[-1, 1]` from an 8-bit RGB image.
pub fn rgb_to_tensor(img: &RgbImage, size: usize) -> Result<Tensor> {
    let img = if img.dimensions() == (size as u32, size as u32) {
        img.clone()
    } else {
        image::imageops::resize(img, size as u32, size as u32, FilterType::Triangle)
    };
    let raw: Vec<f32> = img.into_raw().into_iter().map(f32::from).collect();
    normalize_image(&Tensor::from_vec(raw, (size, size, 3), &Device::Cpu)?)
}

/// Binary `(size, size)` mask from a grayscale image, thresholded at half
/// intensity after a nearest-neighbour resize.
pub fn gray_to_mask(img: &GrayImage, size: usize) -> Result<Tensor> {
    let img = if img.dimensions() == (size as u32, size as u32) {
        img.clone()
    } else {
        image::imageops::resize(img, size as u32, size as u32, FilterType::Nearest)
    };
    let raw: Vec<f32> = img
        .into_raw()
        .into_iter()
        .map(|v| if v >= 128 { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(raw, (size, size), &Device::Cpu)?)
}

pub fn load_image(path: &Path, size: usize) -> Result<Tensor> {
    rgb_to_tensor(&decode(path)?.to_rgb8(), size)
}

/// Image and mask at the image's own resolution. The mask must have the
/// image's dimensions.
pub fn load_native(image: &Path, mask: &Path) -> Result<(Tensor, Tensor)> {
    let img = decode(image)?.to_rgb8();
    let (w, h) = img.dimensions();
    let raw: Vec<f32> = img.into_raw().into_iter().map(f32::from).collect();
    let pixels = normalize_image(&Tensor::from_vec(raw, (h as usize, w as usize, 3), &Device::Cpu)?)?;
    let m = decode(mask)?.to_luma8();
    if m.dimensions() != (w, h) {
        return Err(Error::Shape(format!(
            "mask {} is {}x{}, image is {w}x{h}",
            mask.display(),
            m.width(),
            m.height()
        )));
    }
    let raw: Vec<f32> = m
        .into_raw()
        .into_iter()
        .map(|v| if v >= 128 { 1.0 } else { 0.0 })
        .collect();
    let mask_t = Tensor::from_vec(raw, (h as usize, w as usize), &Device::Cpu)?;
    let mask_t = validate_mask(&mask_t, h as usize, w as usize).map_err(|e| match e {
        Error::EmptyMask(_) => Error::EmptyMask(format!("{} has no object pixels", mask.display())),
        other => other,
    })?;
    Ok((pixels, mask_t))
}

/// Loads instance masks and keeps the one with the largest area at native
/// resolution (the first on ties), resized to `size`.
pub fn load_mask<P: AsRef<Path>>(paths: &[P], size: usize) -> Result<Tensor> {
    let mut best: Option<(usize, GrayImage)> = None;
    for p in paths {
        let img = decode(p.as_ref())?.to_luma8();
        let area = img.pixels().filter(|px| px.0[0] >= 128).count();
        if best.as_ref().is_none_or(|(a, _)| area > *a) {
            best = Some((area, img));
        }
    }
    let (_, img) = best.ok_or_else(|| Error::EmptyMask("no mask files given".into()))?;
    gray_to_mask(&img, size)
}

/// Decodes one manifest entry into a validated sample of side `size`.
pub fn load_sample(manifest: &DatasetManifest, entry: &SampleEntry, size: usize) -> Result<ImageSample> {
    let category = manifest.category(entry.category)?;
    let image_path = manifest.resolve(&entry.image);
    let pixels = load_image(&image_path, size)?;
    let mask = match &entry.mask {
        None => None,
        Some(m) => {
            let paths: Vec<_> = m.paths().into_iter().map(|p| manifest.resolve(p)).collect();
            let raw = load_mask(&paths, size)?;
            Some(validate_mask(&raw, size, size).map_err(|e| match e {
                Error::EmptyMask(_) => {
                    Error::EmptyMask(format!("{} after resizing to {size}x{size}", image_path.display()))
                }
                other => other,
            })?)
        }
    };
    ImageSample::new(pixels, mask, category)
}

/// A manifest with all samples decoded. Samples whose mask is empty after
/// resizing are skipped with a warning.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<ImageSample>,
    /// Manifest index of each loaded sample.
    pub source_index: Vec<usize>,
}

impl LoadedDataset {
    pub fn load(manifest: DatasetManifest, size: usize) -> Result<Self> {
        let mut samples = Vec::with_capacity(manifest.samples.len());
        let mut source_index = Vec::with_capacity(manifest.samples.len());
        for (i, entry) in manifest.samples.iter().enumerate() {
            match load_sample(&manifest, entry, size) {
                Ok(s) => {
                    samples.push(s);
                    source_index.push(i);
                }
                Err(Error::EmptyMask(msg)) => log::warn!("skipping sample {i}: empty mask ({msg})"),
                Err(e) => return Err(e),
            }
        }
        Ok(Self {
            manifest,
            samples,
            source_index,
        })
    }

    pub fn of_category(&self, id: usize) -> Vec<&ImageSample> {
        self.samples.iter().filter(|s| s.category().id() == id).collect()
    }
}

pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let (h, w) = image_hw(t)?;
    let raw = denormalize_image(&t.to_dtype(DType::F32)?)?
        .flatten_all()?
        .to_vec1::<f32>()?
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::from_raw(w as u32, h as u32, raw).ok_or_else(|| Error::Shape("image buffer size".into()))
}

/// Writes a `(h, w, 3)` tensor in `[-1, 1]` as an 8-bit image.
pub fn save_image(t: &Tensor, path: &Path) -> Result<()> {
    tensor_to_rgb(t)?.save(path).map_err(|e| Error::image(path, e))
}

pub fn save_mask(mask: &Tensor, path: &Path) -> Result<()> {
    let (h, w) = mask.dims2()?;
    let raw = mask
        .to_dtype(DType::F32)?
        .flatten_all()?
        .to_vec1::<f32>()?
        .into_iter()
        .map(|v| if v >= 0.5 { 255 } else { 0 })
        .collect();
    GrayImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Shape("mask buffer size".into()))?
        .save(path)
        .map_err(|e| Error::image(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{CategoryEntry, MaskRef, Split, SCHEMA_VERSION};
    use image::{Luma, Rgb};
    use std::path::PathBuf;

    fn manifest(root: &Path, samples: Vec<SampleEntry>) -> DatasetManifest {
        DatasetManifest {
            schema_version: SCHEMA_VERSION,
            split: Split::Train,
            categories: vec![
                CategoryEntry {
                    name: "a".into(),
                    id: 0,
                },
                CategoryEntry {
                    name: "b".into(),
                    id: 1,
                },
            ],
            samples,
            root: root.to_path_buf(),
        }
    }

    fn square_mask(side: u32, lo: u32, hi: u32) -> GrayImage {
        GrayImage::from_fn(side, side, |x, y| {
            Luma([if (lo..hi).contains(&x) && (lo..hi).contains(&y) {
                255
            } else {
                0
            }])
        })
    }

    #[test]
    fn resizes_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        RgbImage::from_pixel(256, 256, Rgb([0, 0, 0]))
            .save(dir.path().join("x.png"))
            .unwrap();
        square_mask(256, 64, 192).save(dir.path().join("m.png")).unwrap();
        let entry = SampleEntry {
            image: "x.png".into(),
            category: 1,
            mask: Some(MaskRef::One("m.png".into())),
        };
        let m = manifest(dir.path(), vec![entry.clone()]);
        let s = load_sample(&m, &entry, 128).unwrap();
        assert_eq!(s.pixels().dims(), &[128, 128, 3]);
        let v = s.pixels().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|x| *x == -1.0));
        assert_eq!(crate::domain::mask_area(s.mask().unwrap()).unwrap(), 64.0 * 64.0);
        assert_eq!(s.category().id(), 1);
    }

    #[test]
    fn keeps_largest_instance() {
        let dir = tempfile::tempdir().unwrap();
        // areas 40 (5x8) and 400 (20x20)
        let small = GrayImage::from_fn(32, 32, |x, y| Luma([if x < 5 && y < 8 { 255 } else { 0 }]));
        square_mask(32, 10, 30).save(dir.path().join("big.png")).unwrap();
        small.save(dir.path().join("small.png")).unwrap();
        let paths: Vec<PathBuf> = vec![dir.path().join("small.png"), dir.path().join("big.png")];
        let m = load_mask(&paths, 32).unwrap();
        assert_eq!(crate::domain::mask_area(&m).unwrap(), 400.0);
    }

    #[test]
    fn empty_mask_after_resize_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        RgbImage::new(64, 64).save(dir.path().join("x.png")).unwrap();
        // a single pixel that nearest-neighbour downsampling drops
        GrayImage::from_fn(64, 64, |x, y| Luma([if x == 1 && y == 1 { 255 } else { 0 }]))
            .save(dir.path().join("m.png"))
            .unwrap();
        let entry = SampleEntry {
            image: "x.png".into(),
            category: 0,
            mask: Some(MaskRef::One("m.png".into())),
        };
        let m = manifest(dir.path(), vec![entry.clone()]);
        assert!(matches!(load_sample(&m, &entry, 16), Err(Error::EmptyMask(_))));
        let loaded = LoadedDataset::load(m, 16).unwrap();
        assert!(loaded.samples.is_empty());
    }

    #[test]
    fn undecodable_image_is_typed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.png"), b"\x89PNG garbage").unwrap();
        assert!(matches!(
            load_image(&dir.path().join("x.png"), 8),
            Err(Error::Image { .. })
        ));
        assert!(matches!(
            load_image(&dir.path().join("none.png"), 8),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn save_and_reload_is_lossless_on_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(8, 8, |x, y| Rgb([(x * 30) as u8, (y * 30) as u8, 200]));
        let t = rgb_to_tensor(&img, 8).unwrap();
        let p = dir.path().join("o.png");
        save_image(&t, &p).unwrap();
        assert_eq!(image::open(&p).unwrap().to_rgb8(), img);
    }
}
