//! Optional import of COCO-style instance annotations into per-instance
//! mask PNGs and a dataset manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::Deserialize;

use super::manifest::{CategoryEntry, DatasetManifest, MaskRef, SampleEntry, Split, SCHEMA_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    height: u32,
    width: u32,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
    segmentation: Segmentation,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { counts: RleCounts, size: [u32; 2] },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RleCounts {
    Uncompressed(Vec<u32>),
    Compressed(String),
}

/// Fills polygons given as flat `[x0, y0, x1, y1, ...]` lists, testing pixel
/// centres with the even-odd rule.
pub fn rasterize_polygons(polygons: &[Vec<f64>], height: u32, width: u32) -> GrayImage {
    let mut img = GrayImage::new(width, height);
    for poly in polygons {
        let pts: Vec<(f64, f64)> = poly.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        if pts.len() < 3 {
            continue;
        }
        for y in 0..height {
            let cy = y as f64 + 0.5;
            let mut xs: Vec<f64> = Vec::new();
            for i in 0..pts.len() {
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[(i + 1) % pts.len()];
                if (y0 <= cy) != (y1 <= cy) {
                    xs.push(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            xs.sort_by(f64::total_cmp);
            for span in xs.chunks_exact(2) {
                for x in 0..width {
                    let cx = x as f64 + 0.5;
                    if cx >= span[0] && cx < span[1] {
                        let px = img.get_pixel_mut(x, y);
                        px.0[0] ^= 255;
                    }
                }
            }
        }
    }
    img
}

/// Decodes an uncompressed run-length mask: column-major runs alternating
/// between background and foreground, starting with background.
pub fn decode_rle(counts: &[u32], height: u32, width: u32) -> Result<GrayImage> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != height as u64 * width as u64 {
        return Err(Error::Parse(format!(
            "RLE covers {total} pixels, expected {}",
            height as u64 * width as u64
        )));
    }
    let mut img = GrayImage::new(width, height);
    let mut pos = 0u64;
    for (i, &c) in counts.iter().enumerate() {
        if i % 2 == 1 {
            for k in pos..pos + c as u64 {
                let (x, y) = ((k / height as u64) as u32, (k % height as u64) as u32);
                img.put_pixel(x, y, Luma([255]));
            }
        }
        pos += c as u64;
    }
    Ok(img)
}

/// Writes one mask PNG per instance of the selected categories and a
/// manifest with one sample per (image, category). `categories` maps COCO
/// category ids to the names used in the manifest, in id order.
pub fn import_coco(
    annotations: &Path,
    image_root: &Path,
    categories: &[(u64, String)],
    split: Split,
    out: &Path,
) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(annotations).map_err(|e| Error::io(annotations, e))?;
    let coco: CocoFile =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", annotations.display())))?;
    let images: BTreeMap<u64, &CocoImage> = coco.images.iter().map(|im| (im.id, im)).collect();
    let wanted: BTreeMap<u64, usize> = categories.iter().enumerate().map(|(i, (c, _))| (*c, i)).collect();
    let mask_dir = out.join("masks");
    std::fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;

    let mut groups: BTreeMap<(u64, usize), Vec<PathBuf>> = BTreeMap::new();
    for (k, ann) in coco.annotations.iter().enumerate() {
        let Some(&cat) = wanted.get(&ann.category_id) else {
            continue;
        };
        let im = images
            .get(&ann.image_id)
            .ok_or_else(|| Error::Parse(format!("annotation {k} references unknown image {}", ann.image_id)))?;
        let mask = match &ann.segmentation {
            Segmentation::Polygons(p) => rasterize_polygons(p, im.height, im.width),
            Segmentation::Rle {
                counts: RleCounts::Uncompressed(c),
                size,
            } => decode_rle(c, size[0], size[1])?,
            Segmentation::Rle {
                counts: RleCounts::Compressed(c),
                ..
            } => {
                return Err(Error::Parse(format!(
                    "annotation {k}: compressed RLE ({} bytes) is not supported",
                    c.len()
                )))
            }
        };
        let rel = PathBuf::from("masks").join(format!("{}_{k}.png", im.id));
        let path = out.join(&rel);
        mask.save(&path).map_err(|e| Error::image(&path, e))?;
        groups.entry((im.id, cat)).or_default().push(rel);
    }
    let samples: Vec<SampleEntry> = groups
        .into_iter()
        .map(|((img_id, cat), masks)| SampleEntry {
            image: image_root.join(&images[&img_id].file_name),
            category: cat,
            mask: Some(MaskRef::Instances(masks)),
        })
        .collect();
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        split,
        categories: categories
            .iter()
            .enumerate()
            .map(|(id, (_, name))| CategoryEntry { name: name.clone(), id })
            .collect(),
        samples,
        root: out.to_path_buf(),
    };
    manifest.validate_schema()?;
    Ok(manifest)
}
