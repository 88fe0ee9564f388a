//! Mask-conditional manipulation pipeline: bounding box, crop to a fixed
//! region canvas, conditional generation, warp back, masked composite.
//!
//! Resampling is bilinear with zero padding. Coordinates follow the
//! align-corners convention in both directions: the first and last region
//! pixel centers land on the first and last bbox pixel centers. Because the
//! crop is an axis-aligned affine map, the sampling grid is separable and both
//! directions are applied as a pair of interpolation matrices, so gradients
//! reach the image (crop) and the region (warp back) through plain matmuls.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::domain::{image_hw, ImageSample, SemanticCategory};
use crate::error::{Error, Result};

/// Anything that maps a `(r, r, 3)` region to a same-shape region conditioned
/// on a target category.
pub trait RegionGenerator {
    fn generate(&self, region: &Tensor, category: SemanticCategory) -> Result<Tensor>;
}

/// Returns the region unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityGenerator;

impl RegionGenerator for IdentityGenerator {
    fn generate(&self, region: &Tensor, _category: SemanticCategory) -> Result<Tensor> {
        Ok(region.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropOptions {
    /// Fraction of the tight box extent added on each side. A positive ratio
    /// always adds at least one pixel.
    pub margin_ratio: f64,
    /// Grow the shorter side so the box is square before resampling.
    pub square: bool,
}

impl Default for CropOptions {
    fn default() -> Self {
        Self {
            margin_ratio: 0.05,
            square: false,
        }
    }
}

/// Row/column box in pixel indices, end-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.row_max - self.row_min
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.row_min <= other.row_min
            && self.col_min <= other.col_min
            && self.row_max >= other.row_max
            && self.col_max >= other.col_max
    }
}

/// Invertible map between a bbox of an `(h, w)` image and a square region canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    bbox: BBox,
    source_size: (usize, usize),
    target_size: usize,
}

impl CropTransform {
    pub fn new(bbox: BBox, source_size: (usize, usize), target_size: usize) -> Result<Self> {
        let (h, w) = source_size;
        if target_size < 2 {
            return Err(Error::Config(format!(
                "region size must be at least 2, got {target_size}"
            )));
        }
        if h < 2 || w < 2 {
            return Err(Error::Range(format!("image {h}x{w} is too small to crop")));
        }
        if bbox.row_min >= bbox.row_max || bbox.col_min >= bbox.col_max || bbox.row_max > h || bbox.col_max > w {
            return Err(Error::Range(format!("bbox {bbox:?} is not inside a {h}x{w} image")));
        }
        if bbox.height() < 2 || bbox.width() < 2 {
            return Err(Error::Range(format!(
                "bbox {bbox:?} must span at least two pixels per axis"
            )));
        }
        Ok(Self {
            bbox,
            source_size,
            target_size,
        })
    }

    /// Bbox covering the whole image.
    pub fn full_frame(source_size: (usize, usize), target_size: usize) -> Result<Self> {
        let bbox = BBox {
            row_min: 0,
            col_min: 0,
            row_max: source_size.0,
            col_max: source_size.1,
        };
        Self::new(bbox, source_size, target_size)
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn source_size(&self) -> (usize, usize) {
        self.source_size
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    /// Normalized 2x3 affine (x row first, like a spatial-transformer theta)
    /// taking region coordinates in `[-1, 1]` to image coordinates in `[-1, 1]`.
    pub fn affine(&self) -> [[f64; 3]; 2] {
        let (h, w) = self.source_size;
        let axis = |lo: usize, hi: usize, n: usize| {
            let n1 = (n - 1) as f64;
            let span = (hi - 1 - lo) as f64;
            let scale = span / n1;
            let shift = (lo as f64 + span / 2.0) * 2.0 / n1 - 1.0;
            (scale, shift)
        };
        let (sx, tx) = axis(self.bbox.col_min, self.bbox.col_max, w);
        let (sy, ty) = axis(self.bbox.row_min, self.bbox.row_max, h);
        [[sx, 0.0, tx], [0.0, sy, ty]]
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let hw = image_hw(image)?;
        if hw != self.source_size {
            return Err(Error::Range(format!(
                "transform built for {:?}, image is {hw:?}",
                self.source_size
            )));
        }
        Ok(())
    }
}

/// Tight bounding box of the positive pixels, expanded by the margin.
pub fn mask_bbox(mask: &Tensor, region_size: usize, opts: &CropOptions) -> Result<CropTransform> {
    let (h, w) = match mask.dims() {
        [h, w] => (*h, *w),
        dims => return Err(Error::Shape(format!("mask must be rank-2, got {dims:?}"))),
    };
    let data = mask.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mut rows = (usize::MAX, 0usize);
    let mut cols = (usize::MAX, 0usize);
    for (i, v) in data.iter().enumerate() {
        if *v >= 0.5 {
            let (r, c) = (i / w, i % w);
            rows = (rows.0.min(r), rows.1.max(r + 1));
            cols = (cols.0.min(c), cols.1.max(c + 1));
        }
    }
    if rows.0 == usize::MAX {
        return Err(Error::EmptyMask("mask has no positive pixels".into()));
    }
    let expand = |(lo, hi): (usize, usize), n: usize| {
        let extent = hi - lo;
        let mut m = (opts.margin_ratio * extent as f64).round() as usize;
        if opts.margin_ratio > 0.0 {
            m = m.max(1);
        }
        (lo.saturating_sub(m), (hi + m).min(n))
    };
    let mut rows = expand(rows, h);
    let mut cols = expand(cols, w);
    if opts.square {
        let side = (rows.1 - rows.0).max(cols.1 - cols.0);
        rows = grow_to(rows, side, h);
        cols = grow_to(cols, side, w);
    }
    rows = grow_to(rows, 2, h);
    cols = grow_to(cols, 2, w);
    let bbox = BBox {
        row_min: rows.0,
        col_min: cols.0,
        row_max: rows.1,
        col_max: cols.1,
    };
    CropTransform::new(bbox, (h, w), region_size)
}

/// Widens `[lo, hi)` to at least `len` (clipped to `[0, n)`), splitting the
/// growth around the current interval.
fn grow_to((lo, hi): (usize, usize), len: usize, n: usize) -> (usize, usize) {
    let len = len.min(n);
    let extent = hi - lo;
    if extent >= len {
        return (lo, hi);
    }
    let extra = len - extent;
    let before = (extra / 2).min(lo);
    let mut lo = lo - before;
    let mut hi = (hi + extra - before).min(n);
    if hi - lo < len {
        lo = hi.saturating_sub(len);
        hi = lo + len;
    }
    (lo, hi)
}

/// `(out, n)` matrix sampling `n` source pixels at `out` positions. Positions
/// outside `[0, n - 1]` contribute zero.
fn interpolation_matrix(positions: &[Option<f64>], n: usize) -> Vec<f64> {
    let mut m = vec![0.0; positions.len() * n];
    for (i, p) in positions.iter().enumerate() {
        let Some(p) = *p else { continue };
        let lo = p.floor();
        let frac = p - lo;
        let lo = lo as isize;
        for (idx, wgt) in [(lo, 1.0 - frac), (lo + 1, frac)] {
            if wgt != 0.0 && idx >= 0 && (idx as usize) < n {
                m[i * n + idx as usize] += wgt;
            }
        }
    }
    m
}

fn crop_positions(lo: usize, hi: usize, out: usize) -> Vec<Option<f64>> {
    let scale = (hi - 1 - lo) as f64 / (out - 1) as f64;
    (0..out).map(|i| Some(lo as f64 + i as f64 * scale)).collect()
}

fn warp_positions(lo: usize, hi: usize, n: usize, region: usize) -> Vec<Option<f64>> {
    let scale = (region - 1) as f64 / (hi - 1 - lo) as f64;
    (0..n)
        .map(|p| (lo..hi).contains(&p).then(|| (p - lo) as f64 * scale))
        .collect()
}

fn matrix(data: Vec<f64>, rows: usize, cols: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, (rows, cols), device)?.to_dtype(dtype)?)
}

/// `out[i, j, c] = sum_{r, q} left[i, r] * right[j, q] * image[r, q, c]`.
fn separable_resample(image: &Tensor, left: &Tensor, right: &Tensor) -> Result<Tensor> {
    let (h, w) = image_hw(image)?;
    let out_h = left.dims()[0];
    let out_w = right.dims()[0];
    let rows = left.matmul(&image.reshape((h, w * 3))?)?.reshape((out_h, w, 3))?;
    let right = right.unsqueeze(0)?.broadcast_as((out_h, out_w, w))?.contiguous()?;
    Ok(right.matmul(&rows)?)
}

/// Bilinear crop of the bbox onto the `(r, r, 3)` region canvas.
pub fn crop_region(image: &Tensor, t: &CropTransform) -> Result<Tensor> {
    t.check_image(image)?;
    let (h, w) = t.source_size;
    let r = t.target_size;
    let b = t.bbox;
    let (dtype, dev) = (image.dtype(), image.device());
    let left = matrix(
        interpolation_matrix(&crop_positions(b.row_min, b.row_max, r), h),
        r,
        h,
        dtype,
        dev,
    )?;
    let right = matrix(
        interpolation_matrix(&crop_positions(b.col_min, b.col_max, r), w),
        r,
        w,
        dtype,
        dev,
    )?;
    separable_resample(image, &left, &right)
}

/// Places a region back into its bbox on a zero canvas of the source size.
/// Every pixel outside the bbox is exactly zero.
pub fn warp_back(region: &Tensor, t: &CropTransform) -> Result<Tensor> {
    let r = t.target_size;
    if region.dims() != [r, r, 3] {
        return Err(Error::Shape(format!(
            "region shape {:?} does not match the {r}x{r} canvas",
            region.dims()
        )));
    }
    let (h, w) = t.source_size;
    let b = t.bbox;
    let (dtype, dev) = (region.dtype(), region.device());
    let left = matrix(
        interpolation_matrix(&warp_positions(b.row_min, b.row_max, h, r), r),
        h,
        r,
        dtype,
        dev,
    )?;
    let right = matrix(
        interpolation_matrix(&warp_positions(b.col_min, b.col_max, w, r), r),
        w,
        r,
        dtype,
        dev,
    )?;
    separable_resample(region, &left, &right)
}

/// `input` where the mask is 0, `generated` where it is 1. Background pixels
/// are selected, not blended, so they are bit-identical to the input.
pub fn composite(input: &Tensor, generated: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (h, w) = image_hw(input)?;
    if generated.dims() != input.dims() {
        return Err(Error::Shape(format!(
            "generated image {:?} differs from input {:?}",
            generated.dims(),
            input.dims()
        )));
    }
    if mask.dims() != [h, w] {
        return Err(Error::Shape(format!(
            "mask {:?} does not match image {h}x{w}",
            mask.dims()
        )));
    }
    let select = mask.ge(0.5)?.unsqueeze(2)?.broadcast_as((h, w, 3))?;
    Ok(select.where_cond(generated, input)?)
}

/// Output of one pass through the pipeline, with the crop that produced it.
#[derive(Debug, Clone)]
pub struct Manipulation {
    pub output: ImageSample,
    pub transform: CropTransform,
    /// Generator output on the region canvas, before warping back.
    pub generated_region: Tensor,
}

/// Crops the masked object, regenerates it toward `target`, warps it back
/// and composites it over the untouched background.
pub fn manipulate<G: RegionGenerator + ?Sized>(
    image: &ImageSample,
    target: SemanticCategory,
    generator: &G,
    region_size: usize,
    opts: &CropOptions,
) -> Result<Manipulation> {
    let mask = match image.mask() {
        Some(m) => m.clone(),
        None => image.mask_or_full()?,
    };
    let transform = mask_bbox(&mask, region_size, opts)?;
    let region = crop_region(image.pixels(), &transform)?;
    let generated_region = generator.generate(&region, target)?;
    let placed = warp_back(&generated_region, &transform)?;
    let pixels = composite(image.pixels(), &placed, &mask)?;
    Ok(Manipulation {
        output: ImageSample::from_parts(pixels, image.mask().cloned(), target),
        transform,
        generated_region,
    })
}
