//! Attention-guided crop augmentation.
//!
//! Layer ξ's class-token attention over patches becomes a `G×G` saliency
//! grid, is upsampled to image resolution, min-max normalised, thresholded at
//! `θ_c`, and the tightest box around the surviving pixels is cropped and
//! zoomed back to full size.

use serde::{Deserialize, Serialize};

use crate::backbone::AttentionStack;
use crate::error::{Error, Result};
use crate::image::{resample_plane, Image};

/// Admissible crop thresholds, inclusive.
pub const THETA_RANGE: (f64, f64) = (0.4, 0.6);
pub const DEFAULT_THETA: f64 = 0.5;

/// How the K per-head class rows collapse into one map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadAgg {
    #[default]
    Mean,
    Max,
}

impl std::str::FromStr for HeadAgg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(HeadAgg::Mean),
            "max" => Ok(HeadAgg::Max),
            other => Err(Error::Config(format!("head_agg must be mean|max, got {other:?}"))),
        }
    }
}

/// Mid-depth attention layer: 5 at twelve layers, `⌈(L−1)/2⌉` when smaller.
pub fn default_xi(layers: usize) -> usize {
    let mid = layers.saturating_sub(1).div_ceil(2).max(1);
    mid.min(5)
}

pub fn check_theta(theta: f64) -> Result<()> {
    if !(THETA_RANGE.0..=THETA_RANGE.1).contains(&theta) {
        return Err(Error::Config(format!(
            "theta_c {theta} outside [{}, {}]",
            THETA_RANGE.0, THETA_RANGE.1
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub source_layer: usize,
    pub grid_size: usize,
    /// `[G×G]` in patch raster order.
    pub grid: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// `[H×W]`, bilinearly upsampled from `grid`.
    pub upsampled: Vec<f64>,
}

/// Builds `α_ξ` from layer `xi` (1-based) of the stack.
pub fn extract_attention_map(
    stack: &AttentionStack,
    xi: usize,
    agg: HeadAgg,
    height: usize,
    width: usize,
) -> Result<AttentionMap> {
    if xi == 0 || xi > stack.num_layers() {
        return Err(Error::Config(format!(
            "xi {xi} outside 1..={}",
            stack.num_layers()
        )));
    }
    let heads = stack.heads();
    let patches = stack.tokens() - 1;
    let g = (patches as f64).sqrt().round() as usize;
    if g * g != patches {
        return Err(Error::InvalidArgument(format!(
            "{patches} patch tokens do not form a square grid"
        )));
    }
    let mut grid = vec![0.0; patches];
    for h in 0..heads {
        let row = &stack.row(xi - 1, h, 0)[1..];
        for (cell, &v) in grid.iter_mut().zip(row) {
            match agg {
                HeadAgg::Mean => *cell += v,
                HeadAgg::Max => *cell = if h == 0 { v } else { cell.max(v) },
            }
        }
    }
    if agg == HeadAgg::Mean {
        for cell in &mut grid {
            *cell /= heads as f64;
        }
    }
    let upsampled = resample_plane(&grid, g, g, height, width)?;
    Ok(AttentionMap {
        source_layer: xi,
        grid_size: g,
        grid,
        height,
        width,
        upsampled,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Set when the input was constant; `values` is then all zeros.
    pub degenerate: bool,
}

/// `α* = (α − min) / (max − min)`.
pub fn normalize(values: &[f64], height: usize, width: usize) -> Result<NormalizedMap> {
    if values.is_empty() || values.len() != height * width {
        return Err(Error::shape("normalize", &[height, width], &[values.len()]));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(NormalizedMap {
            height,
            width,
            values: vec![0.0; values.len()],
            degenerate: true,
        });
    }
    let span = max - min;
    Ok(NormalizedMap {
        height,
        width,
        values: values.iter().map(|v| (v - min) / span).collect(),
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CropMask {
    pub height: usize,
    pub width: usize,
    /// 0/1 per pixel, row-major.
    pub bits: Vec<u8>,
}

impl CropMask {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] == 1
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

/// `C(i,j) = 1` iff `α*(i,j) > θ_c`.
pub fn binarize(map: &NormalizedMap, theta: f64) -> Result<CropMask> {
    check_theta(theta)?;
    Ok(CropMask {
        height: map.height,
        width: map.width,
        bits: map.values.iter().map(|&v| u8::from(v > theta)).collect(),
    })
}

/// Inclusive pixel bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            row_min: 0,
            row_max: height - 1,
            col_min: 0,
            col_max: width - 1,
        }
    }

    pub fn rows(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn cols(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn area(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.row_min <= self.row_max
            && self.col_min <= self.col_max
            && self.row_max < height
            && self.col_max < width
    }
}

/// Tightest box around every set pixel; an empty mask yields the full image.
pub fn min_bbox(mask: &CropMask) -> BBox {
    let mut rows = (usize::MAX, 0);
    let mut cols = (usize::MAX, 0);
    for r in 0..mask.height {
        let line = &mask.bits[r * mask.width..(r + 1) * mask.width];
        let Some(first) = line.iter().position(|&b| b == 1) else {
            continue;
        };
        let last = line.iter().rposition(|&b| b == 1).unwrap_or(first);
        rows = (rows.0.min(r), r);
        cols = (cols.0.min(first), cols.1.max(last));
    }
    if rows.0 == usize::MAX {
        return BBox::full(mask.height, mask.width);
    }
    BBox {
        row_min: rows.0,
        row_max: rows.1,
        col_min: cols.0,
        col_max: cols.1,
    }
}

/// Crops `bbox` and zooms it back to the image's own size.
pub fn crop_resize(image: &Image, bbox: &BBox) -> Result<Image> {
    if !bbox.fits(image.height(), image.width()) {
        return Err(Error::InvalidArgument(format!(
            "{bbox:?} outside {}x{} image",
            image.height(),
            image.width()
        )));
    }
    image.resample_region(
        bbox.row_min,
        bbox.col_min,
        bbox.rows(),
        bbox.cols(),
        image.height(),
        image.width(),
    )
}

/// Mirrors the image when `coin < 0.5`.
pub fn horizontal_flip(image: &Image, coin: f64) -> Image {
    if coin < 0.5 {
        image.flip_horizontal()
    } else {
        image.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropSettings {
    pub xi: usize,
    pub theta: f64,
    pub head_agg: HeadAgg,
}

/// Every intermediate of one attention-guided crop.
#[derive(Clone, Debug)]
pub struct CropPlan {
    pub map: AttentionMap,
    pub normalized: NormalizedMap,
    pub mask: CropMask,
    pub bbox: BBox,
    pub image: Image,
}

pub fn plan_crop(image: &Image, stack: &AttentionStack, settings: &CropSettings) -> Result<CropPlan> {
    let (h, w) = (image.height(), image.width());
    let map = extract_attention_map(stack, settings.xi, settings.head_agg, h, w)?;
    let normalized = normalize(&map.upsampled, h, w)?;
    let mask = binarize(&normalized, settings.theta)?;
    let bbox = min_bbox(&mask);
    let cropped = crop_resize(image, &bbox)?;
    Ok(CropPlan {
        map,
        normalized,
        mask,
        bbox,
        image: cropped,
    })
}
