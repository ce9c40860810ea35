//! Image artifacts for `visualize` and `augment-preview`.

use crate::augment::{plan_crop, BBox, CropMask, CropPlan, CropSettings};
use crate::backbone::ViTConfig;
use crate::error::{Error, Result};
use crate::has::{select_all, TokenSelection};
use crate::image::Image;
use crate::model::Davt;
use crate::tensor::Tape;

/// Box colour per selection layer, cycled.
const PALETTE: [[f64; 3]; 6] = [
    [1.0, 0.1, 0.1],
    [0.1, 0.9, 0.1],
    [0.2, 0.4, 1.0],
    [1.0, 0.9, 0.1],
    [1.0, 0.2, 1.0],
    [0.1, 1.0, 1.0],
];

/// Values in `[0, 1]` as gray pixels.
pub fn gray(values: &[f64], height: usize, width: usize) -> Result<Image> {
    Image::from_gray(height, width, values)
}

/// Pixels outside the mask set to black.
pub fn masked(image: &Image, mask: &CropMask) -> Image {
    let mut out = image.clone();
    for r in 0..image.height() {
        for c in 0..image.width() {
            if !mask.get(r, c) {
                out.set_pixel(r, c, [0.0; 3]);
            }
        }
    }
    out
}

/// One-pixel rectangle outline, inclusive bounds.
pub fn draw_box(image: &mut Image, b: &BBox, rgb: [f64; 3]) {
    for c in b.col_min..=b.col_max {
        image.set_pixel(b.row_min, c, rgb);
        image.set_pixel(b.row_max, c, rgb);
    }
    for r in b.row_min..=b.row_max {
        image.set_pixel(r, b.col_min, rgb);
        image.set_pixel(r, b.col_max, rgb);
    }
}

/// Pixel box of patch token `index` (1-based; 0 is the class token).
pub fn token_box(config: &ViTConfig, index: usize) -> Result<BBox> {
    if index == 0 || index > config.num_patches() {
        return Err(Error::InvalidArgument(format!(
            "token {index} is not a patch token (1..={})",
            config.num_patches()
        )));
    }
    let p = config.patch_size;
    let (gr, gc) = ((index - 1) / config.grid(), (index - 1) % config.grid());
    Ok(BBox {
        row_min: gr * p,
        row_max: gr * p + p - 1,
        col_min: gc * p,
        col_max: gc * p + p - 1,
    })
}

/// Boxes of every selected token, tagged with the 1-based layer.
pub fn selection_boxes(config: &ViTConfig, selections: &[TokenSelection]) -> Result<Vec<(usize, BBox)>> {
    let mut out = Vec::new();
    for s in selections {
        for &i in &s.indices {
            out.push((s.layer, token_box(config, i)?));
        }
    }
    Ok(out)
}

/// The five views of one image: original, heatmap, zoomed crop, masked
/// image and selected-token boxes.
#[derive(Clone, Debug)]
pub struct Visualization {
    pub original: Image,
    pub heatmap: Image,
    pub crop: Image,
    pub masked: Image,
    pub tokens: Image,
    pub plan: CropPlan,
    pub selections: Vec<TokenSelection>,
}

impl Visualization {
    pub fn named(&self) -> [(&'static str, &Image); 5] {
        [
            ("original", &self.original),
            ("heatmap", &self.heatmap),
            ("crop", &self.crop),
            ("masked", &self.masked),
            ("tokens", &self.tokens),
        ]
    }
}

pub fn visualize(model: &Davt, image: &Image, settings: &CropSettings) -> Result<Visualization> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let out = model.forward(&mut tape, &vars, image)?;
    let selections = match out.selections {
        Some(s) => s,
        None => select_all(&out.attention, model.options.fusion)?,
    };
    let plan = plan_crop(image, &out.attention, settings)?;
    let (h, w) = (image.height(), image.width());
    let heatmap = gray(&plan.normalized.values, h, w)?;
    let mut tokens = image.clone();
    for (layer, b) in selection_boxes(&model.config, &selections)? {
        draw_box(&mut tokens, &b, PALETTE[(layer - 1) % PALETTE.len()]);
    }
    Ok(Visualization {
        original: image.clone(),
        heatmap,
        crop: plan.image.clone(),
        masked: masked(image, &plan.mask),
        tokens,
        plan,
        selections,
    })
}

/// Every stage of the crop pipeline as an image.
#[derive(Clone, Debug)]
pub struct Preview {
    /// Patch-grid map before upsampling, scaled by its maximum.
    pub raw: Image,
    pub normalized: Image,
    pub mask: Image,
    pub overlay: Image,
    pub crop: Image,
    pub plan: CropPlan,
}

impl Preview {
    pub fn named(&self) -> [(&'static str, &Image); 5] {
        [
            ("raw", &self.raw),
            ("normalized", &self.normalized),
            ("mask", &self.mask),
            ("bbox", &self.overlay),
            ("crop", &self.crop),
        ]
    }
}

pub fn augment_preview(model: &Davt, image: &Image, settings: &CropSettings) -> Result<Preview> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let out = model.forward(&mut tape, &vars, image)?;
    let plan = plan_crop(image, &out.attention, settings)?;
    let (h, w) = (image.height(), image.width());
    let g = plan.map.grid_size;
    let peak = plan.map.grid.iter().copied().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    // Nearest-neighbour blow-up so each patch shows as a flat block.
    let raw: Vec<f64> = (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            plan.map.grid[(r * g / h) * g + c * g / w] * scale
        })
        .collect();
    let mask: Vec<f64> = plan.mask.bits.iter().map(|&b| f64::from(b)).collect();
    let mut overlay = image.clone();
    draw_box(&mut overlay, &plan.bbox, [1.0, 0.0, 0.0]);
    Ok(Preview {
        raw: gray(&raw, h, w)?,
        normalized: gray(&plan.normalized.values, h, w)?,
        mask: gray(&mask, h, w)?,
        overlay,
        crop: plan.image.clone(),
        plan,
    })
}
