//! RGB images as `f64` planes and corner-aligned bilinear resampling.

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Height × width × 3, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::shape(
                "image",
                &[height, width, CHANNELS],
                &[data.len()],
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Grayscale image from a single `[h×w]` plane.
    pub fn from_gray(height: usize, width: usize, plane: &[f64]) -> Result<Self> {
        if plane.len() != height * width {
            return Err(Error::shape("from_gray", &[height, width], &[plane.len()]));
        }
        let data = plane.iter().flat_map(|&v| [v, v, v]).collect();
        Image::new(height, width, data)
    }

    /// Mirrors columns: column `j` moves to `width − 1 − j`.
    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.set_pixel(r, self.width - 1 - c, self.pixel(r, c));
            }
        }
        out
    }

    /// Resamples to `height × width` (see [`resample_plane`]).
    pub fn resize(&self, height: usize, width: usize) -> Result<Image> {
        self.resample_region(0, 0, self.height, self.width, height, width)
    }

    /// Bilinearly resamples the window starting at `(row0, col0)` of size
    /// `rows × cols` to `height × width`, corners aligned.
    pub fn resample_region(
        &self,
        row0: usize,
        col0: usize,
        rows: usize,
        cols: usize,
        height: usize,
        width: usize,
    ) -> Result<Image> {
        if rows == 0 || cols == 0 || row0 + rows > self.height || col0 + cols > self.width {
            return Err(Error::InvalidArgument(format!(
                "region {rows}x{cols} at ({row0},{col0}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let ys = sample_positions(rows, height);
        let xs = sample_positions(cols, width);
        let mut out = vec![0.0; height * width * CHANNELS];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let dst = (oy * width + ox) * CHANNELS;
                for ch in 0..CHANNELS {
                    let at = |r: usize, c: usize| {
                        self.data[((row0 + r) * self.width + col0 + c) * CHANNELS + ch]
                    };
                    out[dst + ch] = lerp2(at(y0, x0), at(y0, x1), at(y1, x0), at(y1, x1), fy, fx);
                }
            }
        }
        Image::new(height, width, out)
    }
}

/// Corner-aligned bilinear resampling of a single `[rows×cols]` plane.
/// Output pixel `i` samples source coordinate `i·(src−1)/(dst−1)`, so a
/// same-size resample is the exact identity.
pub fn resample_plane(
    src: &[f64],
    rows: usize,
    cols: usize,
    height: usize,
    width: usize,
) -> Result<Vec<f64>> {
    if src.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::shape("resample_plane", &[rows, cols], &[src.len()]));
    }
    let ys = sample_positions(rows, height);
    let xs = sample_positions(cols, width);
    let mut out = Vec::with_capacity(height * width);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let at = |r: usize, c: usize| src[r * cols + c];
            out.push(lerp2(at(y0, x0), at(y0, x1), at(y1, x0), at(y1, x1), fy, fx));
        }
    }
    Ok(out)
}

/// For each destination index: (lower source index, upper source index, fraction).
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let frac = pos - lo as f64;
            if frac == 0.0 {
                (lo, lo, 0.0)
            } else {
                (lo, (lo + 1).min(src - 1), frac)
            }
        })
        .collect()
}

#[inline]
fn lerp2(v00: f64, v01: f64, v10: f64, v11: f64, fy: f64, fx: f64) -> f64 {
    if fy == 0.0 && fx == 0.0 {
        return v00;
    }
    let top = if fx == 0.0 { v00 } else { v00 + (v01 - v00) * fx };
    let bottom = if fx == 0.0 { v10 } else { v10 + (v11 - v10) * fx };
    if fy == 0.0 {
        top
    } else {
        top + (bottom - top) * fy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> Image {
        let mut data = Vec::new();
        for r in 0..h {
            for c in 0..w {
                data.extend_from_slice(&[r as f64 / h as f64, c as f64 / w as f64, 0.5]);
            }
        }
        Image::new(h, w, data).unwrap()
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = gradient_image(7, 5);
        assert_eq!(img.resize(7, 5).unwrap(), img);
    }

    #[test]
    fn checkerboard_upsample_matches_bilinear_formula() {
        // f(y, x) = x + y − 2xy on the unit square for [[0,1],[1,0]].
        let plane = [0.0, 1.0, 1.0, 0.0];
        let out = resample_plane(&plane, 2, 2, 4, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let (y, x) = (i as f64 / 3.0, j as f64 / 3.0);
                let want = x + y - 2.0 * x * y;
                assert!((out[i * 4 + j] - want).abs() < 1e-15, "({i},{j})");
            }
        }
        let centre = resample_plane(&plane, 2, 2, 3, 3).unwrap();
        assert_eq!(centre[4], 0.5);
        assert_eq!(centre[1], 0.5);
    }

    #[test]
    fn flip_is_an_involution_mapping_columns() {
        let img = gradient_image(3, 4);
        let f = img.flip_horizontal();
        assert_eq!(f.pixel(1, 0), img.pixel(1, 3));
        assert_eq!(f.flip_horizontal(), img);
    }

    #[test]
    fn constant_region_stays_constant() {
        let img = Image::filled(9, 9, [0.2, 0.4, 0.6]);
        let out = img.resample_region(2, 3, 4, 5, 9, 9).unwrap();
        assert!(out.data().chunks(3).all(|p| p == [0.2, 0.4, 0.6]));
        assert!(img.resample_region(6, 6, 4, 4, 9, 9).is_err());
    }
}
