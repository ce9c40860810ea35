//! Binary PPM (P6, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Channel value in `[0,1]` to a byte, rounding half up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    out
}

pub fn save_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)).map_err(|e| Error::io(path, e))
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(format!("unsupported magic {magic:?}, expected \"P6\""));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        skip_space_and_comments(bytes, &mut pos);
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated or malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("header value out of range")?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported, expected 255"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing whitespace after header".into());
    }
    pos += 1;
    let expected = width * height * 3;
    let pixels = &bytes[pos..];
    if pixels.len() < expected {
        return Err(format!(
            "truncated pixel data: {} of {expected} bytes",
            pixels.len()
        ));
    }
    let data = pixels[..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, data).map_err(|e| e.to_string())
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        if bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        } else if bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel() {
        let img = decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(img.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode_ppm(b"P6 # made by hand\n2 1 255\n\x00\x00\x00\xff\x00\x80").unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.pixel(0, 1), [1.0, 0.0, 128.0 / 255.0]);
    }

    #[test]
    fn rejects_ascii_variant_and_bad_maxval() {
        let err = decode_ppm(b"P3\n1 1\n255\n255 255 255\n").unwrap_err();
        assert!(err.contains("P3"), "{err}");
        assert!(decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00")
            .unwrap_err()
            .contains("maxval"));
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00")
            .unwrap_err()
            .contains("truncated"));
    }

    #[test]
    fn round_trip_of_quantized_image() {
        let data = (0..4 * 3 * 3).map(|i| ((i * 53) % 256) as f64 / 255.0).collect();
        let img = Image::new(4, 3, data).unwrap();
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(back, img);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(-3.0), 0);
    }
}
