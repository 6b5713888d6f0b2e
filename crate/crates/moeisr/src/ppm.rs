//! Binary PPM (P6, maxval 255) reading and writing, plus optional PNG
//! loading behind the `png` feature.

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Parses P6 bytes. Header tokens may be separated by any whitespace and
/// `#` comments; pixel data starts one byte after the maxval token.
pub fn decode_p6(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;

    let magic = take_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::parse(
            0,
            format!("unsupported magic {:?}", String::from_utf8_lossy(&magic)),
        ));
    }
    let width = parse_dim(bytes, &mut pos, "width")?;
    let height = parse_dim(bytes, &mut pos, "height")?;
    let maxval = parse_dim(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::parse(pos, format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() {
        return Err(Error::parse(pos, "missing raster data"));
    }
    if !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(pos, "expected whitespace before raster"));
    }
    pos += 1;

    let needed = width * height * CHANNELS;
    let raster = &bytes[pos..];
    if raster.len() < needed {
        return Err(Error::parse(
            pos + raster.len(),
            format!("truncated raster: have {} of {} bytes", raster.len(), needed),
        ));
    }
    let pixels = raster[..needed].iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(height, width, pixels)
}

fn take_token(bytes: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    // Skip whitespace and comments.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    if *pos >= bytes.len() {
        return Err(Error::parse(*pos, "unexpected end of header"));
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Ok(bytes[start..*pos].to_vec())
}

fn parse_dim(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let start = *pos;
    let tok = take_token(bytes, pos)?;
    let s = std::str::from_utf8(&tok)
        .map_err(|_| Error::parse(start, format!("non-ascii {what}")))?;
    let v: usize = s
        .parse()
        .map_err(|_| Error::parse(start, format!("bad {what} {s:?}")))?;
    if v == 0 {
        return Err(Error::parse(start, format!("{what} must be positive")));
    }
    Ok(v)
}

pub fn encode_p6(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + img.pixels().len());
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height()).expect("vec write");
    for &v in img.pixels() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    out
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_p6(&bytes)
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_p6(img)).map_err(|e| Error::io(path, e))
}

/// Loads an image by extension: `.ppm` always, `.png` when the `png`
/// feature is enabled (8-bit RGB, non-interlaced).
pub fn load_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(path),
        #[cfg(feature = "png")]
        Some("png") => read_png(path),
        other => Err(Error::usage(format!(
            "unsupported image extension {other:?} for {}",
            path.display()
        ))),
    }
}

#[cfg(feature = "png")]
fn read_png(path: &Path) -> Result<Image> {
    let dyn_img = image::open(path)
        .map_err(|e| Error::parse(0, format!("png {}: {e}", path.display())))?;
    let rgb = dyn_img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(h, w, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_white_pixel() {
        let bytes = b"P6\n1 1\n255\n\xff\xff\xff";
        let img = decode_p6(bytes).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_pixels_black_red() {
        let bytes = b"P6\n2 1\n255\n\x00\x00\x00\xff\x00\x00";
        let img = decode_p6(bytes).unwrap();
        assert_eq!(img.pixel(0, 0), [0.0, 0.0, 0.0]);
        assert_eq!(img.pixel(0, 1), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn grayscale_magic_rejected() {
        let bytes = b"P5\n1 1\n255\n\xff";
        match decode_p6(bytes) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("unsupported magic")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = b"P6\n2 2\n255\n\xff\xff";
        match decode_p6(bytes) {
            Err(Error::Parse { offset, msg }) => {
                assert!(msg.contains("truncated"));
                assert_eq!(offset, bytes.len());
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn comments_in_header() {
        let bytes = b"P6\n# a comment\n1 1\n255\n\x80\x80\x80";
        let img = decode_p6(bytes).unwrap();
        let v = img.pixel(0, 0)[0];
        assert!((v - 128.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn roundtrip_bitexact() {
        let img = Image::new(3, 2, (0..18).map(|v| v as f32 / 17.0).collect()).unwrap();
        let encoded = encode_p6(&img);
        let decoded = decode_p6(&encoded).unwrap();
        let reencoded = encode_p6(&decoded);
        assert_eq!(encoded, reencoded);
    }
}
