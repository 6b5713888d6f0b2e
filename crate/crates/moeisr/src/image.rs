//! RGB image container with values in `[0,1]`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHANNELS: usize = 3;

/// `height x width x 3` grid of intensities in `[0,1]`, interleaved row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::usage("image extents must be positive"));
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::dimension(format!(
                "{}x{} image needs {} values, got {}",
                height,
                width,
                height * width * CHANNELS,
                pixels.len()
            )));
        }
        Ok(Image {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            pixels: vec![0.0; height * width * CHANNELS],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let base = (y * self.width + x) * CHANNELS;
        [
            self.pixels[base],
            self.pixels[base + 1],
            self.pixels[base + 2],
        ]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let base = (y * self.width + x) * CHANNELS;
        self.pixels[base..base + 3].copy_from_slice(&rgb);
    }

    /// Crop a `h x w` window with top-left corner at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::usage(format!(
                "crop {h}x{w}@({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(h * w * CHANNELS);
        for y in y0..y0 + h {
            let base = (y * self.width + x0) * CHANNELS;
            pixels.extend_from_slice(&self.pixels[base..base + w * CHANNELS]);
        }
        Image::new(h, w, pixels)
    }

    /// Channel-major `[3, h, w]` tensor.
    pub fn to_chw<T: Scalar>(&self) -> Tensor<T> {
        let sites = self.height * self.width;
        let mut data = vec![T::zero(); CHANNELS * sites];
        for s in 0..sites {
            for c in 0..CHANNELS {
                data[c * sites + s] = T::from_f64(self.pixels[s * CHANNELS + c] as f64);
            }
        }
        Tensor::new(vec![CHANNELS, self.height, self.width], data).expect("sized above")
    }

    /// Builds an image from a `[3, h, w]` tensor, clamping into `[0,1]`.
    pub fn from_chw<T: Scalar>(t: &Tensor<T>) -> Result<Image> {
        let s = t.shape();
        if s.len() != 3 || s[0] != CHANNELS {
            return Err(Error::dimension(format!(
                "from_chw: want [3,h,w], got {s:?}"
            )));
        }
        let (h, w) = (s[1], s[2]);
        let sites = h * w;
        let mut pixels = vec![0.0f32; sites * CHANNELS];
        for site in 0..sites {
            for c in 0..CHANNELS {
                let v = t.data()[c * sites + site].to_f64();
                pixels[site * CHANNELS + c] = v.clamp(0.0, 1.0) as f32;
            }
        }
        Image::new(h, w, pixels)
    }

    /// Mean per-pixel gradient magnitude (central differences, averaged over
    /// channels) for each site. Used to relate routing choices to local
    /// detail.
    pub fn gradient_magnitude(&self) -> Vec<f32> {
        let (h, w) = (self.height, self.width);
        let mut out = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut mag = 0.0f32;
                for c in 0..CHANNELS {
                    let at = |yy: usize, xx: usize| self.pixels[(yy * w + xx) * CHANNELS + c];
                    let xp = at(y, (x + 1).min(w - 1));
                    let xm = at(y, x.saturating_sub(1));
                    let yp = at((y + 1).min(h - 1), x);
                    let ym = at(y.saturating_sub(1), x);
                    let gx = (xp - xm) * 0.5;
                    let gy = (yp - ym) * 0.5;
                    mag += (gx * gx + gy * gy).sqrt();
                }
                out[y * w + x] = mag / CHANNELS as f32;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chw_roundtrip_preserves_values() {
        let img = Image::new(2, 2, (0..12).map(|v| v as f32 / 12.0).collect()).unwrap();
        let t: Tensor<f32> = img.to_chw();
        assert_eq!(t.shape(), &[3, 2, 2]);
        let back = Image::from_chw(&t).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn from_chw_clamps() {
        let t = Tensor::new(vec![3, 1, 1], vec![-0.5f32, 0.5, 1.5]).unwrap();
        let img = Image::from_chw(&t).unwrap();
        assert_eq!(img.pixel(0, 0), [0.0, 0.5, 1.0]);
    }

    #[test]
    fn crop_bounds_checked() {
        let img = Image::zeros(4, 4);
        assert!(img.crop(2, 2, 3, 1).is_err());
        assert_eq!(img.crop(1, 1, 2, 2).unwrap().height(), 2);
    }
}
