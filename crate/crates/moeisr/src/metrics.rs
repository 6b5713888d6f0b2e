//! Peak signal-to-noise ratio over RGB values in `[0,1]`.

use crate::error::{Error, Result};
use crate::image::Image;

/// Value reported when the images are identical (MSE = 0); also the upper
/// cap on any reported PSNR.
pub const PSNR_CAP_DB: f64 = 100.0;

/// `10 * log10(1 / MSE)` over all RGB values, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::usage(format!(
            "psnr: image sizes differ, {}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut sq_sum = 0f64;
    for (&a, &b) in pred.pixels().iter().zip(gt.pixels()) {
        let d = a as f64 - b as f64;
        sq_sum += d * d;
    }
    let mse = sq_sum / pred.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_hit_cap() {
        let img = Image::new(2, 2, (0..12).map(|v| v as f32 / 12.0).collect()).unwrap();
        assert_eq!(psnr(&img, &img).unwrap(), 100.0);
    }

    #[test]
    fn uniform_error_tenth_gives_20db() {
        // 10*log10(1/0.01); tolerance covers the f32 representation of 0.6.
        let a = Image::new(2, 2, vec![0.5; 12]).unwrap();
        let b = Image::new(2, 2, vec![0.6; 12]).unwrap();
        let db = psnr(&a, &b).unwrap();
        assert!((db - 20.0).abs() < 1e-5, "got {db}");
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = Image::new(3, 3, (0..27).map(|v| v as f32 / 27.0).collect()).unwrap();
        let b = Image::new(3, 3, (0..27).map(|v| (v as f32 / 27.0).powi(2)).collect()).unwrap();
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let a = Image::zeros(2, 2);
        let b = Image::zeros(2, 3);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn matches_two_pass_accumulation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let pix = |rng: &mut rand::rngs::StdRng| -> Vec<f32> {
            (0..48).map(|_| rng.gen_range(0.0..1.0)).collect()
        };
        let a = Image::new(4, 4, pix(&mut rng)).unwrap();
        let b = Image::new(4, 4, pix(&mut rng)).unwrap();

        // Independent two-pass route: mean of per-pixel squared error lists.
        let diffs: Vec<f64> = a
            .pixels()
            .iter()
            .zip(b.pixels())
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .collect();
        let mse: f64 = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let expect = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
    }
}
