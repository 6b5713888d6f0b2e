//! Separable bicubic resampling with the Catmull-Rom kernel (a = -0.5).
//!
//! Source coordinates use pixel-center alignment: output pixel `i` samples
//! the input at `(i + 0.5) * in/out - 0.5`. Borders clamp to the edge pixel.
//! Intermediate arithmetic is f64; the result is clamped into `[0,1]`.

use crate::image::{Image, CHANNELS};

const A: f64 = -0.5;

/// Catmull-Rom weight at offset `x`. Interpolating: W(0)=1, W(±1)=W(±2)=0.
pub fn kernel_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// The 4 taps and weights for one output position along one axis.
fn taps(dst: usize, src_len: usize, scale: f64) -> ([usize; 4], [f64; 4]) {
    let center = (dst as f64 + 0.5) * scale - 0.5;
    let base = center.floor() as isize;
    let mut idx = [0usize; 4];
    let mut wgt = [0f64; 4];
    for t in 0..4 {
        let s = base - 1 + t as isize;
        idx[t] = s.clamp(0, src_len as isize - 1) as usize;
        wgt[t] = kernel_weight(center - s as f64);
    }
    (idx, wgt)
}

pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Image {
    assert!(out_h >= 1 && out_w >= 1, "output extents must be >= 1");
    let (in_h, in_w) = (img.height(), img.width());
    let scale_y = in_h as f64 / out_h as f64;
    let scale_x = in_w as f64 / out_w as f64;

    // Horizontal pass: in_h x out_w, kept in f64.
    let mut mid = vec![0f64; in_h * out_w * CHANNELS];
    let src = img.pixels();
    for x in 0..out_w {
        let (ix, wx) = taps(x, in_w, scale_x);
        for y in 0..in_h {
            let row = y * in_w * CHANNELS;
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for t in 0..4 {
                    acc += wx[t] * src[row + ix[t] * CHANNELS + c] as f64;
                }
                mid[(y * out_w + x) * CHANNELS + c] = acc;
            }
        }
    }

    // Vertical pass.
    let mut out = vec![0f32; out_h * out_w * CHANNELS];
    for y in 0..out_h {
        let (iy, wy) = taps(y, in_h, scale_y);
        for x in 0..out_w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for t in 0..4 {
                    acc += wy[t] * mid[(iy[t] * out_w + x) * CHANNELS + c];
                }
                out[(y * out_w + x) * CHANNELS + c] = acc.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Image::new(out_h, out_w, out).expect("sized above")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_interpolates() {
        assert_eq!(kernel_weight(0.0), 1.0);
        assert!(kernel_weight(1.0).abs() < 1e-12);
        assert!(kernel_weight(2.0).abs() < 1e-12);
        assert!(kernel_weight(-1.0).abs() < 1e-12);
    }

    #[test]
    fn partition_of_unity() {
        // At any sub-pixel phase the four tap weights sum to 1.
        for i in 0..=100 {
            let frac = i as f64 / 100.0;
            let sum = kernel_weight(frac + 1.0)
                + kernel_weight(frac)
                + kernel_weight(frac - 1.0)
                + kernel_weight(frac - 2.0);
            assert!((sum - 1.0).abs() < 1e-9, "phase {frac}: sum {sum}");
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::new(5, 7, vec![0.42; 5 * 7 * 3]).unwrap();
        for (h, w) in [(3, 3), (10, 13), (5, 7), (1, 1)] {
            let r = bicubic_resize(&img, h, w);
            for &v in r.pixels() {
                assert!((v - 0.42).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn same_size_is_identity() {
        let pixels: Vec<f32> = (0..4 * 6 * 3).map(|v| (v % 17) as f32 / 16.0).collect();
        let img = Image::new(4, 6, pixels).unwrap();
        let r = bicubic_resize(&img, 4, 6);
        for (a, b) in img.pixels().iter().zip(r.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    /// Direct (non-separable) evaluation of the same kernel, taps clamped
    /// the same way; the product form must match the two-pass form.
    fn direct_resize(img: &Image, out_h: usize, out_w: usize) -> Vec<f64> {
        let (in_h, in_w) = (img.height(), img.width());
        let scale_y = in_h as f64 / out_h as f64;
        let scale_x = in_w as f64 / out_w as f64;
        let mut out = vec![0f64; out_h * out_w * CHANNELS];
        for y in 0..out_h {
            let cy = (y as f64 + 0.5) * scale_y - 0.5;
            let by = cy.floor() as isize;
            for x in 0..out_w {
                let cx = (x as f64 + 0.5) * scale_x - 0.5;
                let bx = cx.floor() as isize;
                for c in 0..CHANNELS {
                    let mut acc = 0.0;
                    for ty in 0..4isize {
                        let sy = by - 1 + ty;
                        let wy = kernel_weight(cy - sy as f64);
                        let sy = sy.clamp(0, in_h as isize - 1) as usize;
                        for tx in 0..4isize {
                            let sx = bx - 1 + tx;
                            let wx = kernel_weight(cx - sx as f64);
                            let sx = sx.clamp(0, in_w as isize - 1) as usize;
                            acc += wy * wx * img.pixels()[(sy * in_w + sx) * CHANNELS + c] as f64;
                        }
                    }
                    out[(y * out_w + x) * CHANNELS + c] = acc.clamp(0.0, 1.0);
                }
            }
        }
        out
    }

    #[test]
    fn checkerboard_downscale_matches_direct_summation() {
        let mut img = Image::zeros(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                let v = if (x + y) % 2 == 0 { 1.0 } else { 0.0 };
                img.set_pixel(y, x, [v, v, v]);
            }
        }
        let sep = bicubic_resize(&img, 2, 2);
        let direct = direct_resize(&img, 2, 2);
        for (a, &b) in sep.pixels().iter().zip(&direct) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn random_resizes_match_direct_summation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(21);
        for _ in 0..5 {
            let (h, w) = (rng.gen_range(3..12), rng.gen_range(3..12));
            let pixels = (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let img = Image::new(h, w, pixels).unwrap();
            let (oh, ow) = (rng.gen_range(1..20), rng.gen_range(1..20));
            let sep = bicubic_resize(&img, oh, ow);
            let direct = direct_resize(&img, oh, ow);
            for (a, &b) in sep.pixels().iter().zip(&direct) {
                assert!((*a as f64 - b).abs() < 1e-6);
            }
        }
    }
}
