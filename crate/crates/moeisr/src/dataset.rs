//! Training-pair synthesis and dataset directory handling.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::ppm;
use crate::resize::bicubic_resize;
use crate::sampling::coord_center;
use rand::Rng;
use std::path::{Path, PathBuf};

/// Input patch side length used throughout training by default.
pub const PATCH_SIZE: usize = 48;
/// Queries sampled per patch by default (= 48 squared).
pub const QUERIES_PER_PATCH: usize = PATCH_SIZE * PATCH_SIZE;
pub const SCALE_MIN: f64 = 1.0;
pub const SCALE_MAX: f64 = 4.0;

/// One supervised sample: a low-resolution patch plus queried target pixels
/// from the high-resolution window it was synthesized from.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub lr_patch: Image,
    /// Normalized `(y, x)` centers in the HR window's coordinate frame.
    pub query_coords: Vec<(f64, f64)>,
    /// `(2 / window_h, 2 / window_w)` per query.
    pub query_cells: Vec<(f64, f64)>,
    pub target_rgb: Vec<[f32; 3]>,
    pub scale: f64,
}

/// Synthesizes a pair at the configured defaults: a random scale in
/// `[1, 4]`, a random `round(48 s)` square HR window, a 48x48 LR patch, and
/// 2304 queries.
pub fn sample_training_pair(hr: &Image, rng: &mut impl Rng) -> Result<TrainingPair> {
    sample_pair_with(hr, rng, PATCH_SIZE, SCALE_MIN, SCALE_MAX, QUERIES_PER_PATCH)
}

/// Generalized pair synthesis with explicit patch size, scale range, and
/// query count. The HR image must fit the largest possible window,
/// `round(patch * scale_max)`.
pub fn sample_pair_with(
    hr: &Image,
    rng: &mut impl Rng,
    patch: usize,
    scale_min: f64,
    scale_max: f64,
    n_queries: usize,
) -> Result<TrainingPair> {
    let max_window = (patch as f64 * scale_max).round() as usize;
    if hr.height() < max_window || hr.width() < max_window {
        return Err(Error::usage(format!(
            "hr image {}x{} smaller than required window {}x{}",
            hr.height(),
            hr.width(),
            max_window,
            max_window
        )));
    }

    let scale = if scale_min == scale_max {
        scale_min
    } else {
        rng.gen_range(scale_min..=scale_max)
    };
    let window = (patch as f64 * scale).round() as usize;
    let y0 = rng.gen_range(0..=hr.height() - window);
    let x0 = rng.gen_range(0..=hr.width() - window);
    let hr_window = hr.crop(y0, x0, window, window)?;

    let lr_patch = if window == patch {
        hr_window.clone()
    } else {
        bicubic_resize(&hr_window, patch, patch)
    };

    // Distinct query sites, uniform over the window's pixel centers.
    let sites = pick_distinct(window * window, n_queries, rng);
    let cell = (2.0 / window as f64, 2.0 / window as f64);
    let mut query_coords = Vec::with_capacity(n_queries);
    let mut target_rgb = Vec::with_capacity(n_queries);
    for &s in &sites {
        let (y, x) = (s / window, s % window);
        query_coords.push((coord_center(y, window), coord_center(x, window)));
        target_rgb.push(hr_window.pixel(y, x));
    }
    Ok(TrainingPair {
        lr_patch,
        query_coords,
        query_cells: vec![cell; n_queries],
        target_rgb,
        scale,
    })
}

/// First `k` entries of a seeded partial Fisher-Yates shuffle of `0..n`.
fn pick_distinct(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(k <= n, "cannot pick {k} distinct of {n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Images in a flat directory, lexicographic by file name. Recognizes
/// `.ppm` (and `.png` when that feature is on).
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let ext = path.extension().and_then(|e| e.to_str());
        let recognized = matches!(ext, Some("ppm")) || (cfg!(feature = "png") && matches!(ext, Some("png")));
        if recognized {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Image>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::usage(format!("no images in {}", dir.display())));
    }
    paths.iter().map(|p| ppm::load_image(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::{Rng, SeedableRng};

    fn noise_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let pixels = (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        Image::new(h, w, pixels).unwrap()
    }

    #[test]
    fn unit_scale_lr_equals_window() {
        let hr = noise_image(200, 200, 1);
        let mut rng = stream(3, "test", 0);
        let pair = sample_pair_with(&hr, &mut rng, 48, 1.0, 1.0, 2304).unwrap();
        assert_eq!(pair.scale, 1.0);
        assert_eq!(pair.lr_patch.height(), 48);
        // Every query target must appear verbatim in the LR patch.
        for (q, &(cy, cx)) in pair.query_coords.iter().enumerate() {
            let y = ((cy + 1.0) * 48.0 / 2.0 - 0.5).round() as usize;
            let x = ((cx + 1.0) * 48.0 / 2.0 - 0.5).round() as usize;
            assert_eq!(pair.lr_patch.pixel(y, x), pair.target_rgb[q]);
        }
    }

    #[test]
    fn query_count_fixed_across_scales() {
        let hr = noise_image(200, 200, 2);
        for seed in 0..5 {
            let mut rng = stream(seed, "test", 0);
            let pair = sample_training_pair(&hr, &mut rng).unwrap();
            assert_eq!(pair.query_coords.len(), 2304);
            assert_eq!(pair.target_rgb.len(), 2304);
            assert_eq!(pair.query_cells.len(), 2304);
        }
    }

    #[test]
    fn queries_stay_in_window() {
        let hr = noise_image(200, 200, 3);
        let mut rng = stream(9, "test", 0);
        let pair = sample_training_pair(&hr, &mut rng).unwrap();
        for &(y, x) in &pair.query_coords {
            assert!(y > -1.0 && y < 1.0 && x > -1.0 && x < 1.0);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let hr = noise_image(200, 200, 4);
        let mut r1 = stream(42, "test", 0);
        let mut r2 = stream(42, "test", 0);
        let p1 = sample_training_pair(&hr, &mut r1).unwrap();
        let p2 = sample_training_pair(&hr, &mut r2).unwrap();
        assert_eq!(p1.lr_patch, p2.lr_patch);
        assert_eq!(p1.query_coords, p2.query_coords);
        assert_eq!(p1.target_rgb, p2.target_rgb);
        assert_eq!(p1.scale, p2.scale);
    }

    #[test]
    fn too_small_hr_rejected() {
        let hr = noise_image(100, 100, 5);
        let mut rng = stream(0, "test", 0);
        assert!(sample_training_pair(&hr, &mut rng).is_err());
    }

    #[test]
    fn distinct_queries() {
        let mut rng = stream(1, "test", 0);
        let picked = pick_distinct(100, 60, &mut rng);
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 60);
    }

    #[test]
    fn dataset_listing_is_lexicographic() {
        let dir = std::env::temp_dir().join(format!("moeisr_ds_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let img = Image::zeros(2, 2);
        for name in ["b.ppm", "a.ppm", "c.txt"] {
            if name.ends_with(".ppm") {
                crate::ppm::write_ppm(&dir.join(name), &img).unwrap();
            } else {
                std::fs::write(dir.join(name), b"ignored").unwrap();
            }
        }
        let listed = list_images(&dir).unwrap();
        let names: Vec<_> = listed
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, vec!["a.ppm", "b.ppm"]);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
