//! End-to-end reconstruction at an arbitrary output size: encode once, map
//! once, then decode every output pixel through its argmax-selected expert.

use crate::error::Result;
use crate::image::Image;
use crate::kernels;
use crate::model::{encode_fwd, map_experts_fwd, ModelParams};
use crate::routing::{argmax_rows, expert_shares, route_infer};
use crate::sampling::{assemble_query_features, bind_grid, feature_unfold, make_coord_grid};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub image: Image,
    /// Chosen expert per output pixel, row-major.
    pub decisions: Vec<usize>,
    /// Chosen expert per LR input pixel (the raw expert map).
    pub site_decisions: Vec<usize>,
    /// Fraction of output pixels per expert.
    pub shares: Vec<f64>,
}

/// Reconstructs `lr` at `h_out x w_out`. Any output size at or above 1x1 is
/// valid; the decoder is scale-free.
pub fn reconstruct(
    params: &ModelParams<f32>,
    lr: &Image,
    h_out: usize,
    w_out: usize,
) -> Result<Reconstruction> {
    let (h, w) = (lr.height(), lr.width());
    let lr_t: Tensor<f32> = lr.to_chw();

    let z = encode_fwd(&params.encoder, &lr_t);
    let scores = map_experts_fwd(&params.mapper, &z);
    let j = params.specs.j();
    let score_rows = Tensor::new(vec![h * w, j], kernels::chw_to_rows(scores.data(), j, h, w))?;
    let site_decisions = argmax_rows(&score_rows)?;

    let unfolded = feature_unfold(&z)?;
    let c = unfolded.shape()[0];
    let unfolded_rows = Tensor::new(
        vec![h * w, c],
        kernels::chw_to_rows(unfolded.data(), c, h, w),
    )?;

    let grid = make_coord_grid(h_out, w_out);
    let bindings = bind_grid(&grid, (h, w));
    let feats = assemble_query_features(&bindings, &unfolded_rows, (h, w))?;
    let decisions: Vec<usize> = bindings
        .iter()
        .map(|b| site_decisions[b.site(w)])
        .collect();

    let rgb = route_infer(&params.experts, &feats, &decisions)?;

    let mut image = Image::zeros(h_out, w_out);
    for q in 0..h_out * w_out {
        let px = [
            rgb.data()[q * 3].clamp(0.0, 1.0),
            rgb.data()[q * 3 + 1].clamp(0.0, 1.0),
            rgb.data()[q * 3 + 2].clamp(0.0, 1.0),
        ];
        image.set_pixel(q / w_out, q % w_out, px);
    }
    let shares = expert_shares(&decisions, j);
    Ok(Reconstruction {
        image,
        decisions,
        site_decisions,
        shares,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderSpec, MapperSpec, ModelSpecs};

    fn toy_params(seed: u64) -> ModelParams<f32> {
        let specs = ModelSpecs::new(
            EncoderSpec {
                feat_dim: 4,
                n_res_blocks: 1,
            },
            MapperSpec {
                n_layers: 2,
                hidden_channels: 4,
            },
            8,
            &[2, 3, 4, 5],
        )
        .unwrap();
        ModelParams::init(specs, seed)
    }

    fn toy_image(h: usize, w: usize) -> Image {
        let pixels = (0..h * w * 3)
            .map(|v| ((v * 37) % 256) as f32 / 255.0)
            .collect();
        Image::new(h, w, pixels).unwrap()
    }

    #[test]
    fn output_size_and_share_partition() {
        let params = toy_params(3);
        let lr = toy_image(8, 10);
        let rec = reconstruct(&params, &lr, 19, 23).unwrap();
        assert_eq!(rec.image.height(), 19);
        assert_eq!(rec.image.width(), 23);
        assert_eq!(rec.decisions.len(), 19 * 23);
        assert_eq!(rec.site_decisions.len(), 80);
        let total: f64 = rec.shares.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_integer_scale_accepted() {
        let params = toy_params(4);
        let lr = toy_image(10, 10);
        // 3.3x
        let rec = reconstruct(&params, &lr, 33, 33).unwrap();
        assert_eq!(rec.image.height(), 33);
    }

    #[test]
    fn deterministic() {
        let params = toy_params(5);
        let lr = toy_image(6, 6);
        let a = reconstruct(&params, &lr, 12, 12).unwrap();
        let b = reconstruct(&params, &lr, 12, 12).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.decisions, b.decisions);
    }

    #[test]
    fn output_pixels_clamped() {
        let params = toy_params(6);
        let lr = toy_image(6, 6);
        let rec = reconstruct(&params, &lr, 9, 9).unwrap();
        for &v in rec.image.pixels() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
