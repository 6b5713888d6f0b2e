//! Analytic multiply-accumulate accounting for one reconstruction, plus
//! expert-map image export.
//!
//! Counting convention: one multiply-accumulate = 2 FLOPs; biases and
//! activations are not counted separately. The encoder and mapper run once
//! per LR input; every output query pays for exactly one expert at
//! inference. Feature unfolding moves data without multiplying, so its
//! entry is zero and exists to make the pipeline sum explicit.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{ExpertSpec, ModelSpecs};
use crate::ppm;
use std::path::Path;

pub const FLOPS_PER_MAC: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct FlopsReport {
    pub encoder_flops: u64,
    pub mapper_flops: u64,
    pub unfold_flops: u64,
    pub per_expert_flops: Vec<u64>,
    /// Queries routed to each expert.
    pub per_expert_queries: Vec<u64>,
    pub decoder_total: u64,
    pub pipeline_total: u64,
    /// Decoder cost had every query used the deepest expert.
    pub baseline_decoder_total: u64,
    /// `decoder_total / baseline_decoder_total`.
    pub ratio: f64,
}

impl FlopsReport {
    /// Line-oriented `key: value` rendering.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("encoder_flops: {}\n", self.encoder_flops));
        s.push_str(&format!("mapper_flops: {}\n", self.mapper_flops));
        s.push_str(&format!("unfold_flops: {}\n", self.unfold_flops));
        for (j, (f, q)) in self
            .per_expert_flops
            .iter()
            .zip(&self.per_expert_queries)
            .enumerate()
        {
            s.push_str(&format!("expert{j}_queries: {q}\n"));
            s.push_str(&format!("expert{j}_flops: {f}\n"));
        }
        s.push_str(&format!("decoder_total: {}\n", self.decoder_total));
        s.push_str(&format!(
            "baseline_decoder_total: {}\n",
            self.baseline_decoder_total
        ));
        s.push_str(&format!("pipeline_total: {}\n", self.pipeline_total));
        s.push_str(&format!("decoder_ratio: {:.6}\n", self.ratio));
        s
    }
}

/// FLOPs of a dense layer applied to `n_queries` rows.
pub fn flops_linear(in_dim: usize, out_dim: usize, n_queries: usize) -> u64 {
    FLOPS_PER_MAC * in_dim as u64 * out_dim as u64 * n_queries as u64
}

/// FLOPs of one expert over `n_queries` rows: input layer, `depth - 2`
/// hidden layers, output layer.
pub fn flops_expert(spec: &ExpertSpec, n_queries: usize) -> u64 {
    let mut total = flops_linear(spec.in_dim, spec.hidden, n_queries);
    for _ in 0..spec.depth - 2 {
        total += flops_linear(spec.hidden, spec.hidden, n_queries);
    }
    total + flops_linear(spec.hidden, spec.out_dim, n_queries)
}

/// FLOPs of a conv layer over `sites` output positions.
pub fn flops_conv(cin: usize, cout: usize, kh: usize, kw: usize, sites: usize) -> u64 {
    FLOPS_PER_MAC * cin as u64 * cout as u64 * kh as u64 * kw as u64 * sites as u64
}

/// Full-pipeline account for reconstructing `h_out x w_out` from an
/// `lr_h x lr_w` input, given the hard routing decision of every output
/// query.
pub fn flops_pipeline(
    specs: &ModelSpecs,
    lr_h: usize,
    lr_w: usize,
    h_out: usize,
    w_out: usize,
    decisions: &[usize],
) -> Result<FlopsReport> {
    let n_queries = h_out * w_out;
    if decisions.len() != n_queries {
        return Err(Error::usage(format!(
            "flops_pipeline: {} decisions for {} output pixels",
            decisions.len(),
            n_queries
        )));
    }
    let j = specs.j();
    let mut per_expert_queries = vec![0u64; j];
    for &d in decisions {
        if d >= j {
            return Err(Error::usage(format!(
                "flops_pipeline: decision {d} out of range for {j} experts"
            )));
        }
        per_expert_queries[d] += 1;
    }

    let sites = lr_h * lr_w;
    let d = specs.encoder.feat_dim;
    let mut encoder_flops = flops_conv(3, d, 3, 3, sites);
    encoder_flops += 2 * specs.encoder.n_res_blocks as u64 * flops_conv(d, d, 3, 3, sites);
    encoder_flops += flops_conv(d, d, 3, 3, sites);

    let mut mapper_flops = 0u64;
    for i in 0..specs.mapper.n_layers {
        let (cin, cout) = specs.mapper_layer_dims(i);
        mapper_flops += flops_conv(cin, cout, 3, 3, sites);
    }

    let per_expert_flops: Vec<u64> = specs
        .experts
        .iter()
        .zip(&per_expert_queries)
        .map(|(spec, &q)| flops_expert(spec, q as usize))
        .collect();
    let decoder_total: u64 = per_expert_flops.iter().sum();
    let deepest = specs.experts.last().expect("bank not empty");
    let baseline_decoder_total = flops_expert(deepest, n_queries);

    let unfold_flops = 0u64;
    let pipeline_total = encoder_flops + mapper_flops + unfold_flops + decoder_total;
    Ok(FlopsReport {
        encoder_flops,
        mapper_flops,
        unfold_flops,
        per_expert_flops,
        per_expert_queries,
        decoder_total,
        pipeline_total,
        baseline_decoder_total,
        ratio: decoder_total as f64 / baseline_decoder_total as f64,
    })
}

/// Fig-style palette: expert 1 yellow, 2 green, 3 blue, 4 red.
pub const DEFAULT_PALETTE: [[u8; 3]; 4] = [
    [255, 255, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 0, 0],
];

/// Renders per-pixel expert choices as a color image.
pub fn expert_map_image(
    decisions: &[usize],
    h: usize,
    w: usize,
    palette: Option<&[[u8; 3]]>,
) -> Result<Image> {
    if decisions.len() != h * w {
        return Err(Error::usage(format!(
            "expert map: {} decisions for {h}x{w}",
            decisions.len()
        )));
    }
    let palette = palette.unwrap_or(&DEFAULT_PALETTE);
    let max = decisions.iter().copied().max().unwrap_or(0);
    if max >= palette.len() {
        return Err(Error::usage(format!(
            "expert index {max} exceeds palette of {} colors; pass a custom palette",
            palette.len()
        )));
    }
    let mut img = Image::zeros(h, w);
    for (i, &d) in decisions.iter().enumerate() {
        let c = palette[d];
        img.set_pixel(
            i / w,
            i % w,
            [
                c[0] as f32 / 255.0,
                c[1] as f32 / 255.0,
                c[2] as f32 / 255.0,
            ],
        );
    }
    Ok(img)
}

pub fn export_expert_map(
    decisions: &[usize],
    h: usize,
    w: usize,
    path: &Path,
    palette: Option<&[[u8; 3]]>,
) -> Result<()> {
    let img = expert_map_image(decisions, h, w, palette)?;
    ppm::write_ppm(path, &img)
}

/// Inverts [`expert_map_image`]: recovers decisions from palette colors.
pub fn decode_expert_map(img: &Image, palette: Option<&[[u8; 3]]>) -> Result<Vec<usize>> {
    let palette = palette.unwrap_or(&DEFAULT_PALETTE);
    let mut out = Vec::with_capacity(img.height() * img.width());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let px = img.pixel(y, x);
            let as_u8 = [
                (px[0] * 255.0).round() as u8,
                (px[1] * 255.0).round() as u8,
                (px[2] * 255.0).round() as u8,
            ];
            match palette.iter().position(|c| *c == as_u8) {
                Some(j) => out.push(j),
                None => {
                    return Err(Error::parse(
                        (y * img.width() + x) * 3,
                        format!("color {as_u8:?} not in palette"),
                    ))
                }
            }
        }
    }
    Ok(out)
}
