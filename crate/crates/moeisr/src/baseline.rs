//! Mapper-free single-decoder reference: the same encoder feeding one MLP
//! that decodes every query, with no routing anywhere in the path.
//!
//! This is the fixed-decoder comparison model. Its parameter streams share
//! names with the routed model, so a bank of one expert and this baseline
//! start from identical weights under the same seed and must stay within
//! float tolerance of each other while training on the same data.

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image::Image;
use crate::kernels;
use crate::loss::l1_loss;
use crate::model::{
    encode, encode_fwd, expert_forward_batch, expert_mlp, init_encoder, init_linear,
    EncoderParams, EncoderSpec, GraphEncoder, LinearParam,
};
use crate::rng;
use crate::sampling::{
    assemble_query_features, bind_grid, decoder_in_dim, feature_unfold, make_coord_grid,
};
use crate::tensor::Tensor;
use crate::train::{prepare_patch, TrainConfig};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineParams {
    pub encoder_spec: EncoderSpec,
    pub depth: usize,
    pub hidden: usize,
    pub seed: u64,
    pub encoder: EncoderParams<f32>,
    pub decoder: Vec<LinearParam<f32>>,
}

impl BaselineParams {
    pub fn init(encoder_spec: EncoderSpec, depth: usize, hidden: usize, seed: u64) -> Self {
        let in_dim = decoder_in_dim(encoder_spec.feat_dim);
        let decoder = (0..depth)
            .map(|l| {
                let d_in = if l == 0 { in_dim } else { hidden };
                let d_out = if l + 1 == depth { 3 } else { hidden };
                init_linear(seed, &format!("expert0.layer{l}"), d_in, d_out)
            })
            .collect();
        BaselineParams {
            encoder_spec,
            depth,
            hidden,
            seed,
            encoder: init_encoder(encoder_spec, seed),
            decoder,
        }
    }

    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![
            self.encoder.conv_in.weight.shape().to_vec(),
            self.encoder.conv_in.bias.shape().to_vec(),
        ];
        for (c1, c2) in &self.encoder.blocks {
            shapes.push(c1.weight.shape().to_vec());
            shapes.push(c1.bias.shape().to_vec());
            shapes.push(c2.weight.shape().to_vec());
            shapes.push(c2.bias.shape().to_vec());
        }
        shapes.push(self.encoder.conv_out.weight.shape().to_vec());
        shapes.push(self.encoder.conv_out.bias.shape().to_vec());
        for l in &self.decoder {
            shapes.push(l.weight.shape().to_vec());
            shapes.push(l.bias.shape().to_vec());
        }
        shapes
    }
}

/// Decode `lr` at `h_out x w_out` through the single decoder.
pub fn reconstruct(params: &BaselineParams, lr: &Image, h_out: usize, w_out: usize) -> Result<Image> {
    let (h, w) = (lr.height(), lr.width());
    let lr_t: Tensor<f32> = lr.to_chw();
    let z = encode_fwd(&params.encoder, &lr_t);
    let unfolded = feature_unfold(&z)?;
    let c = unfolded.shape()[0];
    let rows = Tensor::new(
        vec![h * w, c],
        kernels::chw_to_rows(unfolded.data(), c, h, w),
    )?;
    let grid = make_coord_grid(h_out, w_out);
    let bindings = bind_grid(&grid, (h, w));
    let feats = assemble_query_features(&bindings, &rows, (h, w))?;
    let rgb = expert_forward_batch(&params.decoder, &feats)?;
    let mut image = Image::zeros(h_out, w_out);
    for q in 0..h_out * w_out {
        image.set_pixel(
            q / w_out,
            q % w_out,
            [
                rgb.data()[q * 3].clamp(0.0, 1.0),
                rgb.data()[q * 3 + 1].clamp(0.0, 1.0),
                rgb.data()[q * 3 + 2].clamp(0.0, 1.0),
            ],
        );
    }
    Ok(image)
}

/// Trains the baseline on the same data stream the routed model would draw
/// under `config` (the Gumbel stream is simply never consulted). The loss
/// is `alpha * L1` alone; there is nothing to balance.
pub fn train(
    images: &[Image],
    config: &TrainConfig,
    steps: u64,
) -> Result<BaselineParams> {
    if images.is_empty() {
        return Err(Error::usage("training dataset is empty"));
    }
    let expert = config
        .specs
        .experts
        .first()
        .ok_or_else(|| Error::usage("config has no expert spec"))?;
    let mut params = BaselineParams::init(
        config.specs.encoder,
        expert.depth,
        expert.hidden,
        config.seed,
    );
    let mut state: AdamState<f32> = AdamState::from_shapes(params.tensor_shapes());

    for step in 0..steps {
        train_step(&mut params, &mut state, images, config, step)?;
    }
    Ok(params)
}

pub fn train_step(
    params: &mut BaselineParams,
    state: &mut AdamState<f32>,
    images: &[Image],
    config: &TrainConfig,
    step: u64,
) -> Result<f64> {
    let mut g: Graph<f32> = Graph::new();
    let enc = GraphEncoder::register(&mut g, &params.encoder);
    let dec = crate::model::register_linear_stack(&mut g, &params.decoder);
    let mut leaf_ids = enc.leaf_ids();
    for l in &dec {
        leaf_ids.extend([l.weight, l.bias]);
    }

    let mut l1_sum = None;
    for b in 0..config.batch_patches {
        let draw = step * config.batch_patches as u64 + b as u64;
        let mut data_rng = rng::stream(config.seed, "data", draw);
        let img = &images[data_rng.gen_range(0..images.len())];
        let pair = crate::dataset::sample_pair_with(
            img,
            &mut data_rng,
            config.patch_size,
            config.scale_min,
            config.scale_max,
            config.queries_per_patch,
        )?;
        let patch = prepare_patch::<f32>(&pair, None);

        let lr = g.leaf(patch.lr.clone(), false);
        let z = encode(&mut g, &enc, lr)?;
        let unfolded = g.unfold3x3(z)?;
        let rows = g.chw_to_rows(unfolded)?;
        let gathered = g.gather_rows(rows, patch.sites.clone())?;
        let relcell = g.leaf(patch.relcell.clone(), false);
        let feats = g.concat_cols(gathered, relcell)?;
        let pred = expert_mlp(&mut g, &dec, feats)?;
        let targets = g.leaf(patch.targets.clone(), false);
        let term = l1_loss(&mut g, pred, targets)?;
        l1_sum = Some(match l1_sum {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    let l1 = g.scale(l1_sum.expect("non-empty batch"), 1.0 / config.batch_patches as f64);
    let loss = g.scale(l1, config.alpha);

    let grads = g.backward(loss)?;
    state.begin_step();
    let mut idx = 0usize;
    let mut apply = |param: &mut Tensor<f32>, state: &mut AdamState<f32>| -> Result<()> {
        let grad = grads
            .get(leaf_ids[idx])
            .expect("leaf gradient present");
        state.update_tensor(idx, &config.adam, param, grad)?;
        idx += 1;
        Ok(())
    };
    apply(&mut params.encoder.conv_in.weight, state)?;
    apply(&mut params.encoder.conv_in.bias, state)?;
    for (c1, c2) in &mut params.encoder.blocks {
        apply(&mut c1.weight, state)?;
        apply(&mut c1.bias, state)?;
        apply(&mut c2.weight, state)?;
        apply(&mut c2.bias, state)?;
    }
    apply(&mut params.encoder.conv_out.weight, state)?;
    apply(&mut params.encoder.conv_out.bias, state)?;
    for l in &mut params.decoder {
        apply(&mut l.weight, state)?;
        apply(&mut l.bias, state)?;
    }
    g.value(loss).item().map(|v| v as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MapperSpec, ModelSpecs};

    #[test]
    fn shares_initialization_with_routed_model() {
        let spec = EncoderSpec {
            feat_dim: 4,
            n_res_blocks: 1,
        };
        let baseline = BaselineParams::init(spec, 5, 8, 42);
        let specs = ModelSpecs::new(
            spec,
            MapperSpec {
                n_layers: 1,
                hidden_channels: 4,
            },
            8,
            &[5],
        )
        .unwrap();
        let routed: crate::model::ModelParams<f32> = crate::model::ModelParams::init(specs, 42);
        assert_eq!(baseline.encoder, routed.encoder);
        assert_eq!(baseline.decoder, routed.experts[0]);
    }

    #[test]
    fn reconstruct_shape_and_range() {
        let spec = EncoderSpec {
            feat_dim: 4,
            n_res_blocks: 1,
        };
        let params = BaselineParams::init(spec, 3, 8, 7);
        let lr = Image::new(6, 6, (0..108).map(|v| (v % 9) as f32 / 9.0).collect()).unwrap();
        let out = reconstruct(&params, &lr, 13, 11).unwrap();
        assert_eq!((out.height(), out.width()), (13, 11));
        assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
