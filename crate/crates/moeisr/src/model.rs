//! The three learned components: encoder, expert mapper, and the bank of
//! capacity-varying MLP decoders.
//!
//! Each component exists twice: as a graph builder (differentiable, for
//! training) and as a plain forward over tensors (for inference). Both call
//! the same kernels, so they produce identical values for identical inputs.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels;
use crate::rng;
use crate::sampling::decoder_in_dim;
use crate::tensor::{Scalar, Tensor};
use rand::Rng;

pub const DEFAULT_FEAT_DIM: usize = 64;
pub const DEFAULT_RES_BLOCKS: usize = 4;
pub const DEFAULT_MAPPER_LAYERS: usize = 5;
pub const DEFAULT_MAPPER_HIDDEN: usize = 64;
pub const DEFAULT_EXPERTS: usize = 4;
pub const EXPERT_OUT_DIM: usize = 3;

/// Expert hidden width presets: `B` is the 256-wide bank, `S` the 128-wide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    B,
    S,
}

impl Variant {
    pub fn hidden(self) -> usize {
        match self {
            Variant::B => 256,
            Variant::S => 128,
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "b" => Ok(Variant::B),
            "s" => Ok(Variant::S),
            other => Err(Error::usage(format!("unknown variant {other:?}, want b or s"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    pub feat_dim: usize,
    pub n_res_blocks: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            feat_dim: DEFAULT_FEAT_DIM,
            n_res_blocks: DEFAULT_RES_BLOCKS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MapperSpec {
    pub n_layers: usize,
    pub hidden_channels: usize,
}

impl Default for MapperSpec {
    fn default() -> Self {
        MapperSpec {
            n_layers: DEFAULT_MAPPER_LAYERS,
            hidden_channels: DEFAULT_MAPPER_HIDDEN,
        }
    }
}

/// One decoder in the bank. `depth` counts linear layers (at least 2).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpertSpec {
    pub depth: usize,
    pub hidden: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpecs {
    pub encoder: EncoderSpec,
    pub mapper: MapperSpec,
    pub experts: Vec<ExpertSpec>,
}

/// Bank depths: 4 experts use depths 2..=5; a single expert uses the
/// deepest (5) like the fixed-decoder baseline.
pub fn default_depths(j: usize) -> Vec<usize> {
    if j == 1 {
        vec![5]
    } else {
        (2..2 + j).collect()
    }
}

impl ModelSpecs {
    pub fn new(
        encoder: EncoderSpec,
        mapper: MapperSpec,
        expert_hidden: usize,
        depths: &[usize],
    ) -> Result<ModelSpecs> {
        if depths.is_empty() {
            return Err(Error::usage("expert bank must not be empty"));
        }
        if depths.iter().any(|&d| d < 2) {
            return Err(Error::usage("expert depth must be at least 2"));
        }
        if depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::usage("expert depths must be strictly ascending"));
        }
        if encoder.feat_dim < 1 || mapper.n_layers < 1 {
            return Err(Error::usage("feat_dim and mapper layers must be >= 1"));
        }
        let in_dim = decoder_in_dim(encoder.feat_dim);
        let experts = depths
            .iter()
            .map(|&depth| ExpertSpec {
                depth,
                hidden: expert_hidden,
                in_dim,
                out_dim: EXPERT_OUT_DIM,
            })
            .collect();
        Ok(ModelSpecs {
            encoder,
            mapper,
            experts,
        })
    }

    pub fn j(&self) -> usize {
        self.experts.len()
    }

    /// `(in, out)` channel widths of mapper layer `i`.
    pub fn mapper_layer_dims(&self, i: usize) -> (usize, usize) {
        let n = self.mapper.n_layers;
        let input = if i == 0 {
            self.encoder.feat_dim
        } else {
            self.mapper.hidden_channels
        };
        let output = if i + 1 == n {
            self.j()
        } else {
            self.mapper.hidden_channels
        };
        (input, output)
    }

    /// `(in, out)` widths of linear layer `l` of expert `j`.
    pub fn expert_layer_dims(&self, j: usize, l: usize) -> (usize, usize) {
        let spec = &self.experts[j];
        let input = if l == 0 { spec.in_dim } else { spec.hidden };
        let output = if l + 1 == spec.depth {
            spec.out_dim
        } else {
            spec.hidden
        };
        (input, output)
    }
}

/// A conv layer's tensors: weight `[cout, cin, kh, kw]`, bias `[cout]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParam<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// A linear layer's tensors: weight `[in, out]`, bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParam<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T: Scalar> {
    pub conv_in: ConvParam<T>,
    pub blocks: Vec<(ConvParam<T>, ConvParam<T>)>,
    pub conv_out: ConvParam<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar> {
    pub specs: ModelSpecs,
    pub seed: u64,
    pub encoder: EncoderParams<T>,
    pub mapper: Vec<ConvParam<T>>,
    pub experts: Vec<Vec<LinearParam<T>>>,
}

fn init_tensor<T: Scalar>(seed: u64, name: &str, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut rng = rng::stream(seed, name, 0);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("sized above")
}

pub(crate) fn init_conv<T: Scalar>(
    seed: u64,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
) -> ConvParam<T> {
    let fan_in = cin * k * k;
    ConvParam {
        weight: init_tensor(seed, &format!("{name}.weight"), vec![cout, cin, k, k], fan_in),
        bias: init_tensor(seed, &format!("{name}.bias"), vec![cout], fan_in),
    }
}

pub(crate) fn init_linear<T: Scalar>(
    seed: u64,
    name: &str,
    d_in: usize,
    d_out: usize,
) -> LinearParam<T> {
    LinearParam {
        weight: init_tensor(seed, &format!("{name}.weight"), vec![d_in, d_out], d_in),
        bias: init_tensor(seed, &format!("{name}.bias"), vec![d_out], d_in),
    }
}

/// Encoder initialization shared with the mapper-free baseline: parameter
/// streams are keyed by the same names, so the same seed yields the same
/// encoder in both models.
pub(crate) fn init_encoder<T: Scalar>(spec: EncoderSpec, seed: u64) -> EncoderParams<T> {
    let d = spec.feat_dim;
    EncoderParams {
        conv_in: init_conv(seed, "encoder.conv_in", d, 3, 3),
        blocks: (0..spec.n_res_blocks)
            .map(|i| {
                (
                    init_conv(seed, &format!("encoder.block{i}.conv1"), d, d, 3),
                    init_conv(seed, &format!("encoder.block{i}.conv2"), d, d, 3),
                )
            })
            .collect(),
        conv_out: init_conv(seed, "encoder.conv_out", d, d, 3),
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded fan-in-uniform initialization. Each tensor draws from its own
    /// stream keyed by name, so models sharing a component name initialize
    /// that component identically regardless of what else they contain.
    pub fn init(specs: ModelSpecs, seed: u64) -> ModelParams<T> {
        let encoder = init_encoder(specs.encoder, seed);
        let mapper = (0..specs.mapper.n_layers)
            .map(|i| {
                let (cin, cout) = specs.mapper_layer_dims(i);
                init_conv(seed, &format!("mapper.conv{i}"), cout, cin, 3)
            })
            .collect();
        let experts = (0..specs.j())
            .map(|j| {
                (0..specs.experts[j].depth)
                    .map(|l| {
                        let (din, dout) = specs.expert_layer_dims(j, l);
                        init_linear(seed, &format!("expert{j}.layer{l}"), din, dout)
                    })
                    .collect()
            })
            .collect();
        ModelParams {
            specs,
            seed,
            encoder,
            mapper,
            experts,
        }
    }

    /// Visits every named tensor in a fixed, documented order: encoder
    /// (conv_in, blocks, conv_out), mapper layers, then experts by index.
    pub fn visit(&self, mut f: impl FnMut(&str, &Tensor<T>)) {
        let e = &self.encoder;
        f("encoder.conv_in.weight", &e.conv_in.weight);
        f("encoder.conv_in.bias", &e.conv_in.bias);
        for (i, (c1, c2)) in e.blocks.iter().enumerate() {
            f(&format!("encoder.block{i}.conv1.weight"), &c1.weight);
            f(&format!("encoder.block{i}.conv1.bias"), &c1.bias);
            f(&format!("encoder.block{i}.conv2.weight"), &c2.weight);
            f(&format!("encoder.block{i}.conv2.bias"), &c2.bias);
        }
        f("encoder.conv_out.weight", &e.conv_out.weight);
        f("encoder.conv_out.bias", &e.conv_out.bias);
        for (i, c) in self.mapper.iter().enumerate() {
            f(&format!("mapper.conv{i}.weight"), &c.weight);
            f(&format!("mapper.conv{i}.bias"), &c.bias);
        }
        for (j, layers) in self.experts.iter().enumerate() {
            for (l, lin) in layers.iter().enumerate() {
                f(&format!("expert{j}.layer{l}.weight"), &lin.weight);
                f(&format!("expert{j}.layer{l}.bias"), &lin.bias);
            }
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>)) {
        let e = &mut self.encoder;
        f("encoder.conv_in.weight", &mut e.conv_in.weight);
        f("encoder.conv_in.bias", &mut e.conv_in.bias);
        for (i, (c1, c2)) in e.blocks.iter_mut().enumerate() {
            f(&format!("encoder.block{i}.conv1.weight"), &mut c1.weight);
            f(&format!("encoder.block{i}.conv1.bias"), &mut c1.bias);
            f(&format!("encoder.block{i}.conv2.weight"), &mut c2.weight);
            f(&format!("encoder.block{i}.conv2.bias"), &mut c2.bias);
        }
        f("encoder.conv_out.weight", &mut e.conv_out.weight);
        f("encoder.conv_out.bias", &mut e.conv_out.bias);
        for (i, c) in self.mapper.iter_mut().enumerate() {
            f(&format!("mapper.conv{i}.weight"), &mut c.weight);
            f(&format!("mapper.conv{i}.bias"), &mut c.bias);
        }
        for (j, layers) in self.experts.iter_mut().enumerate() {
            for (l, lin) in layers.iter_mut().enumerate() {
                f(&format!("expert{j}.layer{l}.weight"), &mut lin.weight);
                f(&format!("expert{j}.layer{l}.bias"), &mut lin.bias);
            }
        }
    }

    pub fn n_tensors(&self) -> usize {
        let mut n = 0;
        self.visit(|_, _| n += 1);
        n
    }

    pub fn n_values(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.numel());
        n
    }

    pub fn to_precision<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |c: &ConvParam<T>| ConvParam {
            weight: c.weight.cast(),
            bias: c.bias.cast(),
        };
        ModelParams {
            specs: self.specs.clone(),
            seed: self.seed,
            encoder: EncoderParams {
                conv_in: conv(&self.encoder.conv_in),
                blocks: self
                    .encoder
                    .blocks
                    .iter()
                    .map(|(a, b)| (conv(a), conv(b)))
                    .collect(),
                conv_out: conv(&self.encoder.conv_out),
            },
            mapper: self.mapper.iter().map(conv).collect(),
            experts: self
                .experts
                .iter()
                .map(|layers| {
                    layers
                        .iter()
                        .map(|l| LinearParam {
                            weight: l.weight.cast(),
                            bias: l.bias.cast(),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Trainable values in expert `j`.
    pub fn expert_param_count(&self, j: usize) -> usize {
        self.experts[j]
            .iter()
            .map(|l| l.weight.numel() + l.bias.numel())
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Graph-side registration and builders (training path)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
pub struct GraphConv {
    pub weight: NodeId,
    pub bias: NodeId,
}

#[derive(Clone, Copy)]
pub struct GraphLinear {
    pub weight: NodeId,
    pub bias: NodeId,
}

/// Encoder leaf ids.
pub struct GraphEncoder {
    pub conv_in: GraphConv,
    pub blocks: Vec<(GraphConv, GraphConv)>,
    pub conv_out: GraphConv,
}

impl GraphEncoder {
    pub fn register<T: Scalar>(g: &mut Graph<T>, enc: &EncoderParams<T>) -> GraphEncoder {
        GraphEncoder {
            conv_in: register_conv(g, &enc.conv_in),
            blocks: enc
                .blocks
                .iter()
                .map(|(a, b)| (register_conv(g, a), register_conv(g, b)))
                .collect(),
            conv_out: register_conv(g, &enc.conv_out),
        }
    }

    pub fn leaf_ids(&self) -> Vec<NodeId> {
        let mut ids = vec![self.conv_in.weight, self.conv_in.bias];
        for (c1, c2) in &self.blocks {
            ids.extend([c1.weight, c1.bias, c2.weight, c2.bias]);
        }
        ids.extend([self.conv_out.weight, self.conv_out.bias]);
        ids
    }
}

fn register_conv<T: Scalar>(g: &mut Graph<T>, c: &ConvParam<T>) -> GraphConv {
    GraphConv {
        weight: g.leaf(c.weight.clone(), true),
        bias: g.leaf(c.bias.clone(), true),
    }
}

pub fn register_linear_stack<T: Scalar>(
    g: &mut Graph<T>,
    layers: &[LinearParam<T>],
) -> Vec<GraphLinear> {
    layers
        .iter()
        .map(|l| GraphLinear {
            weight: g.leaf(l.weight.clone(), true),
            bias: g.leaf(l.bias.clone(), true),
        })
        .collect()
}

/// Graph leaf ids for every parameter, in the same structure as
/// [`ModelParams`].
pub struct GraphModel {
    pub encoder: GraphEncoder,
    pub mapper: Vec<GraphConv>,
    pub experts: Vec<Vec<GraphLinear>>,
}

impl GraphModel {
    /// Registers all parameters as gradient-carrying leaves.
    pub fn register<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>) -> GraphModel {
        let encoder = GraphEncoder::register(g, &params.encoder);
        let mapper = params.mapper.iter().map(|c| register_conv(g, c)).collect();
        let experts = params
            .experts
            .iter()
            .map(|layers| register_linear_stack(g, layers))
            .collect();
        GraphModel {
            encoder,
            mapper,
            experts,
        }
    }

    /// Leaf ids in [`ModelParams::visit`] order, for pairing gradients with
    /// parameters.
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        let mut ids = self.encoder.leaf_ids();
        for c in &self.mapper {
            ids.extend([c.weight, c.bias]);
        }
        for layers in &self.experts {
            for l in layers {
                ids.extend([l.weight, l.bias]);
            }
        }
        ids
    }
}

fn conv_layer<T: Scalar>(g: &mut Graph<T>, c: GraphConv, x: NodeId) -> Result<NodeId> {
    let y = g.conv2d(x, c.weight, 1)?;
    g.add_chan_bias(y, c.bias)
}

/// Encoder forward: head conv, residual blocks (conv-relu-conv plus skip),
/// tail conv. Spatial extent is preserved throughout.
pub fn encode<T: Scalar>(g: &mut Graph<T>, enc: &GraphEncoder, lr: NodeId) -> Result<NodeId> {
    let mut h = conv_layer(g, enc.conv_in, lr)?;
    for (c1, c2) in &enc.blocks {
        let t = conv_layer(g, *c1, h)?;
        let t = g.relu(t);
        let t = conv_layer(g, *c2, t)?;
        h = g.add(h, t)?;
    }
    conv_layer(g, enc.conv_out, h)
}

/// Mapper forward: 3x3 conv stack with relu between layers (none after the
/// last), producing raw per-site expert scores `[J, h, w]`.
pub fn map_experts<T: Scalar>(
    g: &mut Graph<T>,
    mapper: &[GraphConv],
    z: NodeId,
) -> Result<NodeId> {
    let n = mapper.len();
    let mut h = z;
    for (i, c) in mapper.iter().enumerate() {
        h = conv_layer(g, *c, h)?;
        if i + 1 < n {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Expert MLP over feature rows: linear layers with relu between (none
/// after the last).
pub fn expert_mlp<T: Scalar>(
    g: &mut Graph<T>,
    layers: &[GraphLinear],
    feats: NodeId,
) -> Result<NodeId> {
    let n = layers.len();
    let mut h = feats;
    for (l, lin) in layers.iter().enumerate() {
        h = g.matmul(h, lin.weight)?;
        h = g.add_row_bias(h, lin.bias)?;
        if l + 1 < n {
            h = g.relu(h);
        }
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Pure forward (inference path)
// ---------------------------------------------------------------------------

fn conv_fwd<T: Scalar>(c: &ConvParam<T>, x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let ks = c.weight.shape();
    let (cin, h, w) = (s[0], s[1], s[2]);
    let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
    let mut data = kernels::conv2d(x.data(), cin, h, w, c.weight.data(), cout, kh, kw, 1);
    for (ci, &b) in c.bias.data().iter().enumerate() {
        for v in &mut data[ci * h * w..(ci + 1) * h * w] {
            *v = *v + b;
        }
    }
    Tensor::new(vec![cout, h, w], data).expect("conv preserves extent")
}

/// Latent grid `[feat_dim, h, w]` from an LR image tensor `[3, h, w]`.
pub fn encode_fwd<T: Scalar>(enc: &EncoderParams<T>, lr: &Tensor<T>) -> Tensor<T> {
    let mut h = conv_fwd(&enc.conv_in, lr);
    for (c1, c2) in &enc.blocks {
        let mut t = conv_fwd(c1, &h);
        for v in t.data_mut() {
            *v = v.max(T::zero());
        }
        let t = conv_fwd(c2, &t);
        for (hv, tv) in h.data_mut().iter_mut().zip(t.data()) {
            *hv = *hv + *tv;
        }
    }
    conv_fwd(&enc.conv_out, &h)
}

/// Raw expert scores `[J, h, w]` for a latent grid.
pub fn map_experts_fwd<T: Scalar>(mapper: &[ConvParam<T>], z: &Tensor<T>) -> Tensor<T> {
    let n = mapper.len();
    let mut h = z.clone();
    for (i, c) in mapper.iter().enumerate() {
        h = conv_fwd(c, &h);
        if i + 1 < n {
            for v in h.data_mut() {
                *v = v.max(T::zero());
            }
        }
    }
    h
}

/// Expert MLP over a batch of feature rows `[n, in_dim]` -> `[n, 3]`.
pub fn expert_forward_batch<T: Scalar>(
    layers: &[LinearParam<T>],
    feats: &Tensor<T>,
) -> Result<Tensor<T>> {
    let n_layers = layers.len();
    let mut h = feats.clone();
    for (l, lin) in layers.iter().enumerate() {
        let hs = h.shape();
        let ws = lin.weight.shape();
        if hs.len() != 2 || hs[1] != ws[0] {
            return Err(Error::dimension(format!(
                "expert layer {l}: features {hs:?} vs weight {ws:?}"
            )));
        }
        let (m, k, n) = (hs[0], hs[1], ws[1]);
        let mut data = kernels::matmul(h.data(), lin.weight.data(), m, k, n);
        for r in 0..m {
            for (v, &b) in data[r * n..(r + 1) * n].iter_mut().zip(lin.bias.data()) {
                *v = *v + b;
            }
        }
        if l + 1 < n_layers {
            for v in &mut data {
                *v = v.max(T::zero());
            }
        }
        h = Tensor::new(vec![m, n], data)?;
    }
    Ok(h)
}

/// Single-query decode through expert `j`.
pub fn expert_forward<T: Scalar>(
    params: &ModelParams<T>,
    j: usize,
    feat: &[T],
) -> Result<[T; 3]> {
    if j >= params.specs.j() {
        return Err(Error::usage(format!(
            "expert index {j} out of range for bank of {}",
            params.specs.j()
        )));
    }
    let expected = params.specs.experts[j].in_dim;
    if feat.len() != expected {
        return Err(Error::dimension(format!(
            "expert {j} expects {expected} features, got {}",
            feat.len()
        )));
    }
    let feats = Tensor::new(vec![1, feat.len()], feat.to_vec())?;
    let out = expert_forward_batch(&params.experts[j], &feats)?;
    Ok([out.data()[0], out.data()[1], out.data()[2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_specs(feat: usize, blocks: usize, hidden: usize) -> ModelSpecs {
        ModelSpecs::new(
            EncoderSpec {
                feat_dim: feat,
                n_res_blocks: blocks,
            },
            MapperSpec {
                n_layers: 2,
                hidden_channels: feat,
            },
            hidden,
            &[2, 3, 4, 5],
        )
        .unwrap()
    }

    #[test]
    fn encoder_preserves_spatial_extent() {
        let params: ModelParams<f32> = ModelParams::init(toy_specs(6, 2, 8), 1);
        let lr = Tensor::new(vec![3, 7, 11], vec![0.5; 3 * 7 * 11]).unwrap();
        let z = encode_fwd(&params.encoder, &lr);
        assert_eq!(z.shape(), &[6, 7, 11]);
    }

    #[test]
    fn zero_encoder_gives_zero_latent() {
        let mut params: ModelParams<f32> = ModelParams::init(toy_specs(4, 1, 8), 1);
        let zero = |c: &mut ConvParam<f32>| {
            *c = ConvParam {
                weight: Tensor::zeros(c.weight.shape().to_vec()),
                bias: Tensor::zeros(c.bias.shape().to_vec()),
            };
        };
        zero(&mut params.encoder.conv_in);
        for (a, b) in &mut params.encoder.blocks {
            zero(a);
            zero(b);
        }
        zero(&mut params.encoder.conv_out);
        let lr = Tensor::new(vec![3, 5, 5], vec![0.3; 75]).unwrap();
        let z = encode_fwd(&params.encoder, &lr);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let params: ModelParams<f32> = ModelParams::init(toy_specs(4, 1, 8), 99);
        let lr = Tensor::new(vec![3, 6, 6], (0..108).map(|v| v as f32 / 108.0).collect()).unwrap();
        let z1 = encode_fwd(&params.encoder, &lr);
        let z2 = encode_fwd(&params.encoder, &lr);
        assert_eq!(z1, z2);
        let params2: ModelParams<f32> = ModelParams::init(toy_specs(4, 1, 8), 99);
        assert_eq!(params, params2);
    }

    #[test]
    fn mapper_shape_follows_bank_size() {
        let params: ModelParams<f32> = ModelParams::init(toy_specs(4, 1, 8), 5);
        let lr = Tensor::new(vec![3, 5, 9], vec![0.1; 135]).unwrap();
        let z = encode_fwd(&params.encoder, &lr);
        let scores = map_experts_fwd(&params.mapper, &z);
        assert_eq!(scores.shape(), &[4, 5, 9]);
        assert!(scores.all_finite());

        // A single-layer mapper produces the same shape.
        let specs1 = ModelSpecs::new(
            EncoderSpec {
                feat_dim: 4,
                n_res_blocks: 1,
            },
            MapperSpec {
                n_layers: 1,
                hidden_channels: 8,
            },
            8,
            &[2, 3, 4, 5],
        )
        .unwrap();
        let p1: ModelParams<f32> = ModelParams::init(specs1, 5);
        let s1 = map_experts_fwd(&p1.mapper, &z);
        assert_eq!(s1.shape(), &[4, 5, 9]);
    }

    #[test]
    fn expert_param_count_matches_closed_form() {
        let specs = toy_specs(8, 1, 16);
        let params: ModelParams<f32> = ModelParams::init(specs.clone(), 3);
        let n = decoder_in_dim(8);
        for (j, spec) in specs.experts.iter().enumerate() {
            let (d, h) = (spec.depth, spec.hidden);
            let expect = n * h + h + (d - 2) * (h * h + h) + h * 3 + 3;
            assert_eq!(params.expert_param_count(j), expect, "expert {j}");
        }
    }

    #[test]
    fn zero_weight_depth2_expert_outputs_bias() {
        let mut params: ModelParams<f32> = ModelParams::init(toy_specs(4, 1, 8), 7);
        let last = params.experts[0].len() - 1;
        for l in 0..=last {
            params.experts[0][l].weight = Tensor::zeros(params.experts[0][l].weight.shape().to_vec());
            if l < last {
                params.experts[0][l].bias = Tensor::zeros(params.experts[0][l].bias.shape().to_vec());
            }
        }
        params.experts[0][last].bias = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let feat = vec![0.5f32; decoder_in_dim(4)];
        let rgb = expert_forward(&params, 0, &feat).unwrap();
        assert_eq!(rgb, [0.1, 0.2, 0.3]);
    }

    #[test]
    fn wrong_feature_length_rejected() {
        let params: ModelParams<f32> = ModelParams::init(toy_specs(4, 1, 8), 7);
        let feat = vec![0.5f32; 10];
        assert!(expert_forward(&params, 0, &feat).is_err());
    }

    #[test]
    fn equal_depth_equal_params_give_equal_outputs() {
        let params: ModelParams<f32> = ModelParams::init(toy_specs(4, 1, 8), 7);
        let feat = vec![0.25f32; decoder_in_dim(4)];
        let a = expert_forward(&params, 1, &feat).unwrap();
        let mut clone = params.clone();
        clone.experts[2] = params.experts[1].clone();
        let b = expert_forward(&clone, 2, &feat).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn translation_consistency_in_interior() {
        // Shift the input crop by one pixel; interior latent values must
        // shift identically.
        let specs = toy_specs(4, 1, 8);
        let params: ModelParams<f32> = ModelParams::init(specs, 11);
        let base = {
            let mut rng = crate::rng::stream(5, "ti", 0);
            use rand::Rng;
            let pixels = (0..3 * 20 * 20).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<f32>>();
            Tensor::new(vec![3, 20, 20], pixels).unwrap()
        };
        let crop = |t: &Tensor<f32>, y0: usize, x0: usize, side: usize| {
            let mut data = Vec::new();
            for c in 0..3 {
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        data.push(t.data()[c * 400 + y * 20 + x]);
                    }
                }
            }
            Tensor::new(vec![3, side, side], data).unwrap()
        };
        let za = encode_fwd(&params.encoder, &crop(&base, 0, 0, 16));
        let zb = encode_fwd(&params.encoder, &crop(&base, 0, 1, 16));
        // Margin larger than the stacked conv receptive field.
        let margin = 6;
        for c in 0..4 {
            for y in margin..16 - margin {
                for x in margin..16 - margin - 1 {
                    let a = za.data()[c * 256 + y * 16 + (x + 1)];
                    let b = zb.data()[c * 256 + y * 16 + x];
                    assert!(
                        (a - b).abs() < 1e-5,
                        "latent not translation consistent at c{c} y{y} x{x}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn graph_and_pure_forward_agree() {
        let specs = toy_specs(4, 2, 8);
        let params: ModelParams<f32> = ModelParams::init(specs, 23);
        let lr = Tensor::new(vec![3, 6, 7], (0..126).map(|v| v as f32 / 126.0).collect()).unwrap();

        let z_pure = encode_fwd(&params.encoder, &lr);
        let s_pure = map_experts_fwd(&params.mapper, &z_pure);

        let mut g = Graph::new();
        let gm = GraphModel::register(&mut g, &params);
        let lr_node = g.leaf(lr, false);
        let z = encode(&mut g, &gm.encoder, lr_node).unwrap();
        let s = map_experts(&mut g, &gm.mapper, z).unwrap();
        assert_eq!(g.value(z), &z_pure);
        assert_eq!(g.value(s), &s_pure);
    }
}
