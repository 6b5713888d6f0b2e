//! Training loop, loss-graph assembly, and arbitrary-scale evaluation.

use crate::adam::{adam_step, AdamHyper, AdamState};
use crate::checkpoint::write_checkpoint;
use crate::dataset::{sample_pair_with, TrainingPair};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::image::Image;
use crate::infer::reconstruct;
use crate::loss::{balance_from_col_mass, l1_loss, total_loss};
use crate::metrics::psnr;
use crate::model::{encode, map_experts, GraphModel, ModelParams, ModelSpecs};
use crate::profile::flops_pipeline;
use crate::resize::bicubic_resize;
use crate::rng;
use crate::routing::{gumbel_noise_matrix, route_train};
use crate::sampling::{binding_sites, nearest_latent, relcell_matrix};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rayon::prelude::*;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub specs: ModelSpecs,
    /// Reconstruction-loss weight.
    pub alpha: f64,
    /// Balance-loss weight.
    pub beta: f64,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    /// Per-expert balance weights w_j.
    pub balance_weights: Vec<f64>,
    pub adam: AdamHyper,
    pub steps: u64,
    pub batch_patches: usize,
    pub seed: u64,
    pub patch_size: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub queries_per_patch: usize,
    /// Emit a `step ...` metrics line every this many steps (0 = only the
    /// first and last).
    pub log_every: u64,
    /// Run a PSNR evaluation every this many steps (0 = never).
    pub eval_every: u64,
    pub eval_scale: f64,
}

impl TrainConfig {
    /// Desk-scale defaults around a given model: full-paper loss constants,
    /// 48x48 patches, random scales 1-4, 2000 steps of 1 patch.
    pub fn new(specs: ModelSpecs) -> TrainConfig {
        let j = specs.j();
        TrainConfig {
            specs,
            alpha: 3000.0,
            beta: 1.0,
            tau: 1.0,
            balance_weights: vec![1.0; j],
            adam: AdamHyper::default(),
            steps: 2000,
            batch_patches: 1,
            seed: 0,
            patch_size: crate::dataset::PATCH_SIZE,
            scale_min: crate::dataset::SCALE_MIN,
            scale_max: crate::dataset::SCALE_MAX,
            queries_per_patch: crate::dataset::QUERIES_PER_PATCH,
            log_every: 100,
            eval_every: 0,
            eval_scale: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::usage("alpha and beta must be non-negative"));
        }
        if self.tau <= 0.0 {
            return Err(Error::usage("tau must be positive"));
        }
        if self.balance_weights.len() != self.specs.j() {
            return Err(Error::usage(format!(
                "{} balance weights for {} experts",
                self.balance_weights.len(),
                self.specs.j()
            )));
        }
        if self.balance_weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::usage("balance weights must be positive"));
        }
        if self.steps == 0 || self.batch_patches == 0 {
            return Err(Error::usage("steps and batch_patches must be positive"));
        }
        if self.patch_size < 4 {
            return Err(Error::usage("patch size must be at least 4"));
        }
        if self.queries_per_patch == 0
            || self.queries_per_patch > self.patch_size * self.patch_size
        {
            return Err(Error::usage(format!(
                "queries_per_patch must be in 1..={}",
                self.patch_size * self.patch_size
            )));
        }
        if self.scale_min < 1.0 || self.scale_max < self.scale_min {
            return Err(Error::usage("need 1 <= scale_min <= scale_max"));
        }
        Ok(())
    }
}

/// One patch's graph inputs, precision-agnostic so the same batch can feed
/// an f32 training step or an f64 gradient check.
#[derive(Clone, Debug)]
pub struct PreparedPatch<T: Scalar> {
    pub lr: Tensor<T>,
    pub sites: Vec<usize>,
    pub relcell: Tensor<T>,
    pub targets: Tensor<T>,
    pub noise: Option<Tensor<T>>,
    pub patch_hw: (usize, usize),
}

/// Binds a sampled pair's queries to the LR patch grid and packs the graph
/// inputs.
pub fn prepare_patch<T: Scalar>(
    pair: &TrainingPair,
    noise: Option<Tensor<T>>,
) -> PreparedPatch<T> {
    let hw = (pair.lr_patch.height(), pair.lr_patch.width());
    let bindings: Vec<_> = pair
        .query_coords
        .iter()
        .zip(&pair.query_cells)
        .map(|(&q, &cell)| nearest_latent(q, hw, cell))
        .collect();
    let sites = binding_sites(&bindings, hw.1);
    let relcell = relcell_matrix(&bindings, hw);
    let mut tdata = Vec::with_capacity(pair.target_rgb.len() * 3);
    for rgb in &pair.target_rgb {
        tdata.extend(rgb.iter().map(|&v| T::from_f64(v as f64)));
    }
    let targets = Tensor::new(vec![pair.target_rgb.len(), 3], tdata).expect("sized above");
    PreparedPatch {
        lr: pair.lr_patch.to_chw(),
        sites,
        relcell,
        targets,
        noise,
        patch_hw: hw,
    }
}

pub struct LossBreakdown {
    pub total: NodeId,
    pub l1: NodeId,
    pub balance: NodeId,
}

/// Builds the full training objective into `g`: per patch, encode, map,
/// unfold, gather per query, soft-route through every expert, and take the
/// L1 term; the balance term consumes the noise-free softmax of the raw
/// scores of every input pixel in the batch at unit temperature.
pub fn build_training_loss<T: Scalar>(
    g: &mut Graph<T>,
    gm: &GraphModel,
    patches: &[PreparedPatch<T>],
    alpha: f64,
    beta: f64,
    tau: f64,
    balance_weights: &[f64],
) -> Result<LossBreakdown> {
    if patches.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    let mut l1_sum: Option<NodeId> = None;
    let mut col_mass: Option<NodeId> = None;
    let mut k_total = 0usize;

    for patch in patches {
        let lr = g.leaf(patch.lr.clone(), false);
        let z = encode(g, &gm.encoder, lr)?;
        let scores = map_experts(g, &gm.mapper, z)?;
        let score_rows = g.chw_to_rows(scores)?;

        let unfolded = g.unfold3x3(z)?;
        let unfolded_rows = g.chw_to_rows(unfolded)?;
        let gathered = g.gather_rows(unfolded_rows, patch.sites.clone())?;
        let relcell = g.leaf(patch.relcell.clone(), false);
        let feats = g.concat_cols(gathered, relcell)?;

        let query_scores = g.gather_rows(score_rows, patch.sites.clone())?;
        let route = route_train(
            g,
            &gm.experts,
            feats,
            query_scores,
            tau,
            patch.noise.clone(),
        )?;

        let targets = g.leaf(patch.targets.clone(), false);
        let l1_term = l1_loss(g, route.pred, targets)?;
        l1_sum = Some(match l1_sum {
            Some(acc) => g.add(acc, l1_term)?,
            None => l1_term,
        });

        let probs = g.softmax_rows(score_rows)?;
        let mass = g.sum_axis0(probs)?;
        col_mass = Some(match col_mass {
            Some(acc) => g.add(acc, mass)?,
            None => mass,
        });
        k_total += patch.patch_hw.0 * patch.patch_hw.1;
    }

    let l1 = g.scale(l1_sum.expect("non-empty batch"), 1.0 / patches.len() as f64);
    let balance = balance_from_col_mass(g, col_mass.expect("non-empty batch"), balance_weights, k_total)?;
    let total = total_loss(g, l1, balance, alpha, beta)?;
    Ok(LossBreakdown { total, l1, balance })
}

/// Draws the batch for one training step from the per-purpose streams.
pub fn sample_batch(
    images: &[Image],
    config: &TrainConfig,
    step: u64,
) -> Result<Vec<PreparedPatch<f32>>> {
    let mut out = Vec::with_capacity(config.batch_patches);
    for b in 0..config.batch_patches {
        let draw = step * config.batch_patches as u64 + b as u64;
        let mut data_rng = rng::stream(config.seed, "data", draw);
        let img = &images[data_rng.gen_range(0..images.len())];
        let pair = sample_pair_with(
            img,
            &mut data_rng,
            config.patch_size,
            config.scale_min,
            config.scale_max,
            config.queries_per_patch,
        )?;
        let noise = gumbel_noise_matrix::<f32>(
            config.seed,
            draw,
            config.queries_per_patch,
            config.specs.j(),
        );
        out.push(prepare_patch(&pair, Some(noise)));
    }
    Ok(out)
}

pub struct StepMetrics {
    pub loss: f64,
    pub l1: f64,
    pub balance: f64,
}

/// One optimizer step over a fresh graph. Returns the scalar metrics.
pub fn train_step(
    params: &mut ModelParams<f32>,
    state: &mut AdamState<f32>,
    images: &[Image],
    config: &TrainConfig,
    step: u64,
) -> Result<StepMetrics> {
    let batch = sample_batch(images, config, step)?;
    let mut g: Graph<f32> = Graph::new();
    let gm = GraphModel::register(&mut g, params);
    let losses = build_training_loss(
        &mut g,
        &gm,
        &batch,
        config.alpha,
        config.beta,
        config.tau,
        &config.balance_weights,
    )?;
    let grads_map = g.backward(losses.total)?;
    let grads: Vec<Tensor<f32>> = gm
        .leaf_ids()
        .iter()
        .map(|&id| grads_map.get(id).expect("leaf gradient present").clone())
        .collect();
    adam_step(params, &grads, state, &config.adam)?;
    Ok(StepMetrics {
        loss: g.value(losses.total).item()?.to_f64(),
        l1: g.value(losses.l1).item()?.to_f64(),
        balance: g.value(losses.balance).item()?.to_f64(),
    })
}

/// Full training run. Emits `step <n> loss <v> l1 <v> lb <v>` metrics lines
/// through `log`, plus `eval ...` lines when periodic evaluation is on, and
/// writes the final checkpoint when a path is given.
pub fn train(
    images: &[Image],
    config: &TrainConfig,
    ckpt_path: Option<&Path>,
    log: &mut dyn FnMut(&str),
) -> Result<ModelParams<f32>> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::usage("training dataset is empty"));
    }
    let mut params = ModelParams::<f32>::init(config.specs.clone(), config.seed);
    let mut state = AdamState::new_for(&params);

    for step in 0..config.steps {
        let metrics = train_step(&mut params, &mut state, images, config, step)?;
        let last = step + 1 == config.steps;
        if step == 0 || last || (config.log_every > 0 && (step + 1) % config.log_every == 0) {
            log(&format!(
                "step {} loss {:.6} l1 {:.6} lb {:.6}",
                step + 1,
                metrics.loss,
                metrics.l1,
                metrics.balance
            ));
        }
        if config.eval_every > 0 && ((step + 1) % config.eval_every == 0 || last) {
            let report = evaluate(&params, images, config.eval_scale)?;
            log(&format_eval_line(&report));
        }
    }
    if let Some(path) = ckpt_path {
        write_checkpoint(path, &params)?;
    }
    Ok(params)
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub scale: f64,
    pub mean_psnr: f64,
    pub per_image_psnr: Vec<f64>,
    /// Output-pixel share of each expert over the whole dataset.
    pub shares: Vec<f64>,
    /// Mean decoder-FLOPs ratio versus the all-deepest baseline.
    pub mean_flops_ratio: f64,
}

pub fn format_eval_line(r: &EvalReport) -> String {
    let shares = r
        .shares
        .iter()
        .map(|s| format!("{s:.4}"))
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "eval scale {} psnr {:.4} shares {}",
        r.scale, r.mean_psnr, shares
    )
}

/// Downscales each image by `scale`, reconstructs at the original size with
/// hard routing, and reports PSNR, expert shares, and FLOPs ratios.
pub fn evaluate(params: &ModelParams<f32>, images: &[Image], scale: f64) -> Result<EvalReport> {
    if scale < 1.0 {
        return Err(Error::usage(format!("scale must be >= 1, got {scale}")));
    }
    if images.is_empty() {
        return Err(Error::usage("no images to evaluate"));
    }
    let j = params.specs.j();
    let results: Vec<Result<(f64, Vec<u64>, f64)>> = images
        .par_iter()
        .map(|img| {
            let (h, w) = (img.height(), img.width());
            let lr_h = ((h as f64 / scale).round() as usize).max(1);
            let lr_w = ((w as f64 / scale).round() as usize).max(1);
            let lr = bicubic_resize(img, lr_h, lr_w);
            let rec = reconstruct(params, &lr, h, w)?;
            let db = psnr(&rec.image, img)?;
            let mut counts = vec![0u64; j];
            for &d in &rec.decisions {
                counts[d] += 1;
            }
            let report = flops_pipeline(&params.specs, lr_h, lr_w, h, w, &rec.decisions)?;
            Ok((db, counts, report.ratio))
        })
        .collect();

    let mut per_image_psnr = Vec::with_capacity(images.len());
    let mut counts = vec![0u64; j];
    let mut ratio_sum = 0.0;
    for r in results {
        let (db, c, ratio) = r?;
        per_image_psnr.push(db);
        for (acc, v) in counts.iter_mut().zip(c) {
            *acc += v;
        }
        ratio_sum += ratio;
    }
    let total: u64 = counts.iter().sum();
    let shares = counts
        .iter()
        .map(|&c| c as f64 / total.max(1) as f64)
        .collect();
    Ok(EvalReport {
        scale,
        mean_psnr: per_image_psnr.iter().sum::<f64>() / per_image_psnr.len() as f64,
        per_image_psnr,
        shares,
        mean_flops_ratio: ratio_sum / images.len() as f64,
    })
}
