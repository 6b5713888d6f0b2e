//! Expert routing: soft Gumbel-softmax mixing for training, hard argmax
//! dispatch for inference, and expert-wise batching.
//!
//! Training evaluates every expert per query and mixes their outputs with
//! weights `softmax((scores + G) / tau)` where `G` is Gumbel noise; the
//! noise term keeps early routing decisions from freezing. Inference runs
//! exactly one expert per query, chosen by the raw-score argmax with ties
//! resolved toward the smaller (cheaper) index.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{expert_forward_batch, expert_mlp, GraphLinear, LinearParam};
use crate::rng;
use crate::tensor::{Scalar, Tensor};
use rand::Rng;

/// Per-query routing outcome: soft mixing weights in training, a single
/// expert index at inference.
#[derive(Clone, Debug)]
pub enum RoutingDecision {
    Soft { probs: Vec<f64>, tau: f64 },
    Hard { expert: usize },
}

/// Tempered softmax of `scores + noise`, the training-time relaxation of
/// argmax dispatch. `noise = None` turns the perturbation off (deterministic
/// evaluation and tests).
pub fn gumbel_softmax<T: Scalar>(
    scores: &[T],
    tau: f64,
    noise: Option<&[T]>,
) -> Result<Vec<T>> {
    if tau <= 0.0 {
        return Err(Error::usage(format!("tau must be positive, got {tau}")));
    }
    if let Some(n) = noise {
        if n.len() != scores.len() {
            return Err(Error::dimension(format!(
                "noise length {} vs scores length {}",
                n.len(),
                scores.len()
            )));
        }
    }
    let inv_tau = T::from_f64(1.0 / tau);
    let perturbed: Vec<T> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let g = noise.map_or(T::zero(), |n| n[i]);
            (s + g) * inv_tau
        })
        .collect();
    Ok(crate::kernels::softmax_rows(&perturbed, 1, perturbed.len()))
}

/// One standard Gumbel draw: `-ln(-ln U)`, with `U` clamped away from 0 and
/// 1 so the logs stay finite.
pub fn gumbel_draw(rng: &mut impl Rng) -> f64 {
    let u = rng.gen_range(0.0f64..1.0).clamp(1e-12, 1.0 - 1e-12);
    -(-u.ln()).ln()
}

/// `[k, j]` noise matrix where row `q` comes from the stream
/// `(seed, "gumbel", step, q)`, so parallel query processing reproduces the
/// sequential result.
pub fn gumbel_noise_matrix<T: Scalar>(seed: u64, step: u64, k: usize, j: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(k * j);
    for q in 0..k {
        let mut r = rng::stream(seed, "gumbel", (step << 32) | q as u64);
        for _ in 0..j {
            data.push(T::from_f64(gumbel_draw(&mut r)));
        }
    }
    Tensor::new(vec![k, j], data).expect("sized above")
}

/// Argmax per score row; exact ties go to the smaller index.
pub fn argmax_rows<T: Scalar>(scores: &Tensor<T>) -> Result<Vec<usize>> {
    let s = scores.shape();
    if s.len() != 2 {
        return Err(Error::dimension(format!(
            "argmax_rows: want [k, j], got {s:?}"
        )));
    }
    let (k, j) = (s[0], s[1]);
    let mut out = Vec::with_capacity(k);
    for r in 0..k {
        let row = &scores.data()[r * j..(r + 1) * j];
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = i;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Partitions query indices by their hard decision: result `[j]` lists
/// together contain every query exactly once, in ascending order per list.
pub fn group_by_expert(decisions: &[usize], n_experts: usize) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); n_experts];
    for (q, &e) in decisions.iter().enumerate() {
        if e >= n_experts {
            return Err(Error::usage(format!(
                "decision {e} out of range for {n_experts} experts"
            )));
        }
        groups[e].push(q);
    }
    Ok(groups)
}

/// Training route built into the graph: every expert runs on all queries and
/// the outputs are convexly combined with the provided `[k, j]` weights.
/// With one-hot weight rows this reproduces hard dispatch exactly.
pub fn route_with_weights<T: Scalar>(
    g: &mut Graph<T>,
    experts: &[Vec<GraphLinear>],
    feats: NodeId,
    weights: NodeId,
) -> Result<NodeId> {
    let k = g.shape(feats)[0];
    let ws = g.shape(weights);
    if ws != [k, experts.len()] {
        return Err(Error::dimension(format!(
            "route weights {ws:?} vs {k} queries x {} experts",
            experts.len()
        )));
    }
    let mut pred: Option<NodeId> = None;
    for (j, layers) in experts.iter().enumerate() {
        let out_j = expert_mlp(g, layers, feats)?;
        let w_j = g.select_col(weights, j)?;
        let contrib = g.scale_rows(out_j, w_j)?;
        pred = Some(match pred {
            Some(p) => g.add(p, contrib)?,
            None => contrib,
        });
    }
    Ok(pred.expect("bank not empty"))
}

pub struct SoftRoute {
    /// `[k, 3]` mixed rgb predictions.
    pub pred: NodeId,
    /// `[k, j]` Gumbel-softmax weights actually applied.
    pub weights: NodeId,
}

/// Eq-style soft routing: weights are the tempered softmax of the bound
/// pixel's raw scores plus optional Gumbel noise; the result is
/// differentiable into the mapper and every expert.
pub fn route_train<T: Scalar>(
    g: &mut Graph<T>,
    experts: &[Vec<GraphLinear>],
    feats: NodeId,
    query_scores: NodeId,
    tau: f64,
    noise: Option<Tensor<T>>,
) -> Result<SoftRoute> {
    if tau <= 0.0 {
        return Err(Error::usage(format!("tau must be positive, got {tau}")));
    }
    let perturbed = match noise {
        Some(n) => {
            if n.shape() != g.shape(query_scores) {
                return Err(Error::dimension(format!(
                    "noise shape {:?} vs scores {:?}",
                    n.shape(),
                    g.shape(query_scores)
                )));
            }
            let noise_leaf = g.leaf(n, false);
            g.add(query_scores, noise_leaf)?
        }
        None => query_scores,
    };
    let tempered = g.scale(perturbed, 1.0 / tau);
    let weights = g.softmax_rows(tempered)?;
    let pred = route_with_weights(g, experts, feats, weights)?;
    Ok(SoftRoute { pred, weights })
}

/// Inference route: each query runs through exactly the expert its bound
/// pixel's argmax selected, batched per expert. Returns `[k, 3]`.
pub fn route_infer<T: Scalar>(
    experts: &[Vec<LinearParam<T>>],
    feats: &Tensor<T>,
    decisions: &[usize],
) -> Result<Tensor<T>> {
    let fs = feats.shape();
    if fs.len() != 2 || fs[0] != decisions.len() {
        return Err(Error::dimension(format!(
            "route_infer: feats {fs:?} vs {} decisions",
            decisions.len()
        )));
    }
    let (k, in_dim) = (fs[0], fs[1]);
    let groups = group_by_expert(decisions, experts.len())?;
    let mut out = vec![T::zero(); k * 3];
    for (j, group) in groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let mut sub = Vec::with_capacity(group.len() * in_dim);
        for &q in group {
            sub.extend_from_slice(&feats.data()[q * in_dim..(q + 1) * in_dim]);
        }
        let sub = Tensor::new(vec![group.len(), in_dim], sub)?;
        let rgb = expert_forward_batch(&experts[j], &sub)?;
        for (row, &q) in group.iter().enumerate() {
            out[q * 3..(q + 1) * 3].copy_from_slice(&rgb.data()[row * 3..(row + 1) * 3]);
        }
    }
    Tensor::new(vec![k, 3], out)
}

/// Fraction of queries handled by each expert.
pub fn expert_shares(decisions: &[usize], n_experts: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_experts];
    for &d in decisions {
        counts[d] += 1;
    }
    counts
        .into_iter()
        .map(|c| c as f64 / decisions.len().max(1) as f64)
        .collect()
}
