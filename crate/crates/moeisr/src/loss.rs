//! Training losses: L1 reconstruction, expert-balance penalty, and their
//! weighted total.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Scalar;

/// Mean absolute error over all values of `pred` and `target` (same shape).
pub fn l1_loss<T: Scalar>(g: &mut Graph<T>, pred: NodeId, target: NodeId) -> Result<NodeId> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::usage(format!(
            "l1_loss: shapes {:?} vs {:?}",
            g.shape(pred),
            g.shape(target)
        )));
    }
    let n = g.value(pred).numel();
    let diff = g.sub(pred, target)?;
    let mag = g.abs(diff);
    let total = g.sum_all(mag);
    Ok(g.scale(total, 1.0 / n as f64))
}

/// Balance penalty over per-pixel routing probabilities `probs` (`[k, j]`,
/// rows on the simplex): `sum_j | w_j * sum_k probs[k][j]  -  k / j |`.
/// Zero exactly when every weighted column mass hits the uniform target.
pub fn balance_loss<T: Scalar>(
    g: &mut Graph<T>,
    probs: NodeId,
    weights: &[f64],
) -> Result<NodeId> {
    let s = g.shape(probs);
    if s.len() != 2 {
        return Err(Error::dimension(format!(
            "balance_loss: want [k, j], got {s:?}"
        )));
    }
    let (k, j) = (s[0], s[1]);
    if weights.len() != j {
        return Err(Error::usage(format!(
            "balance_loss: {} weights for {j} experts",
            weights.len()
        )));
    }
    let col_mass = g.sum_axis0(probs)?; // [j]
    balance_from_col_mass(g, col_mass, weights, k)
}

/// Balance penalty from pre-summed per-expert probability mass (`[j]`).
/// Lets batched training accumulate column masses across patches before
/// taking the deviation once, with `k_total` input pixels overall.
pub fn balance_from_col_mass<T: Scalar>(
    g: &mut Graph<T>,
    col_mass: NodeId,
    weights: &[f64],
    k_total: usize,
) -> Result<NodeId> {
    let s = g.shape(col_mass);
    if s.len() != 1 || s[0] != weights.len() {
        return Err(Error::dimension(format!(
            "balance_from_col_mass: mass {s:?} vs {} weights",
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::usage("balance weights must be positive"));
    }
    let j = weights.len();
    let w_leaf = {
        let data = weights.iter().map(|&w| T::from_f64(w)).collect();
        let t = crate::tensor::Tensor::new(vec![j], data)?;
        g.leaf(t, false)
    };
    let weighted = g.mul(col_mass, w_leaf)?;
    let centered = g.add_scalar(weighted, -(k_total as f64) / j as f64);
    let dev = g.abs(centered);
    Ok(g.sum_all(dev))
}

/// `alpha * l1 + beta * balance`, combined in-graph.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    l1: NodeId,
    balance: NodeId,
    alpha: f64,
    beta: f64,
) -> Result<NodeId> {
    let a = g.scale(l1, alpha);
    let b = g.scale(balance, beta);
    g.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn scalar_of(g: &Graph<f64>, id: NodeId) -> f64 {
        g.value(id).item().unwrap()
    }

    #[test]
    fn perfect_prediction_zero_l1() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::from_vec(vec![0.1f64, 0.9, 0.4]), false);
        let t = g.leaf(Tensor::from_vec(vec![0.1f64, 0.9, 0.4]), false);
        let l = l1_loss(&mut g, p, t).unwrap();
        assert_eq!(scalar_of(&g, l), 0.0);
    }

    #[test]
    fn uniform_half_diff() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::from_vec(vec![1.0f64; 6]), false);
        let t = g.leaf(Tensor::from_vec(vec![0.5f64; 6]), false);
        let l = l1_loss(&mut g, p, t).unwrap();
        assert!((scalar_of(&g, l) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn l1_matches_direct_accumulation() {
        let mut r = crate::rng::stream(31, "l1", 0);
        let a: Vec<f64> = (0..30).map(|_| r.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..30).map(|_| r.gen_range(0.0..1.0)).collect();
        let direct: f64 =
            a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
        let mut g = Graph::new();
        let p = g.leaf(Tensor::from_vec(a), false);
        let t = g.leaf(Tensor::from_vec(b), false);
        let l = l1_loss(&mut g, p, t).unwrap();
        assert!((scalar_of(&g, l) - direct).abs() < 1e-9);
    }

    #[test]
    fn l1_shape_mismatch_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let p = g.leaf(Tensor::from_vec(vec![0.0; 3]), false);
        let t = g.leaf(Tensor::from_vec(vec![0.0; 4]), false);
        assert!(l1_loss(&mut g, p, t).is_err());
    }

    #[test]
    fn uniform_routing_zero_balance() {
        // k=8, j=4, all rows uniform 0.25, w=1 -> column masses hit k/j.
        let mut g = Graph::new();
        let probs = g.leaf(Tensor::new(vec![8, 4], vec![0.25f64; 32]).unwrap(), false);
        let l = balance_loss(&mut g, probs, &[1.0; 4]).unwrap();
        assert_eq!(scalar_of(&g, l), 0.0);
    }

    #[test]
    fn collapsed_routing_closed_form() {
        // All mass on expert 0: |8-2| + 3*|0-2| = 12 = 2k(j-1)/j.
        let mut data = vec![0.0f64; 32];
        for q in 0..8 {
            data[q * 4] = 1.0;
        }
        let mut g = Graph::new();
        let probs = g.leaf(Tensor::new(vec![8, 4], data).unwrap(), false);
        let l = balance_loss(&mut g, probs, &[1.0; 4]).unwrap();
        assert_eq!(scalar_of(&g, l), 12.0);
    }

    #[test]
    fn weighted_uniform_routing() {
        // Uniform rows with w=(2,1,1,1): only the first term deviates,
        // |2*2 - 2| = 2.
        let mut g = Graph::new();
        let probs = g.leaf(Tensor::new(vec![8, 4], vec![0.25f64; 32]).unwrap(), false);
        let l = balance_loss(&mut g, probs, &[2.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(scalar_of(&g, l), 2.0);
    }

    #[test]
    fn total_reduces_to_l1_when_beta_zero() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::from_vec(vec![0.4f64, 0.6]), false);
        let t = g.leaf(Tensor::from_vec(vec![0.0f64, 0.0]), false);
        let l1 = l1_loss(&mut g, p, t).unwrap();
        let probs = g.leaf(Tensor::new(vec![2, 2], vec![0.9, 0.1, 0.8, 0.2]).unwrap(), false);
        let lb = balance_loss(&mut g, probs, &[1.0, 1.0]).unwrap();
        let total = total_loss(&mut g, l1, lb, 3000.0, 0.0).unwrap();
        assert!((scalar_of(&g, total) - 3000.0 * 0.5).abs() < 1e-9);
    }

    #[test]
    fn perfect_prediction_uniform_routing_zero_total() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::from_vec(vec![0.3f64; 6]), false);
        let t = g.leaf(Tensor::from_vec(vec![0.3f64; 6]), false);
        let l1 = l1_loss(&mut g, p, t).unwrap();
        let probs = g.leaf(Tensor::new(vec![4, 4], vec![0.25f64; 16]).unwrap(), false);
        let lb = balance_loss(&mut g, probs, &[1.0; 4]).unwrap();
        let total = total_loss(&mut g, l1, lb, 3000.0, 1.0).unwrap();
        assert_eq!(scalar_of(&g, total), 0.0);
    }
}
