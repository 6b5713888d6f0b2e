//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter tensor, in
/// [`ModelParams::visit`] order.
pub struct AdamState<T: Scalar> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn from_shapes(shapes: impl IntoIterator<Item = Vec<usize>>) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        let v = m.clone();
        AdamState { m, v, step: 0 }
    }

    pub fn new_for(model: &ModelParams<T>) -> Self {
        let mut shapes = Vec::new();
        model.visit(|_, t| shapes.push(t.shape().to_vec()));
        Self::from_shapes(shapes)
    }

    /// Advances the step counter; call once per optimizer step before
    /// [`AdamState::update_tensor`].
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates one parameter tensor in place. `idx` addresses the moment
    /// slot; callers must keep a stable tensor order across steps.
    pub fn update_tensor(
        &mut self,
        idx: usize,
        hyper: &AdamHyper,
        param: &mut Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<()> {
        if grad.shape() != param.shape() {
            return Err(Error::dimension(format!(
                "adam update: grad shape {:?} vs param {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        let t = self.step as i32;
        let b1 = T::from_f64(hyper.beta1);
        let b2 = T::from_f64(hyper.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - hyper.beta1.powi(t));
        let corr2 = T::from_f64(1.0 - hyper.beta2.powi(t));
        let lr = T::from_f64(hyper.lr);
        let eps = T::from_f64(hyper.eps);
        let m = &mut self.m[idx];
        let v = &mut self.v[idx];
        for (((p, &g), mv), vv) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (one - b1) * g;
            *vv = b2 * *vv + (one - b2) * g * g;
            let m_hat = *mv / corr1;
            let v_hat = *vv / corr2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One optimizer step. `grads` must be in [`ModelParams::visit`] order, one
/// tensor per parameter, shapes matching.
pub fn adam_step<T: Scalar>(
    model: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(Error::usage(format!(
            "adam_step: {} gradients for {} parameters",
            grads.len(),
            state.m.len()
        )));
    }
    state.begin_step();
    let mut idx = 0;
    let mut failure = None;
    model.visit_mut(|name, param| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = state.update_tensor(idx, hyper, param, &grads[idx]) {
            failure = Some(Error::dimension(format!("{e} (parameter {name})")));
            return;
        }
        idx += 1;
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderSpec, MapperSpec, ModelSpecs};

    fn toy_model(seed: u64) -> ModelParams<f64> {
        let specs = ModelSpecs::new(
            EncoderSpec {
                feat_dim: 2,
                n_res_blocks: 0,
            },
            MapperSpec {
                n_layers: 1,
                hidden_channels: 2,
            },
            4,
            &[2, 3],
        )
        .unwrap();
        ModelParams::init(specs, seed)
    }

    fn ones_grads(model: &ModelParams<f64>, value: f64) -> Vec<Tensor<f64>> {
        let mut g = Vec::new();
        model.visit(|_, t| g.push(Tensor::full(t.shape().to_vec(), value)));
        g
    }

    #[test]
    fn first_step_closed_form() {
        let mut model = toy_model(1);
        let before = {
            let mut v = Vec::new();
            model.visit(|_, t| v.extend_from_slice(t.data()));
            v
        };
        let grads = ones_grads(&model, 1.0);
        let mut state = AdamState::new_for(&model);
        let hyper = AdamHyper::default();
        adam_step(&mut model, &grads, &mut state, &hyper).unwrap();

        let expect_delta = -1e-4 * (1.0 / (1.0 + 1e-8));
        let mut after = Vec::new();
        model.visit(|_, t| after.extend_from_slice(t.data()));
        for (b, a) in before.iter().zip(&after) {
            assert!(((a - b) - expect_delta).abs() < 1e-12, "delta {}", a - b);
        }
    }

    #[test]
    fn zero_gradient_means_zero_update() {
        let mut model = toy_model(2);
        let reference = model.clone();
        let grads = ones_grads(&model, 0.0);
        let mut state = AdamState::new_for(&model);
        for _ in 0..3 {
            adam_step(&mut model, &grads, &mut state, &AdamHyper::default()).unwrap();
        }
        assert_eq!(model, reference);
        assert_eq!(state.step, 3);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut model = toy_model(3);
            let mut state = AdamState::new_for(&model);
            for step in 0..5 {
                let grads = ones_grads(&model, 0.1 * (step as f64 + 1.0));
                adam_step(&mut model, &grads, &mut state, &AdamHyper::default()).unwrap();
            }
            let mut v = Vec::new();
            model.visit(|_, t| v.extend_from_slice(t.data()));
            v
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradient_count_mismatch_rejected() {
        let mut model = toy_model(4);
        let mut state = AdamState::new_for(&model);
        let grads = vec![Tensor::<f64>::zeros(vec![1])];
        assert!(adam_step(&mut model, &grads, &mut state, &AdamHyper::default()).is_err());
    }
}
