use std::collections::BTreeMap;

use super::{Gradients, Result, Tensor, TensorError};

/// Kernel and bias of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn len(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: LayerParams,
    v: LayerParams,
}

/// Adam optimizer state for a set of trainable layers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    moments: BTreeMap<usize, Moments>,
    pub t: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    /// Fresh state tracking `layers` (index into `params`) with the usual
    /// defaults `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(params: &[LayerParams], layers: impl IntoIterator<Item = usize>, lr: f32) -> Self {
        let moments = layers
            .into_iter()
            .map(|i| {
                let zero = LayerParams {
                    kernel: Tensor::zeros(params[i].kernel.dims()),
                    bias: Tensor::zeros(params[i].bias.dims()),
                };
                (i, Moments { m: zero.clone(), v: zero })
            })
            .collect();
        Self { moments, t: 0, lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.moments.keys().copied()
    }
}

fn update(p: &mut Tensor, g: &Tensor, m: &mut Tensor, v: &mut Tensor, s: &AdamState, c1: f32, c2: f32) {
    let (b1, b2) = (s.beta1, s.beta2);
    for (((p, &g), m), v) in p
        .data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(m.data_mut())
        .zip(v.data_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= s.lr * mhat / (vhat.sqrt() + s.epsilon);
    }
}

/// One bias-corrected Adam update of the layers tracked by `state`.
///
/// `grads` must cover exactly the tracked layers; every other layer in
/// `params` is left untouched.
pub fn adam_step(params: &mut [LayerParams], grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let tracked: Vec<usize> = state.layers().collect();
    let given: Vec<usize> = grads.layers.keys().copied().collect();
    if tracked != given {
        return Err(TensorError::ParamMismatch(format!(
            "optimizer tracks layers {tracked:?}, gradients cover {given:?}"
        )));
    }
    for (&layer, g) in &grads.layers {
        let p = params
            .get(layer)
            .ok_or_else(|| TensorError::ParamMismatch(format!("no parameters for layer {layer}")))?;
        if p.kernel.dims() != g.kernel.dims() || p.bias.dims() != g.bias.dims() {
            return Err(TensorError::ParamMismatch(format!("layer {layer} gradient dims differ")));
        }
    }

    state.t += 1;
    let c1 = (1.0 - (state.beta1 as f64).powi(state.t as i32)) as f32;
    let c2 = (1.0 - (state.beta2 as f64).powi(state.t as i32)) as f32;
    let snapshot = state.clone();
    for (&layer, g) in &grads.layers {
        let mom = state.moments.get_mut(&layer).expect("checked above");
        let p = &mut params[layer];
        update(&mut p.kernel, &g.kernel, &mut mom.m.kernel, &mut mom.v.kernel, &snapshot, c1, c2);
        update(&mut p.bias, &g.bias, &mut mom.m.bias, &mut mom.v.bias, &snapshot, c1, c2);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::LayerGrad;

    fn one_param(value: f32) -> Vec<LayerParams> {
        vec![LayerParams { kernel: Tensor::scalar(value), bias: Tensor::scalar(0.0) }]
    }

    fn grad(g: f32) -> Gradients {
        let mut gr = Gradients::default();
        gr.layers.insert(0, LayerGrad { kernel: Tensor::scalar(g), bias: Tensor::scalar(0.0) });
        gr
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_param(1.5);
        let mut s = AdamState::new(&p, [0], 0.01);
        adam_step(&mut p, &grad(0.0), &mut s).unwrap();
        assert_eq!(p[0].kernel.data()[0], 1.5);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.003f32, 0.5, 7.0] {
            let mut p = one_param(1.0);
            let mut s = AdamState::new(&p, [0], 0.01);
            adam_step(&mut p, &grad(g), &mut s).unwrap();
            // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
            let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((p[0].kernel.data()[0] - expected).abs() < 1e-6, "g = {g}");
        }
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut p = one_param(0.0);
        let mut s = AdamState::new(&p, [0], 0.01);
        let mut last = 0.0;
        for _ in 0..2 {
            adam_step(&mut p, &grad(0.2), &mut s).unwrap();
            let now = p[0].kernel.data()[0];
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn mismatched_layers_rejected() {
        let mut p = one_param(0.0);
        p.push(p[0].clone());
        let mut s = AdamState::new(&p, [1], 0.01);
        let err = adam_step(&mut p, &grad(1.0), &mut s).unwrap_err();
        assert!(matches!(err, TensorError::ParamMismatch(_)));
    }
}
