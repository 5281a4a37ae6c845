use std::collections::BTreeMap;

use super::ops::{self, split_channels};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Conv {
        input: usize,
        layer: usize,
        kernel: Tensor,
        bias: Tensor,
        stride: usize,
        pad: usize,
    },
    Relu {
        input: usize,
    },
    Concat {
        a: usize,
        b: usize,
        a_channels: usize,
    },
    Upsample {
        input: usize,
    },
    Softmax {
        input: usize,
    },
    WeightedNll {
        probs: usize,
        labels: Vec<u8>,
        weights: Vec<f32>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradient of one parameterised layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Gradients keyed by layer index. Only layers at or after the tape's freeze
/// boundary ever appear.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub layers: BTreeMap<usize, LayerGrad>,
}

impl Gradients {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn get(&self, layer: usize) -> Option<&LayerGrad> {
        self.layers.get(&layer)
    }
}

/// Forward-operation record for reverse-mode differentiation.
///
/// Convolution layers carry the index of the block they belong to. Layers
/// with index below `freeze_boundary` are frozen: no parameter gradients are
/// produced for them, and back-propagation stops at the first node that has
/// no trainable ancestor.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    freeze_boundary: usize,
    consumed: bool,
}

/// Probabilities below this are clipped before taking the logarithm.
pub const PROB_FLOOR: f32 = 1e-12;

impl Tape {
    pub fn new(freeze_boundary: usize) -> Self {
        Self { nodes: Vec::new(), freeze_boundary, consumed: false }
    }

    pub fn freeze_boundary(&self) -> usize {
        self.freeze_boundary
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        self.consumed = false;
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t, false)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        layer: usize,
        kernel: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let value = ops::conv2d(self.value(x), kernel, bias, stride, pad)?;
        let rg = layer >= self.freeze_boundary || self.needs(x.0);
        let op = Op::Conv { input: x.0, layer, kernel: kernel.clone(), bias: bias.clone(), stride, pad };
        Ok(self.push(op, value, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = ops::relu(self.value(x));
        let rg = self.needs(x.0);
        self.push(Op::Relu { input: x.0 }, value, rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::concat_channels(self.value(a), self.value(b))?;
        let a_channels = self.value(a).dims()[1];
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::Concat { a: a.0, b: b.0, a_channels }, value, rg))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let value = ops::upsample2x(self.value(x))?;
        let rg = self.needs(x.0);
        Ok(self.push(Op::Upsample { input: x.0 }, value, rg))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let value = ops::softmax_channels(self.value(x))?;
        let rg = self.needs(x.0);
        Ok(self.push(Op::Softmax { input: x.0 }, value, rg))
    }

    /// Weighted negative log-likelihood of `labels` under the per-pixel
    /// distributions in `probs`, normalised by the weight sum. Produces a
    /// scalar node.
    pub fn weighted_nll(&mut self, probs: Var, labels: &[u8], weights: &[f32]) -> Result<Var> {
        let value = Tensor::scalar(weighted_nll_value(self.value(probs), labels, weights)?);
        let rg = self.needs(probs.0);
        let op = Op::WeightedNll { probs: probs.0, labels: labels.to_vec(), weights: weights.to_vec() };
        Ok(self.push(op, value, rg))
    }

    /// Recomputes every node from the recorded inputs and saved parameters
    /// and returns the final node's value.
    pub fn replay(&self) -> Result<Tensor> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Input => node.value.clone(),
                Op::Conv { input, kernel, bias, stride, pad, .. } => {
                    ops::conv2d(&values[*input], kernel, bias, *stride, *pad)?
                }
                Op::Relu { input } => ops::relu(&values[*input]),
                Op::Concat { a, b, .. } => ops::concat_channels(&values[*a], &values[*b])?,
                Op::Upsample { input } => ops::upsample2x(&values[*input])?,
                Op::Softmax { input } => ops::softmax_channels(&values[*input])?,
                Op::WeightedNll { probs, labels, weights } => {
                    Tensor::scalar(weighted_nll_value(&values[*probs], labels, weights)?)
                }
            };
            values.push(v);
        }
        values.pop().ok_or_else(|| TensorError::Shape("empty tape".into()))
    }

    /// Back-propagates `seed` from the scalar node `root`.
    ///
    /// Returns gradients for every parameterised layer at or after the freeze
    /// boundary that influences `root`. A tape can be differentiated once;
    /// recording any new operation re-arms it.
    pub fn backward_partial(&mut self, root: Var, seed: f32) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.value(root).len() != 1 {
            return Err(TensorError::Shape(format!(
                "backward root must be scalar, got {:?}",
                self.value(root).dims()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.value(root).dims(), seed));
        let mut out = Gradients::default();

        fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Conv { input, layer, kernel, stride, pad, .. } => {
                    let trainable = *layer >= self.freeze_boundary;
                    let need_input = self.nodes[*input].requires_grad;
                    let cg = ops::conv2d_backward(
                        &self.nodes[*input].value,
                        kernel,
                        *stride,
                        *pad,
                        &g,
                        need_input,
                        trainable,
                    )?;
                    if let (Some(k), Some(b)) = (cg.kernel, cg.bias) {
                        match out.layers.get_mut(layer) {
                            Some(lg) => {
                                lg.kernel.add_assign(&k);
                                lg.bias.add_assign(&b);
                            }
                            None => {
                                out.layers.insert(*layer, LayerGrad { kernel: k, bias: b });
                            }
                        }
                    }
                    if let Some(gi) = cg.input {
                        accumulate(&mut grads[*input], gi);
                    }
                }
                Op::Relu { input } => {
                    let gi = ops::relu_backward(&self.nodes[*input].value, &g);
                    accumulate(&mut grads[*input], gi);
                }
                Op::Concat { a, b, a_channels } => {
                    let (ga, gb) = split_channels(&g, *a_channels)?;
                    if self.nodes[*a].requires_grad {
                        accumulate(&mut grads[*a], ga);
                    }
                    if self.nodes[*b].requires_grad {
                        accumulate(&mut grads[*b], gb);
                    }
                }
                Op::Upsample { input } => {
                    accumulate(&mut grads[*input], ops::upsample2x_backward(&g)?);
                }
                Op::Softmax { input } => {
                    let gi = ops::softmax_backward(&node.value, &g)?;
                    accumulate(&mut grads[*input], gi);
                }
                Op::WeightedNll { probs, labels, weights } => {
                    let gi = weighted_nll_grad(&self.nodes[*probs].value, labels, weights, g.data()[0])?;
                    accumulate(&mut grads[*probs], gi);
                }
            }
        }
        Ok(out)
    }
}

fn check_nll_shapes(probs: &Tensor, labels: &[u8], weights: &[f32]) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = probs.nchw()?;
    let pixels = n * h * w;
    if labels.len() != pixels || weights.len() != pixels {
        return Err(TensorError::Shape(format!(
            "{pixels} pixels in probabilities, {} labels, {} weights",
            labels.len(),
            weights.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(TensorError::Shape(format!("label {bad} out of range for {c} classes")));
    }
    Ok((n, c, h * w))
}

pub(crate) fn weighted_nll_value(probs: &Tensor, labels: &[u8], weights: &[f32]) -> Result<f32> {
    let (n, c, hw) = check_nll_shapes(probs, labels, weights)?;
    let p = probs.data();
    let mut total = 0f64;
    let mut wsum = 0f64;
    for b in 0..n {
        for px in 0..hw {
            let i = b * hw + px;
            let prob = p[(b * c + labels[i] as usize) * hw + px].max(PROB_FLOOR);
            total += weights[i] as f64 * -(prob as f64).ln();
            wsum += weights[i] as f64;
        }
    }
    if wsum <= 0.0 {
        return Err(TensorError::Shape("weight mask sums to zero".into()));
    }
    Ok((total / wsum) as f32)
}

fn weighted_nll_grad(probs: &Tensor, labels: &[u8], weights: &[f32], seed: f32) -> Result<Tensor> {
    let (n, c, hw) = check_nll_shapes(probs, labels, weights)?;
    let wsum: f64 = weights.iter().map(|&w| w as f64).sum();
    let scale = seed as f64 / wsum;
    let p = probs.data();
    let mut g = vec![0f32; p.len()];
    for b in 0..n {
        for px in 0..hw {
            let i = b * hw + px;
            let idx = (b * c + labels[i] as usize) * hw + px;
            if p[idx] >= PROB_FLOOR {
                g[idx] = (-(weights[i] as f64) * scale / p[idx] as f64) as f32;
            }
        }
    }
    Tensor::from_vec(probs.dims().to_vec(), g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(tape: &mut Tape, k0: &Tensor, k1: &Tensor) -> Var {
        let x = tape.input(Tensor::from_vec(vec![1, 1, 2, 2], vec![0.5, -0.2, 0.1, 0.9]).unwrap());
        let h = tape.conv2d(x, 0, k0, &Tensor::zeros(&[2]), 1, 0).unwrap();
        let h = tape.relu(h);
        let o = tape.conv2d(h, 1, k1, &Tensor::zeros(&[2]), 1, 0).unwrap();
        let p = tape.softmax_channels(o).unwrap();
        tape.weighted_nll(p, &[0, 1, 1, 0], &[1.0; 4]).unwrap()
    }

    fn kernels() -> (Tensor, Tensor) {
        (
            Tensor::from_vec(vec![2, 1, 1, 1], vec![1.0, -0.5]).unwrap(),
            Tensor::from_vec(vec![2, 2, 1, 1], vec![0.3, 0.7, -0.4, 0.2]).unwrap(),
        )
    }

    #[test]
    fn boundary_zero_yields_all_layers() {
        let (k0, k1) = kernels();
        let mut tape = Tape::new(0);
        let loss = small_net(&mut tape, &k0, &k1);
        let g = tape.backward_partial(loss, 1.0).unwrap();
        assert_eq!(g.layers.keys().copied().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn boundary_past_end_yields_nothing() {
        let (k0, k1) = kernels();
        let mut tape = Tape::new(2);
        let loss = small_net(&mut tape, &k0, &k1);
        assert!(tape.backward_partial(loss, 1.0).unwrap().is_empty());
    }

    #[test]
    fn partial_matches_full_on_trainable_layers() {
        let (k0, k1) = kernels();
        let mut full = Tape::new(0);
        let l = small_net(&mut full, &k0, &k1);
        let gf = full.backward_partial(l, 1.0).unwrap();
        let mut part = Tape::new(1);
        let l = small_net(&mut part, &k0, &k1);
        let gp = part.backward_partial(l, 1.0).unwrap();
        assert_eq!(gp.layers.len(), 1);
        assert_eq!(gp.get(1), gf.get(1));
    }

    #[test]
    fn second_backward_is_rejected() {
        let (k0, k1) = kernels();
        let mut tape = Tape::new(0);
        let loss = small_net(&mut tape, &k0, &k1);
        tape.backward_partial(loss, 1.0).unwrap();
        assert_eq!(tape.backward_partial(loss, 1.0), Err(TensorError::TapeConsumed));
    }

    #[test]
    fn replay_is_bit_exact() {
        let (k0, k1) = kernels();
        let mut tape = Tape::new(0);
        let loss = small_net(&mut tape, &k0, &k1);
        assert_eq!(tape.replay().unwrap().data()[0].to_bits(), tape.value(loss).data()[0].to_bits());
    }

    #[test]
    fn relu_gradient_gates_negative_inputs() {
        let mut tape = Tape::new(0);
        let x = tape.input(Tensor::from_vec(vec![1, 1, 1, 2], vec![-1.0, 2.0]).unwrap());
        let k = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let h = tape.conv2d(x, 0, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        let r = tape.relu(h);
        // sum via a 1×2 conv with unit weights
        let sum_k = Tensor::from_vec(vec![1, 1, 1, 2], vec![1.0, 1.0]).unwrap();
        let s = tape.conv2d(r, 1, &sum_k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        let g = tape.backward_partial(s, 1.0).unwrap();
        // d(sum relu(k*x))/dk = 0*(-1) + 1*2
        assert_eq!(g.get(0).unwrap().kernel.data(), &[2.0]);
    }
}
