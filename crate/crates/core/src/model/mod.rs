//! Fully-convolutional segmentation networks described by a block list.
//!
//! A network is an ordered list of blocks. Each block is one convolution,
//! optionally preceded by a 2× upsample plus a skip concatenation, and
//! optionally followed by ReLU. A freeze boundary splits the blocks into a
//! frozen prefix and a trainable suffix; only the suffix is differentiated,
//! optimised, and shipped in weight deltas.

mod checkpoint;
mod delta;
mod pretrain;
mod teacher;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use delta::{DeltaEntry, WeightDelta};
pub use pretrain::{pretrain_student, PretrainReport, LOSS_RADIUS, LOSS_WEIGHT};
pub use teacher::{noise_rng, NetTeacher, OracleTeacher, Teacher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::metrics::{MetricsError, ProbMap};
use crate::tensor::{self, AdamState, LayerParams, Tape, Tensor, TensorError, Var};
use crate::videogen::Frame;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("weight delta does not match the model: {0}")]
    DeltaMismatch(String),
    #[error("teacher cannot label frame {index}: {reason}")]
    Teacher { index: u64, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Learning rate used for online distillation.
pub const DISTILL_LR: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum BlockKind {
    /// Stride-1 convolution + ReLU.
    Conv = 0,
    /// Stride-2 convolution + ReLU.
    Down = 1,
    /// 2× upsample, concat skip, convolution + ReLU.
    UpSkip = 2,
    /// 2× upsample, concat skip, convolution producing class logits.
    UpSkipLogits = 3,
    /// Stride-1 convolution producing class logits.
    Logits = 4,
}

impl BlockKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Conv,
            1 => Self::Down,
            2 => Self::UpSkip,
            3 => Self::UpSkipLogits,
            4 => Self::Logits,
            _ => return None,
        })
    }

    fn upsamples(self) -> bool {
        matches!(self, Self::UpSkip | Self::UpSkipLogits)
    }

    fn is_logits(self) -> bool {
        matches!(self, Self::UpSkipLogits | Self::Logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: u16,
    pub out_channels: u16,
    pub kernel: u16,
}

impl BlockSpec {
    pub const fn new(kind: BlockKind, in_channels: u16, out_channels: u16, kernel: u16) -> Self {
        Self { kind, in_channels, out_channels, kernel }
    }

    pub fn param_count(&self) -> usize {
        let k = self.kernel as usize;
        self.out_channels as usize * self.in_channels as usize * k * k + self.out_channels as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchDescriptor {
    pub blocks: Vec<BlockSpec>,
    /// Index of the first trainable block.
    pub freeze_boundary: usize,
}

impl ArchDescriptor {
    /// Desk-scale student: 8-16-16-16-16-K channels, two stride-2 stages,
    /// skips from the 1/2-resolution block into block 5 and from the
    /// full-resolution block into block 6, frozen through block 4.
    pub fn desk_student(classes: u16) -> Self {
        use BlockKind::*;
        Self {
            blocks: vec![
                BlockSpec::new(Conv, 3, 8, 3),
                BlockSpec::new(Down, 8, 16, 3),
                BlockSpec::new(Down, 16, 16, 3),
                BlockSpec::new(Conv, 16, 16, 3),
                BlockSpec::new(UpSkip, 32, 16, 1),
                BlockSpec::new(UpSkipLogits, 24, classes, 3),
            ],
            freeze_boundary: 4,
        }
    }

    /// Larger network of the same shape used as a stand-in teacher.
    pub fn desk_teacher(classes: u16) -> Self {
        use BlockKind::*;
        Self {
            blocks: vec![
                BlockSpec::new(Conv, 3, 32, 3),
                BlockSpec::new(Down, 32, 64, 3),
                BlockSpec::new(Down, 64, 128, 3),
                BlockSpec::new(Conv, 128, 128, 3),
                BlockSpec::new(UpSkip, 192, 96, 3),
                BlockSpec::new(UpSkipLogits, 128, classes, 3),
            ],
            freeze_boundary: 6,
        }
    }

    pub fn with_freeze_boundary(mut self, boundary: usize) -> Self {
        self.freeze_boundary = boundary;
        self
    }

    pub fn total_params(&self) -> usize {
        self.blocks.iter().map(BlockSpec::param_count).sum()
    }

    pub fn trainable_params(&self) -> usize {
        self.blocks[self.freeze_boundary.min(self.blocks.len())..]
            .iter()
            .map(BlockSpec::param_count)
            .sum()
    }

    pub fn classes(&self) -> usize {
        self.blocks.last().map(|b| b.out_channels as usize).unwrap_or(0)
    }

    pub fn input_channels(&self) -> usize {
        self.blocks.first().map(|b| b.in_channels as usize).unwrap_or(0)
    }

    /// Checks channel consistency and resolves the skip source of every
    /// upsampling block.
    fn plan(&self) -> Result<Vec<BlockPlan>> {
        let bad = |m: String| Err(ModelError::InvalidArch(m));
        if self.blocks.len() < 2 {
            return bad(format!("need at least 2 blocks, got {}", self.blocks.len()));
        }
        if self.freeze_boundary > self.blocks.len() {
            return bad(format!(
                "freeze boundary {} outside 0..={}",
                self.freeze_boundary,
                self.blocks.len()
            ));
        }
        let mut scales: Vec<u32> = Vec::with_capacity(self.blocks.len());
        let mut plans = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            if b.kernel % 2 == 0 || b.in_channels == 0 || b.out_channels == 0 {
                return bad(format!("block {i}: kernel must be odd and channels non-zero"));
            }
            if b.kind.is_logits() != (i + 1 == self.blocks.len()) {
                return bad(format!("block {i}: exactly the last block must produce logits"));
            }
            let prev_scale = if i == 0 { 0 } else { scales[i - 1] };
            let prev_out = if i == 0 { b.in_channels } else { self.blocks[i - 1].out_channels };
            let (scale, skip, expected_in) = match b.kind {
                BlockKind::Conv | BlockKind::Logits => (prev_scale, None, prev_out as usize),
                BlockKind::Down => (prev_scale + 1, None, prev_out as usize),
                BlockKind::UpSkip | BlockKind::UpSkipLogits => {
                    if prev_scale == 0 {
                        return bad(format!("block {i}: cannot upsample past input resolution"));
                    }
                    let target = prev_scale - 1;
                    let Some(j) = (0..i.saturating_sub(1)).rev().find(|&j| scales[j] == target) else {
                        return bad(format!("block {i}: no earlier block at the upsampled resolution"));
                    };
                    (target, Some(j), prev_out as usize + self.blocks[j].out_channels as usize)
                }
            };
            if b.in_channels as usize != expected_in {
                return bad(format!("block {i}: expects {} input channels, gets {expected_in}", b.in_channels));
            }
            scales.push(scale);
            plans.push(BlockPlan {
                stride: if b.kind == BlockKind::Down { 2 } else { 1 },
                pad: b.kernel as usize / 2,
                relu: !b.kind.is_logits(),
                upsample: b.kind.upsamples(),
                skip,
            });
        }
        if *scales.last().expect("non-empty") != 0 {
            return bad("output must return to input resolution".into());
        }
        Ok(plans)
    }

    fn max_scale(&self) -> u32 {
        let mut s = 0u32;
        let mut max = 0;
        for b in &self.blocks {
            match b.kind {
                BlockKind::Down => s += 1,
                BlockKind::UpSkip | BlockKind::UpSkipLogits => s = s.saturating_sub(1),
                _ => {}
            }
            max = max.max(s);
        }
        max
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct BlockPlan {
    stride: usize,
    pad: usize,
    relu: bool,
    upsample: bool,
    skip: Option<usize>,
}

/// A segmentation network with its optimizer state.
///
/// Equality compares architecture and parameters only; optimizer moments are
/// not part of a model's identity.
#[derive(Debug, Clone)]
pub struct StudentModel {
    arch: ArchDescriptor,
    plan: Vec<BlockPlan>,
    params: Vec<LayerParams>,
    adam: AdamState,
}

impl PartialEq for StudentModel {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.params == other.params
    }
}

impl StudentModel {
    /// He-initialised network; identical seeds give bit-identical weights.
    pub fn build(arch: ArchDescriptor, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .blocks
            .iter()
            .map(|b| {
                let k = b.kernel as usize;
                let fan_in = (b.in_channels as usize * k * k) as f32;
                let normal = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("positive std");
                let dims = [b.out_channels as usize, b.in_channels as usize, k, k];
                let data = (0..dims.iter().product::<usize>()).map(|_| normal.sample(&mut rng)).collect();
                LayerParams {
                    kernel: Tensor::from_vec(dims.to_vec(), data).expect("dims positive"),
                    bias: Tensor::zeros(&[b.out_channels as usize]),
                }
            })
            .collect();
        Self::from_params(arch, params)
    }

    pub(crate) fn from_params(arch: ArchDescriptor, params: Vec<LayerParams>) -> Result<Self> {
        let plan = arch.plan()?;
        let adam = AdamState::new(&params, arch.freeze_boundary..arch.blocks.len(), DISTILL_LR);
        Ok(Self { arch, plan, params, adam })
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn classes(&self) -> usize {
        self.arch.classes()
    }

    pub fn freeze_boundary(&self) -> usize {
        self.arch.freeze_boundary
    }

    pub fn total_param_count(&self) -> usize {
        self.arch.total_params()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.arch.trainable_params()
    }

    pub fn trainable_fraction(&self) -> f64 {
        self.trainable_param_count() as f64 / self.total_param_count() as f64
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.adam
    }

    /// Moves the freeze boundary and starts a fresh optimizer at `lr` for
    /// the new trainable suffix.
    pub fn set_freeze_boundary(&mut self, boundary: usize, lr: f32) -> Result<()> {
        if boundary > self.arch.blocks.len() {
            return Err(ModelError::InvalidArch(format!(
                "freeze boundary {boundary} outside 0..={}",
                self.arch.blocks.len()
            )));
        }
        self.arch.freeze_boundary = boundary;
        self.adam = AdamState::new(&self.params, boundary..self.arch.blocks.len(), lr);
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.nchw()?;
        if c != self.arch.input_channels() {
            return Err(TensorError::Shape(format!(
                "frame has {c} channels, model expects {}",
                self.arch.input_channels()
            ))
            .into());
        }
        let m = 1usize << self.arch.max_scale();
        if h % m != 0 || w % m != 0 {
            return Err(TensorError::Shape(format!("frame {h}×{w} not divisible by {m}")).into());
        }
        Ok(())
    }

    /// Inference without recording. Bit-identical to [`Self::forward_tape`].
    pub fn forward(&self, frame: &Frame) -> Result<ProbMap> {
        self.forward_tensor(&frame.to_tensor())
    }

    pub fn forward_tensor(&self, x: &Tensor) -> Result<ProbMap> {
        self.check_input(x)?;
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.plan.len());
        for (i, (p, lp)) in self.plan.iter().zip(&self.params).enumerate() {
            let prev = if i == 0 { x } else { &outs[i - 1] };
            let y = if p.upsample {
                let up = tensor::upsample2x(prev)?;
                let cat = tensor::concat_channels(&up, &outs[p.skip.expect("planned")])?;
                tensor::conv2d(&cat, &lp.kernel, &lp.bias, p.stride, p.pad)?
            } else {
                tensor::conv2d(prev, &lp.kernel, &lp.bias, p.stride, p.pad)?
            };
            outs.push(if p.relu { tensor::relu(&y) } else { y });
        }
        let logits = outs.pop().expect("at least two blocks");
        Ok(ProbMap::new(tensor::softmax_channels(&logits)?)?)
    }

    /// Forward pass recorded on a tape that stops at the freeze boundary.
    /// Returns the tape and the probability-map node.
    pub fn forward_tape(&self, frame: &Frame) -> Result<(Tape, Var)> {
        let x = frame.to_tensor();
        self.check_input(&x)?;
        let mut tape = Tape::new(self.arch.freeze_boundary);
        let input = tape.input(x);
        let mut outs: Vec<Var> = Vec::with_capacity(self.plan.len());
        for (i, (p, lp)) in self.plan.iter().zip(&self.params).enumerate() {
            let prev = if i == 0 { input } else { outs[i - 1] };
            let x = if p.upsample {
                let up = tape.upsample2x(prev)?;
                tape.concat_channels(up, outs[p.skip.expect("planned")])?
            } else {
                prev
            };
            let y = tape.conv2d(x, i, &lp.kernel, &lp.bias, p.stride, p.pad)?;
            outs.push(if p.relu { tape.relu(y) } else { y });
        }
        let probs = tape.softmax_channels(*outs.last().expect("at least two blocks"))?;
        Ok((tape, probs))
    }

    /// One optimizer step on the trainable suffix.
    pub fn apply_gradients(&mut self, grads: &tensor::Gradients) -> Result<()> {
        tensor::adam_step(&mut self.params, grads, &mut self.adam)?;
        Ok(())
    }

    /// Current values of the trainable parameters.
    pub fn extract_diff(&self) -> WeightDelta {
        WeightDelta::from_layers(&self.params, self.arch.freeze_boundary)
    }

    /// Overwrites the trainable suffix with the delta's values.
    pub fn apply_update(&mut self, delta: &WeightDelta) -> Result<()> {
        delta.apply_to(&mut self.params, self.arch.freeze_boundary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::videogen::{generate, SceneConfig};

    fn frame(h: usize, w: usize, seed: u64) -> Frame {
        let cfg = SceneConfig { height: h, width: w, seed, ..Default::default() };
        generate(&cfg, 1).unwrap().frames.remove(0)
    }

    #[test]
    fn desk_student_counts() {
        let a = ArchDescriptor::desk_student(4);
        let per_block: Vec<usize> = a.blocks.iter().map(BlockSpec::param_count).collect();
        // 8·3·9+8, 16·8·9+16, 16·16·9+16 (×2), 16·32·1+16, 4·24·9+4
        assert_eq!(per_block, vec![224, 1168, 2320, 2320, 528, 868]);
        assert_eq!(a.total_params(), 7428);
        assert_eq!(a.trainable_params(), 1396);
        let m = StudentModel::build(a, 1).unwrap();
        assert!((m.trainable_fraction() - 1396.0 / 7428.0).abs() < 1e-15);
        assert!((m.trainable_fraction() - 0.2).abs() < 0.02);
    }

    #[test]
    fn teacher_is_much_larger() {
        let s = ArchDescriptor::desk_student(4).total_params();
        let t = ArchDescriptor::desk_teacher(4).total_params();
        assert_eq!(t, 411_428);
        assert!(t >= 50 * s, "ratio {}", t as f64 / s as f64);
    }

    #[test]
    fn boundary_zero_trains_everything() {
        let m = StudentModel::build(ArchDescriptor::desk_student(4).with_freeze_boundary(0), 1).unwrap();
        assert_eq!(m.trainable_fraction(), 1.0);
    }

    #[test]
    fn boundary_out_of_range_rejected() {
        let a = ArchDescriptor::desk_student(4).with_freeze_boundary(7);
        assert!(matches!(StudentModel::build(a, 0), Err(ModelError::InvalidArch(_))));
    }

    #[test]
    fn inconsistent_channels_rejected() {
        let mut a = ArchDescriptor::desk_student(4);
        a.blocks[4].in_channels = 30;
        assert!(matches!(StudentModel::build(a, 0), Err(ModelError::InvalidArch(_))));
        let mut b = ArchDescriptor::desk_student(4);
        b.blocks.truncate(1);
        assert!(matches!(StudentModel::build(b, 0), Err(ModelError::InvalidArch(_))));
    }

    #[test]
    fn seeds_are_reproducible() {
        let a = StudentModel::build(ArchDescriptor::desk_student(4), 42).unwrap();
        let b = StudentModel::build(ArchDescriptor::desk_student(4), 42).unwrap();
        let c = StudentModel::build(ArchDescriptor::desk_student(4), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn forward_preserves_resolution_and_normalises() {
        let m = StudentModel::build(ArchDescriptor::desk_student(4), 3).unwrap();
        let f = frame(32, 48, 5);
        let p = m.forward(&f).unwrap();
        assert_eq!(p.dims(), (32, 48));
        assert_eq!(p.classes(), 4);
        let t = p.tensor();
        for px in 0..32 * 48 {
            let s: f32 = (0..4).map(|c| t.data()[c * 32 * 48 + px]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tape_and_plain_forward_agree_bitwise() {
        let m = StudentModel::build(ArchDescriptor::desk_student(4), 3).unwrap();
        let f = frame(32, 32, 6);
        let (tape, probs) = m.forward_tape(&f).unwrap();
        assert_eq!(tape.value(probs), m.forward(&f).unwrap().tensor());
        assert_eq!(&tape.replay().unwrap(), tape.value(probs));
    }

    #[test]
    fn bad_frames_rejected() {
        let m = StudentModel::build(ArchDescriptor::desk_student(4), 3).unwrap();
        let grey = Frame::new(32, 32, 1, vec![0; 32 * 32]).unwrap();
        assert!(m.forward(&grey).is_err());
        let odd = Frame::new(30, 32, 3, vec![0; 30 * 32 * 3]).unwrap();
        assert!(m.forward(&odd).is_err());
    }

    #[test]
    fn diff_round_trip_and_zero_delta() {
        let src = StudentModel::build(ArchDescriptor::desk_student(4), 1).unwrap();
        let mut dst = StudentModel::build(ArchDescriptor::desk_student(4), 2).unwrap();
        dst.apply_update(&src.extract_diff()).unwrap();
        assert_eq!(&dst.params()[4..], &src.params()[4..]);

        let before = src.clone();
        let mut same = src.clone();
        same.apply_update(&src.extract_diff()).unwrap();
        assert_eq!(same, before);

        let mut zeroed = src.clone();
        let mut delta = src.extract_diff();
        for e in &mut delta.entries {
            e.values.iter_mut().for_each(|v| *v = 0.0);
        }
        zeroed.apply_update(&delta).unwrap();
        assert_eq!(&zeroed.params()[..4], &src.params()[..4]);
        assert!(zeroed.params()[4..].iter().all(|p| p.kernel.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn full_boundary_gives_empty_delta() {
        let m = StudentModel::build(ArchDescriptor::desk_student(4).with_freeze_boundary(6), 1).unwrap();
        let d = m.extract_diff();
        assert!(d.entries.is_empty());
        assert_eq!(d.value_bytes(), 0);
    }

    #[test]
    fn delta_bytes_are_four_per_trainable_param() {
        let m = StudentModel::build(ArchDescriptor::desk_student(4), 1).unwrap();
        assert_eq!(m.extract_diff().value_bytes(), 4 * 1396);
    }

    #[test]
    fn mismatched_delta_rejected() {
        let m = StudentModel::build(ArchDescriptor::desk_student(4), 1).unwrap();
        let mut full = StudentModel::build(ArchDescriptor::desk_student(4).with_freeze_boundary(0), 1).unwrap();
        // partial delta into a fully trainable model: block ids do not line up
        assert!(matches!(full.apply_update(&m.extract_diff()), Err(ModelError::DeltaMismatch(_))));
        let mut other = StudentModel::build(ArchDescriptor::desk_student(5), 1).unwrap();
        assert!(matches!(other.apply_update(&m.extract_diff()), Err(ModelError::DeltaMismatch(_))));
    }
}
