use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchDescriptor, ModelError, Result, StudentModel};
use crate::metrics::{ProbMap, SegMap};
use crate::videogen::{mix_seed, Frame};

/// RNG that decides which pixels of frame `index` the oracle relabels.
pub fn noise_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, index.wrapping_add(0x7EAC_4E55)))
}

/// Labels frames with the generator's ground truth, optionally corrupted.
#[derive(Debug, Clone)]
pub struct OracleTeacher {
    truth: Arc<Vec<SegMap>>,
    classes: usize,
    /// Probability that a pixel is moved to a uniformly chosen other class.
    pub noise: f64,
    pub seed: u64,
}

impl OracleTeacher {
    pub fn new(truth: Arc<Vec<SegMap>>, classes: usize, noise: f64, seed: u64) -> Self {
        Self { truth, classes, noise, seed }
    }

    pub fn label(&self, index: u64, frame: &Frame) -> Result<SegMap> {
        let err = |reason: String| ModelError::Teacher { index, reason };
        let truth = self
            .truth
            .get(index as usize)
            .ok_or_else(|| err(format!("no ground truth (stream has {} frames)", self.truth.len())))?;
        if truth.dims() != (frame.height(), frame.width()) {
            return Err(err(format!("frame {}×{} vs label {:?}", frame.height(), frame.width(), truth.dims())));
        }
        let mut out = truth.clone();
        if self.noise > 0.0 && self.classes > 1 {
            let mut rng = noise_rng(self.seed, index);
            for l in out.labels_mut() {
                if rng.gen::<f64>() < self.noise {
                    let shift = rng.gen_range(1..self.classes) as u8;
                    *l = ((*l as usize + shift as usize) % self.classes) as u8;
                }
            }
        }
        Ok(out)
    }
}

/// A larger network of the student's op set.
#[derive(Debug, Clone)]
pub struct NetTeacher {
    model: StudentModel,
}

impl NetTeacher {
    pub fn new(model: StudentModel) -> Self {
        Self { model }
    }

    pub fn desk(classes: u16, seed: u64) -> Result<Self> {
        Ok(Self::new(StudentModel::build(ArchDescriptor::desk_teacher(classes), seed)?))
    }

    pub fn model(&self) -> &StudentModel {
        &self.model
    }
}

#[derive(Debug, Clone)]
pub enum Teacher {
    Oracle(OracleTeacher),
    Net(NetTeacher),
}

impl Teacher {
    /// Pseudo-label for frame `index` and the probabilities it was taken from.
    pub fn infer(&self, index: u64, frame: &Frame) -> Result<(SegMap, ProbMap)> {
        match self {
            Teacher::Oracle(t) => {
                let map = t.label(index, frame)?;
                let probs = ProbMap::one_hot(&map, t.classes);
                Ok((map, probs))
            }
            Teacher::Net(t) => {
                let probs = t.model.forward(frame)?;
                Ok((probs.argmax(), probs))
            }
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Teacher::Oracle(t) => t.classes,
            Teacher::Net(t) => t.model.classes(),
        }
    }
}
