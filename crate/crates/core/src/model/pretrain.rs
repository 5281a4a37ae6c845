use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Checkpoint, ModelError, Result, StudentModel};
use crate::metrics::{mean_iou, weight_mask, SegMap};
use crate::videogen::Frame;

/// Loss weight and dilation radius used for pre-training and distillation.
pub const LOSS_WEIGHT: f32 = 5.0;
pub const LOSS_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainReport {
    pub epochs: usize,
    pub samples: usize,
    pub initial_miou: f64,
    pub final_miou: f64,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
}

fn corpus_miou(model: &StudentModel, corpus: &[(Frame, SegMap)]) -> Result<f64> {
    let mut total = 0.0;
    for (f, l) in corpus {
        total += mean_iou(&model.forward(f)?.argmax(), l)?;
    }
    Ok(total / corpus.len() as f64)
}

/// Trains every parameter on `corpus` (one sample per step, shuffled each
/// epoch), then restores the model's freeze boundary with a fresh optimizer.
pub fn pretrain_student(
    model: &mut StudentModel,
    corpus: &[(Frame, SegMap)],
    epochs: usize,
    lr: f32,
    seed: u64,
) -> Result<(Checkpoint, PretrainReport)> {
    if corpus.is_empty() {
        return Err(ModelError::InvalidArch("empty pre-training corpus".into()));
    }
    let boundary = model.freeze_boundary();
    let initial_miou = corpus_miou(model, corpus)?;
    let mut epoch_loss = Vec::with_capacity(epochs);
    if epochs > 0 {
        model.set_freeze_boundary(0, lr)?;
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for &i in &order {
                let (frame, label) = &corpus[i];
                let mask = weight_mask(label, LOSS_WEIGHT, LOSS_RADIUS);
                let (mut tape, probs) = model.forward_tape(frame)?;
                let loss = tape.weighted_nll(probs, label.labels(), mask.values())?;
                sum += tape.value(loss).data()[0] as f64;
                let grads = tape.backward_partial(loss, 1.0)?;
                model.apply_gradients(&grads)?;
            }
            let mean = sum / corpus.len() as f64;
            log::debug!("pretrain epoch {epoch}: loss {mean:.4}");
            epoch_loss.push(mean);
        }
    }
    model.set_freeze_boundary(boundary, super::DISTILL_LR)?;
    let final_miou = corpus_miou(model, corpus)?;
    let report = PretrainReport { epochs, samples: corpus.len(), initial_miou, final_miou, epoch_loss };
    Ok((Checkpoint::of(model), report))
}
