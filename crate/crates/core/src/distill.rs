//! Server-side student training on one key frame with threshold early exit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{mean_iou, weight_mask, SegMap};
use crate::model::{ModelError, StudentModel, LOSS_RADIUS, LOSS_WEIGHT};
use crate::tensor::{Tape, Var};
use crate::videogen::Frame;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid algorithm parameters: {0}")]
pub struct ParamsError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgoParams {
    pub threshold: f64,
    pub max_updates: usize,
    pub min_stride: usize,
    pub max_stride: usize,
}

impl Default for AlgoParams {
    fn default() -> Self {
        Self { threshold: 0.8, max_updates: 8, min_stride: 8, max_stride: 64 }
    }
}

impl AlgoParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ParamsError(format!("threshold {} not in (0, 1)", self.threshold)));
        }
        if self.max_updates == 0 {
            return Err(ParamsError("max_updates must be at least 1".into()));
        }
        if self.min_stride == 0 || self.max_stride < self.min_stride {
            return Err(ParamsError(format!(
                "strides must satisfy 1 <= min ({}) <= max ({})",
                self.min_stride, self.max_stride
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DistillResult {
    /// Best-metric snapshot, including its optimizer state.
    pub student: StudentModel,
    pub best_metric: f64,
    pub steps_taken: usize,
    pub initial_metric: f64,
    /// Metric after each optimisation step.
    pub step_metrics: Vec<f64>,
}

fn record(student: &StudentModel, frame: &Frame, label: &SegMap) -> Result<(Tape, Var, f64), ModelError> {
    let (tape, probs) = student.forward_tape(frame)?;
    let pred = crate::metrics::ProbMap::new(tape.value(probs).clone())?.argmax();
    let metric = mean_iou(&pred, label)?;
    Ok((tape, probs, metric))
}

/// Trains `student` towards `label` until the metric exceeds the threshold
/// or `max_updates` steps were taken, and returns the best snapshot seen.
pub fn train_student(
    student: StudentModel,
    frame: &Frame,
    label: &SegMap,
    params: &AlgoParams,
) -> Result<DistillResult, ModelError> {
    label.check_classes(student.classes())?;
    let (mut tape, mut probs, initial_metric) = record(&student, frame, label)?;
    let mut result = DistillResult {
        student,
        best_metric: initial_metric,
        steps_taken: 0,
        initial_metric,
        step_metrics: Vec::new(),
    };
    if initial_metric >= params.threshold {
        return Ok(result);
    }
    let mask = weight_mask(label, LOSS_WEIGHT, LOSS_RADIUS);
    let mut current = result.student.clone();
    while result.steps_taken < params.max_updates {
        let loss = tape.weighted_nll(probs, label.labels(), mask.values())?;
        let grads = tape.backward_partial(loss, 1.0)?;
        current.apply_gradients(&grads)?;
        result.steps_taken += 1;
        // this forward also serves the next iteration's loss
        let metric;
        (tape, probs, metric) = record(&current, frame, label)?;
        result.step_metrics.push(metric);
        if metric > result.best_metric {
            result.best_metric = metric;
            result.student = current.clone();
        }
        if metric > params.threshold {
            break;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchDescriptor;
    use crate::videogen::{generate, SceneConfig};

    fn scene() -> (Frame, SegMap) {
        let s = generate(&SceneConfig { height: 32, width: 32, seed: 8, ..Default::default() }, 1).unwrap();
        (s.frames[0].clone(), s.labels[0].clone())
    }

    #[test]
    fn defaults_validate() {
        AlgoParams::default().validate().unwrap();
        assert!(AlgoParams { threshold: 1.0, ..Default::default() }.validate().is_err());
        assert!(AlgoParams { max_updates: 0, ..Default::default() }.validate().is_err());
        assert!(AlgoParams { min_stride: 9, max_stride: 8, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn met_threshold_skips_training() {
        let (frame, _) = scene();
        let m = StudentModel::build(ArchDescriptor::desk_student(4), 1).unwrap();
        // the student's own prediction scores 1.0 against itself
        let own = m.forward(&frame).unwrap().argmax();
        let r = train_student(m.clone(), &frame, &own, &AlgoParams::default()).unwrap();
        assert_eq!(r.steps_taken, 0);
        assert_eq!(r.best_metric, 1.0);
        assert_eq!(r.student, m);
        assert_eq!(r.student.optimizer(), m.optimizer());
    }

    #[test]
    fn best_snapshot_reproduces_metric() {
        let (frame, label) = scene();
        let m = StudentModel::build(ArchDescriptor::desk_student(4), 1).unwrap();
        let r = train_student(m.clone(), &frame, &label, &AlgoParams::default()).unwrap();
        assert!(r.steps_taken <= 8 && r.steps_taken == r.step_metrics.len());
        assert!(r.best_metric >= r.initial_metric);
        let expected = r.step_metrics.iter().copied().fold(r.initial_metric, f64::max);
        assert_eq!(r.best_metric, expected);
        let again = mean_iou(&r.student.forward(&frame).unwrap().argmax(), &label).unwrap();
        assert!((again - r.best_metric).abs() < 1e-6);
        assert_eq!(&r.student.params()[..4], &m.params()[..4]);
    }

    #[test]
    fn label_class_out_of_range() {
        let (frame, mut label) = scene();
        label.labels_mut()[0] = 9;
        let m = StudentModel::build(ArchDescriptor::desk_student(4), 1).unwrap();
        assert!(train_student(m, &frame, &label, &AlgoParams::default()).is_err());
    }
}
