//! Segmentation maps, mean IoU and the object-weighted cross-entropy used to
//! distil the student.

use thiserror::Error;

use crate::tensor::{weighted_nll_value, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("map dims differ: {0:?} vs {1:?}")]
    DimMismatch((usize, usize), (usize, usize)),
    #[error("class id {id} out of range for {classes} classes")]
    ClassOutOfRange { id: u8, classes: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Per-pixel class ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl SegMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self, MetricsError> {
        if labels.len() != height * width {
            return Err(MetricsError::DimMismatch((height, width), (labels.len(), 1)));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        Self { height, width, labels: vec![class; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, class: u8) {
        self.labels[y * self.width + x] = class;
    }

    pub fn check_classes(&self, classes: usize) -> Result<(), MetricsError> {
        match self.labels.iter().find(|&&l| l as usize >= classes) {
            Some(&id) => Err(MetricsError::ClassOutOfRange { id, classes }),
            None => Ok(()),
        }
    }

    /// Sorted, de-duplicated class ids present in the map.
    pub fn classes_present(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&c| seen[c as usize]).collect()
    }
}

/// Per-pixel class probabilities, shaped `1×K×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap(Tensor);

impl ProbMap {
    pub fn new(t: Tensor) -> Result<Self, MetricsError> {
        let (n, _, _, _) = t.nchw()?;
        if n != 1 {
            return Err(TensorError::Shape(format!("probability map batch {n}, expected 1")).into());
        }
        Ok(Self(t))
    }

    /// Probability 1 on the labelled class of every pixel.
    pub fn one_hot(map: &SegMap, classes: usize) -> Self {
        let hw = map.height * map.width;
        let mut data = vec![0f32; classes * hw];
        for (p, &l) in map.labels.iter().enumerate() {
            data[l as usize * hw + p] = 1.0;
        }
        Self(Tensor::from_vec(vec![1, classes, map.height, map.width], data).expect("dims consistent"))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn classes(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.0.dims()[2], self.0.dims()[3])
    }

    /// Most probable class per pixel; ties go to the lowest id.
    pub fn argmax(&self) -> SegMap {
        let (k, (h, w)) = (self.classes(), self.dims());
        let hw = h * w;
        let d = self.0.data();
        let labels = (0..hw)
            .map(|p| {
                let mut best = 0;
                for c in 1..k {
                    if d[c * hw + p] > d[best * hw + p] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        SegMap { height: h, width: w, labels }
    }
}

fn same_dims(a: &SegMap, b: &SegMap) -> Result<(), MetricsError> {
    if a.dims() != b.dims() {
        return Err(MetricsError::DimMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// Intersection over union of class `c`. `None` when neither map contains
/// the class (empty union).
pub fn class_iou(pred: &SegMap, label: &SegMap, c: u8) -> Result<Option<f64>, MetricsError> {
    same_dims(pred, label)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &l) in pred.labels.iter().zip(&label.labels) {
        let (ip, il) = (p == c, l == c);
        inter += (ip && il) as usize;
        union += (ip || il) as usize;
    }
    Ok((union > 0).then(|| inter as f64 / union as f64))
}

/// Unweighted mean of [`class_iou`] over the classes present in `label`.
pub fn mean_iou(pred: &SegMap, label: &SegMap) -> Result<f64, MetricsError> {
    same_dims(pred, label)?;
    let mut inter = [0usize; 256];
    let mut union = [0usize; 256];
    let mut present = [false; 256];
    for (&p, &l) in pred.labels.iter().zip(&label.labels) {
        present[l as usize] = true;
        if p == l {
            inter[l as usize] += 1;
            union[l as usize] += 1;
        } else {
            union[l as usize] += 1;
            union[p as usize] += 1;
        }
    }
    let (mut sum, mut count) = (0f64, 0usize);
    for c in 0..256 {
        if present[c] {
            sum += inter[c] as f64 / union[c] as f64;
            count += 1;
        }
    }
    Ok(if count == 0 { 1.0 } else { sum / count as f64 })
}

/// Per-pixel loss weights: `weight` within Chebyshev distance `radius` of any
/// non-background pixel, 1 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl WeightMask {
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self { values: self.values.iter().map(|v| v * factor).collect(), ..self.clone() }
    }
}

pub fn weight_mask(label: &SegMap, weight: f32, radius: usize) -> WeightMask {
    let (h, w) = label.dims();
    // separable square dilation: rows first, then columns
    let mut rows = vec![false; h * w];
    for y in 0..h {
        let line = &label.labels[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = line[lo..=hi].iter().any(|&l| l != 0);
        }
    }
    let mut values = vec![1f32; h * w];
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            if (lo..=hi).any(|yy| rows[yy * w + x]) {
                values[y * w + x] = weight;
            }
        }
    }
    WeightMask { height: h, width: w, values }
}

/// Mask-weighted mean of `-ln p(label)`, normalised by the mask sum.
/// Probabilities are clipped at 1e-12 before the logarithm.
pub fn weighted_ce_loss(probs: &ProbMap, label: &SegMap, mask: &WeightMask) -> Result<f32, MetricsError> {
    if probs.dims() != label.dims() {
        return Err(MetricsError::DimMismatch(probs.dims(), label.dims()));
    }
    if mask.dims() != label.dims() {
        return Err(MetricsError::DimMismatch(mask.dims(), label.dims()));
    }
    label.check_classes(probs.classes())?;
    Ok(weighted_nll_value(probs.tensor(), label.labels(), mask.values())?)
}
