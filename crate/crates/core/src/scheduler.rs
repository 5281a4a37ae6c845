//! Adaptive key-frame stride.

use serde::Serialize;
use thiserror::Error;

use crate::distill::AlgoParams;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("metric {0} outside [0, 1]")]
pub struct MetricRangeError(pub f64);

/// Real-valued stride; `effective()` is what the client counts frames with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stride {
    value: f64,
    effective: usize,
}

impl Stride {
    /// Clamps `value` into the stride range and rounds half up.
    pub fn new(value: f64, params: &AlgoParams) -> Self {
        let (lo, hi) = (params.min_stride as f64, params.max_stride as f64);
        let value = value.clamp(lo, hi);
        let effective = ((value + 0.5).floor() as usize).clamp(params.min_stride, params.max_stride);
        Self { value, effective }
    }

    pub fn initial(params: &AlgoParams) -> Self {
        Self::new(params.min_stride as f64, params)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn effective(&self) -> usize {
        self.effective
    }
}

/// Piecewise-linear ratio through (0, 0), (threshold, 1) and (1, 2).
pub fn stride_ratio(metric: f64, threshold: f64) -> f64 {
    if metric < threshold {
        metric / threshold
    } else {
        // same line as (m - 2t + 1)/(1 - t), written so both anchors are exact
        1.0 + (metric - threshold) / (1.0 - threshold)
    }
}

pub fn next_stride(stride: Stride, metric: f64, params: &AlgoParams) -> Result<Stride, MetricRangeError> {
    if !(0.0..=1.0).contains(&metric) {
        return Err(MetricRangeError(metric));
    }
    Ok(Stride::new(stride_ratio(metric, params.threshold) * stride.value, params))
}
