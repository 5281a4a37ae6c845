//! Closed-form latency, traffic and throughput model, plus aggregation of
//! measured runs into reports.
//!
//! Units: seconds, bytes for `s_net`, bits per second for traffic. Megabit
//! and megabyte are decimal (10^6).

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::AlgoParams;

pub const MEGA: f64 = 1e6;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("{n} frames cannot contain {k} key frames at stride {min_stride}")]
    TooManyKeyFrames { n: usize, k: usize, min_stride: usize },
    #[error("empty run")]
    EmptyRun,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Per-key-frame component latencies and transfer size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    /// Student inference per frame.
    pub t_si: f64,
    /// One distillation step.
    pub t_sd: f64,
    /// Teacher inference per key frame.
    pub t_ti: f64,
    /// Network round trip per key frame.
    pub t_net: f64,
    /// Bytes moved per key frame (frame up plus update down).
    pub s_net: f64,
}

impl LatencyProfile {
    /// Measurements reported for the reference 720p deployment.
    pub fn reference() -> Self {
        Self { t_si: 0.143, t_sd: 0.013, t_ti: 0.044, t_net: 0.303, s_net: 3.032 * MEGA }
    }
}

/// Interval any key-frame cycle's overlapped time falls in.
pub fn t_c_bounds(p: &LatencyProfile, a: &AlgoParams) -> (f64, f64) {
    let compute = a.min_stride as f64 * p.t_si;
    let transfer = p.t_net + p.t_ti;
    (compute.max(transfer), compute + transfer)
}

/// Modelled time to process `n` frames with `k` key frames and `d` steps.
pub fn total_time(n: usize, k: usize, d: usize, t_c: f64, p: &LatencyProfile, a: &AlgoParams) -> Result<f64, AnalyticsError> {
    let overlapped = k * a.min_stride;
    if overlapped > n {
        return Err(AnalyticsError::TooManyKeyFrames { n, k, min_stride: a.min_stride });
    }
    Ok((n - overlapped) as f64 * p.t_si + d as f64 * p.t_sd + k as f64 * t_c)
}

/// Average network traffic in bits/s.
pub fn traffic_general(n: usize, k: usize, d: usize, t_c: f64, p: &LatencyProfile, a: &AlgoParams) -> Result<f64, AnalyticsError> {
    if k == 0 {
        total_time(n, k, d, t_c, p, a)?;
        return Ok(0.0);
    }
    Ok(k as f64 * p.s_net * 8.0 / total_time(n, k, d, t_c, p, a)?)
}

/// Average throughput in frames/s.
pub fn throughput_general(n: usize, k: usize, d: usize, t_c: f64, p: &LatencyProfile, a: &AlgoParams) -> Result<f64, AnalyticsError> {
    Ok(n as f64 / total_time(n, k, d, t_c, p, a)?)
}

/// `(lower, upper)` traffic in bits/s.
pub fn traffic_bounds(p: &LatencyProfile, a: &AlgoParams) -> (f64, f64) {
    let bits = p.s_net * 8.0;
    let lower = bits / (a.max_stride as f64 * p.t_si + a.max_updates as f64 * p.t_sd + p.t_ti + p.t_net);
    let upper = bits / (a.min_stride as f64 * p.t_si).max(p.t_net + p.t_ti);
    (lower, upper)
}

/// `(lower, upper)` throughput in frames/s.
pub fn throughput_bounds(p: &LatencyProfile, a: &AlgoParams) -> (f64, f64) {
    let (min, max) = (a.min_stride as f64, a.max_stride as f64);
    let lower = min / (min * p.t_si + a.max_updates as f64 * p.t_sd + p.t_ti + p.t_net);
    let upper = max / ((max - min) * p.t_si + (min * p.t_si).max(p.t_net + p.t_ti));
    (lower, upper)
}

/// Every closed-form quantity for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bounds {
    pub t_c: (f64, f64),
    pub traffic_bps: (f64, f64),
    pub throughput_fps: (f64, f64),
}

impl Bounds {
    pub fn of(p: &LatencyProfile, a: &AlgoParams) -> Self {
        Self { t_c: t_c_bounds(p, a), traffic_bps: traffic_bounds(p, a), throughput_fps: throughput_bounds(p, a) }
    }
}

/// One key frame and the frames up to the next one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRecord {
    pub key_index: u64,
    /// Effective stride in force when the key frame fired.
    pub stride: usize,
    pub start_time: f64,
    pub frames: usize,
    pub bytes_up: usize,
    pub bytes_down: usize,
    /// Metric carried by the update, once received.
    pub metric: Option<f64>,
    /// Effective stride after the update was applied.
    pub next_stride: Option<usize>,
    /// Time from the key frame to the end of the stall check at step
    /// `min_stride`, including any waiting.
    pub window_time: Option<f64>,
    /// Time the client spent waiting on the network in this cycle.
    pub blocked: f64,
    /// Distillation steps the server took for this key frame.
    pub steps: usize,
    /// Start of the next key frame minus this one's; `None` for the last.
    pub cycle_time: Option<f64>,
}

impl CycleRecord {
    /// Overlapped time of this cycle: the measured window with the
    /// distillation time removed from whatever part of it was spent
    /// waiting.
    pub fn t_c(&self, t_sd: f64) -> Option<f64> {
        let w = self.window_time?;
        Some(w - (self.steps as f64 * t_sd).min(self.blocked))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub scenario: String,
    pub strategy: String,
    /// Frames processed.
    pub n: usize,
    /// Key frames (every frame for the naive baseline).
    pub k: usize,
    /// Distillation steps.
    pub d: usize,
    pub bytes_up: usize,
    pub bytes_down: usize,
    /// Initial student transfer, not counted in traffic.
    pub init_bytes: usize,
    pub time: f64,
    pub blocked_time: f64,
    pub frame_miou: Vec<f64>,
    pub cycles: Vec<CycleRecord>,
}

/// Measurements over the complete key-frame cycles of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowStats {
    pub cycles: usize,
    pub frames: usize,
    pub bytes: usize,
    pub steps: usize,
    pub time: f64,
    pub traffic_bps: f64,
    pub throughput_fps: f64,
}

impl RunStats {
    /// `None` when fewer than one cycle completed.
    pub fn complete_cycles(&self) -> Option<WindowStats> {
        let done: Vec<&CycleRecord> = self.cycles.iter().filter(|c| c.cycle_time.is_some()).collect();
        if done.is_empty() {
            return None;
        }
        let frames = done.iter().map(|c| c.frames).sum();
        let bytes = done.iter().map(|c| c.bytes_up + c.bytes_down).sum();
        let time: f64 = done.iter().filter_map(|c| c.cycle_time).sum();
        Some(WindowStats {
            cycles: done.len(),
            frames,
            bytes,
            steps: done.iter().map(|c| c.steps).sum(),
            time,
            traffic_bps: bytes as f64 * 8.0 / time,
            throughput_fps: frames as f64 / time,
        })
    }

    pub fn stride_trace(&self) -> Vec<usize> {
        self.cycles.iter().map(|c| c.stride).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub strategy: String,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub fps: f64,
    pub key_ratio_pct: f64,
    pub traffic_mbps: f64,
    pub miou_mean: f64,
    pub bytes_up: usize,
    pub bytes_down: usize,
    pub time: f64,
    pub window: Option<WindowStats>,
    /// Closed-form bounds for the same inputs, when a profile was given.
    pub bounds: Option<Bounds>,
    pub stride_trace: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    fps: f64,
    key_ratio_pct: f64,
    traffic_mbps: f64,
    miou_mean: f64,
    bytes_up: usize,
    bytes_down: usize,
}

pub fn aggregate(stats: &RunStats, bounds: Option<Bounds>) -> Result<Report, AnalyticsError> {
    if stats.n == 0 || stats.time <= 0.0 {
        return Err(AnalyticsError::EmptyRun);
    }
    let miou_mean = if stats.frame_miou.is_empty() {
        f64::NAN
    } else {
        stats.frame_miou.iter().sum::<f64>() / stats.frame_miou.len() as f64
    };
    Ok(Report {
        scenario: stats.scenario.clone(),
        strategy: stats.strategy.clone(),
        n: stats.n,
        k: stats.k,
        d: stats.d,
        fps: stats.n as f64 / stats.time,
        key_ratio_pct: 100.0 * stats.k as f64 / stats.n as f64,
        traffic_mbps: (stats.bytes_up + stats.bytes_down) as f64 * 8.0 / stats.time / MEGA,
        miou_mean,
        bytes_up: stats.bytes_up,
        bytes_down: stats.bytes_down,
        time: stats.time,
        window: stats.complete_cycles(),
        bounds,
        stride_trace: stats.stride_trace(),
    })
}

pub fn write_json<W: Write>(reports: &[Report], out: W) -> Result<(), AnalyticsError> {
    serde_json::to_writer_pretty(out, reports)?;
    Ok(())
}

pub fn write_csv<W: Write>(reports: &[Report], out: W) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(CsvRow {
            scenario: &r.scenario,
            fps: r.fps,
            key_ratio_pct: r.key_ratio_pct,
            traffic_mbps: r.traffic_mbps,
            miou_mean: r.miou_mean,
            bytes_up: r.bytes_up,
            bytes_down: r.bytes_down,
        })?;
    }
    w.flush()?;
    Ok(())
}
