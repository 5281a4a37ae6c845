//! Flat `section.key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are applied in
//! file order, so `scene.preset` should precede individual scene keys it
//! would otherwise overwrite.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::distill::AlgoParams;
use crate::netsim::{ChannelConfig, ComputeLatency, Concurrency};
use crate::protocol::Strategy;
use crate::videogen::SceneConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    Value { key: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sim,
    Socket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distillation {
    /// Train only the blocks after the freeze boundary.
    Partial,
    /// Train every block.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherKind {
    Oracle,
    Net,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundsProfile {
    /// Reference deployment measurements.
    Reference,
    /// Derived from this config's scene, channel and latencies.
    Scenario,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub scene: SceneConfig,
    pub frames: usize,
    pub fps: u32,
    /// Existing stream file to use instead of generating one.
    pub stream: Option<PathBuf>,
    pub algo: AlgoParams,
    pub channel: ChannelConfig,
    pub latency: ComputeLatency,
    pub mode: Mode,
    pub distillation: Distillation,
    pub strategy: Strategy,
    /// Server to connect to in socket mode; a local thread when unset.
    pub addr: Option<String>,
    pub output: PathBuf,
    pub teacher: TeacherKind,
    pub teacher_noise: f64,
    pub teacher_seed: u64,
    /// Existing checkpoint to start from instead of pre-training.
    pub checkpoint: Option<PathBuf>,
    pub student_seed: u64,
    pub pretrain_scenes: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f32,
    pub pretrain_seed: u64,
    pub sweep_mbps: Vec<f64>,
    pub bounds_profile: BoundsProfile,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            scene: SceneConfig::default(),
            frames: 1000,
            fps: crate::videogen::DEFAULT_FPS,
            stream: None,
            algo: AlgoParams::default(),
            channel: ChannelConfig::default(),
            latency: ComputeLatency::reference(),
            mode: Mode::Sim,
            distillation: Distillation::Partial,
            strategy: Strategy::ShadowTutor,
            addr: None,
            output: PathBuf::from("out"),
            teacher: TeacherKind::Oracle,
            teacher_noise: 0.0,
            teacher_seed: 0,
            checkpoint: None,
            student_seed: 7,
            pretrain_scenes: 64,
            pretrain_epochs: 5,
            pretrain_lr: 0.01,
            pretrain_seed: 1,
            sweep_mbps: vec![90.0, 80.0, 60.0, 40.0, 20.0, 12.0, 8.0],
            bounds_profile: BoundsProfile::Reference,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value { key: key.into(), reason: e.to_string() })
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T, ConfigError> {
    options.iter().find(|(n, _)| *n == value).map(|&(_, v)| v).ok_or_else(|| ConfigError::Value {
        key: key.into(),
        reason: format!(
            "expected one of {}",
            options.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
        ),
    })
}

fn name_of<T: PartialEq>(v: T, options: &[(&'static str, T)]) -> &'static str {
    options.iter().find(|(_, o)| *o == v).map(|(n, _)| *n).expect("listed")
}

const MODES: &[(&str, Mode)] = &[("sim", Mode::Sim), ("socket", Mode::Socket)];
const DISTILL: &[(&str, Distillation)] = &[("partial", Distillation::Partial), ("full", Distillation::Full)];
const TEACHERS: &[(&str, TeacherKind)] = &[("oracle", TeacherKind::Oracle), ("net", TeacherKind::Net)];
const CONCURRENCY: &[(&str, Concurrency)] = &[("serial", Concurrency::Serial), ("parallel", Concurrency::Parallel)];
const PROFILES: &[(&str, BoundsProfile)] = &[("reference", BoundsProfile::Reference), ("scenario", BoundsProfile::Scenario)];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "scenario" => self.scenario = v.to_string(),
            "scene.preset" => {
                let p = SceneConfig::preset(v)
                    .ok_or_else(|| ConfigError::Value { key: key.into(), reason: format!("unknown preset {v:?}") })?;
                self.scene = SceneConfig { height: self.scene.height, width: self.scene.width, seed: self.scene.seed, ..p };
            }
            "scene.height" => self.scene.height = parse(key, v)?,
            "scene.width" => self.scene.width = parse(key, v)?,
            "scene.classes" => self.scene.classes = parse(key, v)?,
            "scene.objects" => self.scene.objects = parse(key, v)?,
            "scene.velocity" => self.scene.velocity = parse(key, v)?,
            "scene.change_period" => self.scene.change_period = parse(key, v)?,
            "scene.camera" => self.scene.camera = parse(key, v)?,
            "scene.noise" => self.scene.noise = parse(key, v)?,
            "scene.seed" => self.scene.seed = parse(key, v)?,
            "scene.frames" => self.frames = parse(key, v)?,
            "scene.fps" => self.fps = parse(key, v)?,
            "scene.stream" => self.stream = opt_path(v),
            "algo.threshold" => self.algo.threshold = parse(key, v)?,
            "algo.max_updates" => self.algo.max_updates = parse(key, v)?,
            "algo.min_stride" => self.algo.min_stride = parse(key, v)?,
            "algo.max_stride" => self.algo.max_stride = parse(key, v)?,
            "channel.bandwidth_mbps" => {
                let m: f64 = parse(key, v)?;
                self.channel.uplink_bps = m * 1e6;
                self.channel.downlink_bps = m * 1e6;
            }
            "channel.uplink_mbps" => self.channel.uplink_bps = parse::<f64>(key, v)? * 1e6,
            "channel.downlink_mbps" => self.channel.downlink_bps = parse::<f64>(key, v)? * 1e6,
            "channel.delay" => self.channel.delay = parse(key, v)?,
            "channel.concurrency" => self.channel.concurrency = choice(key, v, CONCURRENCY)?,
            "latency.t_si" => self.latency.t_si = parse(key, v)?,
            "latency.t_sd" => self.latency.t_sd = parse(key, v)?,
            "latency.t_ti" => self.latency.t_ti = parse(key, v)?,
            "run.mode" => self.mode = choice(key, v, MODES)?,
            "run.distillation" => self.distillation = choice(key, v, DISTILL)?,
            "run.strategy" => {
                self.strategy = v.parse().map_err(|reason| ConfigError::Value { key: key.into(), reason })?
            }
            "run.addr" => self.addr = (!v.is_empty()).then(|| v.to_string()),
            "run.output" => self.output = PathBuf::from(v),
            "teacher.kind" => self.teacher = choice(key, v, TEACHERS)?,
            "teacher.noise" => self.teacher_noise = parse(key, v)?,
            "teacher.seed" => self.teacher_seed = parse(key, v)?,
            "student.checkpoint" => self.checkpoint = opt_path(v),
            "student.seed" => self.student_seed = parse(key, v)?,
            "pretrain.scenes" => self.pretrain_scenes = parse(key, v)?,
            "pretrain.epochs" => self.pretrain_epochs = parse(key, v)?,
            "pretrain.lr" => self.pretrain_lr = parse(key, v)?,
            "pretrain.seed" => self.pretrain_seed = parse(key, v)?,
            "sweep.bandwidths_mbps" => {
                self.sweep_mbps = v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_, _>>()?
            }
            "bounds.profile" => self.bounds_profile = choice(key, v, PROFILES)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, e: String| Err(ConfigError::Value { key: key.into(), reason: e });
        if let Err(e) = self.algo.validate() {
            return bad("algo", e.to_string());
        }
        if let Err(e) = self.channel.validate() {
            return bad("channel", e.to_string());
        }
        let l = &self.latency;
        if !(l.t_si > 0.0 && l.t_sd > 0.0 && l.t_ti > 0.0) {
            return bad("latency", "latencies must be positive".into());
        }
        if self.frames == 0 {
            return bad("scene.frames", "need at least one frame".into());
        }
        if !(0.0..=1.0).contains(&self.teacher_noise) {
            return bad("teacher.noise", "must lie in [0, 1]".into());
        }
        if self.sweep_mbps.iter().any(|&m| !(m > 0.0)) {
            return bad("sweep.bandwidths_mbps", "bandwidths must be positive".into());
        }
        Ok(())
    }

    /// Every setting, in a form [`Self::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let sc = &self.scene;
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("scenario", self.scenario.clone());
        kv("scene.height", sc.height.to_string());
        kv("scene.width", sc.width.to_string());
        kv("scene.classes", sc.classes.to_string());
        kv("scene.objects", sc.objects.to_string());
        kv("scene.velocity", sc.velocity.to_string());
        kv("scene.change_period", sc.change_period.to_string());
        kv("scene.camera", sc.camera.to_string());
        kv("scene.noise", sc.noise.to_string());
        kv("scene.seed", sc.seed.to_string());
        kv("scene.frames", self.frames.to_string());
        kv("scene.fps", self.fps.to_string());
        kv("scene.stream", path(&self.stream));
        kv("algo.threshold", self.algo.threshold.to_string());
        kv("algo.max_updates", self.algo.max_updates.to_string());
        kv("algo.min_stride", self.algo.min_stride.to_string());
        kv("algo.max_stride", self.algo.max_stride.to_string());
        kv("channel.uplink_mbps", (self.channel.uplink_bps / 1e6).to_string());
        kv("channel.downlink_mbps", (self.channel.downlink_bps / 1e6).to_string());
        kv("channel.delay", self.channel.delay.to_string());
        kv("channel.concurrency", name_of(self.channel.concurrency, CONCURRENCY).into());
        kv("latency.t_si", self.latency.t_si.to_string());
        kv("latency.t_sd", self.latency.t_sd.to_string());
        kv("latency.t_ti", self.latency.t_ti.to_string());
        kv("run.mode", name_of(self.mode, MODES).into());
        kv("run.distillation", name_of(self.distillation, DISTILL).into());
        kv("run.strategy", self.strategy.to_string());
        kv("run.addr", self.addr.clone().unwrap_or_default());
        kv("run.output", self.output.display().to_string());
        kv("teacher.kind", name_of(self.teacher, TEACHERS).into());
        kv("teacher.noise", self.teacher_noise.to_string());
        kv("teacher.seed", self.teacher_seed.to_string());
        kv("student.checkpoint", path(&self.checkpoint));
        kv("student.seed", self.student_seed.to_string());
        kv("pretrain.scenes", self.pretrain_scenes.to_string());
        kv("pretrain.epochs", self.pretrain_epochs.to_string());
        kv("pretrain.lr", self.pretrain_lr.to_string());
        kv("pretrain.seed", self.pretrain_seed.to_string());
        kv(
            "sweep.bandwidths_mbps",
            self.sweep_mbps.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        );
        kv("bounds.profile", name_of(self.bounds_profile, PROFILES).into());
        s
    }
}
