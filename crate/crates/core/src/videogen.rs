//! Synthetic labelled video: coloured shapes drifting over a textured
//! background, with periodic scene changes and three camera behaviours.
//!
//! Frames and labels come from one rasterisation pass, so the ground-truth
//! map is pixel-exact. Everything is a pure function of the [`SceneConfig`]
//! (including its seed) and the frame index.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::SegMap;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("{objects} objects exceed the canvas capacity of {capacity}")]
    TooManyObjects { objects: usize, capacity: usize },
    #[error("cannot resample {source_fps} fps to {target_fps} fps: rates must divide")]
    NonDivisibleRate { source_fps: u32, target_fps: u32 },
    #[error("frame dims {0:?} do not match pixel count {1}")]
    FrameDims((usize, usize, usize), usize),
    #[error("not a stream file (bad magic)")]
    BadMagic,
    #[error("unsupported stream version {0}")]
    Version(u16),
    #[error("stream file truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An 8-bit image, `H×W×C` interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self, VideoError> {
        if height == 0 || width == 0 || channels == 0 || pixels.len() != height * width * channels {
            return Err(VideoError::FrameDims((height, width, channels), pixels.len()));
        }
        Ok(Self { height, width, channels, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn byte_len(&self) -> usize {
        self.pixels.len()
    }

    /// `1×C×H×W` tensor with values scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0f32; c * h * w];
        for (i, px) in self.pixels.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * h * w + i] = v as f32 / 255.0;
            }
        }
        Tensor::from_vec(vec![1, c, h, w], data).expect("frame dims are non-zero")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraMode {
    Fixed,
    /// Background pans horizontally at the object speed.
    Moving,
    /// Whole image shakes by up to two pixels per frame.
    Egocentric,
}

impl std::str::FromStr for CameraMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "moving" => Ok(Self::Moving),
            "egocentric" => Ok(Self::Egocentric),
            other => Err(format!("unknown camera mode `{other}`")),
        }
    }
}

impl std::fmt::Display for CameraMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Moving => "moving",
            Self::Egocentric => "egocentric",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Class count including background (class 0).
    pub classes: usize,
    pub objects: usize,
    /// Object speed in pixels per frame.
    pub velocity: f64,
    /// Frames between scene changes.
    pub change_period: usize,
    pub camera: CameraMode,
    /// Per-pixel noise amplitude as a fraction of the 8-bit range.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            classes: 4,
            objects: 3,
            velocity: 0.5,
            change_period: 1500,
            camera: CameraMode::Fixed,
            noise: 0.02,
            seed: 0,
        }
    }
}

/// Named difficulty settings standing in for the camera × scenery matrix.
pub const PRESETS: &[&str] = &[
    "stationary",
    "fixed-animals",
    "fixed-people",
    "fixed-street",
    "moving-animals",
    "moving-people",
    "moving-street",
    "egocentric-people",
];

impl SceneConfig {
    pub fn preset(name: &str) -> Option<Self> {
        let base = Self::default();
        let (camera, velocity, change_period) = match name {
            "stationary" => (CameraMode::Fixed, 0.0, usize::MAX),
            "fixed-animals" => (CameraMode::Fixed, 0.5, 1500),
            "fixed-people" => (CameraMode::Fixed, 0.3, 2500),
            "fixed-street" => (CameraMode::Fixed, 1.0, 600),
            "moving-animals" => (CameraMode::Moving, 0.5, 1500),
            "moving-people" => (CameraMode::Moving, 0.4, 2000),
            "moving-street" => (CameraMode::Moving, 1.2, 400),
            "egocentric-people" => (CameraMode::Egocentric, 0.4, 1500),
            _ => return None,
        };
        Some(Self { camera, velocity, change_period, ..base })
    }

    /// Largest object count the canvas accepts: objects are at most a
    /// quarter of each side, and together may cover at most half the canvas.
    pub fn capacity(&self) -> usize {
        8
    }

    fn validate(&self) -> Result<(), VideoError> {
        if self.height < 16 || self.width < 16 {
            return Err(VideoError::InvalidScene("canvas must be at least 16×16".into()));
        }
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return Err(VideoError::InvalidScene("canvas extent exceeds u16".into()));
        }
        if !(2..=255).contains(&self.classes) {
            return Err(VideoError::InvalidScene("need between 2 and 255 classes".into()));
        }
        if !(self.velocity >= 0.0 && self.velocity.is_finite()) {
            return Err(VideoError::InvalidScene("velocity must be finite and non-negative".into()));
        }
        if self.change_period == 0 {
            return Err(VideoError::InvalidScene("scene-change period must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(VideoError::InvalidScene("noise must lie in [0, 1]".into()));
        }
        if self.objects > self.capacity() {
            return Err(VideoError::TooManyObjects { objects: self.objects, capacity: self.capacity() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone)]
struct Object {
    class: u8,
    shape: Shape,
    w: f64,
    h: f64,
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
    color: [f64; 3],
    stripe: f64,
}

#[derive(Debug, Clone)]
struct Segment {
    objects: Vec<Object>,
    bg_a: [f64; 3],
    bg_b: [f64; 3],
    freq: (f64, f64),
    phase: f64,
}

pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hsv(hue: f64, sat: f64, val: f64) -> [f64; 3] {
    let h = (hue.rem_euclid(360.0)) / 60.0;
    let c = val * sat;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// Base colour of an object class: evenly spaced saturated hues.
fn class_color(class: u8, classes: usize) -> [f64; 3] {
    let k = (classes - 1).max(1) as f64;
    hsv((class as f64 - 1.0) / k * 360.0, 0.85, 0.9)
}

fn reflect(u: f64, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let m = u.rem_euclid(2.0 * span);
    if m > span {
        2.0 * span - m
    } else {
        m
    }
}

impl Segment {
    fn sample(cfg: &SceneConfig, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, index.wrapping_add(1)));
        let (hf, wf) = (cfg.height as f64, cfg.width as f64);
        let grey = |rng: &mut ChaCha8Rng| {
            let base = rng.gen_range(70.0..180.0);
            [
                base + rng.gen_range(-18.0..18.0),
                base + rng.gen_range(-18.0..18.0),
                base + rng.gen_range(-18.0..18.0),
            ]
        };
        let bg_a = grey(&mut rng);
        let bg_b = grey(&mut rng);
        let freq = (rng.gen_range(0.05..0.35), rng.gen_range(0.05..0.35));
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let objects = (0..cfg.objects)
            .map(|_| {
                let class = rng.gen_range(1..cfg.classes) as u8;
                let w = rng.gen_range(hf.min(wf) / 8.0..=wf / 4.0).round().max(2.0);
                let h = rng.gen_range(hf.min(wf) / 8.0..=hf / 4.0).round().max(2.0);
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let mut color = class_color(class, cfg.classes);
                for ch in &mut color {
                    *ch = (*ch + rng.gen_range(-20.0..20.0)).clamp(0.0, 255.0);
                }
                Object {
                    class,
                    shape: if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Ellipse },
                    w,
                    h,
                    x0: rng.gen_range(0.0..=(wf - w)),
                    y0: rng.gen_range(0.0..=(hf - h)),
                    vx: cfg.velocity * angle.cos(),
                    vy: cfg.velocity * angle.sin(),
                    color,
                    stripe: rng.gen_range(0.3..0.9),
                }
            })
            .collect();
        Self { objects, bg_a, bg_b, freq, phase }
    }
}

/// Renders one frame and its label map.
fn render(cfg: &SceneConfig, seg: &Segment, local_t: u64, frame_index: u64) -> (Frame, SegMap) {
    let (h, w) = (cfg.height, cfg.width);
    let t = local_t as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ 0xA5A5_5A5A, frame_index));
    let (jx, jy) = match cfg.camera {
        CameraMode::Egocentric => (rng.gen_range(-2i32..=2) as f64, rng.gen_range(-2i32..=2) as f64),
        _ => (0.0, 0.0),
    };
    let pan = match cfg.camera {
        CameraMode::Moving => cfg.velocity.max(0.25) * t,
        _ => 0.0,
    };
    let placed: Vec<(f64, f64, &Object)> = seg
        .objects
        .iter()
        .map(|o| {
            let x = reflect(o.x0 + o.vx * t, w as f64 - o.w) + jx;
            let y = reflect(o.y0 + o.vy * t, h as f64 - o.h) + jy;
            (x, y, o)
        })
        .collect();

    let mut pixels = vec![0u8; h * w * 3];
    let mut labels = vec![0u8; h * w];
    let amp = cfg.noise * 255.0;
    for py in 0..h {
        for px in 0..w {
            let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut hit: Option<&Object> = None;
            let mut local = (0.0, 0.0);
            for &(x, y, o) in &placed {
                let inside = match o.shape {
                    Shape::Rect => cx >= x && cx < x + o.w && cy >= y && cy < y + o.h,
                    Shape::Ellipse => {
                        let dx = (cx - (x + o.w / 2.0)) / (o.w / 2.0);
                        let dy = (cy - (y + o.h / 2.0)) / (o.h / 2.0);
                        dx * dx + dy * dy <= 1.0
                    }
                };
                if inside {
                    hit = Some(o);
                    local = (cx - x, cy - y);
                }
            }
            let rgb = match hit {
                Some(o) => {
                    labels[py * w + px] = o.class;
                    let s = 1.0 + 0.08 * (o.stripe * (local.0 + local.1)).sin();
                    [o.color[0] * s, o.color[1] * s, o.color[2] * s]
                }
                None => {
                    let bx = cx + jx + pan;
                    let by = cy + jy;
                    let m = 0.5 + 0.5 * (seg.freq.0 * bx + seg.freq.1 * by + seg.phase).sin();
                    [
                        seg.bg_a[0] * m + seg.bg_b[0] * (1.0 - m),
                        seg.bg_a[1] * m + seg.bg_b[1] * (1.0 - m),
                        seg.bg_a[2] * m + seg.bg_b[2] * (1.0 - m),
                    ]
                }
            };
            for (ch, v) in rgb.iter().enumerate() {
                let n = if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
                pixels[(py * w + px) * 3 + ch] = (v + n).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    (
        Frame { height: h, width: w, channels: 3, pixels },
        SegMap::new(h, w, labels).expect("dims consistent"),
    )
}

/// Frames paired with their ground-truth maps.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub frames: Vec<Frame>,
    pub labels: Vec<SegMap>,
    pub fps: u32,
    pub classes: usize,
}

impl LabeledStream {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames.first().map(|f| (f.height, f.width)).unwrap_or((0, 0))
    }

    /// First `n` frames.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            frames: self.frames[..n.min(self.len())].to_vec(),
            labels: self.labels[..n.min(self.len())].to_vec(),
            ..self.clone()
        }
    }
}

/// Nominal frame rate of generated streams.
pub const DEFAULT_FPS: u32 = 28;

pub fn generate(cfg: &SceneConfig, n: usize) -> Result<LabeledStream, VideoError> {
    cfg.validate()?;
    if n == 0 {
        return Err(VideoError::InvalidScene("need at least one frame".into()));
    }
    let mut frames = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut segment: Option<(u64, Segment)> = None;
    for i in 0..n as u64 {
        let seg_idx = i / cfg.change_period as u64;
        if segment.as_ref().map(|(s, _)| *s) != Some(seg_idx) {
            segment = Some((seg_idx, Segment::sample(cfg, seg_idx)));
        }
        let (_, seg) = segment.as_ref().expect("set above");
        let (f, l) = render(cfg, seg, i - seg_idx * cfg.change_period as u64, i);
        frames.push(f);
        labels.push(l);
    }
    Ok(LabeledStream { frames, labels, fps: DEFAULT_FPS, classes: cfg.classes })
}

/// Keeps every `(source/target)`-th frame, starting with frame 0.
pub fn resample_fps(stream: &LabeledStream, source_fps: u32, target_fps: u32) -> Result<LabeledStream, VideoError> {
    if target_fps == 0 || source_fps == 0 || !source_fps.is_multiple_of(target_fps) {
        return Err(VideoError::NonDivisibleRate { source_fps, target_fps });
    }
    let step = (source_fps / target_fps) as usize;
    Ok(LabeledStream {
        frames: stream.frames.iter().step_by(step).cloned().collect(),
        labels: stream.labels.iter().step_by(step).cloned().collect(),
        fps: target_fps,
        classes: stream.classes,
    })
}

/// Fraction of pixels whose label differs between consecutive frames,
/// averaged over the stream.
pub fn mean_label_change(stream: &LabeledStream) -> f64 {
    if stream.len() < 2 {
        return 0.0;
    }
    let total: f64 = stream
        .labels
        .windows(2)
        .map(|p| {
            let changed = p[0].labels().iter().zip(p[1].labels()).filter(|(a, b)| a != b).count();
            changed as f64 / p[0].labels().len() as f64
        })
        .sum();
    total / (stream.len() - 1) as f64
}

/// One frame from each of `count` independently seeded scenes with randomly
/// drawn camera, speed and object count.
pub fn scene_corpus(
    height: usize,
    width: usize,
    classes: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(Frame, SegMap)>, VideoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xC0FFEE));
    (0..count)
        .map(|_| {
            let cfg = SceneConfig {
                height,
                width,
                classes,
                objects: rng.gen_range(1..=4),
                velocity: rng.gen_range(0.0..1.5),
                change_period: usize::MAX,
                camera: match rng.gen_range(0..3) {
                    0 => CameraMode::Fixed,
                    1 => CameraMode::Moving,
                    _ => CameraMode::Egocentric,
                },
                noise: 0.02,
                seed: rng.gen(),
            };
            cfg.validate()?;
            let seg = Segment::sample(&cfg, 0);
            let t = rng.gen_range(0..200u64);
            Ok(render(&cfg, &seg, t, t))
        })
        .collect()
}

const STREAM_MAGIC: &[u8; 4] = b"SVID";
pub const STREAM_VERSION: u16 = 1;

pub fn write_stream<W: Write>(stream: &LabeledStream, mut out: W) -> Result<(), VideoError> {
    let (h, w) = stream.dims();
    let c = stream.frames.first().map(|f| f.channels).unwrap_or(3);
    out.write_all(STREAM_MAGIC)?;
    out.write_all(&STREAM_VERSION.to_le_bytes())?;
    out.write_all(&(h as u16).to_le_bytes())?;
    out.write_all(&(w as u16).to_le_bytes())?;
    out.write_all(&[c as u8, stream.classes as u8])?;
    out.write_all(&(stream.fps as u16).to_le_bytes())?;
    out.write_all(&(stream.len() as u64).to_le_bytes())?;
    for (f, l) in stream.frames.iter().zip(&stream.labels) {
        out.write_all(&f.pixels)?;
        out.write_all(l.labels())?;
    }
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), VideoError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => VideoError::Truncated,
        _ => VideoError::Io(e),
    })
}

pub fn read_stream<R: Read>(mut input: R) -> Result<LabeledStream, VideoError> {
    let mut head = [0u8; 22];
    read_exact_or_truncated(&mut input, &mut head)?;
    if &head[..4] != STREAM_MAGIC {
        return Err(VideoError::BadMagic);
    }
    let u16_at = |i: usize| u16::from_le_bytes([head[i], head[i + 1]]);
    let version = u16_at(4);
    if version != STREAM_VERSION {
        return Err(VideoError::Version(version));
    }
    let (h, w) = (u16_at(6) as usize, u16_at(8) as usize);
    let (c, k) = (head[10] as usize, head[11] as usize);
    let fps = u16_at(12) as u32;
    let n = u64::from_le_bytes(head[14..22].try_into().expect("8 bytes"));
    if h == 0 || w == 0 || c == 0 {
        return Err(VideoError::FrameDims((h, w, c), 0));
    }
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let mut px = vec![0u8; h * w * c];
        read_exact_or_truncated(&mut input, &mut px)?;
        let mut lb = vec![0u8; h * w];
        read_exact_or_truncated(&mut input, &mut lb)?;
        frames.push(Frame { height: h, width: w, channels: c, pixels: px });
        labels.push(SegMap::new(h, w, lb).expect("sized above"));
    }
    Ok(LabeledStream { frames, labels, fps, classes: k })
}
