#![allow(dead_code)]

pub mod reference;

use std::sync::{Arc, OnceLock};

use shadowtutor::distill::AlgoParams;
use shadowtutor::model::{pretrain_student, ArchDescriptor, OracleTeacher, StudentModel, Teacher};
use shadowtutor::netsim::{ChannelConfig, ComputeLatency, Scenario};
use shadowtutor::protocol::Strategy;
use shadowtutor::videogen::{generate, scene_corpus, LabeledStream, SceneConfig};

fn train(size: usize, scenes: usize, epochs: usize) -> StudentModel {
    let corpus = scene_corpus(size, size, 4, scenes, 1).unwrap();
    let mut m = StudentModel::build(ArchDescriptor::desk_student(4), 7).unwrap();
    pretrain_student(&mut m, &corpus, epochs, 0.01, 3).unwrap();
    m
}

/// Desk student pre-trained on 64 scenes for 5 epochs at `size`×`size`.
pub fn pretrained(size: usize) -> StudentModel {
    static S32: OnceLock<StudentModel> = OnceLock::new();
    static S64: OnceLock<StudentModel> = OnceLock::new();
    match size {
        32 => S32.get_or_init(|| train(32, 64, 5)).clone(),
        64 => S64.get_or_init(|| train(64, 64, 5)).clone(),
        _ => train(size, 64, 5),
    }
}

/// Barely trained student that needs distillation steps to pass the threshold.
pub fn weak(size: usize) -> StudentModel {
    static W: OnceLock<StudentModel> = OnceLock::new();
    if size == 32 {
        W.get_or_init(|| train(32, 8, 1)).clone()
    } else {
        train(size, 8, 1)
    }
}

pub fn stream(preset: &str, size: usize, frames: usize, seed: u64) -> Arc<LabeledStream> {
    let cfg = SceneConfig { height: size, width: size, seed, ..SceneConfig::preset(preset).unwrap() };
    Arc::new(generate(&cfg, frames).unwrap())
}

pub fn scenario(
    stream: Arc<LabeledStream>,
    student: StudentModel,
    noise: f64,
    params: AlgoParams,
    channel: ChannelConfig,
    latency: ComputeLatency,
) -> Scenario {
    let teacher = Teacher::Oracle(OracleTeacher::new(Arc::new(stream.labels.clone()), stream.classes, noise, 5));
    Scenario {
        name: "test".into(),
        stream,
        student,
        teacher,
        params,
        strategy: Strategy::ShadowTutor,
        channel,
        latency,
    }
}

/// `a <= b` up to floating-point rounding.
pub fn le(a: f64, b: f64) -> bool {
    a <= b + 1e-9 * b.abs().max(a.abs()).max(1e-12)
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub failures: Vec<String>,
    /// Layers the tape produced gradients for.
    pub layers: Vec<usize>,
    pub boundary: usize,
    pub blocks: usize,
}

/// Small random architecture drawn from a handful of valid shapes.
pub fn random_arch(rng: &mut impl rand::Rng) -> (ArchDescriptor, usize) {
    use shadowtutor::model::{BlockKind::*, BlockSpec};
    let c0 = rng.gen_range(1..=3u16);
    let k = rng.gen_range(2..=4u16);
    let (a, b, c) = (rng.gen_range(1..=4u16), rng.gen_range(1..=4u16), rng.gen_range(1..=4u16));
    let kernels: Vec<u16> = (0..4).map(|_| if rng.gen::<bool>() { 3 } else { 1 }).collect();
    let mut next = kernels.into_iter();
    let mut ker = || next.next().expect("four kernels");
    let (blocks, size) = match rng.gen_range(0..4) {
        0 => (vec![BlockSpec::new(Conv, c0, a, ker()), BlockSpec::new(Logits, a, k, ker())], 4),
        1 => (
            vec![BlockSpec::new(Conv, c0, a, ker()), BlockSpec::new(Conv, a, b, ker()), BlockSpec::new(Logits, b, k, ker())],
            4,
        ),
        2 => (
            vec![BlockSpec::new(Conv, c0, a, ker()), BlockSpec::new(Down, a, b, 3), BlockSpec::new(UpSkipLogits, a + b, k, ker())],
            8,
        ),
        _ => (
            vec![
                BlockSpec::new(Conv, c0, a, ker()),
                BlockSpec::new(Down, a, b, 3),
                BlockSpec::new(UpSkip, a + b, c, ker()),
                BlockSpec::new(Logits, c, k, ker()),
            ],
            8,
        ),
    };
    let boundary = rng.gen_range(0..blocks.len());
    (ArchDescriptor { blocks, freeze_boundary: boundary }, size)
}

/// Compares tape gradients with central differences of the f64 reference
/// (step 1e-3). A coordinate fails only when it is off by more than 1e-5
/// absolute and 1e-4 relative; coordinates whose perturbation flips a ReLU
/// are skipped.
pub fn gradcheck(seed: u64) -> GradCheck {
    use rand::{Rng, SeedableRng};
    use shadowtutor::videogen::Frame;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (arch, size) = random_arch(&mut rng);
    let model = StudentModel::build(arch.clone(), rng.gen()).unwrap();
    let c0 = arch.input_channels();
    let k = arch.classes();
    let pixels: Vec<u8> = (0..size * size * c0).map(|_| rng.gen()).collect();
    let frame = Frame::new(size, size, c0, pixels).unwrap();
    let labels: Vec<u8> = (0..size * size).map(|_| rng.gen_range(0..k as u8)).collect();
    let weights: Vec<f32> = (0..size * size).map(|_| rng.gen_range(0.5..5.0)).collect();

    let (mut tape, probs) = model.forward_tape(&frame).unwrap();
    let loss = tape.weighted_nll(probs, &labels, &weights).unwrap();
    let grads = tape.backward_partial(loss, 1.0).unwrap();

    let input = {
        let mut data = vec![0.0; c0 * size * size];
        for (i, px) in frame.pixels().chunks(c0).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[c * size * size + i] = v as f64 / 255.0;
            }
        }
        reference::Plane { c: c0, h: size, w: size, data }
    };
    let w64: Vec<f64> = weights.iter().map(|&w| w as f64).collect();
    let base: Vec<reference::Layer> = model
        .params()
        .iter()
        .map(|p| {
            let f = |t: &[f32]| t.iter().map(|&v| v as f64).collect::<Vec<_>>();
            (f(p.kernel.data()), f(p.bias.data()))
        })
        .collect();

    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        failures: Vec::new(),
        layers: grads.layers.keys().copied().collect(),
        boundary: arch.freeze_boundary,
        blocks: arch.blocks.len(),
    };
    let h = 1e-3;
    for (li, g) in &grads.layers {
        for (which, analytic) in [(0, g.kernel.data()), (1, g.bias.data())] {
            for (idx, &a) in analytic.iter().enumerate() {
                let eval = |delta: f64| {
                    let mut layers = base.clone();
                    let t = if which == 0 { &mut layers[*li].0 } else { &mut layers[*li].1 };
                    t[idx] += delta;
                    reference::loss(&arch, &layers, &input, &labels, &w64)
                };
                let (lp, sp) = eval(h);
                let (lm, sm) = eval(-h);
                if sp.iter().zip(&sm).any(|(p, m)| (*p > 0.0) != (*m > 0.0)) {
                    out.skipped += 1;
                    continue;
                }
                out.checked += 1;
                let n = (lp - lm) / (2.0 * h);
                let abs = (a as f64 - n).abs();
                let rel = abs / (a as f64).abs().max(n.abs()).max(1e-12);
                if abs > 1e-5 && rel > 1e-4 {
                    out.failures.push(format!("layer {li} {} [{idx}]: tape {a} vs {n}", ["kernel", "bias"][which]));
                }
            }
        }
    }
    out
}

/// Mean IoU by explicit set construction, averaged over the label's classes.
pub fn brute_force_miou(pred: &[u8], label: &[u8]) -> f64 {
    use std::collections::BTreeSet;
    let classes: BTreeSet<u8> = label.iter().copied().collect();
    let mut sum = 0.0;
    for &c in &classes {
        let a: BTreeSet<usize> = (0..pred.len()).filter(|&i| pred[i] == c).collect();
        let b: BTreeSet<usize> = (0..label.len()).filter(|&i| label[i] == c).collect();
        sum += a.intersection(&b).count() as f64 / a.union(&b).count() as f64;
    }
    sum / classes.len() as f64
}
