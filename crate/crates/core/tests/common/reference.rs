//! Plain f64 re-implementation of the student forward pass and loss, used as
//! an oracle for the tape's gradients.

use shadowtutor::model::{ArchDescriptor, BlockKind};

#[derive(Clone)]
pub struct Plane {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }
}

/// Parameters of one block as (kernel, bias), kernel laid out [out][in][k][k].
pub type Layer = (Vec<f64>, Vec<f64>);

fn conv(x: &Plane, kernel: &[f64], bias: &[f64], out: usize, k: usize, stride: usize) -> Plane {
    let pad = k / 2;
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut data = vec![0.0; out * oh * ow];
    for o in 0..out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias[o];
                for c in 0..x.c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                s += kernel[((o * x.c + c) * k + ky) * k + kx] * x.at(c, iy as usize, ix as usize);
                            }
                        }
                    }
                }
                data[(o * oh + oy) * ow + ox] = s;
            }
        }
    }
    Plane { c: out, h: oh, w: ow, data }
}

fn upsample(x: &Plane) -> Plane {
    let (h, w) = (2 * x.h, 2 * x.w);
    let mut data = Vec::with_capacity(x.c * h * w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                data.push(x.at(c, y / 2, xx / 2));
            }
        }
    }
    Plane { c: x.c, h, w, data }
}

fn concat(a: &Plane, b: &Plane) -> Plane {
    let mut data = a.data.clone();
    data.extend_from_slice(&b.data);
    Plane { c: a.c + b.c, h: a.h, w: a.w, data }
}

/// Weighted mean negative log-likelihood, plus every pre-ReLU activation so
/// callers can tell when a perturbation crossed a kink.
pub fn loss(arch: &ArchDescriptor, layers: &[Layer], input: &Plane, labels: &[u8], weights: &[f64]) -> (f64, Vec<f64>) {
    let mut outs: Vec<Plane> = Vec::new();
    let mut scales: Vec<i32> = Vec::new();
    let mut pre = Vec::new();
    for (i, b) in arch.blocks.iter().enumerate() {
        let prev = if i == 0 { input.clone() } else { outs[i - 1].clone() };
        let prev_scale = if i == 0 { 0 } else { scales[i - 1] };
        let (x, scale, stride) = match b.kind {
            BlockKind::Conv | BlockKind::Logits => (prev, prev_scale, 1),
            BlockKind::Down => (prev, prev_scale + 1, 2),
            BlockKind::UpSkip | BlockKind::UpSkipLogits => {
                let target = prev_scale - 1;
                let j = (0..i - 1).rev().find(|&j| scales[j] == target).expect("valid arch");
                (concat(&upsample(&prev), &outs[j]), target, 1)
            }
        };
        let (kernel, bias) = &layers[i];
        let mut y = conv(&x, kernel, bias, b.out_channels as usize, b.kernel as usize, stride);
        if !matches!(b.kind, BlockKind::Logits | BlockKind::UpSkipLogits) {
            pre.extend_from_slice(&y.data);
            y.data.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        outs.push(y);
        scales.push(scale);
    }
    let z = outs.pop().expect("non-empty");
    let hw = z.h * z.w;
    let (mut total, mut wsum) = (0.0, 0.0);
    for px in 0..hw {
        let m = (0..z.c).map(|c| z.data[c * hw + px]).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + (0..z.c).map(|c| (z.data[c * hw + px] - m).exp()).sum::<f64>().ln();
        let nll = lse - z.data[labels[px] as usize * hw + px];
        total += weights[px] * nll;
        wsum += weights[px];
    }
    (total / wsum, pre)
}
