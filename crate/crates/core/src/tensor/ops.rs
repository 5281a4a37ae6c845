use super::{Result, Tensor, TensorError};

/// Output extent of a convolution along one axis.
fn conv_out(extent: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if extent + 2 * pad < kernel {
        return Err(TensorError::Shape(format!(
            "kernel {kernel} larger than padded extent {}",
            extent + 2 * pad
        )));
    }
    Ok((extent + 2 * pad - kernel) / stride + 1)
}

/// Range of output columns `ox` whose input column `ox*stride + kx - pad`
/// falls inside `[0, width)`.
#[inline]
fn valid_cols(width: usize, out_w: usize, kx: usize, stride: usize, pad: usize) -> (usize, usize) {
    let offset = kx as isize - pad as isize;
    let s = stride as isize;
    // smallest ox with ox*s + offset >= 0
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    // largest ox with ox*s + offset <= width - 1
    let hi_num = width as isize - 1 - offset;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num / s + 1).min(out_w as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    let (o, kc, kh, kw) = kernel.nchw()?;
    if stride == 0 {
        return Err(TensorError::Shape("stride must be positive".into()));
    }
    if kc != c {
        return Err(TensorError::Shape(format!(
            "input has {c} channels, kernel expects {kc}"
        )));
    }
    if bias.dims() != [o] {
        return Err(TensorError::Shape(format!(
            "bias dims {:?}, expected [{o}]",
            bias.dims()
        )));
    }
    let oh = conv_out(h, kh, stride, pad)?;
    let ow = conv_out(w, kw, stride, pad)?;
    let inp = input.data();
    let ker = kernel.data();
    let mut out = vec![0f32; n * o * oh * ow];

    for b in 0..n {
        for oc in 0..o {
            let plane = &mut out[(b * o + oc) * oh * ow..(b * o + oc + 1) * oh * ow];
            plane.fill(bias.data()[oc]);
            for ic in 0..c {
                let src = &inp[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = ker[((oc * c + ic) * kh + ky) * kw + kx];
                        let (x0, x1) = valid_cols(w, ow, kx, stride, pad);
                        if x0 == x1 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            let base = kx as isize - pad as isize;
                            if stride == 1 {
                                let s0 = (x0 as isize + base) as usize;
                                for (d, s) in dst[x0..x1].iter_mut().zip(&row[s0..s0 + (x1 - x0)]) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in x0..x1 {
                                    let ix = (ox * stride) as isize + base;
                                    dst[ox] += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![n, o, oh, ow], out)
}

/// Gradients of a convolution. `input` is only filled when requested.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
    need_input: bool,
    need_params: bool,
) -> Result<ConvGrads> {
    let (n, c, h, w) = input.nchw()?;
    let (o, _, kh, kw) = kernel.nchw()?;
    let (gn, go, oh, ow) = grad_out.nchw()?;
    if gn != n || go != o || oh != conv_out(h, kh, stride, pad)? || ow != conv_out(w, kw, stride, pad)? {
        return Err(TensorError::Shape(format!(
            "conv grad dims {:?} inconsistent with input {:?} / kernel {:?}",
            grad_out.dims(),
            input.dims(),
            kernel.dims()
        )));
    }
    let inp = input.data();
    let ker = kernel.data();
    let g = grad_out.data();
    let mut gi = need_input.then(|| vec![0f32; input.len()]);
    let mut gk = need_params.then(|| vec![0f32; kernel.len()]);
    let mut gb = need_params.then(|| vec![0f32; o]);

    for b in 0..n {
        for oc in 0..o {
            let gplane = &g[(b * o + oc) * oh * ow..(b * o + oc + 1) * oh * ow];
            if let Some(gb) = gb.as_mut() {
                gb[oc] += gplane.iter().sum::<f32>();
            }
            for ic in 0..c {
                let off = (b * c + ic) * h * w;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kidx = ((oc * c + ic) * kh + ky) * kw + kx;
                        let wv = ker[kidx];
                        let (x0, x1) = valid_cols(w, ow, kx, stride, pad);
                        if x0 == x1 {
                            continue;
                        }
                        let base = kx as isize - pad as isize;
                        let mut acc = 0f32;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row0 = off + iy as usize * w;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            for ox in x0..x1 {
                                let ix = row0 + ((ox * stride) as isize + base) as usize;
                                let gv = grow[ox];
                                acc += gv * inp[ix];
                                if let Some(gi) = gi.as_mut() {
                                    gi[ix] += wv * gv;
                                }
                            }
                        }
                        if let Some(gk) = gk.as_mut() {
                            gk[kidx] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gi.map(|d| Tensor::from_vec(input.dims().to_vec(), d)).transpose()?,
        kernel: gk.map(|d| Tensor::from_vec(kernel.dims().to_vec(), d)).transpose()?,
        bias: gb.map(|d| Tensor::from_vec(vec![o], d)).transpose()?,
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// The derivative at exactly zero is taken as 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Per-pixel softmax over the channel axis of an `N×C×H×W` tensor.
pub fn softmax_channels(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    let hw = h * w;
    let x = input.data();
    let mut out = vec![0f32; x.len()];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut max = f32::NEG_INFINITY;
            for ch in 0..c {
                max = max.max(x[base + ch * hw + p]);
            }
            let mut sum = 0f32;
            for ch in 0..c {
                let e = (x[base + ch * hw + p] - max).exp();
                out[base + ch * hw + p] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for ch in 0..c {
                out[base + ch * hw + p] *= inv;
            }
        }
    }
    Tensor::from_vec(input.dims().to_vec(), out)
}

/// Vector-Jacobian product of the channel softmax given its output `probs`.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = probs.nchw()?;
    let hw = h * w;
    let p = probs.data();
    let g = grad_out.data();
    let mut out = vec![0f32; p.len()];
    for b in 0..n {
        let base = b * c * hw;
        for px in 0..hw {
            let mut dot = 0f32;
            for ch in 0..c {
                let i = base + ch * hw + px;
                dot += g[i] * p[i];
            }
            for ch in 0..c {
                let i = base + ch * hw + px;
                out[i] = p[i] * (g[i] - dot);
            }
        }
    }
    Tensor::from_vec(probs.dims().to_vec(), out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ca, h, w) = a.nchw()?;
    let (nb, cb, hb, wb) = b.nchw()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(TensorError::Shape(format!(
            "cannot concat {:?} with {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca * hw..(i + 1) * ca * hw]);
        out.extend_from_slice(&b.data()[i * cb * hw..(i + 1) * cb * hw]);
    }
    Tensor::from_vec(vec![n, ca + cb, h, w], out)
}

/// Splits a concat gradient back into the two operand gradients.
pub(crate) fn split_channels(grad: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = grad.nchw()?;
    let hw = h * w;
    let second = c - first;
    let mut ga = Vec::with_capacity(n * first * hw);
    let mut gb = Vec::with_capacity(n * second * hw);
    for i in 0..n {
        let base = i * c * hw;
        ga.extend_from_slice(&grad.data()[base..base + first * hw]);
        gb.extend_from_slice(&grad.data()[base + first * hw..base + c * hw]);
    }
    Ok((
        Tensor::from_vec(vec![n, first, h, w], ga)?,
        Tensor::from_vec(vec![n, second, h, w], gb)?,
    ))
}

/// Nearest-neighbour 2× spatial upsampling.
pub fn upsample2x(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![0f32; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            let srow = &src[(oy / 2) * w..(oy / 2 + 1) * w];
            for ox in 0..ow {
                dst[oy * ow + ox] = srow[ox / 2];
            }
        }
    }
    Tensor::from_vec(vec![n, c, oh, ow], out)
}

pub fn upsample2x_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, oh, ow) = grad_out.nchw()?;
    let (h, w) = (oh / 2, ow / 2);
    let g = grad_out.data();
    let mut out = vec![0f32; n * c * h * w];
    for plane in 0..n * c {
        let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[(oy / 2) * w + ox / 2] += src[oy * ow + ox];
            }
        }
    }
    Tensor::from_vec(vec![n, c, h, w], out)
}
