//! Forward and backward passes for the plain 3x3 convnet.

use crate::nn::ops::{axpy, dot, linear, matmul_a_bt, matmul_acc, matmul_at_b_acc};
use crate::nn::{ParamSet, Tensor};
use crate::rng::Rng64;

use super::ConvNetSpec;

pub(crate) const KERNEL: usize = 3;

enum Step {
    Conv {
        layer: usize,
        padded: Vec<f32>,
        relu: Vec<f32>,
        cin: usize,
        cout: usize,
        h: usize,
        w: usize,
        residual: bool,
    },
    Pool {
        argmax: Vec<u32>,
        c: usize,
        h: usize,
        w: usize,
    },
}

/// Activations retained for one sample's backward pass.
pub(crate) struct Trace {
    steps: Vec<Step>,
    feat: Vec<f32>,
    gap_area: usize,
    pub logits: Vec<f32>,
}

pub(crate) fn init_params(spec: &ConvNetSpec, rng: &mut Rng64) -> ParamSet {
    let mut params = ParamSet::default();
    let mut cin = 1;
    let mut layer = 0;
    for (si, stage) in spec.stages.iter().enumerate() {
        for j in 0..stage.convs {
            let cout = stage.channels;
            let fan_in = (cin * KERNEL * KERNEL) as f64;
            let std = (2.0 / fan_in).sqrt();
            let mut w = Tensor::zeros(format!("stage{si}.conv{j}.weight"), &[cout, cin, KERNEL, KERNEL]);
            for v in &mut w.data {
                *v = (rng.normal() * std) as f32;
            }
            params.push(w);
            params.push(Tensor::zeros(format!("stage{si}.conv{j}.bias"), &[cout]));
            cin = cout;
            layer += 1;
        }
    }
    debug_assert_eq!(layer, spec.conv_layers());
    let mut head = Tensor::zeros("head.weight", &[cin, spec.num_classes]);
    for v in &mut head.data {
        *v = (rng.normal() * super::HEAD_INIT_STD) as f32;
    }
    params.push(head);
    params.push(Tensor::zeros("head.bias", &[spec.num_classes]));
    params
}

fn pad(input: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let mut out = vec![0.0; c * plane];
    for ci in 0..c {
        for y in 0..h {
            let dst = ci * plane + (y + 1) * pw + 1;
            out[dst..dst + w].copy_from_slice(&input[ci * h * w + y * w..][..w]);
        }
    }
    out
}

/// Unfolds a padded `c x (h+2) x (w+2)` buffer into `(c*9) x (h*w)` columns.
fn im2col(padded: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let hw = h * w;
    let mut col = vec![0.0; c * KERNEL * KERNEL * hw];
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let src = ci * plane + (y + ky) * pw + kx;
                    dst[y * w..(y + 1) * w].copy_from_slice(&padded[src..src + w]);
                }
            }
        }
    }
    col
}

/// Inverse scatter of [`im2col`] back to an unpadded `c x h x w` buffer.
fn col2im(col: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for ci in 0..c {
        let dst = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let yy = y + ky;
                    if yy == 0 || yy > h {
                        continue;
                    }
                    let (x0, x1) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w });
                    let d = &mut dst[(yy - 1) * w..yy * w];
                    for x in x0..x1 {
                        d[x + kx - 1] += src[y * w + x];
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(padded: &[f32], cin: usize, cout: usize, h: usize, w: usize, weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let hw = h * w;
    let kk = cin * KERNEL * KERNEL;
    let col = im2col(padded, cin, h, w);
    let mut out = Vec::with_capacity(cout * hw);
    for &b in bias {
        out.extend(std::iter::repeat_n(b, hw));
    }
    matmul_acc(weight, &col, &mut out, cout, kk, hw);
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    padded: &[f32],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    dout: &[f32],
    dweight: &mut [f32],
    dbias: &mut [f32],
    need_input_grad: bool,
) -> Option<Vec<f32>> {
    let hw = h * w;
    let kk = cin * KERNEL * KERNEL;
    let col = im2col(padded, cin, h, w);
    for co in 0..cout {
        let g = &dout[co * hw..(co + 1) * hw];
        dbias[co] += g.iter().sum::<f32>();
        for r in 0..kk {
            dweight[co * kk + r] += dot(g, &col[r * hw..(r + 1) * hw]);
        }
    }
    if !need_input_grad {
        return None;
    }
    let mut dcol = vec![0.0; kk * hw];
    matmul_at_b_acc(weight, dout, &mut dcol, cout, kk, hw);
    Some(col2im(&dcol, cin, h, w))
}

fn max_pool(input: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn forward_trace(spec: &ConvNetSpec, params: &ParamSet, input: &[f32]) -> Trace {
    let t = &params.tensors;
    let (mut c, mut h, mut w) = (1, spec.input_size, spec.input_size);
    let mut x = input.to_vec();
    let mut steps = Vec::with_capacity(spec.conv_layers() + spec.stages.len());
    let mut layer = 0;
    for stage in &spec.stages {
        for j in 0..stage.convs {
            let cout = stage.channels;
            let residual = spec.residual && j > 0;
            let padded = pad(&x, c, h, w);
            let mut relu = conv_forward(&padded, c, cout, h, w, &t[2 * layer].data, &t[2 * layer + 1].data);
            for v in &mut relu {
                *v = v.max(0.0);
            }
            let out = if residual { relu.iter().zip(&x).map(|(r, s)| r + s).collect() } else { relu.clone() };
            steps.push(Step::Conv { layer, padded, relu, cin: c, cout, h, w, residual });
            x = out;
            c = cout;
            layer += 1;
        }
        let (pooled, argmax) = max_pool(&x, c, h, w);
        steps.push(Step::Pool { argmax, c, h, w });
        x = pooled;
        h /= 2;
        w /= 2;
    }
    let area = h * w;
    let feat: Vec<f32> = (0..c).map(|ci| x[ci * area..(ci + 1) * area].iter().sum::<f32>() / area as f32).collect();
    let logits = linear(&feat, &t[2 * layer].data, &t[2 * layer + 1].data, 1, c, spec.num_classes);
    Trace { steps, feat, gap_area: area, logits }
}

/// Accumulates `d loss / d params` into `grads` given `d loss / d logits`.
pub(crate) fn backward_trace(spec: &ConvNetSpec, params: &ParamSet, trace: &Trace, dlogits: &[f32], grads: &mut ParamSet) {
    let layers = spec.conv_layers();
    let k = spec.num_classes;
    let c = trace.feat.len();
    let head_w = &params.tensors[2 * layers].data;
    matmul_at_b_acc(&trace.feat, dlogits, &mut grads.tensors[2 * layers].data, 1, c, k);
    axpy(1.0, dlogits, &mut grads.tensors[2 * layers + 1].data);
    let dfeat = matmul_a_bt(dlogits, head_w, 1, c, k);
    let area = trace.gap_area;
    let mut dx: Vec<f32> = Vec::with_capacity(c * area);
    for g in &dfeat {
        dx.extend(std::iter::repeat_n(g / area as f32, area));
    }
    for step in trace.steps.iter().rev() {
        match step {
            Step::Pool { argmax, c, h, w } => {
                let mut din = vec![0.0; c * h * w];
                for (g, &i) in dx.iter().zip(argmax) {
                    din[i as usize] += g;
                }
                dx = din;
            }
            Step::Conv { layer, padded, relu, cin, cout, h, w, residual } => {
                let dr: Vec<f32> = dx.iter().zip(relu).map(|(g, r)| if *r > 0.0 { *g } else { 0.0 }).collect();
                let (wg, bg) = grads.tensors.split_at_mut(2 * layer + 1);
                let din = conv_backward(
                    padded,
                    *cin,
                    *cout,
                    *h,
                    *w,
                    &params.tensors[2 * layer].data,
                    &dr,
                    &mut wg[2 * layer].data,
                    &mut bg[0].data,
                    *layer > 0,
                );
                match din {
                    Some(mut din) => {
                        if *residual {
                            axpy(1.0, &dx, &mut din);
                        }
                        dx = din;
                    }
                    None => break,
                }
            }
        }
    }
}
