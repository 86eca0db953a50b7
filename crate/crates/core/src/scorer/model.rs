//! Post-norm transformer encoder with a pooled-CLS linear head, forward and
//! hand-written backward pass.

use crate::nn::ops::{axpy, dot, linear, matmul_a_bt, matmul_acc, matmul_at_b_acc, softmax_inplace};
use crate::nn::{ParamSet, Tensor};
use crate::rng::Rng64;

pub const LN_EPS: f32 = 1e-5;
pub const INIT_STD: f64 = 0.02;

const GLOBAL: usize = 4;
const PER_LAYER: usize = 16;
const TOK: usize = 0;
const POS: usize = 1;
const EMB_G: usize = 2;
const EMB_B: usize = 3;
const WQ: usize = 0;
const BQ: usize = 1;
const WK: usize = 2;
const BK: usize = 3;
const WV: usize = 4;
const BV: usize = 5;
const WO: usize = 6;
const BO: usize = 7;
const LN1G: usize = 8;
const LN1B: usize = 9;
const W1: usize = 10;
const B1: usize = 11;
const W2: usize = 12;
const B2: usize = 13;
const LN2G: usize = 14;
const LN2B: usize = 15;

const LAYER_NAMES: [&str; PER_LAYER] = [
    "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo", "ln1.gamma", "ln1.beta",
    "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2", "ln2.gamma", "ln2.beta",
];

/// Resolved sizes of one model instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    pub layers: usize,
    pub pooled: usize,
    pub max_len: usize,
    pub ranks: usize,
}

impl Dims {
    fn layer(&self, l: usize, k: usize) -> usize {
        GLOBAL + PER_LAYER * l + k
    }

    fn head_w(&self) -> usize {
        GLOBAL + PER_LAYER * self.layers
    }

    pub fn feature_len(&self) -> usize {
        self.d_model * self.pooled
    }
}

fn normal(name: String, shape: &[usize], rng: &mut Rng64) -> Tensor {
    let mut t = Tensor::zeros(name, shape);
    for v in &mut t.data {
        *v = (rng.normal() * INIT_STD) as f32;
    }
    t
}

fn ones(name: String, n: usize) -> Tensor {
    let mut t = Tensor::zeros(name, &[n]);
    t.data.fill(1.0);
    t
}

pub fn init_params(dims: &Dims, rng: &mut Rng64) -> ParamSet {
    let Dims { vocab, d_model: d, ffn: f, layers, max_len, ranks, .. } = *dims;
    let mut p = ParamSet::default();
    p.push(normal("tok_emb".into(), &[vocab, d], rng));
    p.push(normal("pos_emb".into(), &[max_len, d], rng));
    p.push(ones("emb_ln.gamma".into(), d));
    p.push(Tensor::zeros("emb_ln.beta", &[d]));
    for l in 0..layers {
        for (k, name) in LAYER_NAMES.iter().enumerate() {
            let full = format!("layer{l}.{name}");
            let t = match k {
                WQ | WK | WV | WO => normal(full, &[d, d], rng),
                W1 => normal(full, &[d, f], rng),
                W2 => normal(full, &[f, d], rng),
                LN1G | LN2G => ones(full, d),
                B1 => Tensor::zeros(full, &[f]),
                _ => Tensor::zeros(full, &[d]),
            };
            p.push(t);
        }
    }
    p.push(normal("head.weight".into(), &[dims.feature_len(), ranks], rng));
    p.push(Tensor::zeros("head.bias", &[ranks]));
    p
}

/// Expected tensor shapes, for validating loaded checkpoints.
pub fn expected_shapes(dims: &Dims) -> Vec<Vec<usize>> {
    let mut rng = Rng64::new(0);
    let small = Dims { vocab: 0, max_len: 0, ..*dims };
    let mut shapes: Vec<Vec<usize>> = init_params(&small, &mut rng).tensors.into_iter().map(|t| t.shape).collect();
    shapes[TOK] = vec![dims.vocab, dims.d_model];
    shapes[POS] = vec![dims.max_len, dims.d_model];
    shapes
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6;
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    const C: f32 = 0.797_884_6;
    let th = (C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Clone, Debug)]
struct LnCache {
    xhat: Vec<f32>,
    inv: Vec<f32>,
}

fn ln_forward(x: &[f32], g: &[f32], b: &[f32], t: usize, d: usize) -> (Vec<f32>, LnCache) {
    let mut y = vec![0.0; t * d];
    let mut xhat = vec![0.0; t * d];
    let mut inv = vec![0.0; t];
    for i in 0..t {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let s = 1.0 / (var + LN_EPS).sqrt();
        inv[i] = s;
        for j in 0..d {
            let h = (row[j] - mean) * s;
            xhat[i * d + j] = h;
            y[i * d + j] = g[j] * h + b[j];
        }
    }
    (y, LnCache { xhat, inv })
}

fn ln_backward(dy: &[f32], c: &LnCache, g: &[f32], grads: &mut ParamSet, gi: usize, bi: usize, t: usize, d: usize) -> Vec<f32> {
    let mut dx = vec![0.0; t * d];
    let mut dxhat = vec![0.0; d];
    for i in 0..t {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &c.xhat[i * d..(i + 1) * d];
        for j in 0..d {
            dxhat[j] = dyr[j] * g[j];
            grads.tensors[gi].data[j] += dyr[j] * xh[j];
            grads.tensors[bi].data[j] += dyr[j];
        }
        let m1 = dxhat.iter().sum::<f32>() / d as f32;
        let m2 = dot(&dxhat, xh) / d as f32;
        for j in 0..d {
            dx[i * d + j] = c.inv[i] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

fn add_colsum(dy: &[f32], db: &mut [f32], t: usize, n: usize) {
    for i in 0..t {
        axpy(1.0, &dy[i * n..(i + 1) * n], db);
    }
}

/// Scaled dot-product attention over all `t` positions, split into heads.
/// Returns the row-stochastic maps (`heads x t x t`) and concatenated context.
fn attention(q: &[f32], k: &[f32], v: &[f32], t: usize, d: usize, heads: usize) -> (Vec<f32>, Vec<f32>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut maps = vec![0.0; heads * t * t];
    let mut ctx = vec![0.0; t * d];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let row = &mut maps[(h * t + i) * t..(h * t + i + 1) * t];
            let qi = &q[i * d + off..i * d + off + dh];
            for (j, r) in row.iter_mut().enumerate() {
                *r = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
            }
            softmax_inplace(row);
            let ci = &mut ctx[i * d + off..i * d + off + dh];
            for (j, &a) in row.iter().enumerate() {
                axpy(a, &v[j * d + off..j * d + off + dh], ci);
            }
        }
    }
    (maps, ctx)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    maps: &[f32],
    dctx: &[f32],
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut da = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let a = &maps[(h * t + i) * t..(h * t + i + 1) * t];
            let dci = &dctx[i * d + off..i * d + off + dh];
            for j in 0..t {
                da[j] = dot(dci, &v[j * d + off..j * d + off + dh]);
                axpy(a[j], dci, &mut dv[j * d + off..j * d + off + dh]);
            }
            let s = dot(a, &da);
            for j in 0..t {
                let ds = a[j] * (da[j] - s) * scale;
                axpy(ds, &k[j * d + off..j * d + off + dh], &mut dq[i * d + off..i * d + off + dh]);
                axpy(ds, &q[i * d + off..i * d + off + dh], &mut dk[j * d + off..j * d + off + dh]);
            }
        }
    }
    (dq, dk, dv)
}

#[derive(Clone, Debug)]
struct LayerCache {
    x: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    maps: Vec<f32>,
    ctx: Vec<f32>,
    ln1: LnCache,
    x1: Vec<f32>,
    pre: Vec<f32>,
    act: Vec<f32>,
    ln2: LnCache,
    out: Vec<f32>,
}

fn layer_forward(dims: &Dims, p: &ParamSet, l: usize, x: Vec<f32>, t: usize) -> LayerCache {
    let (d, f) = (dims.d_model, dims.ffn);
    let w = |k: usize| p.tensors[dims.layer(l, k)].data.as_slice();
    let q = linear(&x, w(WQ), w(BQ), t, d, d);
    let k = linear(&x, w(WK), w(BK), t, d, d);
    let v = linear(&x, w(WV), w(BV), t, d, d);
    let (maps, ctx) = attention(&q, &k, &v, t, d, dims.heads);
    let mut z1 = linear(&ctx, w(WO), w(BO), t, d, d);
    axpy(1.0, &x, &mut z1);
    let (x1, ln1) = ln_forward(&z1, w(LN1G), w(LN1B), t, d);
    let pre = linear(&x1, w(W1), w(B1), t, d, f);
    let act: Vec<f32> = pre.iter().map(|&u| gelu(u)).collect();
    let mut z2 = linear(&act, w(W2), w(B2), t, f, d);
    axpy(1.0, &x1, &mut z2);
    let (out, ln2) = ln_forward(&z2, w(LN2G), w(LN2B), t, d);
    LayerCache { x, q, k, v, maps, ctx, ln1, x1, pre, act, ln2, out }
}

/// Given the gradient at the layer output, accumulates parameter gradients
/// and returns the gradient at the layer input.
fn layer_backward(dims: &Dims, p: &ParamSet, l: usize, c: &LayerCache, dout: &[f32], g: &mut ParamSet, t: usize) -> Vec<f32> {
    let (d, f) = (dims.d_model, dims.ffn);
    let idx = |k: usize| dims.layer(l, k);
    let w = |k: usize| p.tensors[idx(k)].data.as_slice();

    let dz2 = ln_backward(dout, &c.ln2, w(LN2G), g, idx(LN2G), idx(LN2B), t, d);
    matmul_at_b_acc(&c.act, &dz2, &mut g.tensors[idx(W2)].data, t, f, d);
    add_colsum(&dz2, &mut g.tensors[idx(B2)].data, t, d);
    let dact = matmul_a_bt(&dz2, w(W2), t, f, d);
    let dpre: Vec<f32> = dact.iter().zip(&c.pre).map(|(&da, &u)| da * gelu_grad(u)).collect();
    matmul_at_b_acc(&c.x1, &dpre, &mut g.tensors[idx(W1)].data, t, d, f);
    add_colsum(&dpre, &mut g.tensors[idx(B1)].data, t, f);
    let mut dx1 = matmul_a_bt(&dpre, w(W1), t, d, f);
    axpy(1.0, &dz2, &mut dx1);

    let dz1 = ln_backward(&dx1, &c.ln1, w(LN1G), g, idx(LN1G), idx(LN1B), t, d);
    matmul_at_b_acc(&c.ctx, &dz1, &mut g.tensors[idx(WO)].data, t, d, d);
    add_colsum(&dz1, &mut g.tensors[idx(BO)].data, t, d);
    let dctx = matmul_a_bt(&dz1, w(WO), t, d, d);
    let (dq, dk, dv) = attention_backward(&c.q, &c.k, &c.v, &c.maps, &dctx, t, d, dims.heads);

    let mut dx = dz1;
    for (dy, wk, bk) in [(&dq, WQ, BQ), (&dk, WK, BK), (&dv, WV, BV)] {
        matmul_at_b_acc(&c.x, dy, &mut g.tensors[idx(wk)].data, t, d, d);
        add_colsum(dy, &mut g.tensors[idx(bk)].data, t, d);
        let back = matmul_a_bt(dy, w(wk), t, d, d);
        axpy(1.0, &back, &mut dx);
    }
    dx
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    tokens: Vec<(usize, usize)>,
    emb_ln: LnCache,
    layers: Vec<LayerCache>,
    /// Concatenated CLS states of the pooled layers, oldest first.
    pub feature: Vec<f32>,
    pub logits: Vec<f32>,
}

impl Trace {
    /// Attention maps per layer, each `heads x t x t` row-major.
    pub fn attention_maps(&self) -> Vec<Vec<f32>> {
        self.layers.iter().map(|c| c.maps.clone()).collect()
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.tokens.len()
    }
}

/// Runs the encoder and head over `(token id, position)` pairs. Only the
/// given positions take part in attention, which is how padding is masked.
pub fn forward(dims: &Dims, p: &ParamSet, tokens: &[(usize, usize)]) -> Trace {
    let (d, t) = (dims.d_model, tokens.len());
    let mut e = vec![0.0; t * d];
    for (i, &(id, pos)) in tokens.iter().enumerate() {
        let row = &mut e[i * d..(i + 1) * d];
        axpy(1.0, &p.tensors[TOK].data[id * d..(id + 1) * d], row);
        axpy(1.0, &p.tensors[POS].data[pos * d..(pos + 1) * d], row);
    }
    let (mut x, emb_ln) = ln_forward(&e, &p.tensors[EMB_G].data, &p.tensors[EMB_B].data, t, d);
    let first_pooled = dims.layers - dims.pooled;
    let mut feature = Vec::with_capacity(dims.feature_len());
    let mut layers = Vec::with_capacity(dims.layers);
    for l in 0..dims.layers {
        let c = layer_forward(dims, p, l, x, t);
        if l >= first_pooled {
            feature.extend_from_slice(&c.out[..d]);
        }
        x = c.out.clone();
        layers.push(c);
    }
    let hw = dims.head_w();
    let logits = linear(&feature, &p.tensors[hw].data, &p.tensors[hw + 1].data, 1, dims.feature_len(), dims.ranks);
    Trace { tokens: tokens.to_vec(), emb_ln, layers, feature, logits }
}

/// Head logits for an already pooled feature.
pub fn head_logits(dims: &Dims, p: &ParamSet, feature: &[f32]) -> Vec<f32> {
    let hw = dims.head_w();
    let mut out = p.tensors[hw + 1].data.clone();
    matmul_acc(feature, &p.tensors[hw].data, &mut out, 1, dims.feature_len(), dims.ranks);
    out
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to the logits is `dlogits`.
pub fn backward(dims: &Dims, p: &ParamSet, trace: &Trace, dlogits: &[f32], grads: &mut ParamSet) {
    let (d, t, fl) = (dims.d_model, trace.tokens.len(), dims.feature_len());
    let hw = dims.head_w();
    matmul_at_b_acc(&trace.feature, dlogits, &mut grads.tensors[hw].data, 1, fl, dims.ranks);
    axpy(1.0, dlogits, &mut grads.tensors[hw + 1].data);
    let dfeat = matmul_a_bt(dlogits, &p.tensors[hw].data, 1, fl, dims.ranks);
    let first_pooled = dims.layers - dims.pooled;
    let mut dx = vec![0.0; t * d];
    for l in (0..dims.layers).rev() {
        if l >= first_pooled {
            let j = l - first_pooled;
            axpy(1.0, &dfeat[j * d..(j + 1) * d], &mut dx[..d]);
        }
        dx = layer_backward(dims, p, l, &trace.layers[l], &dx, grads, t);
    }
    let de = ln_backward(&dx, &trace.emb_ln, &p.tensors[EMB_G].data, grads, EMB_G, EMB_B, t, d);
    for (i, &(id, pos)) in trace.tokens.iter().enumerate() {
        let row = &de[i * d..(i + 1) * d];
        axpy(1.0, row, &mut grads.tensors[TOK].data[id * d..(id + 1) * d]);
        axpy(1.0, row, &mut grads.tensors[POS].data[pos * d..(pos + 1) * d]);
    }
}
