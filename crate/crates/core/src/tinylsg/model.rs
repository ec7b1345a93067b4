//! Encoder-decoder transformer with hand-written backpropagation.
//!
//! Pre-norm residual blocks throughout. The encoder's self-attention is
//! restricted by [`lsg_mask`]; decoder self-attention is causal and
//! cross-attention is dense.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mask::{lsg_mask, AttentionMask};
use super::matrix::{dot, Matrix};
use super::vocab::{Vocab, BOS, EOS, GLOBAL};
use super::{LsgConfig, LsgError};
use crate::num::Real;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_ff: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 2,
            n_layers_enc: 2,
            n_layers_dec: 2,
            d_ff: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LsgError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(LsgError::InvalidConfig(
                "d_model, n_heads and d_ff must be positive".into(),
            ));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(LsgError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::from_f64_lossy(rng.random_range(-bound..bound)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    /// `in × out`
    pub w: Matrix<T>,
    /// `1 × out`
    pub b: Matrix<T>,
}

impl<T: Real> Linear<T> {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear {
            w: uniform(rng, fan_in, fan_out, bound),
            b: Matrix::zeros(1, fan_out),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut y = x.matmul(&self.w);
        y.add_row_broadcast(&self.b);
        y
    }

    fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>, g: &mut Linear<T>) -> Matrix<T> {
        g.w.add_assign(&x.t_matmul(dy));
        g.b.add_assign(&dy.sum_rows());
        dy.matmul_t(&self.w)
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        out.push((format!("{name}.w"), &self.w));
        out.push((format!("{name}.b"), &self.b));
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix<T>>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm<T> {
    pub gamma: Matrix<T>,
    pub beta: Matrix<T>,
}

struct NormCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    fn init(d: usize) -> Self {
        LayerNorm {
            gamma: Matrix::from_fn(1, d, |_, _| T::one()),
            beta: Matrix::zeros(1, d),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        self.forward_cached(x).0
    }

    fn forward_cached(&self, x: &Matrix<T>) -> (Matrix<T>, NormCache<T>) {
        let d = T::from_usize(x.cols()).expect("dimension fits");
        let eps = T::from_f64_lossy(LN_EPS);
        let mut xhat = Matrix::zeros(x.rows(), x.cols());
        let mut y = Matrix::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<T>() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (c, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.set(r, c, h);
                y.set(r, c, h * self.gamma.get(0, c) + self.beta.get(0, c));
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    fn backward(&self, cache: &NormCache<T>, dy: &Matrix<T>, g: &mut LayerNorm<T>) -> Matrix<T> {
        let cols = dy.cols();
        let d = T::from_usize(cols).expect("dimension fits");
        let mut dx = Matrix::zeros(dy.rows(), cols);
        let mut dxhat = vec![T::zero(); cols];
        for r in 0..dy.rows() {
            let xh = cache.xhat.row(r);
            let dyr = dy.row(r);
            for c in 0..cols {
                dxhat[c] = dyr[c] * self.gamma.get(0, c);
                let gg = g.gamma.get(0, c) + dyr[c] * xh[c];
                g.gamma.set(0, c, gg);
                let gb = g.beta.get(0, c) + dyr[c];
                g.beta.set(0, c, gb);
            }
            let sum: T = dxhat.iter().copied().sum();
            let sum_xh = dot(&dxhat, xh);
            let scale = cache.inv_std[r] / d;
            for c in 0..cols {
                dx.set(r, c, scale * (d * dxhat[c] - sum - xh[c] * sum_xh));
            }
        }
        dx
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        out.push((format!("{name}.gamma"), &self.gamma));
        out.push((format!("{name}.beta"), &self.beta));
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix<T>>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}

/// Row softmax of `q·kᵀ/√d` restricted to allowed keys. Blocked entries
/// are exactly zero; a row with no allowed key is all zero.
/// Encoder tokens, per-layer caches, output and final-norm cache.
type EncodeTrace<T> = (Vec<usize>, Vec<EncCache<T>>, Matrix<T>, NormCache<T>);

pub fn attention_probs<T: Real>(q: &Matrix<T>, k: &Matrix<T>, mask: &AttentionMask) -> Matrix<T> {
    let scale = T::one() / T::from_usize(q.cols()).expect("dimension fits").sqrt();
    let mut probs = Matrix::zeros(q.rows(), k.rows());
    for i in 0..q.rows() {
        let allow = mask.row(i);
        let mut max = T::neg_infinity();
        for (j, &ok) in allow.iter().enumerate().take(k.rows()) {
            if ok {
                let s = dot(q.row(i), k.row(j)) * scale;
                probs.set(i, j, s);
                if s > max {
                    max = s;
                }
            }
        }
        if max == T::neg_infinity() {
            continue;
        }
        let mut sum = T::zero();
        for (j, &ok) in allow.iter().enumerate().take(k.rows()) {
            if ok {
                let e = (probs.get(i, j) - max).exp();
                probs.set(i, j, e);
                sum += e;
            }
        }
        for (j, &ok) in allow.iter().enumerate().take(k.rows()) {
            if ok {
                let p = probs.get(i, j) / sum;
                probs.set(i, j, p);
            }
        }
    }
    probs
}

/// Masked scaled dot-product attention for a single head.
pub fn attention<T: Real>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    mask: &AttentionMask,
) -> Result<Matrix<T>, LsgError> {
    if q.cols() != k.cols() || k.rows() != v.rows() || mask.rows() != q.rows() || mask.cols() != k.rows() {
        return Err(LsgError::DimensionMismatch(format!(
            "q {:?}, k {:?}, v {:?}, mask ({}, {})",
            q.shape(),
            k.shape(),
            v.shape(),
            mask.rows(),
            mask.cols()
        )));
    }
    Ok(attention_probs(q, k, mask).matmul(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

struct AttnCache<T> {
    xq: Matrix<T>,
    xkv: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    probs: Vec<Matrix<T>>,
    ctx: Matrix<T>,
}

impl<T: Real> MultiHeadAttention<T> {
    fn init(rng: &mut ChaCha8Rng, d: usize) -> Self {
        MultiHeadAttention {
            q: Linear::init(rng, d, d),
            k: Linear::init(rng, d, d),
            v: Linear::init(rng, d, d),
            o: Linear::init(rng, d, d),
        }
    }

    fn forward(
        &self,
        xq: &Matrix<T>,
        xkv: &Matrix<T>,
        mask: &AttentionMask,
        heads: usize,
    ) -> (Matrix<T>, AttnCache<T>) {
        let q = self.q.forward(xq);
        let k = self.k.forward(xkv);
        let v = self.v.forward(xkv);
        let dh = q.cols() / heads;
        let mut ctx = Matrix::zeros(q.rows(), q.cols());
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let p = attention_probs(&q.col_slice(h * dh, dh), &k.col_slice(h * dh, dh), mask);
            ctx.set_col_slice(h * dh, &p.matmul(&v.col_slice(h * dh, dh)));
            probs.push(p);
        }
        let out = self.o.forward(&ctx);
        (
            out,
            AttnCache {
                xq: xq.clone(),
                xkv: xkv.clone(),
                q,
                k,
                v,
                probs,
                ctx,
            },
        )
    }

    /// Returns gradients with respect to the query input and the key/value input.
    fn backward(&self, c: &AttnCache<T>, dout: &Matrix<T>, g: &mut MultiHeadAttention<T>) -> (Matrix<T>, Matrix<T>) {
        let heads = c.probs.len();
        let dh = c.q.cols() / heads;
        let scale = T::one() / T::from_usize(dh).expect("dimension fits").sqrt();
        let dctx = self.o.backward(&c.ctx, dout, &mut g.o);
        let mut dq = Matrix::zeros(c.q.rows(), c.q.cols());
        let mut dk = Matrix::zeros(c.k.rows(), c.k.cols());
        let mut dv = Matrix::zeros(c.v.rows(), c.v.cols());
        for (h, p) in c.probs.iter().enumerate() {
            let dctx_h = dctx.col_slice(h * dh, dh);
            let v_h = c.v.col_slice(h * dh, dh);
            let dp = dctx_h.matmul_t(&v_h);
            dv.set_col_slice(h * dh, &p.t_matmul(&dctx_h));
            let mut ds = Matrix::zeros(p.rows(), p.cols());
            for i in 0..p.rows() {
                let row_dot = dot(p.row(i), dp.row(i));
                for j in 0..p.cols() {
                    let pij = p.get(i, j);
                    if pij != T::zero() {
                        ds.set(i, j, pij * (dp.get(i, j) - row_dot) * scale);
                    }
                }
            }
            dq.set_col_slice(h * dh, &ds.matmul(&c.k.col_slice(h * dh, dh)));
            dk.set_col_slice(h * dh, &ds.t_matmul(&c.q.col_slice(h * dh, dh)));
        }
        let dxq = self.q.backward(&c.xq, &dq, &mut g.q);
        let mut dxkv = self.k.backward(&c.xkv, &dk, &mut g.k);
        dxkv.add_assign(&self.v.backward(&c.xkv, &dv, &mut g.v));
        (dxq, dxkv)
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        self.q.collect(&format!("{name}.q"), out);
        self.k.collect(&format!("{name}.k"), out);
        self.v.collect(&format!("{name}.v"), out);
        self.o.collect(&format!("{name}.o"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix<T>>) {
        self.q.collect_mut(out);
        self.k.collect_mut(out);
        self.v.collect_mut(out);
        self.o.collect_mut(out);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward<T> {
    pub up: Linear<T>,
    pub down: Linear<T>,
}

struct FfCache<T> {
    x: Matrix<T>,
    pre: Matrix<T>,
    act: Matrix<T>,
}

impl<T: Real> FeedForward<T> {
    fn init(rng: &mut ChaCha8Rng, d: usize, d_ff: usize) -> Self {
        FeedForward {
            up: Linear::init(rng, d, d_ff),
            down: Linear::init(rng, d_ff, d),
        }
    }

    fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, FfCache<T>) {
        let pre = self.up.forward(x);
        let act = pre.map(gelu);
        let out = self.down.forward(&act);
        (out, FfCache { x: x.clone(), pre, act })
    }

    fn backward(&self, c: &FfCache<T>, dout: &Matrix<T>, g: &mut FeedForward<T>) -> Matrix<T> {
        let dact = self.down.backward(&c.act, dout, &mut g.down);
        let dpre = Matrix::from_fn(dact.rows(), dact.cols(), |r, col| {
            dact.get(r, col) * gelu_grad(c.pre.get(r, col))
        });
        self.up.backward(&c.x, &dpre, &mut g.up)
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        self.up.collect(&format!("{name}.up"), out);
        self.down.collect(&format!("{name}.down"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix<T>>) {
        self.up.collect_mut(out);
        self.down.collect_mut(out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer<T> {
    pub norm_attn: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub norm_ff: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

struct EncCache<T> {
    norm_attn: NormCache<T>,
    attn: AttnCache<T>,
    norm_ff: NormCache<T>,
    ff: FfCache<T>,
}

impl<T: Real> EncoderLayer<T> {
    fn forward(&self, x: &Matrix<T>, mask: &AttentionMask, heads: usize) -> (Matrix<T>, EncCache<T>) {
        let (a, norm_attn) = self.norm_attn.forward_cached(x);
        let (att, attn) = self.attn.forward(&a, &a, mask, heads);
        let h = x.add(&att);
        let (b, norm_ff) = self.norm_ff.forward_cached(&h);
        let (f, ff) = self.ff.forward(&b);
        (
            h.add(&f),
            EncCache {
                norm_attn,
                attn,
                norm_ff,
                ff,
            },
        )
    }

    fn backward(&self, c: &EncCache<T>, dy: &Matrix<T>, g: &mut EncoderLayer<T>) -> Matrix<T> {
        let db = self.ff.backward(&c.ff, dy, &mut g.ff);
        let mut dh = dy.add(&self.norm_ff.backward(&c.norm_ff, &db, &mut g.norm_ff));
        let (dq, dkv) = self.attn.backward(&c.attn, &dh, &mut g.attn);
        let da = dq.add(&dkv);
        dh.add_assign(&self.norm_attn.backward(&c.norm_attn, &da, &mut g.norm_attn));
        dh
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        self.norm_attn.collect(&format!("{name}.norm_attn"), out);
        self.attn.collect(&format!("{name}.attn"), out);
        self.norm_ff.collect(&format!("{name}.norm_ff"), out);
        self.ff.collect(&format!("{name}.ff"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix<T>>) {
        self.norm_attn.collect_mut(out);
        self.attn.collect_mut(out);
        self.norm_ff.collect_mut(out);
        self.ff.collect_mut(out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderLayer<T> {
    pub norm_self: LayerNorm<T>,
    pub self_attn: MultiHeadAttention<T>,
    pub norm_cross: LayerNorm<T>,
    pub cross_attn: MultiHeadAttention<T>,
    pub norm_ff: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

struct DecCache<T> {
    norm_self: NormCache<T>,
    self_attn: AttnCache<T>,
    norm_cross: NormCache<T>,
    cross_attn: AttnCache<T>,
    norm_ff: NormCache<T>,
    ff: FfCache<T>,
}

impl<T: Real> DecoderLayer<T> {
    fn forward(&self, x: &Matrix<T>, enc: &Matrix<T>, heads: usize) -> (Matrix<T>, DecCache<T>) {
        let causal = AttentionMask::causal(x.rows());
        let cross = AttentionMask::full(x.rows(), enc.rows());
        let (a, norm_self) = self.norm_self.forward_cached(x);
        let (s, self_attn) = self.self_attn.forward(&a, &a, &causal, heads);
        let h1 = x.add(&s);
        let (c, norm_cross) = self.norm_cross.forward_cached(&h1);
        let (xa, cross_attn) = self.cross_attn.forward(&c, enc, &cross, heads);
        let h2 = h1.add(&xa);
        let (e, norm_ff) = self.norm_ff.forward_cached(&h2);
        let (f, ff) = self.ff.forward(&e);
        (
            h2.add(&f),
            DecCache {
                norm_self,
                self_attn,
                norm_cross,
                cross_attn,
                norm_ff,
                ff,
            },
        )
    }

    /// Returns `(dx, d_encoder_output)`.
    fn backward(&self, c: &DecCache<T>, dy: &Matrix<T>, g: &mut DecoderLayer<T>) -> (Matrix<T>, Matrix<T>) {
        let de = self.ff.backward(&c.ff, dy, &mut g.ff);
        let mut dh = dy.add(&self.norm_ff.backward(&c.norm_ff, &de, &mut g.norm_ff));
        let (dc, denc) = self.cross_attn.backward(&c.cross_attn, &dh, &mut g.cross_attn);
        dh.add_assign(&self.norm_cross.backward(&c.norm_cross, &dc, &mut g.norm_cross));
        let (dq, dkv) = self.self_attn.backward(&c.self_attn, &dh, &mut g.self_attn);
        let da = dq.add(&dkv);
        dh.add_assign(&self.norm_self.backward(&c.norm_self, &da, &mut g.norm_self));
        (dh, denc)
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        self.norm_self.collect(&format!("{name}.norm_self"), out);
        self.self_attn.collect(&format!("{name}.self_attn"), out);
        self.norm_cross.collect(&format!("{name}.norm_cross"), out);
        self.cross_attn.collect(&format!("{name}.cross_attn"), out);
        self.norm_ff.collect(&format!("{name}.norm_ff"), out);
        self.ff.collect(&format!("{name}.ff"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix<T>>) {
        self.norm_self.collect_mut(out);
        self.self_attn.collect_mut(out);
        self.norm_cross.collect_mut(out);
        self.cross_attn.collect_mut(out);
        self.norm_ff.collect_mut(out);
        self.ff.collect_mut(out);
    }
}

/// Every trainable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params<T> {
    /// `vocab × d_model`, shared by encoder and decoder inputs.
    pub embed: Matrix<T>,
    pub encoder: Vec<EncoderLayer<T>>,
    pub enc_norm: LayerNorm<T>,
    pub decoder: Vec<DecoderLayer<T>>,
    pub dec_norm: LayerNorm<T>,
    pub lm_head: Linear<T>,
}

impl<T: Real> Params<T> {
    /// Tensors in a fixed order with dotted names.
    pub fn named(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (i, l) in self.encoder.iter().enumerate() {
            l.collect(&format!("encoder.{i}"), &mut out);
        }
        self.enc_norm.collect("enc_norm", &mut out);
        for (i, l) in self.decoder.iter().enumerate() {
            l.collect(&format!("decoder.{i}"), &mut out);
        }
        self.dec_norm.collect("dec_norm", &mut out);
        self.lm_head.collect("lm_head", &mut out);
        out
    }

    /// Same order as [`Params::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = vec![&mut self.embed];
        for l in &mut self.encoder {
            l.collect_mut(&mut out);
        }
        self.enc_norm.collect_mut(&mut out);
        for l in &mut self.decoder {
            l.collect_mut(&mut out);
        }
        self.dec_norm.collect_mut(&mut out);
        self.lm_head.collect_mut(&mut out);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for m in z.tensors_mut() {
            m.fill(T::zero());
        }
        z
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.data().len()).sum()
    }

    /// Scalar parameter by flat index across [`Params::named`] order.
    pub fn flat_get(&self, mut idx: usize) -> Option<T> {
        for (_, m) in self.named() {
            if idx < m.data().len() {
                return Some(m.data()[idx]);
            }
            idx -= m.data().len();
        }
        None
    }

    pub fn flat_set(&mut self, mut idx: usize, v: T) -> bool {
        for m in self.tensors_mut() {
            if idx < m.data().len() {
                m.data_mut()[idx] = v;
                return true;
            }
            idx -= m.data().len();
        }
        false
    }

    pub fn scale(&mut self, s: T) {
        for m in self.tensors_mut() {
            m.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Sinusoidal position table, `len × d`.
pub fn positional_encoding<T: Real>(len: usize, d: usize) -> Matrix<T> {
    Matrix::from_fn(len, d, |pos, i| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        T::from_f64_lossy(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyModel<T> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Params<T>,
}

/// Activations kept for the backward pass.
pub struct ForwardTrace<T> {
    enc_tokens: Vec<usize>,
    dec_tokens: Vec<usize>,
    enc_layers: Vec<EncCache<T>>,
    enc_norm: NormCache<T>,
    enc_out: Matrix<T>,
    dec_layers: Vec<DecCache<T>>,
    dec_norm: NormCache<T>,
    dec_final: Matrix<T>,
    pub logits: Matrix<T>,
}

impl<T: Real> TinyModel<T> {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self, LsgError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, v) = (config.d_model, vocab.len());
        let embed = uniform(&mut rng, v, d, 0.5);
        let encoder = (0..config.n_layers_enc)
            .map(|_| EncoderLayer {
                norm_attn: LayerNorm::init(d),
                attn: MultiHeadAttention::init(&mut rng, d),
                norm_ff: LayerNorm::init(d),
                ff: FeedForward::init(&mut rng, d, config.d_ff),
            })
            .collect();
        let decoder = (0..config.n_layers_dec)
            .map(|_| DecoderLayer {
                norm_self: LayerNorm::init(d),
                self_attn: MultiHeadAttention::init(&mut rng, d),
                norm_cross: LayerNorm::init(d),
                cross_attn: MultiHeadAttention::init(&mut rng, d),
                norm_ff: LayerNorm::init(d),
                ff: FeedForward::init(&mut rng, d, config.d_ff),
            })
            .collect();
        let lm_head = Linear::init(&mut rng, d, v);
        Ok(TinyModel {
            config,
            vocab,
            params: Params {
                embed,
                encoder,
                enc_norm: LayerNorm::init(d),
                decoder,
                dec_norm: LayerNorm::init(d),
                lm_head,
            },
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.params.embed.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<(), LsgError> {
        let v = self.vocab_size();
        match ids.iter().find(|&&i| i >= v) {
            Some(bad) => Err(LsgError::DimensionMismatch(format!(
                "token id {bad} outside vocabulary of {v}"
            ))),
            None => Ok(()),
        }
    }

    /// Token embeddings plus sinusoidal positions.
    pub fn embed(&self, ids: &[usize]) -> Matrix<T> {
        let d = self.config.d_model;
        let mut x = positional_encoding::<T>(ids.len(), d);
        for (r, &id) in ids.iter().enumerate() {
            for (o, &e) in x.row_mut(r).iter_mut().zip(self.params.embed.row(id)) {
                *o += e;
            }
        }
        x
    }

    /// Encoder input: `num_global` global tokens followed by the source.
    pub fn encoder_tokens(src: &[usize], cfg: &LsgConfig) -> Vec<usize> {
        std::iter::repeat_n(GLOBAL, cfg.num_global)
            .chain(src.iter().copied())
            .collect()
    }

    pub fn encode(&self, src: &[usize], cfg: &LsgConfig) -> Result<Matrix<T>, LsgError> {
        Ok(self.encode_traced(src, cfg)?.2)
    }

    fn encode_traced(&self, src: &[usize], cfg: &LsgConfig) -> Result<EncodeTrace<T>, LsgError> {
        cfg.validate()?;
        if src.len() > cfg.max_input_tokens {
            return Err(LsgError::SequenceTooLong {
                len: src.len(),
                max: cfg.max_input_tokens,
            });
        }
        self.check_tokens(src)?;
        let tokens = Self::encoder_tokens(src, cfg);
        let mask = lsg_mask(tokens.len(), cfg);
        let mut x = self.embed(&tokens);
        let mut caches = Vec::with_capacity(self.params.encoder.len());
        for layer in &self.params.encoder {
            let (y, c) = layer.forward(&x, &mask, self.config.n_heads);
            caches.push(c);
            x = y;
        }
        let (out, norm) = self.params.enc_norm.forward_cached(&x);
        Ok((tokens, caches, out, norm))
    }

    /// Next-token logits for every prefix position, `len(prefix) × vocab`.
    pub fn decode_logits(&self, enc_out: &Matrix<T>, prefix: &[usize]) -> Result<Matrix<T>, LsgError> {
        if enc_out.cols() != self.config.d_model {
            return Err(LsgError::DimensionMismatch(format!(
                "encoder output width {} != d_model {}",
                enc_out.cols(),
                self.config.d_model
            )));
        }
        self.check_tokens(prefix)?;
        let mut x = self.embed(prefix);
        for layer in &self.params.decoder {
            x = layer.forward(&x, enc_out, self.config.n_heads).0;
        }
        Ok(self.params.lm_head.forward(&self.params.dec_norm.forward(&x)))
    }

    pub fn forward(&self, src: &[usize], tgt_prefix: &[usize], cfg: &LsgConfig) -> Result<Matrix<T>, LsgError> {
        Ok(self.forward_traced(src, tgt_prefix, cfg)?.logits)
    }

    pub fn forward_traced(
        &self,
        src: &[usize],
        tgt_prefix: &[usize],
        cfg: &LsgConfig,
    ) -> Result<ForwardTrace<T>, LsgError> {
        if tgt_prefix.is_empty() {
            return Err(LsgError::DimensionMismatch("empty decoder prefix".into()));
        }
        let (enc_tokens, enc_layers, enc_out, enc_norm) = self.encode_traced(src, cfg)?;
        self.check_tokens(tgt_prefix)?;
        let mut x = self.embed(tgt_prefix);
        let mut dec_layers = Vec::with_capacity(self.params.decoder.len());
        for layer in &self.params.decoder {
            let (y, c) = layer.forward(&x, &enc_out, self.config.n_heads);
            dec_layers.push(c);
            x = y;
        }
        let (dec_final, dec_norm) = self.params.dec_norm.forward_cached(&x);
        let logits = self.params.lm_head.forward(&dec_final);
        Ok(ForwardTrace {
            enc_tokens,
            dec_tokens: tgt_prefix.to_vec(),
            enc_layers,
            enc_norm,
            enc_out,
            dec_layers,
            dec_norm,
            dec_final,
            logits,
        })
    }

    /// Accumulates `d(logits)` back into `grads`.
    pub fn backward(&self, trace: &ForwardTrace<T>, dlogits: &Matrix<T>, grads: &mut Params<T>) {
        let p = &self.params;
        let dz = p.lm_head.backward(&trace.dec_final, dlogits, &mut grads.lm_head);
        let mut dx = p.dec_norm.backward(&trace.dec_norm, &dz, &mut grads.dec_norm);
        let mut denc = Matrix::zeros(trace.enc_out.rows(), trace.enc_out.cols());
        for (i, layer) in p.decoder.iter().enumerate().rev() {
            let (d, de) = layer.backward(&trace.dec_layers[i], &dx, &mut grads.decoder[i]);
            denc.add_assign(&de);
            dx = d;
        }
        scatter_rows(&mut grads.embed, &trace.dec_tokens, &dx);
        let mut dx = p.enc_norm.backward(&trace.enc_norm, &denc, &mut grads.enc_norm);
        for (i, layer) in p.encoder.iter().enumerate().rev() {
            dx = layer.backward(&trace.enc_layers[i], &dx, &mut grads.encoder[i]);
        }
        scatter_rows(&mut grads.embed, &trace.enc_tokens, &dx);
    }

    /// Teacher-forced decoder input and targets for a target sequence.
    pub fn teacher_forcing(tgt: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let input = std::iter::once(BOS).chain(tgt.iter().copied()).collect();
        let target = tgt.iter().copied().chain(std::iter::once(EOS)).collect();
        (input, target)
    }

    /// Mean token cross-entropy of `tgt` given `src`.
    pub fn loss(&self, src: &[usize], tgt: &[usize], cfg: &LsgConfig) -> Result<T, LsgError> {
        let (input, target) = Self::teacher_forcing(tgt);
        let logits = self.forward(src, &input, cfg)?;
        let (sum, _) = cross_entropy_sum(&logits, &target);
        Ok(sum / T::from_usize(target.len()).expect("length fits"))
    }

    /// Adds the gradient of the *summed* token cross-entropy to `grads`.
    /// Returns `(summed loss, token count)`.
    pub fn accumulate_gradients(
        &self,
        src: &[usize],
        tgt: &[usize],
        cfg: &LsgConfig,
        grads: &mut Params<T>,
    ) -> Result<(T, usize), LsgError> {
        let (input, target) = Self::teacher_forcing(tgt);
        let trace = self.forward_traced(src, &input, cfg)?;
        let (sum, dlogits) = cross_entropy_sum(&trace.logits, &target);
        self.backward(&trace, &dlogits, grads);
        Ok((sum, target.len()))
    }
}

fn scatter_rows<T: Real>(embed_grad: &mut Matrix<T>, ids: &[usize], dx: &Matrix<T>) {
    for (r, &id) in ids.iter().enumerate() {
        for (g, &d) in embed_grad.row_mut(id).iter_mut().zip(dx.row(r)) {
            *g += d;
        }
    }
}

/// Summed cross-entropy and its gradient `softmax − onehot`.
pub fn cross_entropy_sum<T: Real>(logits: &Matrix<T>, targets: &[usize]) -> (T, Matrix<T>) {
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = T::zero();
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[t];
        for (c, &v) in row.iter().enumerate() {
            grad.set(r, c, (v - log_z).exp());
        }
        let g = grad.get(r, t) - T::one();
        grad.set(r, t, g);
    }
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinylsg::vocab::build_vocab;

    fn tiny(seed: u64) -> TinyModel<f64> {
        let vocab = build_vocab(&["alpha beta gamma delta epsilon zeta eta theta"], 1).unwrap();
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers_enc: 1,
            n_layers_dec: 1,
            d_ff: 16,
        };
        TinyModel::new(cfg, vocab, seed).unwrap()
    }

    #[test]
    fn attention_single_allowed_key_copies_value_row() {
        let q = Matrix::from_fn(2, 3, |r, c| (r + c) as f64 * 0.3);
        let k = Matrix::from_fn(4, 3, |r, c| (r * c) as f64 * 0.2 - 0.1);
        let v = Matrix::from_fn(4, 2, |r, c| (10 * r + c) as f64);
        let mask = AttentionMask::from_fn(2, 4, |q, k| k == q + 2);
        let out = attention(&q, &k, &v, &mask).unwrap();
        assert_eq!(out.row(0), v.row(2));
        assert_eq!(out.row(1), v.row(3));
    }

    #[test]
    fn attention_dimension_mismatch() {
        let q = Matrix::<f64>::zeros(2, 3);
        let k = Matrix::zeros(4, 3);
        let v = Matrix::zeros(5, 2);
        assert!(matches!(
            attention(&q, &k, &v, &AttentionMask::full(2, 4)),
            Err(LsgError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn logits_shape_and_determinism() {
        let vocab = build_vocab(&[(0..27).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")], 1).unwrap();
        assert_eq!(vocab.len(), 32);
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers_enc: 1,
            n_layers_dec: 1,
            d_ff: 16,
        };
        let m: TinyModel<f64> = TinyModel::new(cfg.clone(), vocab.clone(), 5).unwrap();
        let src: Vec<usize> = (5..21).collect();
        let lsg = LsgConfig {
            block_size: 4,
            ..LsgConfig::default()
        };
        let logits = m.forward(&src, &[BOS, 6, 7, 8, 9], &lsg).unwrap();
        assert_eq!(logits.shape(), (5, 32));
        let again: TinyModel<f64> = TinyModel::new(cfg, vocab, 5).unwrap();
        assert_eq!(again.forward(&src, &[BOS, 6, 7, 8, 9], &lsg).unwrap(), logits);
    }

    #[test]
    fn sequence_too_long() {
        let m = tiny(1);
        let lsg = LsgConfig {
            max_input_tokens: 4,
            block_size: 2,
            ..LsgConfig::default()
        };
        assert!(matches!(
            m.forward(&[5, 6, 7, 8, 9], &[BOS], &lsg),
            Err(LsgError::SequenceTooLong { len: 5, max: 4 })
        ));
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn flat_indexing_round_trips() {
        let mut m = tiny(2);
        let n = m.parameter_count();
        assert_eq!(m.params.flat_get(n), None);
        let v = m.params.flat_get(n - 1).unwrap();
        assert!(m.params.flat_set(n - 1, v + 1.0));
        assert_eq!(m.params.flat_get(n - 1), Some(v + 1.0));
        assert_eq!(m.params.named().len(), m.params.zeros_like().tensors_mut().len());
    }
}
