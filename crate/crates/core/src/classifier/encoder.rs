//! A small post-norm transformer encoder with a logistic head, in plain f64.
//!
//! All parameters live in one flat vector; [`Layout`] names the slices.
//! Forward keeps every intermediate needed by the hand-written backward
//! pass. Padding is trailing, so a sequence is processed only up to its first
//! `[PAD]`: with a key-padding mask the padded positions could never reach
//! the class token anyway.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tokenizer::PAD;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    /// Sequence length including the class token.
    pub seq_len: usize,
    /// Length of the image embedding joined to the class vector; 0 for text
    /// models.
    #[serde(default)]
    pub image_dim: usize,
    #[serde(default = "yes")]
    pub positions: bool,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

fn yes() -> bool {
    true
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Model(m.to_string()));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad("dim must be a positive multiple of heads");
        }
        if self.vocab_size < 4 {
            return bad("vocabulary must hold the reserved tokens");
        }
        if self.seq_len < 1 || self.ffn_dim == 0 {
            return bad("seq_len and ffn_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerAt {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Whether weight decay applies (matrices and embeddings, not biases or
    /// norm parameters).
    pub decay: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    tok: usize,
    pos: Option<usize>,
    emb_g: usize,
    emb_b: usize,
    layers: Vec<LayerAt>,
    head_w: usize,
    head_b: usize,
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>, decay: bool| {
            let offset = total;
            total += shape.iter().product::<usize>();
            tensors.push(TensorSpec {
                name,
                shape,
                offset,
                decay,
            });
            offset
        };
        let d = c.dim;
        let tok = add("tok_emb".into(), vec![c.vocab_size, d], true);
        let pos = c.positions.then(|| add("pos_emb".into(), vec![c.seq_len, d], true));
        let emb_g = add("emb_ln.gamma".into(), vec![d], false);
        let emb_b = add("emb_ln.beta".into(), vec![d], false);
        let mut layers = Vec::new();
        for l in 0..c.layers {
            let mut n = |s: &str, shape: Vec<usize>, decay| add(format!("layer{l}.{s}"), shape, decay);
            layers.push(LayerAt {
                wq: n("wq", vec![d, d], true),
                bq: n("bq", vec![d], false),
                wk: n("wk", vec![d, d], true),
                bk: n("bk", vec![d], false),
                wv: n("wv", vec![d, d], true),
                bv: n("bv", vec![d], false),
                wo: n("wo", vec![d, d], true),
                bo: n("bo", vec![d], false),
                ln1_g: n("ln1.gamma", vec![d], false),
                ln1_b: n("ln1.beta", vec![d], false),
                w1: n("w1", vec![d, c.ffn_dim], true),
                b1: n("b1", vec![c.ffn_dim], false),
                w2: n("w2", vec![c.ffn_dim, d], true),
                b2: n("b2", vec![d], false),
                ln2_g: n("ln2.gamma", vec![d], false),
                ln2_b: n("ln2.beta", vec![d], false),
            });
        }
        let head_w = add("head.w".into(), vec![d + c.image_dim], true);
        let head_b = add("head.b".into(), vec![1], false);
        Self {
            tok,
            pos,
            emb_g,
            emb_b,
            layers,
            head_w,
            head_b,
            tensors,
            total,
        }
    }

    /// Per-parameter weight-decay flags.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for t in &self.tensors {
            if t.decay {
                mask[t.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }

    /// Range of the head weights that multiply the image embedding.
    pub fn image_head_range(&self, c: &ModelConfig) -> std::ops::Range<usize> {
        self.head_w + c.dim..self.head_w + c.dim + c.image_dim
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

struct LayerCache {
    x_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads x n x n attention probabilities
    att: Vec<f64>,
    ctx: Vec<f64>,
    attn_mask: Option<Vec<f64>>,
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    h1: Vec<f64>,
    f_pre: Vec<f64>,
    f_act: Vec<f64>,
    ffn_mask: Option<Vec<f64>>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
}

/// Everything one forward pass leaves for the backward pass.
pub struct Trace {
    ids: Vec<usize>,
    n: usize,
    emb_xhat: Vec<f64>,
    emb_rstd: Vec<f64>,
    emb_mask: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    cls: Vec<f64>,
    cls_mask: Option<Vec<f64>>,
    image: Vec<f64>,
    pub logit: f64,
}

impl Encoder {
    /// Random initialization: embeddings N(0, 1), matrices N(0, 1/fan_in),
    /// norms at identity, biases zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        for t in &layout.tensors {
            let std = if t.name == "tok_emb" {
                1.0
            } else if t.name == "pos_emb" {
                0.1
            } else if t.name.ends_with("gamma") {
                params[t.range()].iter_mut().for_each(|p| *p = 1.0);
                continue;
            } else if t.decay {
                (1.0 / t.shape[0] as f64).sqrt()
            } else {
                continue;
            };
            let normal = Normal::new(0.0, std).expect("valid std");
            for p in &mut params[t.range()] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = vec![0.0; layout.total];
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Model(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    fn p(&self, offset: usize, len: usize) -> &[f64] {
        &self.params[offset..offset + len]
    }

    /// Class-token vector of the final layer, without dropout.
    pub fn encode(&self, ids: &[usize]) -> Result<Vec<f64>> {
        Ok(self.run(ids, None, None)?.cls)
    }

    /// Logit and trace for one sequence. `rng` enables dropout.
    pub fn forward(&self, ids: &[usize], image: Option<&[f64]>, rng: Option<&mut ChaCha8Rng>) -> Result<Trace> {
        self.run(ids, image, rng)
    }

    fn run(&self, ids: &[usize], image: Option<&[f64]>, mut rng: Option<&mut ChaCha8Rng>) -> Result<Trace> {
        let c = &self.config;
        let (d, h) = (c.dim, c.heads);
        let dh = d / h;
        if ids.is_empty() || ids.len() > c.seq_len {
            return Err(Error::Model(format!(
                "sequence length {} outside 1..={}",
                ids.len(),
                c.seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= c.vocab_size) {
            return Err(Error::Model(format!("token id {bad} outside vocabulary of {}", c.vocab_size)));
        }
        let image: Vec<f64> = match (c.image_dim, image) {
            (0, _) => Vec::new(),
            (k, Some(img)) if img.len() == k => img.to_vec(),
            (k, Some(img)) => {
                return Err(Error::Model(format!("image embedding has {} values, expected {k}", img.len())))
            }
            (_, None) => return Err(Error::Model("fusion model needs an image embedding".into())),
        };
        let n = ids.iter().position(|&i| i == PAD).unwrap_or(ids.len()).max(1);
        let ids = ids[..n].to_vec();
        let l = &self.layout;
        let p_drop = if rng.is_some() { c.dropout } else { 0.0 };

        let mut x = vec![0.0; n * d];
        for (t, &id) in ids.iter().enumerate() {
            let row = &mut x[t * d..(t + 1) * d];
            row.copy_from_slice(self.p(l.tok + id * d, d));
            if let Some(pos) = l.pos {
                for (r, p) in row.iter_mut().zip(self.p(pos + t * d, d)) {
                    *r += p;
                }
            }
        }
        let (mut x, emb_xhat, emb_rstd) =
            layer_norm(&x, n, d, self.p(l.emb_g, d), self.p(l.emb_b, d), c.ln_eps);
        let emb_mask = dropout(&mut x, p_drop, rng.as_deref_mut());

        let scale = 1.0 / (dh as f64).sqrt();
        let mut caches = Vec::with_capacity(c.layers);
        for la in &l.layers {
            let x_in = x;
            let q = linear(&x_in, n, d, self.p(la.wq, d * d), d, self.p(la.bq, d));
            let k = linear(&x_in, n, d, self.p(la.wk, d * d), d, self.p(la.bk, d));
            let v = linear(&x_in, n, d, self.p(la.wv, d * d), d, self.p(la.bv, d));
            let mut att = vec![0.0; h * n * n];
            let mut ctx = vec![0.0; n * d];
            for hd in 0..h {
                let o = hd * dh;
                for t in 0..n {
                    let a = &mut att[(hd * n + t) * n..(hd * n + t + 1) * n];
                    let qt = &q[t * d + o..t * d + o + dh];
                    for (s, a_s) in a.iter_mut().enumerate() {
                        *a_s = dot(qt, &k[s * d + o..s * d + o + dh]) * scale;
                    }
                    softmax(a);
                    let ct = &mut ctx[t * d + o..t * d + o + dh];
                    for (s, &a_s) in a.iter().enumerate() {
                        for (cv, vv) in ct.iter_mut().zip(&v[s * d + o..s * d + o + dh]) {
                            *cv += a_s * vv;
                        }
                    }
                }
            }
            let mut attn_out = linear(&ctx, n, d, self.p(la.wo, d * d), d, self.p(la.bo, d));
            let attn_mask = dropout(&mut attn_out, p_drop, rng.as_deref_mut());
            let res1: Vec<f64> = x_in.iter().zip(&attn_out).map(|(a, b)| a + b).collect();
            let (h1, ln1_xhat, ln1_rstd) =
                layer_norm(&res1, n, d, self.p(la.ln1_g, d), self.p(la.ln1_b, d), c.ln_eps);
            let f = c.ffn_dim;
            let f_pre = linear(&h1, n, d, self.p(la.w1, d * f), f, self.p(la.b1, f));
            let f_act: Vec<f64> = f_pre.iter().map(|&z| gelu(z)).collect();
            let mut f_out = linear(&f_act, n, f, self.p(la.w2, f * d), d, self.p(la.b2, d));
            let ffn_mask = dropout(&mut f_out, p_drop, rng.as_deref_mut());
            let res2: Vec<f64> = h1.iter().zip(&f_out).map(|(a, b)| a + b).collect();
            let (out, ln2_xhat, ln2_rstd) =
                layer_norm(&res2, n, d, self.p(la.ln2_g, d), self.p(la.ln2_b, d), c.ln_eps);
            caches.push(LayerCache {
                x_in,
                q,
                k,
                v,
                att,
                ctx,
                attn_mask,
                ln1_xhat,
                ln1_rstd,
                h1,
                f_pre,
                f_act,
                ffn_mask,
                ln2_xhat,
                ln2_rstd,
            });
            x = out;
        }

        let mut cls = x[..d].to_vec();
        let cls_mask = dropout(&mut cls, p_drop, rng.as_deref_mut());
        let w = self.p(l.head_w, d + c.image_dim);
        let logit = dot(&cls, &w[..d]) + dot(&image, &w[d..]) + self.params[l.head_b];
        Ok(Trace {
            ids,
            n,
            emb_xhat,
            emb_rstd,
            emb_mask,
            layers: caches,
            cls,
            cls_mask,
            image,
            logit,
        })
    }

    /// Accumulates `dlogit * d(logit)/d(params)` into `grads`.
    pub fn backward(&self, trace: &Trace, dlogit: f64, grads: &mut [f64]) {
        let c = &self.config;
        let l = &self.layout;
        let (d, h, n) = (c.dim, c.heads, trace.n);
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();

        let w = self.p(l.head_w, d + c.image_dim);
        grads[l.head_b] += dlogit;
        for (g, x) in grads[l.head_w..l.head_w + d].iter_mut().zip(&trace.cls) {
            *g += dlogit * x;
        }
        for (g, x) in grads[l.head_w + d..l.head_w + d + c.image_dim].iter_mut().zip(&trace.image) {
            *g += dlogit * x;
        }
        let mut dx = vec![0.0; n * d];
        for (j, dxj) in dx[..d].iter_mut().enumerate() {
            *dxj = dlogit * w[j];
        }
        apply_mask(&mut dx[..d], trace.cls_mask.as_deref());

        for (la, lc) in l.layers.iter().zip(&trace.layers).rev() {
            let f = c.ffn_dim;
            let d_res2 = layer_norm_back(
                &dx,
                &lc.ln2_xhat,
                &lc.ln2_rstd,
                n,
                d,
                self.p(la.ln2_g, d),
                grads,
                la.ln2_g,
                la.ln2_b,
            );
            let mut d_h1 = d_res2.clone();
            let mut d_fout = d_res2;
            apply_mask(&mut d_fout, lc.ffn_mask.as_deref());
            let mut d_fact = vec![0.0; n * f];
            linear_back(&lc.f_act, n, f, self.p(la.w2, f * d), d, &d_fout, Some(&mut d_fact), grads, la.w2, la.b2);
            let d_fpre: Vec<f64> = d_fact
                .iter()
                .zip(&lc.f_pre)
                .map(|(g, &z)| g * gelu_grad(z))
                .collect();
            linear_back(&lc.h1, n, d, self.p(la.w1, d * f), f, &d_fpre, Some(&mut d_h1), grads, la.w1, la.b1);
            let d_res1 = layer_norm_back(
                &d_h1,
                &lc.ln1_xhat,
                &lc.ln1_rstd,
                n,
                d,
                self.p(la.ln1_g, d),
                grads,
                la.ln1_g,
                la.ln1_b,
            );
            let mut d_xin = d_res1.clone();
            let mut d_attn = d_res1;
            apply_mask(&mut d_attn, lc.attn_mask.as_deref());
            let mut d_ctx = vec![0.0; n * d];
            linear_back(&lc.ctx, n, d, self.p(la.wo, d * d), d, &d_attn, Some(&mut d_ctx), grads, la.wo, la.bo);

            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            let mut da = vec![0.0; n];
            for hd in 0..h {
                let o = hd * dh;
                for t in 0..n {
                    let a = &lc.att[(hd * n + t) * n..(hd * n + t + 1) * n];
                    let dct = &d_ctx[t * d + o..t * d + o + dh];
                    for s in 0..n {
                        da[s] = dot(dct, &lc.v[s * d + o..s * d + o + dh]);
                        for (g, x) in dv[s * d + o..s * d + o + dh].iter_mut().zip(dct) {
                            *g += a[s] * x;
                        }
                    }
                    let inner = dot(a, &da);
                    for s in 0..n {
                        let ds = a[s] * (da[s] - inner) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for j in 0..dh {
                            dq[t * d + o + j] += ds * lc.k[s * d + o + j];
                            dk[s * d + o + j] += ds * lc.q[t * d + o + j];
                        }
                    }
                }
            }
            linear_back(&lc.x_in, n, d, self.p(la.wq, d * d), d, &dq, Some(&mut d_xin), grads, la.wq, la.bq);
            linear_back(&lc.x_in, n, d, self.p(la.wk, d * d), d, &dk, Some(&mut d_xin), grads, la.wk, la.bk);
            linear_back(&lc.x_in, n, d, self.p(la.wv, d * d), d, &dv, Some(&mut d_xin), grads, la.wv, la.bv);
            dx = d_xin;
        }

        apply_mask(&mut dx, trace.emb_mask.as_deref());
        let d_x0 = layer_norm_back(
            &dx,
            &trace.emb_xhat,
            &trace.emb_rstd,
            n,
            d,
            self.p(l.emb_g, d),
            grads,
            l.emb_g,
            l.emb_b,
        );
        for (t, &id) in trace.ids.iter().enumerate() {
            let row = &d_x0[t * d..(t + 1) * d];
            for (g, x) in grads[l.tok + id * d..l.tok + (id + 1) * d].iter_mut().zip(row) {
                *g += x;
            }
            if let Some(pos) = l.pos {
                for (g, x) in grads[pos + t * d..pos + (t + 1) * d].iter_mut().zip(row) {
                    *g += x;
                }
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn linear(x: &[f64], rows: usize, din: usize, w: &[f64], dout: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; rows * dout];
    for r in 0..rows {
        let yr = &mut y[r * dout..(r + 1) * dout];
        yr.copy_from_slice(b);
        for i in 0..din {
            let xv = x[r * din + i];
            for (yj, wj) in yr.iter_mut().zip(&w[i * dout..(i + 1) * dout]) {
                *yj += xv * wj;
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn linear_back(
    x: &[f64],
    rows: usize,
    din: usize,
    w: &[f64],
    dout: usize,
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    grads: &mut [f64],
    w_at: usize,
    b_at: usize,
) {
    for r in 0..rows {
        let dyr = &dy[r * dout..(r + 1) * dout];
        for (g, v) in grads[b_at..b_at + dout].iter_mut().zip(dyr) {
            *g += v;
        }
        for i in 0..din {
            let xv = x[r * din + i];
            let wrow = &w[i * dout..(i + 1) * dout];
            for (g, v) in grads[w_at + i * dout..w_at + (i + 1) * dout].iter_mut().zip(dyr) {
                *g += xv * v;
            }
            if let Some(dx) = dx.as_deref_mut() {
                dx[r * din + i] += dot(wrow, dyr);
            }
        }
    }
}

fn layer_norm(x: &[f64], rows: usize, d: usize, g: &[f64], b: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (xr[j] - mean) * rs;
            xhat[r * d + j] = xh;
            y[r * d + j] = g[j] * xh + b[j];
        }
    }
    (y, xhat, rstd)
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_back(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    rows: usize,
    d: usize,
    g: &[f64],
    grads: &mut [f64],
    g_at: usize,
    b_at: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &xhat[r * d..(r + 1) * d];
        for j in 0..d {
            grads[g_at + j] += dyr[j] * xh[j];
            grads[b_at + j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dot(&dxhat, xh) / d as f64;
        for j in 0..d {
            dx[r * d + j] = rstd[r] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

fn softmax(a: &mut [f64]) {
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in a.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in a.iter_mut() {
        *v /= sum;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Inverted dropout in place; returns the mask for the backward pass.
fn dropout(x: &mut [f64], p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    apply_mask(x, Some(&mask));
    Some(mask)
}

fn apply_mask(x: &mut [f64], mask: Option<&[f64]>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn config(positions: bool, image_dim: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            dim: 8,
            heads: 2,
            layers: 2,
            ffn_dim: 16,
            seq_len: 10,
            image_dim,
            positions,
            dropout: 0.1,
            ln_eps: 1e-5,
        }
    }

    #[test]
    fn zero_weights_give_zero_class_vector_and_half_probability() {
        let enc = Encoder::zeros(config(true, 0)).unwrap();
        assert!(enc.encode(&[2, 5, 6, 7]).unwrap().iter().all(|&v| v == 0.0));
        let t = enc.forward(&[2, 5, 6], None, None).unwrap();
        assert_eq!(sigmoid(t.logit), 0.5);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = Encoder::new(config(true, 0), 7).unwrap();
        let b = Encoder::new(config(true, 0), 7).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.encode(&[2, 4, 9]).unwrap(), b.encode(&[2, 4, 9]).unwrap());
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let t1 = a.forward(&[2, 4, 9], None, Some(&mut r1)).unwrap();
        let t2 = a.forward(&[2, 4, 9], None, Some(&mut r2)).unwrap();
        assert_eq!(t1.logit.to_bits(), t2.logit.to_bits());
    }

    #[test]
    fn permutation_invariance_without_positions() {
        let enc = Encoder::new(config(false, 0), 3).unwrap();
        let a = enc.encode(&[2, 4, 9, 11, 5]).unwrap();
        let b = enc.encode(&[2, 11, 9, 4, 5]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let pos = Encoder::new(config(true, 0), 3).unwrap();
        assert_ne!(pos.encode(&[2, 4, 9, 11, 5]).unwrap(), pos.encode(&[2, 11, 9, 4, 5]).unwrap());
    }

    #[test]
    fn trailing_padding_is_ignored() {
        let enc = Encoder::new(config(true, 0), 3).unwrap();
        assert_eq!(enc.encode(&[2, 4, 9]).unwrap(), enc.encode(&[2, 4, 9, PAD, PAD]).unwrap());
    }

    #[test]
    fn input_guards() {
        let enc = Encoder::new(config(true, 3), 3).unwrap();
        assert!(enc.forward(&[2, 40], Some(&[0.0; 3]), None).is_err());
        assert!(enc.forward(&[2, 4], None, None).is_err());
        assert!(enc.forward(&[2, 4], Some(&[0.0; 2]), None).is_err());
        assert!(enc.forward(&[2; 11], Some(&[0.0; 3]), None).is_err());
    }

    #[test]
    fn zero_image_matches_text_path() {
        let text = Encoder::new(config(true, 0), 5).unwrap();
        let mut fused = Encoder::zeros(config(true, 4)).unwrap();
        // Same weights, image block of the head left at zero.
        let hw = fused.layout.head_w;
        fused.params[..hw + 8].copy_from_slice(&text.params[..hw + 8]);
        let tb = text.layout.head_b;
        let fb = fused.layout.head_b;
        fused.params[fb] = text.params[tb];
        let ids = [2, 6, 7, 8];
        let a = text.forward(&ids, None, None).unwrap().logit;
        let b = fused.forward(&ids, Some(&[0.0; 4]), None).unwrap().logit;
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn layout_covers_every_parameter_once() {
        let c = config(true, 4);
        let l = Layout::new(&c);
        let mut covered = vec![0u8; l.total];
        for t in &l.tensors {
            covered[t.range()].iter_mut().for_each(|v| *v += 1);
        }
        assert!(covered.iter().all(|&v| v == 1));
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
