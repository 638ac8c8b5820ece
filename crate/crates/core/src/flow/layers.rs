//! Layer primitives with hand-derived backward passes.
//!
//! Every layer exposes `forward` returning the output plus a cache, and
//! `backward` consuming the cache with the upstream gradient. Activations
//! are smooth (GELU, softmax, layer norm) so central finite differences
//! converge quadratically against these gradients.

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mat::Mat;

pub(crate) fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (K * (x + A * x * x * x)).tanh())
}

pub(crate) fn gelu_deriv(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044715;
    let u = K * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * K * (1.0 + 3.0 * A * x * x)
}

fn init_weight(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Mat {
    let scale = 1.0 / (rows as f64).sqrt();
    let normal = StandardNormal;
    Mat::from_fn(rows, cols, |_, _| {
        let v: f64 = normal.sample(rng);
        v * scale
    })
}

/// Affine map `y = x W + b` with W stored (d_in x d_out).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Mat, // 1 x d_out
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub w: Mat,
    pub b: Mat,
}

impl Linear {
    pub fn init(d_in: usize, d_out: usize, rng: &mut ChaCha12Rng) -> Self {
        Linear {
            w: init_weight(d_in, d_out, rng),
            b: Mat::zeros(1, d_out),
        }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x.matmul(&self.w);
        y.add_row_broadcast(&self.b);
        y
    }

    /// Returns (dx, grads). `x` is the forward input.
    pub fn backward(&self, x: &Mat, dy: &Mat) -> (Mat, LinearGrads) {
        let dx = dy.matmul_nt(&self.w); // dy W^T
        let dw = x.matmul_tn(dy); // x^T dy
        let db = dy.sum_rows();
        (dx, LinearGrads { w: dw, b: db })
    }

    pub fn zeros_grads(&self) -> LinearGrads {
        LinearGrads {
            w: Mat::zeros(self.w.rows, self.w.cols),
            b: Mat::zeros(1, self.b.cols),
        }
    }
}

const LN_EPS: f64 = 1e-5;

/// Per-row layer normalization with learned gain and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Mat, // 1 x d
    pub beta: Mat,  // 1 x d
}

pub struct LayerNormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads {
    pub gamma: Mat,
    pub beta: Mat,
}

impl LayerNorm {
    pub fn init(d: usize) -> Self {
        LayerNorm {
            gamma: Mat::from_vec(1, d, vec![1.0; d]),
            beta: Mat::zeros(1, d),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LayerNormCache) {
        let d = x.cols;
        let mut xhat = Mat::zeros(x.rows, d);
        let mut inv_std = Vec::with_capacity(x.rows);
        let mut y = Mat::zeros(x.rows, d);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(istd);
            for c in 0..d {
                let h = (row[c] - mean) * istd;
                xhat.set(r, c, h);
                y.set(r, c, h * self.gamma.data[c] + self.beta.data[c]);
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Mat) -> (Mat, LayerNormGrads) {
        let d = dy.cols;
        let mut dgamma = Mat::zeros(1, d);
        let mut dbeta = Mat::zeros(1, d);
        let mut dx = Mat::zeros(dy.rows, d);
        for r in 0..dy.rows {
            let xhat = cache.xhat.row(r);
            let dyr = dy.row(r);
            let mut dxhat = vec![0.0; d];
            for c in 0..d {
                dgamma.data[c] += dyr[c] * xhat[c];
                dbeta.data[c] += dyr[c];
                dxhat[c] = dyr[c] * self.gamma.data[c];
            }
            let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dxhat_xhat = dxhat
                .iter()
                .zip(xhat)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / d as f64;
            let istd = cache.inv_std[r];
            for c in 0..d {
                dx.set(
                    r,
                    c,
                    istd * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat),
                );
            }
        }
        (
            dx,
            LayerNormGrads {
                gamma: dgamma,
                beta: dbeta,
            },
        )
    }

    pub fn zeros_grads(&self) -> LayerNormGrads {
        LayerNormGrads {
            gamma: Mat::zeros(1, self.gamma.cols),
            beta: Mat::zeros(1, self.beta.cols),
        }
    }
}

/// Multi-head scaled dot-product attention. Queries come from the token
/// stream, keys and values from `kv_src` (the stream itself for
/// self-attention, condition tokens for cross-attention).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

pub struct AttnCache {
    q_src: Mat,
    kv_src: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    attn: Vec<Mat>, // per head, n x m
    concat: Mat,    // n x d
}

#[derive(Debug, Clone)]
pub struct AttnGrads {
    pub wq: LinearGrads,
    pub wk: LinearGrads,
    pub wv: LinearGrads,
    pub wo: LinearGrads,
}

impl MultiHeadAttention {
    pub fn init(d_model: usize, d_kv_in: usize, heads: usize, rng: &mut ChaCha12Rng) -> Self {
        assert!(d_model % heads == 0, "heads must divide d_model");
        MultiHeadAttention {
            wq: Linear::init(d_model, d_model, rng),
            wk: Linear::init(d_kv_in, d_model, rng),
            wv: Linear::init(d_kv_in, d_model, rng),
            wo: Linear::init(d_model, d_model, rng),
            heads,
        }
    }

    pub fn forward(&self, q_src: &Mat, kv_src: &Mat) -> (Mat, AttnCache) {
        let d = self.wq.w.cols;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.wq.forward(q_src);
        let k = self.wk.forward(kv_src);
        let v = self.wv.forward(kv_src);
        let mut concat = Mat::zeros(q_src.rows, d);
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.col_slice(h * dh, dh);
            let kh = k.col_slice(h * dh, dh);
            let vh = v.col_slice(h * dh, dh);
            let mut scores = qh.matmul_nt(&kh);
            scores.scale(scale);
            softmax_rows(&mut scores);
            let oh = scores.matmul(&vh);
            concat.add_col_slice(h * dh, &oh);
            attn.push(scores);
        }
        let out = self.wo.forward(&concat);
        (
            out,
            AttnCache {
                q_src: q_src.clone(),
                kv_src: kv_src.clone(),
                q,
                k,
                v,
                attn,
                concat,
            },
        )
    }

    /// Returns (d_q_src, d_kv_src, grads).
    pub fn backward(&self, cache: &AttnCache, dy: &Mat) -> (Mat, Mat, AttnGrads) {
        let d = self.wq.w.cols;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (dconcat, wo_grads) = self.wo.backward(&cache.concat, dy);
        let mut dq = Mat::zeros(cache.q.rows, d);
        let mut dk = Mat::zeros(cache.k.rows, d);
        let mut dv = Mat::zeros(cache.v.rows, d);
        for h in 0..self.heads {
            let doh = dconcat.col_slice(h * dh, dh);
            let a = &cache.attn[h];
            let kh = cache.k.col_slice(h * dh, dh);
            let vh = cache.v.col_slice(h * dh, dh);
            let qh = cache.q.col_slice(h * dh, dh);

            let dvh = a.matmul_tn(&doh); // A^T dO
            let mut da = doh.matmul_nt(&vh); // dO V^T
            softmax_rows_backward(a, &mut da); // in place: dS
            da.scale(scale);
            let dqh = da.matmul(&kh);
            let dkh = da.matmul_tn(&qh);

            dq.add_col_slice(h * dh, &dqh);
            dk.add_col_slice(h * dh, &dkh);
            dv.add_col_slice(h * dh, &dvh);
        }
        let (dq_src, wq_grads) = self.wq.backward(&cache.q_src, &dq);
        let (dk_src, wk_grads) = self.wk.backward(&cache.kv_src, &dk);
        let (dv_src, wv_grads) = self.wv.backward(&cache.kv_src, &dv);
        let d_kv_src = dk_src.added(&dv_src);
        (
            dq_src,
            d_kv_src,
            AttnGrads {
                wq: wq_grads,
                wk: wk_grads,
                wv: wv_grads,
                wo: wo_grads,
            },
        )
    }

    pub fn zeros_grads(&self) -> AttnGrads {
        AttnGrads {
            wq: self.wq.zeros_grads(),
            wk: self.wk.zeros_grads(),
            wv: self.wv.zeros_grads(),
            wo: self.wo.zeros_grads(),
        }
    }
}

fn softmax_rows(m: &mut Mat) {
    for r in 0..m.rows {
        let row = m.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Given A = softmax(S) and dA in `grad`, rewrites `grad` with dS:
/// `dS = A .* (dA - rowsum(dA .* A))`.
fn softmax_rows_backward(a: &Mat, grad: &mut Mat) {
    for r in 0..a.rows {
        let arow = a.row(r);
        let grow = grad.row_mut(r);
        let dot: f64 = arow.iter().zip(grow.iter()).map(|(x, y)| x * y).sum();
        for (g, &x) in grow.iter_mut().zip(arow) {
            *g = x * (*g - dot);
        }
    }
}

/// Two-layer feed-forward with GELU.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

pub struct FfnCache {
    x: Mat,
    pre: Mat,
    act: Mat,
}

#[derive(Debug, Clone)]
pub struct FfnGrads {
    pub w1: LinearGrads,
    pub w2: LinearGrads,
}

impl FeedForward {
    pub fn init(d_model: usize, hidden: usize, rng: &mut ChaCha12Rng) -> Self {
        FeedForward {
            w1: Linear::init(d_model, hidden, rng),
            w2: Linear::init(hidden, d_model, rng),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, FfnCache) {
        let pre = self.w1.forward(x);
        let mut act = pre.clone();
        for v in &mut act.data {
            *v = gelu(*v);
        }
        let out = self.w2.forward(&act);
        (
            out,
            FfnCache {
                x: x.clone(),
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, cache: &FfnCache, dy: &Mat) -> (Mat, FfnGrads) {
        let (mut dact, w2_grads) = self.w2.backward(&cache.act, dy);
        for (g, &p) in dact.data.iter_mut().zip(&cache.pre.data) {
            *g *= gelu_deriv(p);
        }
        let (dx, w1_grads) = self.w1.backward(&cache.x, &dact);
        (
            dx,
            FfnGrads {
                w1: w1_grads,
                w2: w2_grads,
            },
        )
    }

    pub fn zeros_grads(&self) -> FfnGrads {
        FfnGrads {
            w1: self.w1.zeros_grads(),
            w2: self.w2.zeros_grads(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(1234)
    }

    /// Central-difference check of a scalar function of one matrix entry.
    fn fd<F: FnMut(f64) -> f64>(mut f: F, x0: f64, eps: f64) -> f64 {
        (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps)
    }

    #[test]
    fn linear_input_gradient_matches_fd() {
        let mut r = rng();
        let lin = Linear::init(3, 2, &mut r);
        let x = Mat::from_fn(4, 3, |i, j| ((i + 2 * j) as f64 * 0.3).sin());
        let loss = |x: &Mat| -> f64 { lin.forward(x).data.iter().map(|v| v * v).sum() };
        let y = lin.forward(&x);
        let mut dy = y.clone();
        dy.scale(2.0);
        let (dx, grads) = lin.backward(&x, &dy);
        for (r_i, c_i) in [(0, 0), (2, 1), (3, 2)] {
            let mut xp = x.clone();
            let g = fd(
                |v| {
                    xp.set(r_i, c_i, v);
                    loss(&xp)
                },
                x.get(r_i, c_i),
                1e-6,
            );
            assert!((dx.get(r_i, c_i) - g).abs() < 1e-7, "dx mismatch");
        }
        // Weight gradient entry check.
        let mut lp = lin.clone();
        let g = fd(
            |v| {
                lp.w.set(1, 0, v);
                lp.forward(&x).data.iter().map(|v| v * v).sum()
            },
            lin.w.get(1, 0),
            1e-6,
        );
        assert!((grads.w.get(1, 0) - g).abs() < 1e-6);
    }

    #[test]
    fn layernorm_gradient_matches_fd() {
        let ln = LayerNorm::init(5);
        let x = Mat::from_fn(3, 5, |i, j| ((i * 5 + j) as f64 * 0.7).cos());
        let loss = |x: &Mat| -> f64 {
            let (y, _) = ln.forward(x);
            y.data.iter().map(|v| v * v * 0.5).sum()
        };
        let (y, cache) = ln.forward(&x);
        let (dx, _) = ln.backward(&cache, &y);
        for (r_i, c_i) in [(0, 0), (1, 3), (2, 4)] {
            let mut xp = x.clone();
            let g = fd(
                |v| {
                    xp.set(r_i, c_i, v);
                    loss(&xp)
                },
                x.get(r_i, c_i),
                1e-6,
            );
            assert!((dx.get(r_i, c_i) - g).abs() < 1e-6, "ln dx mismatch");
        }
    }

    #[test]
    fn attention_gradient_matches_fd() {
        let mut r = rng();
        let attn = MultiHeadAttention::init(4, 3, 2, &mut r);
        let q_src = Mat::from_fn(5, 4, |i, j| ((i + j) as f64 * 0.31).sin());
        let kv_src = Mat::from_fn(6, 3, |i, j| ((i as f64 - j as f64) * 0.17).cos());
        let loss = |q: &Mat, kv: &Mat| -> f64 {
            attn.forward(q, kv).0.data.iter().map(|v| v * v * 0.5).sum()
        };
        let (y, cache) = attn.forward(&q_src, &kv_src);
        let (dq, dkv, grads) = attn.backward(&cache, &y);
        for (r_i, c_i) in [(0, 0), (4, 3)] {
            let mut qp = q_src.clone();
            let g = fd(
                |v| {
                    qp.set(r_i, c_i, v);
                    loss(&qp, &kv_src)
                },
                q_src.get(r_i, c_i),
                1e-6,
            );
            assert!((dq.get(r_i, c_i) - g).abs() < 1e-6, "attn dq mismatch");
        }
        for (r_i, c_i) in [(0, 0), (5, 2)] {
            let mut kvp = kv_src.clone();
            let g = fd(
                |v| {
                    kvp.set(r_i, c_i, v);
                    loss(&q_src, &kvp)
                },
                kv_src.get(r_i, c_i),
                1e-6,
            );
            assert!((dkv.get(r_i, c_i) - g).abs() < 1e-6, "attn dkv mismatch");
        }
        // One weight per projection.
        let mut ap = attn.clone();
        let g = fd(
            |v| {
                ap.wk.w.set(1, 2, v);
                ap.forward(&q_src, &kv_src)
                    .0
                    .data
                    .iter()
                    .map(|v| v * v * 0.5)
                    .sum()
            },
            attn.wk.w.get(1, 2),
            1e-6,
        );
        assert!((grads.wk.w.get(1, 2) - g).abs() < 1e-6, "attn dwk mismatch");
    }

    #[test]
    fn ffn_gradient_matches_fd() {
        let mut r = rng();
        let ffn = FeedForward::init(3, 7, &mut r);
        let x = Mat::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.23).sin());
        let (y, cache) = ffn.forward(&x);
        let (dx, _) = ffn.backward(&cache, &y);
        for (r_i, c_i) in [(0, 0), (3, 2)] {
            let mut xp = x.clone();
            let g = fd(
                |v| {
                    xp.set(r_i, c_i, v);
                    let (y, _) = ffn.forward(&xp);
                    y.data.iter().map(|v| v * v * 0.5).sum()
                },
                x.get(r_i, c_i),
                1e-6,
            );
            assert!((dx.get(r_i, c_i) - g).abs() < 1e-6, "ffn dx mismatch");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut m = Mat::from_fn(3, 4, |i, j| (i as f64) - (j as f64) * 0.5);
        softmax_rows(&mut m);
        for r in 0..3 {
            let s: f64 = m.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
