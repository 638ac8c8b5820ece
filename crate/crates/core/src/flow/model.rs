//! The vector-field network: token embedding with 3D positional encoding,
//! stacked dual-pathway transformer blocks, and the unembedding head.
//!
//! Block wiring is pre-norm with residuals around the self-attention, the
//! fused cross-attention output, and the feed-forward:
//!
//! ```text
//! x1 = x  + SelfAttn(LN(x))
//! fused = (CrossAttn(LN(x1), c_top) + CrossAttn(LN(x1), c_front)) / 2
//! x2 = x1 + fused
//! out = x2 + FFN(LN(x2))
//! ```
//!
//! Both cross pathways are initialized from the same draw, so at init the
//! block behaves exactly like a single-pathway block whenever the two
//! condition streams coincide.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::layers::{
    AttnCache, AttnGrads, FeedForward, FfnCache, FfnGrads, LayerNorm, LayerNormCache,
    LayerNormGrads, Linear, LinearGrads, MultiHeadAttention,
};
use super::mat::Mat;
use super::{ConditionTokens, FlowError};
use crate::latent::Latent;

/// Model dimensions. Latent shape (M, C) is fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlowConfig {
    pub latent_resolution: u32,
    pub channels: u32,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub d_cond: usize,
    pub ffn_mult: usize,
    /// Fourier feature pairs for the timestep embedding.
    pub time_frequencies: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            latent_resolution: 16,
            channels: 8,
            d_model: 64,
            heads: 2,
            blocks: 2,
            d_cond: 32,
            ffn_mult: 4,
            time_frequencies: 8,
        }
    }
}

impl FlowConfig {
    pub fn tokens(&self) -> usize {
        (self.latent_resolution as usize).pow(3)
    }
}

/// One transformer block with parallel cross-attention pathways fused by
/// element-wise averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBlock {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln_cross: LayerNorm,
    pub cross_top: MultiHeadAttention,
    pub cross_front: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

pub struct BlockCache {
    ln_self: LayerNormCache,
    self_attn: AttnCache,
    ln_cross: LayerNormCache,
    cross_top: AttnCache,
    cross_front: AttnCache,
    ln_ffn: LayerNormCache,
    ffn: FfnCache,
}

#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub ln_self: LayerNormGrads,
    pub self_attn: AttnGrads,
    pub ln_cross: LayerNormGrads,
    pub cross_top: AttnGrads,
    pub cross_front: AttnGrads,
    pub ln_ffn: LayerNormGrads,
    pub ffn: FfnGrads,
}

impl DualBlock {
    fn init(config: &FlowConfig, rng: &mut ChaCha12Rng) -> Self {
        let d = config.d_model;
        // Both pathways start from the identical draw.
        let cross = MultiHeadAttention::init(d, config.d_cond, config.heads, rng);
        DualBlock {
            ln_self: LayerNorm::init(d),
            self_attn: MultiHeadAttention::init(d, d, config.heads, rng),
            ln_cross: LayerNorm::init(d),
            cross_top: cross.clone(),
            cross_front: cross,
            ln_ffn: LayerNorm::init(d),
            ffn: FeedForward::init(d, d * config.ffn_mult, rng),
        }
    }

    pub fn forward(&self, x: &Mat, c_top: &Mat, c_front: &Mat) -> (Mat, BlockCache) {
        let (hn1, ln_self_cache) = self.ln_self.forward(x);
        let (sa, self_cache) = self.self_attn.forward(&hn1, &hn1);
        let x1 = x.added(&sa);

        let (hn2, ln_cross_cache) = self.ln_cross.forward(&x1);
        let (top, top_cache) = self.cross_top.forward(&hn2, c_top);
        let (front, front_cache) = self.cross_front.forward(&hn2, c_front);
        let mut fused = top;
        fused.add_assign(&front);
        fused.scale(0.5);
        let x2 = x1.added(&fused);

        let (hn3, ln_ffn_cache) = self.ln_ffn.forward(&x2);
        let (ff, ffn_cache) = self.ffn.forward(&hn3);
        let out = x2.added(&ff);

        (
            out,
            BlockCache {
                ln_self: ln_self_cache,
                self_attn: self_cache,
                ln_cross: ln_cross_cache,
                cross_top: top_cache,
                cross_front: front_cache,
                ln_ffn: ln_ffn_cache,
                ffn: ffn_cache,
            },
        )
    }

    /// Returns (dx, d_c_top, d_c_front, grads).
    pub fn backward(&self, cache: &BlockCache, d_out: &Mat) -> (Mat, Mat, Mat, BlockGrads) {
        // out = x2 + ffn(ln_ffn(x2))
        let (d_hn3, ffn_grads) = self.ffn.backward(&cache.ffn, d_out);
        let (d_x2_from_ffn, ln_ffn_grads) = self.ln_ffn.backward(&cache.ln_ffn, &d_hn3);
        let d_x2 = d_out.added(&d_x2_from_ffn);

        // x2 = x1 + (top + front) / 2
        let mut d_path = d_x2.clone();
        d_path.scale(0.5);
        let (d_hn2_top, d_ctop, top_grads) = self.cross_top.backward(&cache.cross_top, &d_path);
        let (d_hn2_front, d_cfront, front_grads) =
            self.cross_front.backward(&cache.cross_front, &d_path);
        let d_hn2 = d_hn2_top.added(&d_hn2_front);
        let (d_x1_from_cross, ln_cross_grads) = self.ln_cross.backward(&cache.ln_cross, &d_hn2);
        let d_x1 = d_x2.added(&d_x1_from_cross);

        // x1 = x + self_attn(ln_self(x))
        let (d_hn1_q, d_hn1_kv, self_grads) = self.self_attn.backward(&cache.self_attn, &d_x1);
        let d_hn1 = d_hn1_q.added(&d_hn1_kv);
        let (d_x_from_self, ln_self_grads) = self.ln_self.backward(&cache.ln_self, &d_hn1);
        let dx = d_x1.added(&d_x_from_self);

        (
            dx,
            d_ctop,
            d_cfront,
            BlockGrads {
                ln_self: ln_self_grads,
                self_attn: self_grads,
                ln_cross: ln_cross_grads,
                cross_top: top_grads,
                cross_front: front_grads,
                ln_ffn: ln_ffn_grads,
                ffn: ffn_grads,
            },
        )
    }

    /// Reference single-pathway block: identical wiring but only the top
    /// cross-attention, no averaging. Used to pin down the fusion math.
    pub fn forward_single_pathway(&self, x: &Mat, c: &Mat) -> Mat {
        let (hn1, _) = self.ln_self.forward(x);
        let (sa, _) = self.self_attn.forward(&hn1, &hn1);
        let x1 = x.added(&sa);
        let (hn2, _) = self.ln_cross.forward(&x1);
        let (top, _) = self.cross_top.forward(&hn2, c);
        let x2 = x1.added(&top);
        let (hn3, _) = self.ln_ffn.forward(&x2);
        let (ff, _) = self.ffn.forward(&hn3);
        x2.added(&ff)
    }

    fn zeros_grads(&self) -> BlockGrads {
        BlockGrads {
            ln_self: self.ln_self.zeros_grads(),
            self_attn: self.self_attn.zeros_grads(),
            ln_cross: self.ln_cross.zeros_grads(),
            cross_top: self.cross_top.zeros_grads(),
            cross_front: self.cross_front.zeros_grads(),
            ln_ffn: self.ln_ffn.zeros_grads(),
            ffn: self.ffn.zeros_grads(),
        }
    }
}

/// The full vector-field model.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub config: FlowConfig,
    pub embed: Linear,
    pub time_w1: Linear,
    pub time_w2: Linear,
    pub blocks: Vec<DualBlock>,
    pub ln_final: LayerNorm,
    pub unembed: Linear,
    /// Fixed additive sinusoidal encoding of each cell index, not learned.
    posenc: Mat,
}

pub struct ModelCache {
    x_mat: Mat,
    t_feat: Mat,
    t_pre: Mat,
    t_act: Mat,
    blocks: Vec<BlockCache>,
    ln_final: LayerNormCache,
    final_norm_out: Mat,
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub embed: LinearGrads,
    pub time_w1: LinearGrads,
    pub time_w2: LinearGrads,
    pub blocks: Vec<BlockGrads>,
    pub ln_final: LayerNormGrads,
    pub unembed: LinearGrads,
}

/// Lists every parameter matrix in one fixed order. The same field names
/// exist on both `FlowModel` and `ModelGrads`, so this macro defines the
/// shared layout exactly once.
macro_rules! collect_mats {
    ($m:expr, $borrow:ident, $iter:ident) => {{
        let mut out = vec![
            $borrow!($m.embed.w),
            $borrow!($m.embed.b),
            $borrow!($m.time_w1.w),
            $borrow!($m.time_w1.b),
            $borrow!($m.time_w2.w),
            $borrow!($m.time_w2.b),
        ];
        for blk in $m.blocks.$iter() {
            out.extend([
                $borrow!(blk.ln_self.gamma),
                $borrow!(blk.ln_self.beta),
                $borrow!(blk.self_attn.wq.w),
                $borrow!(blk.self_attn.wq.b),
                $borrow!(blk.self_attn.wk.w),
                $borrow!(blk.self_attn.wk.b),
                $borrow!(blk.self_attn.wv.w),
                $borrow!(blk.self_attn.wv.b),
                $borrow!(blk.self_attn.wo.w),
                $borrow!(blk.self_attn.wo.b),
                $borrow!(blk.ln_cross.gamma),
                $borrow!(blk.ln_cross.beta),
                $borrow!(blk.cross_top.wq.w),
                $borrow!(blk.cross_top.wq.b),
                $borrow!(blk.cross_top.wk.w),
                $borrow!(blk.cross_top.wk.b),
                $borrow!(blk.cross_top.wv.w),
                $borrow!(blk.cross_top.wv.b),
                $borrow!(blk.cross_top.wo.w),
                $borrow!(blk.cross_top.wo.b),
                $borrow!(blk.cross_front.wq.w),
                $borrow!(blk.cross_front.wq.b),
                $borrow!(blk.cross_front.wk.w),
                $borrow!(blk.cross_front.wk.b),
                $borrow!(blk.cross_front.wv.w),
                $borrow!(blk.cross_front.wv.b),
                $borrow!(blk.cross_front.wo.w),
                $borrow!(blk.cross_front.wo.b),
                $borrow!(blk.ln_ffn.gamma),
                $borrow!(blk.ln_ffn.beta),
                $borrow!(blk.ffn.w1.w),
                $borrow!(blk.ffn.w1.b),
                $borrow!(blk.ffn.w2.w),
                $borrow!(blk.ffn.w2.b),
            ]);
        }
        out.extend([
            $borrow!($m.ln_final.gamma),
            $borrow!($m.ln_final.beta),
            $borrow!($m.unembed.w),
            $borrow!($m.unembed.b),
        ]);
        out
    }};
}

macro_rules! mat_ref {
    ($e:expr) => {
        &$e
    };
}

macro_rules! mat_mut {
    ($e:expr) => {
        &mut $e
    };
}

impl ModelGrads {
    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.mats_mut().into_iter().zip(other.mats()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.mats_mut() {
            m.scale(s);
        }
    }

    pub fn mats(&self) -> Vec<&Mat> {
        collect_mats!(self, mat_ref, iter)
    }

    pub fn mats_mut(&mut self) -> Vec<&mut Mat> {
        collect_mats!(self, mat_mut, iter_mut)
    }
}

fn param_names(blocks: usize) -> Vec<String> {
    let mut names = vec![
        "embed.w".into(),
        "embed.b".into(),
        "time_w1.w".into(),
        "time_w1.b".into(),
        "time_w2.w".into(),
        "time_w2.b".into(),
    ];
    for i in 0..blocks {
        for layer in [
            "ln_self.gamma",
            "ln_self.beta",
            "self_attn.wq.w",
            "self_attn.wq.b",
            "self_attn.wk.w",
            "self_attn.wk.b",
            "self_attn.wv.w",
            "self_attn.wv.b",
            "self_attn.wo.w",
            "self_attn.wo.b",
            "ln_cross.gamma",
            "ln_cross.beta",
            "cross_top.wq.w",
            "cross_top.wq.b",
            "cross_top.wk.w",
            "cross_top.wk.b",
            "cross_top.wv.w",
            "cross_top.wv.b",
            "cross_top.wo.w",
            "cross_top.wo.b",
            "cross_front.wq.w",
            "cross_front.wq.b",
            "cross_front.wk.w",
            "cross_front.wk.b",
            "cross_front.wv.w",
            "cross_front.wv.b",
            "cross_front.wo.w",
            "cross_front.wo.b",
            "ln_ffn.gamma",
            "ln_ffn.beta",
            "ffn.w1.w",
            "ffn.w1.b",
            "ffn.w2.w",
            "ffn.w2.b",
        ] {
            names.push(format!("block{i}.{layer}"));
        }
    }
    names.extend([
        "ln_final.gamma".into(),
        "ln_final.beta".into(),
        "unembed.w".into(),
        "unembed.b".into(),
    ]);
    names
}

/// Additive sinusoidal encoding of 3D cell indices: dimension q encodes
/// axis q mod 3 at frequency 10000^(-(q/6)/(d/6)), alternating sin/cos.
fn positional_encoding(m: u32, d_model: usize) -> Mat {
    let cells = (m as usize).pow(3);
    let mut out = Mat::zeros(cells, d_model);
    let pairs_per_axis = (d_model as f64 / 6.0).max(1.0);
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let cell = ((i * m + j) * m + k) as usize;
                let coord = [i as f64, j as f64, k as f64];
                for q in 0..d_model {
                    let axis = (q / 2) % 3;
                    let pair = (q / 6) as f64;
                    let freq = 10000f64.powf(-pair / pairs_per_axis);
                    let angle = coord[axis] * freq;
                    let v = if q % 2 == 0 { angle.sin() } else { angle.cos() };
                    out.set(cell, q, v);
                }
            }
        }
    }
    out
}

fn time_features(t: f64, pairs: usize) -> Mat {
    let mut out = Mat::zeros(1, pairs * 2);
    for p in 0..pairs {
        let freq = std::f64::consts::PI * (1 << p) as f64;
        out.data[2 * p] = (freq * t).sin();
        out.data[2 * p + 1] = (freq * t).cos();
    }
    out
}

impl FlowModel {
    /// Seed-derived initialization; the two cross pathways of each block
    /// start from identical weights.
    pub fn init(config: FlowConfig, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let d = config.d_model;
        let embed = Linear::init(config.channels as usize, d, &mut rng);
        let time_w1 = Linear::init(config.time_frequencies * 2, d, &mut rng);
        let time_w2 = Linear::init(d, d, &mut rng);
        let blocks = (0..config.blocks)
            .map(|_| DualBlock::init(&config, &mut rng))
            .collect();
        let ln_final = LayerNorm::init(d);
        let unembed = Linear::init(d, config.channels as usize, &mut rng);
        let posenc = positional_encoding(config.latent_resolution, d);
        FlowModel {
            config,
            embed,
            time_w1,
            time_w2,
            blocks,
            ln_final,
            unembed,
            posenc,
        }
    }

    pub fn latent_to_mat(&self, x: &Latent) -> Mat {
        Mat::from_vec(
            x.cells(),
            x.channels() as usize,
            x.values().to_vec(),
        )
    }

    pub fn mat_to_latent(&self, m: &Mat) -> Latent {
        Latent::from_values(
            self.config.latent_resolution,
            self.config.channels,
            m.data.clone(),
        )
    }

    fn check_conditions(&self, c: &ConditionTokens) -> Result<(), FlowError> {
        if c.tokens.rows == 0 {
            return Err(FlowError::EmptyCondition);
        }
        if c.tokens.cols != self.config.d_cond {
            return Err(FlowError::DimMismatch(format!(
                "condition dim {} != d_cond {}",
                c.tokens.cols, self.config.d_cond
            )));
        }
        Ok(())
    }

    /// Evaluates v(x, t | c_top, c_front), returning the cache for backward.
    pub fn forward(
        &self,
        x: &Latent,
        t: f64,
        c_top: &ConditionTokens,
        c_front: &ConditionTokens,
    ) -> Result<(Latent, ModelCache), FlowError> {
        if x.resolution() != self.config.latent_resolution
            || x.channels() != self.config.channels
        {
            return Err(FlowError::DimMismatch(format!(
                "latent {}^3x{} does not match model {}^3x{}",
                x.resolution(),
                x.channels(),
                self.config.latent_resolution,
                self.config.channels
            )));
        }
        self.check_conditions(c_top)?;
        self.check_conditions(c_front)?;

        let x_mat = self.latent_to_mat(x);
        let t_feat = time_features(t, self.config.time_frequencies);
        let t_pre = self.time_w1.forward(&t_feat);
        let mut t_act = t_pre.clone();
        for v in &mut t_act.data {
            *v = super::layers::gelu(*v);
        }
        let t_emb = self.time_w2.forward(&t_act);

        let mut tok = self.embed.forward(&x_mat);
        tok.add_assign(&self.posenc);
        tok.add_row_broadcast(&t_emb);

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let (next, cache) = block.forward(&tok, &c_top.tokens, &c_front.tokens);
            if !next.is_finite() {
                return Err(FlowError::NonFinite {
                    location: format!("block{i}"),
                });
            }
            block_caches.push(cache);
            tok = next;
        }
        let (normed, ln_final_cache) = self.ln_final.forward(&tok);
        let out = self.unembed.forward(&normed);
        if !out.is_finite() {
            return Err(FlowError::NonFinite {
                location: "unembed".into(),
            });
        }
        let v = self.mat_to_latent(&out);
        Ok((
            v,
            ModelCache {
                x_mat,
                t_feat,
                t_pre,
                t_act,
                blocks: block_caches,
                ln_final: ln_final_cache,
                final_norm_out: normed,
            },
        ))
    }

    /// Backward pass from d(loss)/d(v) to parameter gradients.
    pub fn backward(&self, cache: &ModelCache, d_v: &Mat) -> ModelGrads {
        let (d_normed, unembed_grads) = self.unembed.backward(&cache.final_norm_out, d_v);
        // final_norm_out is the LN output; its backward needs the cache only.
        let (mut d_tok, ln_final_grads) = self.ln_final.backward(&cache.ln_final, &d_normed);

        let mut block_grads: Vec<BlockGrads> = Vec::with_capacity(self.blocks.len());
        for (block, bcache) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (dx, _dct, _dcf, grads) = block.backward(bcache, &d_tok);
            block_grads.push(grads);
            d_tok = dx;
        }
        block_grads.reverse();

        // tok_in = embed(x) + posenc + broadcast(t_emb)
        let d_temb = d_tok.sum_rows();
        let (d_tact, time_w2_grads) = self.time_w2.backward(&cache.t_act, &d_temb);
        let mut d_tpre = d_tact;
        for (g, &p) in d_tpre.data.iter_mut().zip(&cache.t_pre.data) {
            *g *= super::layers::gelu_deriv(p);
        }
        let (_d_tfeat, time_w1_grads) = self.time_w1.backward(&cache.t_feat, &d_tpre);
        let (_d_x, embed_grads) = self.embed.backward(&cache.x_mat, &d_tok);

        ModelGrads {
            embed: embed_grads,
            time_w1: time_w1_grads,
            time_w2: time_w2_grads,
            blocks: block_grads,
            ln_final: ln_final_grads,
            unembed: unembed_grads,
        }
    }

    pub fn zeros_grads(&self) -> ModelGrads {
        ModelGrads {
            embed: self.embed.zeros_grads(),
            time_w1: self.time_w1.zeros_grads(),
            time_w2: self.time_w2.zeros_grads(),
            blocks: self.blocks.iter().map(|b| b.zeros_grads()).collect(),
            ln_final: self.ln_final.zeros_grads(),
            unembed: self.unembed.zeros_grads(),
        }
    }

    /// Parameter matrices in a fixed order shared with [`ModelGrads`].
    pub fn param_mats(&self) -> Vec<&Mat> {
        collect_mats!(self, mat_ref, iter)
    }

    pub fn param_mats_mut(&mut self) -> Vec<&mut Mat> {
        collect_mats!(self, mat_mut, iter_mut)
    }

    pub fn param_names(&self) -> Vec<String> {
        param_names(self.blocks.len())
    }

    pub fn param_count(&self) -> usize {
        self.param_mats().iter().map(|m| m.len()).sum()
    }
}
