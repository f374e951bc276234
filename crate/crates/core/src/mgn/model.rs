//! Forward inference and hand-written backpropagation for the MGN.
//!
//! Pipeline per image:
//! patchify → patch embedding → prepend cls token → add positional table →
//! pre-norm encoder block → scoring attention (cls query against patch keys,
//! averaged over heads) → `[N → N]` head → sigmoid.

use serde::{Deserialize, Serialize};

use super::config::MgnConfig;
use super::weights::{EncoderBlock, LayerNormParams, MgnWeights, QkvProjection, ScoringAttention};
use crate::error::{Error, Result};
use crate::numeric::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, matmul, matmul_nt, matmul_tn,
    sigmoid_scalar, softmax_rows, softmax_rows_backward, Affine, LayerNormCache, Matrix,
};

pub const LN_EPS: f64 = 1e-6;
/// Scores are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` inside the loss.
pub const BCE_CLAMP: f64 = 1e-7;

/// Interleaved `[h][w][channel]` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MgnImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl MgnImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "MgnImage::new",
                format!("{height}x{width}x{channels}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Grayscale image from N-bit digital codes, normalized by `max_code`.
    pub fn from_codes(height: usize, width: usize, codes: &[u16], max_code: u16) -> Result<Self> {
        let scale = f64::from(max_code.max(1));
        Self::new(
            height,
            width,
            1,
            codes.iter().map(|&c| f64::from(c) / scale).collect(),
        )
    }

    /// Grayscale image from a row-major analog buffer, box-averaged (integer
    /// factors) or nearest-sampled down/up to `out_h × out_w`.
    pub fn resized_gray(
        src_h: usize,
        src_w: usize,
        values: &[f64],
        out_h: usize,
        out_w: usize,
    ) -> Result<Self> {
        if values.len() != src_h * src_w {
            return Err(Error::shape(
                "MgnImage::resized_gray",
                format!("{src_h}x{src_w}"),
                format!("{}", values.len()),
            ));
        }
        let mut data = Vec::with_capacity(out_h * out_w);
        if src_h.is_multiple_of(out_h) && src_w.is_multiple_of(out_w) {
            let (fy, fx) = (src_h / out_h, src_w / out_w);
            let norm = (fy * fx) as f64;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = 0.0;
                    for y in oy * fy..(oy + 1) * fy {
                        acc += values[y * src_w + ox * fx..y * src_w + (ox + 1) * fx]
                            .iter()
                            .sum::<f64>();
                    }
                    data.push(acc / norm);
                }
            }
        } else {
            for oy in 0..out_h {
                let y = ((oy as f64 + 0.5) * src_h as f64 / out_h as f64) as usize;
                for ox in 0..out_w {
                    let x = ((ox as f64 + 0.5) * src_w as f64 / out_w as f64) as usize;
                    data.push(values[y.min(src_h - 1) * src_w + x.min(src_w - 1)]);
                }
            }
        }
        Self::new(out_h, out_w, 1, data)
    }
}

/// Post-sigmoid importance score per patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGrid {
    pub gh: usize,
    pub gw: usize,
    pub scores: Vec<f64>,
}

impl ScoreGrid {
    pub fn new(gh: usize, gw: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != gh * gw {
            return Err(Error::shape(
                "ScoreGrid::new",
                format!("{gh}x{gw}"),
                format!("{}", scores.len()),
            ));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Range("scores must lie in [0, 1]".into()));
        }
        Ok(Self { gh, gw, scores })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.gw + col]
    }
}

/// Rows are patches in raster order; columns are the patch pixels in raster
/// order with channels interleaved.
pub fn patchify(config: &MgnConfig, image: &MgnImage) -> Result<Matrix> {
    if image.height != config.input_h
        || image.width != config.input_w
        || image.channels != config.channels
    {
        return Err(Error::shape(
            "patchify",
            format!("{}x{}x{}", config.input_h, config.input_w, config.channels),
            format!("{}x{}x{}", image.height, image.width, image.channels),
        ));
    }
    let p = config.patch;
    let ch = config.channels;
    let (gh, gw) = (config.grid_h(), config.grid_w());
    let mut out = Matrix::zeros(gh * gw, config.patch_dim());
    for py in 0..gh {
        for px in 0..gw {
            let row = out.row_mut(py * gw + px);
            let mut k = 0;
            for y in 0..p {
                let start = ((py * p + y) * image.width + px * p) * ch;
                row[k..k + p * ch].copy_from_slice(&image.data[start..start + p * ch]);
                k += p * ch;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(config: &MgnConfig, patches: &Matrix) -> Result<MgnImage> {
    if patches.shape() != (config.num_patches(), config.patch_dim()) {
        return Err(Error::shape(
            "unpatchify",
            format!("{}x{}", config.num_patches(), config.patch_dim()),
            patches.shape_str(),
        ));
    }
    let p = config.patch;
    let ch = config.channels;
    let gw = config.grid_w();
    let mut data = vec![0.0; config.input_h * config.input_w * ch];
    for idx in 0..patches.rows() {
        let (py, px) = (idx / gw, idx % gw);
        let row = patches.row(idx);
        for y in 0..p {
            let start = ((py * p + y) * config.input_w + px * p) * ch;
            data[start..start + p * ch].copy_from_slice(&row[y * p * ch..(y + 1) * p * ch]);
        }
    }
    MgnImage::new(config.input_h, config.input_w, ch, data)
}

fn check_finite(m: &Matrix, layer: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("MGN layer {layer}")))
    }
}

fn layer_norm_params(x: &Matrix, p: &LayerNormParams) -> Result<(Matrix, LayerNormCache)> {
    layer_norm(x, p.gamma.data(), p.beta.data(), LN_EPS)
}

struct HeadSplit {
    q: Matrix,
    k: Matrix,
    v: Matrix,
}

fn split_head(qkv: &Matrix, embed: usize, head: usize, d: usize) -> HeadSplit {
    HeadSplit {
        q: qkv.cols_slice(head * d, d),
        k: qkv.cols_slice(embed + head * d, d),
        v: qkv.cols_slice(2 * embed + head * d, d),
    }
}

/// Attention logits `Q·Kᵀ/√d` for one head.
pub fn scaled_dot_logits(q: &Matrix, k: &Matrix) -> Result<Matrix> {
    let d = q.cols() as f64;
    Ok(matmul_nt(q, k)?.scale(1.0 / d.sqrt()))
}

trait Projection {
    fn project(&self, x: &Matrix) -> Result<Matrix>;
    fn project_backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Self) -> Result<Matrix>;
}

impl Projection for Affine {
    fn project(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x)
    }

    fn project_backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Self) -> Result<Matrix> {
        self.backward(x, dy, grad)
    }
}

impl Projection for QkvProjection {
    fn project(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x)
    }

    fn project_backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Self) -> Result<Matrix> {
        self.backward(x, dy, grad)
    }
}

struct AttentionCache {
    normed: Matrix,
    ln: LayerNormCache,
    qkv: Matrix,
    logits: Vec<Matrix>,
    probs: Vec<Matrix>,
    concat: Matrix,
}

/// LN → QKV → per-head scaled dot-product attention → concat.
fn attention_forward<P: Projection>(
    x: &Matrix,
    ln: &LayerNormParams,
    qkv_layer: &P,
    heads: usize,
    layer: &str,
) -> Result<AttentionCache> {
    let embed = x.cols();
    let d = embed / heads;
    let (normed, ln_cache) = layer_norm_params(x, ln)?;
    let qkv = qkv_layer.project(&normed)?;
    check_finite(&qkv, layer)?;
    let mut logits = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    let mut concat = Matrix::zeros(x.rows(), embed);
    for h in 0..heads {
        let HeadSplit { q, k, v } = split_head(&qkv, embed, h, d);
        let s = scaled_dot_logits(&q, &k)?;
        let p = softmax_rows(&s);
        concat.set_cols(h * d, &matmul(&p, &v)?);
        logits.push(s);
        probs.push(p);
    }
    Ok(AttentionCache {
        normed,
        ln: ln_cache,
        qkv,
        logits,
        probs,
        concat,
    })
}

struct BlockCache {
    attn: AttentionCache,
    ln2_out: Matrix,
    ln2: LayerNormCache,
    fc1_out: Matrix,
    gelu_out: Matrix,
}

fn block_forward(
    block: &EncoderBlock,
    tokens: &Matrix,
    heads: usize,
) -> Result<(Matrix, BlockCache)> {
    let attn = attention_forward(tokens, &block.ln1, &block.qkv, heads, "block.attention")?;
    let residual1 = tokens.add(&block.attn_proj.forward(&attn.concat)?)?;
    let (ln2_out, ln2) = layer_norm_params(&residual1, &block.ln2)?;
    let fc1_out = block.fc1.forward(&ln2_out)?;
    let gelu_out = gelu(&fc1_out);
    let out = residual1.add(&block.fc2.forward(&gelu_out)?)?;
    check_finite(&out, "block.ffn")?;
    Ok((
        out,
        BlockCache {
            attn,
            ln2_out,
            ln2,
            fc1_out,
            gelu_out,
        },
    ))
}

struct Cache {
    patches: Matrix,
    block: BlockCache,
    block_out: Matrix,
    scoring: AttentionCache,
    scoring_values: Matrix,
    cls_attn: Vec<f64>,
    head_logits: Vec<f64>,
    scores: Vec<f64>,
}

/// Everything computed by one forward pass, exposed for inspection.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub scores: ScoreGrid,
    /// Head-averaged cls-query logits over the patch keys.
    pub cls_attn: Vec<f64>,
    /// Pre-sigmoid head output.
    pub head_logits: Vec<f64>,
    pub block_attention: Vec<Matrix>,
    pub scoring_logits: Vec<Matrix>,
    pub scoring_attention: Vec<Matrix>,
    /// Scoring-layer `[Q | K | V]`, `[N+1, 3L]`.
    pub scoring_qkv: Matrix,
    /// Output of the scoring layer's value path; not consumed by the head.
    pub scoring_values: Matrix,
    pub block_output: Matrix,
}

fn forward_cached(w: &MgnWeights, patches: Matrix) -> Result<Cache> {
    let cfg = &w.config;
    let n = cfg.num_patches();
    let heads = cfg.heads;
    if patches.shape() != (n, cfg.patch_dim()) {
        return Err(Error::shape(
            "mgn.forward",
            format!("{}x{}", n, cfg.patch_dim()),
            patches.shape_str(),
        ));
    }
    let embedded = w.patch_embed.forward(&patches)?;
    let mut block_in = Matrix::zeros(n + 1, cfg.embed);
    block_in.row_mut(0).copy_from_slice(w.cls_token.data());
    for i in 0..n {
        block_in.row_mut(i + 1).copy_from_slice(embedded.row(i));
    }
    block_in.add_assign(&w.pos_embed)?;
    check_finite(&block_in, "embedding")?;

    let (block_out, block) = block_forward(&w.block, &block_in, heads)?;
    let scoring = attention_forward(
        &block_out,
        &w.extra_attn.ln,
        &w.extra_attn.qkv,
        heads,
        "extra_attn",
    )?;
    let scoring_values = w.extra_attn.attn_proj.forward(&scoring.concat)?;

    let mut cls_attn = vec![0.0; n];
    for s in &scoring.logits {
        for (acc, &v) in cls_attn.iter_mut().zip(&s.row(0)[1..]) {
            *acc += v;
        }
    }
    for v in &mut cls_attn {
        *v /= heads as f64;
    }
    let head_logits = w.head.forward(&Matrix::row_vector(cls_attn.clone()))?;
    check_finite(&head_logits, "head")?;
    let head_logits = head_logits.into_data();
    let scores = head_logits.iter().map(|&z| sigmoid_scalar(z)).collect();
    Ok(Cache {
        patches,
        block,
        block_out,
        scoring,
        scoring_values,
        cls_attn,
        head_logits,
        scores,
    })
}

/// Runs the network on `image`, returning sigmoid scores and the raw
/// head-averaged cls-attention vector.
pub fn forward(w: &MgnWeights, image: &MgnImage) -> Result<(ScoreGrid, Vec<f64>)> {
    let t = trace(w, image)?;
    Ok((t.scores, t.cls_attn))
}

pub fn trace(w: &MgnWeights, image: &MgnImage) -> Result<ForwardTrace> {
    trace_patches(w, patchify(&w.config, image)?)
}

pub fn trace_patches(w: &MgnWeights, patches: Matrix) -> Result<ForwardTrace> {
    let c = forward_cached(w, patches)?;
    let cfg = &w.config;
    Ok(ForwardTrace {
        scores: ScoreGrid {
            gh: cfg.grid_h(),
            gw: cfg.grid_w(),
            scores: c.scores,
        },
        cls_attn: c.cls_attn,
        head_logits: c.head_logits,
        block_attention: c.block.attn.probs,
        scoring_logits: c.scoring.logits,
        scoring_attention: c.scoring.probs,
        scoring_qkv: c.scoring.qkv,
        scoring_values: c.scoring_values,
        block_output: c.block_out,
    })
}

/// Mean binary cross-entropy with scores clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(scores: &ScoreGrid, labels: &[u8]) -> Result<f64> {
    bce(&scores.scores, labels)
}

pub(crate) fn bce(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::shape(
            "bce_loss",
            format!("{} scores", scores.len()),
            format!("{} labels", labels.len()),
        ));
    }
    let mut total = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        let s = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        total -= match y {
            1 => s.ln(),
            0 => (1.0 - s).ln(),
            other => return Err(Error::Range(format!("label {other} is not binary"))),
        };
    }
    Ok(total / scores.len() as f64)
}

fn attention_backward<P: Projection>(
    cache: &AttentionCache,
    ln: &LayerNormParams,
    qkv_layer: &P,
    d_qkv: Matrix,
    grad_ln: &mut LayerNormParams,
    grad_qkv: &mut P,
) -> Result<Matrix> {
    let d_normed = qkv_layer.project_backward(&cache.normed, &d_qkv, grad_qkv)?;
    let (dx, dg, db) = layer_norm_backward(&cache.ln, ln.gamma.data(), &d_normed)?;
    grad_ln.gamma.add_assign(&Matrix::row_vector(dg))?;
    grad_ln.beta.add_assign(&Matrix::row_vector(db))?;
    Ok(dx)
}

fn block_backward(
    block: &EncoderBlock,
    cache: &BlockCache,
    d_out: Matrix,
    grad: &mut EncoderBlock,
    heads: usize,
) -> Result<Matrix> {
    // FFN branch
    let d_gelu = block.fc2.backward(&cache.gelu_out, &d_out, &mut grad.fc2)?;
    let d_fc1 = gelu_backward(&cache.fc1_out, &d_gelu)?;
    let d_ln2 = block.fc1.backward(&cache.ln2_out, &d_fc1, &mut grad.fc1)?;
    let (d_res_ln, dg, db) = layer_norm_backward(&cache.ln2, block.ln2.gamma.data(), &d_ln2)?;
    grad.ln2.gamma.add_assign(&Matrix::row_vector(dg))?;
    grad.ln2.beta.add_assign(&Matrix::row_vector(db))?;
    let mut d_res1 = d_out;
    d_res1.add_assign(&d_res_ln)?;

    // attention branch
    let attn = &cache.attn;
    let d_concat = block
        .attn_proj
        .backward(&attn.concat, &d_res1, &mut grad.attn_proj)?;
    let embed = d_concat.cols();
    let d = embed / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut d_qkv = Matrix::zeros(attn.qkv.rows(), 3 * embed);
    for h in 0..heads {
        let HeadSplit { q, k, v } = split_head(&attn.qkv, embed, h, d);
        let p = &attn.probs[h];
        let d_o = d_concat.cols_slice(h * d, d);
        let d_p = matmul_nt(&d_o, &v)?;
        let d_v = matmul_tn(p, &d_o)?;
        let d_s = softmax_rows_backward(p, &d_p)?.scale(scale);
        let d_q = matmul(&d_s, &k)?;
        let d_k = matmul_tn(&d_s, &q)?;
        d_qkv.set_cols(h * d, &d_q);
        d_qkv.set_cols(embed + h * d, &d_k);
        d_qkv.set_cols(2 * embed + h * d, &d_v);
    }
    let d_in = attention_backward(
        attn,
        &block.ln1,
        &block.qkv,
        d_qkv,
        &mut grad.ln1,
        &mut grad.qkv,
    )?;
    d_res1.add_assign(&d_in)?;
    Ok(d_res1)
}

/// Gradient of the cls logits w.r.t. the scoring layer's Q/K. Only the cls
/// query row and patch key rows receive gradient; the value path is unused.
fn scoring_backward(
    extra: &ScoringAttention,
    cache: &AttentionCache,
    d_cls_attn: &[f64],
    grad: &mut ScoringAttention,
    heads: usize,
) -> Result<Matrix> {
    let embed = cache.qkv.cols() / 3;
    let d = embed / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let tokens = cache.qkv.rows();
    let mut d_qkv = Matrix::zeros(tokens, 3 * embed);
    for h in 0..heads {
        let q0 = &cache.qkv.row(0)[h * d..(h + 1) * d];
        for (j, &g) in d_cls_attn.iter().enumerate() {
            let g = g * scale / heads as f64;
            if g == 0.0 {
                continue;
            }
            let key_row = j + 1;
            for e in 0..d {
                let k = cache.qkv[(key_row, embed + h * d + e)];
                d_qkv[(0, h * d + e)] += g * k;
                d_qkv[(key_row, embed + h * d + e)] += g * q0[e];
            }
        }
    }
    let dx = attention_backward(
        cache,
        &extra.ln,
        &extra.qkv,
        d_qkv,
        &mut grad.ln,
        &mut grad.qkv,
    )?;
    Ok(dx)
}

/// BCE loss for one patchified image and its gradient with respect to every
/// weight tensor.
pub fn loss_and_grad(w: &MgnWeights, patches: Matrix, labels: &[u8]) -> Result<(f64, MgnWeights)> {
    let cfg = w.config;
    let n = cfg.num_patches();
    let cache = forward_cached(w, patches)?;
    let loss = bce(&cache.scores, labels)?;
    let mut grad = MgnWeights::zeros(cfg);

    // Through the clamp the derivative is zero; elsewhere sigmoid+BCE gives (s − y)/N.
    let d_logits: Vec<f64> = cache
        .scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&s) {
                (s - f64::from(y)) / n as f64
            } else {
                0.0
            }
        })
        .collect();
    let cls_row = Matrix::row_vector(cache.cls_attn.clone());
    let d_cls = w
        .head
        .backward(&cls_row, &Matrix::row_vector(d_logits), &mut grad.head)?;

    let d_block_out = scoring_backward(
        &w.extra_attn,
        &cache.scoring,
        d_cls.data(),
        &mut grad.extra_attn,
        cfg.heads,
    )?;
    let d_block_in = block_backward(
        &w.block,
        &cache.block,
        d_block_out,
        &mut grad.block,
        cfg.heads,
    )?;

    grad.pos_embed.add_assign(&d_block_in)?;
    grad.cls_token.row_mut(0).copy_from_slice(d_block_in.row(0));
    let d_embedded = d_block_in.rows_slice(1, n);
    w.patch_embed
        .backward(&cache.patches, &d_embedded, &mut grad.patch_embed)?;
    Ok((loss, grad))
}

/// BCE loss value only.
pub fn loss(w: &MgnWeights, patches: Matrix, labels: &[u8]) -> Result<f64> {
    let cache = forward_cached(w, patches)?;
    bce(&cache.scores, labels)
}
