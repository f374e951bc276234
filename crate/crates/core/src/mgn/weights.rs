use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::MgnConfig;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numeric::{matmul, matmul_nt, matmul_tn, Affine, Matrix};

const INIT_STD: f64 = 0.02;
const MAGIC: &[u8; 4] = b"MGNW";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Matrix,
    pub beta: Matrix,
}

impl LayerNormParams {
    fn identity(n: usize) -> Self {
        Self {
            gamma: Matrix::filled(1, n, 1.0),
            beta: Matrix::zeros(1, n),
        }
    }
}

/// Fused `[L → 3L]` query/key/value projection without a key bias.
///
/// A key bias adds the same constant to every logit of a softmax row, so it
/// cancels exactly and would carry an identically zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct QkvProjection {
    pub weight: Matrix,
    pub q_bias: Matrix,
    pub v_bias: Matrix,
}

impl QkvProjection {
    pub fn zeros(embed: usize) -> Self {
        Self {
            weight: Matrix::zeros(embed, 3 * embed),
            q_bias: Matrix::zeros(1, embed),
            v_bias: Matrix::zeros(1, embed),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let l = self.q_bias.cols();
        let mut out = matmul(x, &self.weight)?;
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (o, b) in row[..l].iter_mut().zip(self.q_bias.data()) {
                *o += b;
            }
            for (o, b) in row[2 * l..].iter_mut().zip(self.v_bias.data()) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut QkvProjection) -> Result<Matrix> {
        let l = self.q_bias.cols();
        grad.weight.add_assign(&matmul_tn(x, dy)?)?;
        let sums = dy.sum_rows();
        grad.q_bias.add_assign(&sums.cols_slice(0, l))?;
        grad.v_bias.add_assign(&sums.cols_slice(2 * l, l))?;
        matmul_nt(dy, &self.weight)
    }
}

/// Pre-norm transformer encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub ln1: LayerNormParams,
    pub qkv: QkvProjection,
    pub attn_proj: Affine,
    pub ln2: LayerNormParams,
    pub fc1: Affine,
    pub fc2: Affine,
}

/// Self-attention layer whose cls-query logits become the patch scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringAttention {
    pub ln: LayerNormParams,
    pub qkv: Affine,
    pub attn_proj: Affine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MgnWeights {
    pub config: MgnConfig,
    pub patch_embed: Affine,
    pub cls_token: Matrix,
    pub pos_embed: Matrix,
    pub block: EncoderBlock,
    pub extra_attn: ScoringAttention,
    /// `[N → N]` linear layer over the cls-attention vector.
    pub head: Affine,
}

const TENSOR_NAMES: [&str; 25] = [
    "patch_embed.weight",
    "patch_embed.bias",
    "cls_token",
    "pos_embed",
    "block.ln1.gamma",
    "block.ln1.beta",
    "block.qkv.weight",
    "block.qkv.q_bias",
    "block.qkv.v_bias",
    "block.attn_proj.weight",
    "block.attn_proj.bias",
    "block.ln2.gamma",
    "block.ln2.beta",
    "block.fc1.weight",
    "block.fc1.bias",
    "block.fc2.weight",
    "block.fc2.bias",
    "extra_attn.ln.gamma",
    "extra_attn.ln.beta",
    "extra_attn.qkv.weight",
    "extra_attn.qkv.bias",
    "extra_attn.attn_proj.weight",
    "extra_attn.attn_proj.bias",
    "head.weight",
    "head.bias",
];

impl MgnWeights {
    /// All-zero tensors of the right shapes (LayerNorm included); used for
    /// gradient and optimizer-moment buffers.
    pub fn zeros(config: MgnConfig) -> Self {
        let l = config.embed;
        let n = config.num_patches();
        let ln = || LayerNormParams {
            gamma: Matrix::zeros(1, l),
            beta: Matrix::zeros(1, l),
        };
        Self {
            config,
            patch_embed: Affine::zeros(config.patch_dim(), l),
            cls_token: Matrix::zeros(1, l),
            pos_embed: Matrix::zeros(n + 1, l),
            block: EncoderBlock {
                ln1: ln(),
                qkv: QkvProjection::zeros(l),
                attn_proj: Affine::zeros(l, l),
                ln2: ln(),
                fc1: Affine::zeros(l, config.ffn_dim),
                fc2: Affine::zeros(config.ffn_dim, l),
            },
            extra_attn: ScoringAttention {
                ln: ln(),
                qkv: Affine::zeros(l, 3 * l),
                attn_proj: Affine::zeros(l, l),
            },
            head: Affine::zeros(n, n),
        }
    }

    pub fn tensor_names() -> &'static [&'static str] {
        &TENSOR_NAMES
    }

    /// Tensors in serialization order, matching [`Self::tensor_names`].
    pub fn tensors(&self) -> Vec<&Matrix> {
        let b = &self.block;
        let x = &self.extra_attn;
        vec![
            &self.patch_embed.weight,
            &self.patch_embed.bias,
            &self.cls_token,
            &self.pos_embed,
            &b.ln1.gamma,
            &b.ln1.beta,
            &b.qkv.weight,
            &b.qkv.q_bias,
            &b.qkv.v_bias,
            &b.attn_proj.weight,
            &b.attn_proj.bias,
            &b.ln2.gamma,
            &b.ln2.beta,
            &b.fc1.weight,
            &b.fc1.bias,
            &b.fc2.weight,
            &b.fc2.bias,
            &x.ln.gamma,
            &x.ln.beta,
            &x.qkv.weight,
            &x.qkv.bias,
            &x.attn_proj.weight,
            &x.attn_proj.bias,
            &self.head.weight,
            &self.head.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let b = &mut self.block;
        let x = &mut self.extra_attn;
        vec![
            &mut self.patch_embed.weight,
            &mut self.patch_embed.bias,
            &mut self.cls_token,
            &mut self.pos_embed,
            &mut b.ln1.gamma,
            &mut b.ln1.beta,
            &mut b.qkv.weight,
            &mut b.qkv.q_bias,
            &mut b.qkv.v_bias,
            &mut b.attn_proj.weight,
            &mut b.attn_proj.bias,
            &mut b.ln2.gamma,
            &mut b.ln2.beta,
            &mut b.fc1.weight,
            &mut b.fc1.bias,
            &mut b.fc2.weight,
            &mut b.fc2.bias,
            &mut x.ln.gamma,
            &mut x.ln.beta,
            &mut x.qkv.weight,
            &mut x.qkv.bias,
            &mut x.attn_proj.weight,
            &mut x.attn_proj.bias,
            &mut self.head.weight,
            &mut self.head.bias,
        ]
    }

    /// Rebuilds weights from tensors in serialization order, checking shapes.
    pub fn from_tensors(config: MgnConfig, tensors: Vec<Matrix>) -> Result<Self> {
        let mut out = Self::zeros(config);
        let names = Self::tensor_names();
        if tensors.len() != names.len() {
            return Err(Error::shape(
                "MgnWeights::from_tensors",
                format!("{} tensors", names.len()),
                format!("{} tensors", tensors.len()),
            ));
        }
        for ((slot, t), name) in out.tensors_mut().into_iter().zip(tensors).zip(names) {
            if slot.shape() != t.shape() {
                return Err(Error::shape(
                    "MgnWeights::from_tensors",
                    format!("{name} {}", slot.shape_str()),
                    t.shape_str(),
                ));
            }
            *slot = t;
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Writes the manifest + payload weight file atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut offset = 0usize;
        for (name, t) in Self::tensor_names().iter().zip(self.tensors()) {
            let bytes = t.len() * 8;
            entries.push(TensorEntry {
                name: (*name).to_string(),
                shape: [t.rows(), t.cols()],
                offset,
                bytes,
            });
            offset += bytes;
        }
        let manifest = Manifest {
            format: "mgn-weights".into(),
            version: FORMAT_VERSION,
            config: self.config,
            payload_bytes: offset,
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Loads a weight file and requires its manifest config to equal `expected`.
    pub fn load(path: &Path, expected: &MgnConfig) -> Result<Self> {
        let w = Self::load_any(path)?;
        if &w.config != expected {
            return Err(Error::format(
                path.display().to_string(),
                None,
                format!(
                    "manifest config {:?} does not match expected {:?}",
                    w.config, expected
                ),
            ));
        }
        Ok(w)
    }

    /// Loads a weight file using whatever config its manifest declares.
    pub fn load_any(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn from_bytes(bytes: &[u8], file: &str) -> Result<Self> {
        let err = |offset: usize, msg: String| Error::format(file, Some(offset), msg);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(err(0, "missing MGNW header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(err(4, format!("unsupported version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = 16usize
            .checked_add(mlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| err(8, format!("manifest length {mlen} exceeds file size")))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| err(16 + e.column(), format!("manifest JSON: {e}")))?;
        manifest.config.validate()?;

        let template = Self::zeros(manifest.config);
        let names = Self::tensor_names();
        let expected: Vec<String> = names
            .iter()
            .zip(template.tensors())
            .map(|(n, t)| format!("{n}[{}x{}]", t.rows(), t.cols()))
            .collect();
        let found: Vec<String> = manifest
            .tensors
            .iter()
            .map(|e| format!("{}[{}x{}]", e.name, e.shape[0], e.shape[1]))
            .collect();
        if expected != found {
            return Err(err(
                16,
                format!("tensor manifest mismatch: expected {expected:?}, found {found:?}"),
            ));
        }
        let payload = &bytes[payload_start..];
        if payload.len() != manifest.payload_bytes {
            return Err(err(
                payload_start,
                format!(
                    "payload is {} bytes, manifest declares {}",
                    payload.len(),
                    manifest.payload_bytes
                ),
            ));
        }
        let mut tensors = Vec::with_capacity(names.len());
        for entry in &manifest.tensors {
            let count = entry.shape[0] * entry.shape[1];
            if entry.bytes != count * 8 || entry.offset + entry.bytes > payload.len() {
                return Err(err(
                    payload_start + entry.offset,
                    format!("bad extent for {}", entry.name),
                ));
            }
            let data = payload[entry.offset..entry.offset + entry.bytes]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Matrix::from_vec(entry.shape[0], entry.shape[1], data)?);
        }
        Self::from_tensors(manifest.config, tensors)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: MgnConfig,
    payload_bytes: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
    bytes: usize,
}

fn truncated_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let normal = Normal::new(0.0, INIT_STD).unwrap();
    Matrix::from_fn(rows, cols, |_, _| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            break v;
        }
    })
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let normal = Normal::new(0.0, INIT_STD).unwrap();
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

fn affine(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Affine {
    Affine {
        weight: truncated_normal(rng, input, output),
        bias: Matrix::zeros(1, output),
    }
}

/// Deterministic random initialization.
///
/// Affine weights are drawn from N(0, 0.02²) truncated at ±2σ with zero bias;
/// LayerNorm starts at γ=1, β=0; cls token and positional table are N(0, 0.02²).
pub fn init_weights(config: MgnConfig, seed: u64) -> Result<MgnWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = config.embed;
    let n = config.num_patches();
    let patch_embed = affine(&mut rng, config.patch_dim(), l);
    let cls_token = normal(&mut rng, 1, l);
    let pos_embed = normal(&mut rng, n + 1, l);
    let block = EncoderBlock {
        ln1: LayerNormParams::identity(l),
        qkv: QkvProjection {
            weight: truncated_normal(&mut rng, l, 3 * l),
            q_bias: Matrix::zeros(1, l),
            v_bias: Matrix::zeros(1, l),
        },
        attn_proj: affine(&mut rng, l, l),
        ln2: LayerNormParams::identity(l),
        fc1: affine(&mut rng, l, config.ffn_dim),
        fc2: affine(&mut rng, config.ffn_dim, l),
    };
    let extra_attn = ScoringAttention {
        ln: LayerNormParams::identity(l),
        qkv: affine(&mut rng, l, 3 * l),
        attn_proj: affine(&mut rng, l, l),
    };
    let head = affine(&mut rng, n, n);
    Ok(MgnWeights {
        config,
        patch_embed,
        cls_token,
        pos_embed,
        block,
        extra_attn,
        head,
    })
}

/// Adds N(0, std²) noise to every tensor; used to move tests away from the
/// near-zero regime of the standard init.
pub fn perturb(weights: &mut MgnWeights, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in weights.tensors_mut() {
        for v in t.data_mut() {
            *v += std * (rng.random::<f64>() * 2.0 - 1.0) * 3f64.sqrt();
        }
    }
}
