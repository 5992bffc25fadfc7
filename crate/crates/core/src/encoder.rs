//! Toy ViT visual encoder with 2D rotary attention and a merge-and-project MLP.
//!
//! Block layout (pre-norm):
//!
//! ```text
//! h = h + Wo · Attn(RoPE(Wq·LN1(h)), RoPE(Wk·LN1(h)), Wv·LN1(h))
//! h = h + W2 · GELU(W1 · LN2(h))
//! ```
//!
//! RoPE is applied per head to queries and keys, using a table of dimension
//! `d_model / n_heads`. The encoder has no final norm. After the stack, every
//! `M×M` cell of tokens is concatenated in raster order and projected by a
//! two-layer MLP to `d_out`.
//!
//! Weights are untrained and drawn from ChaCha20 (see [`init_weights`]), so
//! outputs are reproducible bit-for-bit on any platform.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::image::RgbImage;
use crate::kv::KvFile;
use crate::pack::PackedSequence;
use crate::rope::{rope_matrix, RopeTable};
use crate::saliency::PatchMask;
use crate::{Error, GridPos, Result};

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub channels: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: f64,
    pub merge_size: usize,
    pub d_out: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_size: 14,
            channels: 3,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            mlp_ratio: 2.0,
            merge_size: 2,
            d_out: 32,
            seed: 0,
        }
    }
}

const CONFIG_KEYS: [&str; 9] = [
    "patch_size",
    "channels",
    "d_model",
    "n_layers",
    "n_heads",
    "mlp_ratio",
    "merge_size",
    "d_out",
    "seed",
];

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("patch_size", self.patch_size),
            ("channels", self.channels),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("merge_size", self.merge_size),
            ("d_out", self.d_out),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::validation(format!("{name} must be >= 1")));
            }
        }
        if !self.d_model.is_multiple_of(4) {
            return Err(Error::validation(format!(
                "d_model {} is not divisible by 4",
                self.d_model
            )));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::validation(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.head_dim().is_multiple_of(4) {
            return Err(Error::validation(format!(
                "head dimension {} is not divisible by 4",
                self.head_dim()
            )));
        }
        if !self.mlp_ratio.is_finite() || self.mlp_ratio <= 0.0 {
            return Err(Error::validation(format!("mlp_ratio must be > 0, got {}", self.mlp_ratio)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.d_model as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    pub fn merge_dim(&self) -> usize {
        self.d_model * self.merge_size * self.merge_size
    }

    /// Reads the flat `key = value` form. Every key is required.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        kv.check_keys(&CONFIG_KEYS)?;
        let config = EncoderConfig {
            patch_size: kv.require("patch_size")?,
            channels: kv.require("channels")?,
            d_model: kv.require("d_model")?,
            n_layers: kv.require("n_layers")?,
            n_heads: kv.require("n_heads")?,
            mlp_ratio: kv.require("mlp_ratio")?,
            merge_size: kv.require("merge_size")?,
            d_out: kv.require("d_out")?,
            seed: kv.require("seed")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_kv_text(&self) -> String {
        format!(
            "patch_size = {}\nchannels = {}\nd_model = {}\nn_layers = {}\nn_heads = {}\nmlp_ratio = {}\nmerge_size = {}\nd_out = {}\nseed = {}\n",
            self.patch_size,
            self.channels,
            self.d_model,
            self.n_layers,
            self.n_heads,
            self.mlp_ratio,
            self.merge_size,
            self.d_out,
            self.seed
        )
    }
}

/// `x · weight + bias`, with `weight` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for ((v, g), b) in row.iter_mut().zip(&self.gamma).zip(&self.beta) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub patch_embed: Linear,
    pub blocks: Vec<Block>,
    pub merge_fc1: Linear,
    pub merge_fc2: Linear,
}

/// ChaCha20 keyed by the seed: key bytes `0..8` hold `seed` little-endian,
/// the rest of the key and the nonce are zero.
pub fn weight_rng(seed: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    ChaCha20Rng::from_seed(key)
}

/// Uniform `[0, 1)` from the top 53 bits of one `next_u64`.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn symmetric(rng: &mut impl RngCore, bound: f64) -> f64 {
    (2.0 * unit_f64(rng) - 1.0) * bound
}

fn init_linear(rng: &mut ChaCha20Rng, fan_in: usize, fan_out: usize) -> Linear {
    let bound = 1.0 / (fan_in as f64).sqrt();
    // Row-major draw order: weight[0][0], weight[0][1], ...
    let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || symmetric(rng, bound));
    let bias = Array1::from_shape_simple_fn(fan_out, || symmetric(rng, bound));
    Linear { weight, bias }
}

fn init_norm(rng: &mut ChaCha20Rng, dim: usize) -> LayerNorm {
    let gamma = Array1::from_shape_simple_fn(dim, || 1.0 + symmetric(rng, 0.1));
    let beta = Array1::from_shape_simple_fn(dim, || symmetric(rng, 0.1));
    LayerNorm { gamma, beta }
}

/// Draws every parameter from [`weight_rng`]`(config.seed)`.
///
/// Draw order: patch embedding, then per block `ln1, wq, wk, wv, wo, ln2,
/// fc1, fc2`, then the two merge layers. A linear layer draws its weight
/// row-major, then its bias, uniformly in `±1/√fan_in`. A norm draws
/// `γ = 1 ± 0.1` and then `β = ±0.1`.
pub fn init_weights(config: &EncoderConfig) -> Result<EncoderWeights> {
    config.validate()?;
    let mut rng = weight_rng(config.seed);
    let d = config.d_model;
    let hidden = config.mlp_hidden();
    let patch_embed = init_linear(&mut rng, config.patch_dim(), d);
    let blocks = (0..config.n_layers)
        .map(|_| Block {
            ln1: init_norm(&mut rng, d),
            wq: init_linear(&mut rng, d, d),
            wk: init_linear(&mut rng, d, d),
            wv: init_linear(&mut rng, d, d),
            wo: init_linear(&mut rng, d, d),
            ln2: init_norm(&mut rng, d),
            fc1: init_linear(&mut rng, d, hidden),
            fc2: init_linear(&mut rng, hidden, d),
        })
        .collect();
    let merge_dim = config.merge_dim();
    let merge_fc1 = init_linear(&mut rng, merge_dim, merge_dim);
    let merge_fc2 = init_linear(&mut rng, merge_dim, config.d_out);
    Ok(EncoderWeights {
        patch_embed,
        blocks,
        merge_fc1,
        merge_fc2,
    })
}

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenFeatures {
    pub tokens: Array2<f64>,
    pub positions: Vec<GridPos>,
}

impl TokenFeatures {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedTokens {
    pub tokens: Array2<f64>,
    /// Merge-cell coordinates `(row / M, col / M)`, raster order.
    pub cells: Vec<GridPos>,
}

/// `H×W×C` raster with values in `[0, 1]`.
pub fn rgb_to_array(image: &RgbImage) -> Array3<f64> {
    Array3::from_shape_fn((image.height, image.width, 3), |(y, x, c)| {
        f64::from(image.data[(y * image.width + x) * 3 + c]) / 255.0
    })
}

/// Splits an `H×W×C` raster into `⌊H/p⌋·⌊W/p⌋` rows of length `p²·C`.
///
/// Each row is one patch flattened row-major with channels last. Patches are
/// in raster order and trailing pixels are dropped.
pub fn patchify(image: &Array3<f64>, patch_size: usize) -> Result<Array2<f64>> {
    let (h, w, c) = image.dim();
    if patch_size == 0 || h < patch_size || w < patch_size {
        return Err(Error::shape(format!(
            "{h}x{w} image is smaller than one {patch_size}px patch"
        )));
    }
    let (rows, cols) = (h / patch_size, w / patch_size);
    let mut out = Array2::zeros((rows * cols, patch_size * patch_size * c));
    for r in 0..rows {
        for q in 0..cols {
            let block = image.slice(s![
                r * patch_size..(r + 1) * patch_size,
                q * patch_size..(q + 1) * patch_size,
                ..
            ]);
            // Standard-layout iteration is row-major, channel-last.
            for (dst, v) in out.row_mut(r * cols + q).iter_mut().zip(block.iter()) {
                *dst = *v;
            }
        }
    }
    Ok(out)
}

/// Full raster enumeration of a `rows × cols` grid.
pub fn grid_positions(rows: usize, cols: usize) -> Vec<GridPos> {
    (0..rows * cols).map(|i| GridPos::new(i / cols, i % cols)).collect()
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    weights: EncoderWeights,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let weights = init_weights(&config)?;
        Ok(Encoder { config, weights })
    }

    pub fn from_parts(config: EncoderConfig, weights: EncoderWeights) -> Result<Self> {
        config.validate()?;
        Ok(Encoder { config, weights })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.weights
    }

    /// Rotary table sized for this encoder's heads over a `rows × cols` grid.
    pub fn rope_table(&self, rows: usize, cols: usize) -> Result<RopeTable> {
        RopeTable::build(rows, cols, self.config.head_dim())
    }

    fn check_inputs(&self, patches: &Array2<f64>, rope: &RopeTable) -> Result<()> {
        if patches.ncols() != self.config.patch_dim() {
            return Err(Error::shape(format!(
                "patch rows of width {}, encoder expects {}",
                patches.ncols(),
                self.config.patch_dim()
            )));
        }
        if rope.dim() != self.config.head_dim() {
            return Err(Error::shape(format!(
                "rotary dimension {} != head dimension {}",
                rope.dim(),
                self.config.head_dim()
            )));
        }
        Ok(())
    }

    /// Dense forward over all `rows·cols` patches of the rotary grid.
    pub fn encode_dense(&self, patches: &Array2<f64>, rope: &RopeTable) -> Result<TokenFeatures> {
        self.check_inputs(patches, rope)?;
        let positions = grid_positions(rope.rows(), rope.cols());
        if patches.nrows() != positions.len() {
            return Err(Error::shape(format!(
                "{} patches for a {}x{} rotary grid",
                patches.nrows(),
                rope.rows(),
                rope.cols()
            )));
        }
        let tokens = self.forward(patches, &positions, rope)?;
        Ok(TokenFeatures { tokens, positions })
    }

    /// Forward over retained tokens only. Each token's rotary factors come from
    /// its original coordinate in `packed.kept`.
    pub fn encode_packed(&self, packed: &PackedSequence, rope: &RopeTable) -> Result<TokenFeatures> {
        self.check_inputs(&packed.tokens, rope)?;
        if packed.origin_grid != (rope.rows(), rope.cols()) {
            return Err(Error::shape(format!(
                "packed grid {:?} vs rotary grid {}x{}",
                packed.origin_grid,
                rope.rows(),
                rope.cols()
            )));
        }
        if packed.tokens.nrows() != packed.kept.len() {
            return Err(Error::shape("packed tokens and positions differ in length"));
        }
        let tokens = self.forward(&packed.tokens, &packed.kept, rope)?;
        Ok(TokenFeatures {
            tokens,
            positions: packed.kept.clone(),
        })
    }

    /// Embedding and transformer stack over an arbitrary token subset.
    ///
    /// Exposed so that callers can feed deliberately wrong positions, e.g. a
    /// naive re-enumeration of the packed tokens.
    pub fn forward(
        &self,
        patches: &Array2<f64>,
        positions: &[GridPos],
        rope: &RopeTable,
    ) -> Result<Array2<f64>> {
        if patches.nrows() != positions.len() {
            return Err(Error::shape("patches and positions differ in length"));
        }
        let mut h = self.weights.patch_embed.forward(patches);
        for block in &self.weights.blocks {
            let a = block.ln1.forward(&h);
            let mut q = block.wq.forward(&a);
            let mut k = block.wk.forward(&a);
            let v = block.wv.forward(&a);
            self.rotate_heads(&mut q, positions, rope)?;
            self.rotate_heads(&mut k, positions, rope)?;
            let mixed = self.attention(&q, &k, &v);
            h = h + block.wo.forward(&mixed);
            h = h.clone() + self.mlp(block, &h);
        }
        Ok(h)
    }

    fn mlp(&self, block: &Block, h: &Array2<f64>) -> Array2<f64> {
        let m = block.ln2.forward(h);
        let hidden = block.fc1.forward(&m).mapv(gelu);
        block.fc2.forward(&hidden)
    }

    fn rotate_heads(&self, x: &mut Array2<f64>, positions: &[GridPos], rope: &RopeTable) -> Result<()> {
        let hd = self.config.head_dim();
        for (mut row, &pos) in x.rows_mut().into_iter().zip(positions) {
            let row = row
                .as_slice_mut()
                .ok_or_else(|| Error::shape("non-contiguous activation row"))?;
            for head in row.chunks_exact_mut(hd) {
                rope.rotate_in_place(pos, head)?;
            }
        }
        Ok(())
    }

    /// Full softmax attention among the given tokens, per head.
    fn attention(&self, q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
        let n = q.nrows();
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = Array2::zeros((n, self.config.d_model));
        let mut logits = vec![0.0; n];
        for head in 0..self.config.n_heads {
            let cols = head * hd..(head + 1) * hd;
            for r in 0..n {
                let qr = q.slice(s![r, cols.clone()]);
                let mut max = f64::NEG_INFINITY;
                for (s, logit) in logits.iter_mut().enumerate() {
                    *logit = qr.dot(&k.slice(s![s, cols.clone()])) * scale;
                    max = max.max(*logit);
                }
                let mut denom = 0.0;
                for logit in logits.iter_mut() {
                    *logit = (*logit - max).exp();
                    denom += *logit;
                }
                let mut dst = out.slice_mut(s![r, cols.clone()]);
                for (s, w) in logits.iter().enumerate() {
                    dst.scaled_add(w / denom, &v.slice(s![s, cols.clone()]));
                }
            }
        }
        out
    }

    /// Brute-force reference for packed inference.
    ///
    /// Runs all `N` tokens, with logits from any query to a dropped key set to
    /// `−∞`. Rotations use the dense [`rope_matrix`] at each token's raster
    /// coordinate. Only retained rows are returned, in raster order.
    pub fn encode_masked_dense_oracle(
        &self,
        patches: &Array2<f64>,
        rope: &RopeTable,
        mask: &PatchMask,
    ) -> Result<TokenFeatures> {
        self.check_inputs(patches, rope)?;
        let (rows, cols) = (rope.rows(), rope.cols());
        if (mask.rows, mask.cols) != (rows, cols) || patches.nrows() != rows * cols {
            return Err(Error::shape(format!(
                "oracle inputs disagree: {} patches, {}x{} mask, {rows}x{cols} rotary grid",
                patches.nrows(),
                mask.rows,
                mask.cols
            )));
        }
        let keep: Vec<usize> = mask.retained_indices().collect();
        let d = self.config.d_model;
        if keep.is_empty() {
            return Ok(TokenFeatures {
                tokens: Array2::zeros((0, d)),
                positions: Vec::new(),
            });
        }
        let n = patches.nrows();
        let hd = self.config.head_dim();
        let rotations: Vec<Array2<f64>> = (0..n)
            .map(|idx| rope_matrix(idx / cols, idx % cols, hd))
            .collect::<Result<_>>()?;
        let key_allowed = mask.bits();

        let mut h = self.weights.patch_embed.forward(patches);
        for block in &self.weights.blocks {
            let a = block.ln1.forward(&h);
            let q = block.wq.forward(&a);
            let k = block.wk.forward(&a);
            let v = block.wv.forward(&a);
            let mut mixed = Array2::zeros((n, d));
            for head in 0..self.config.n_heads {
                let cols = head * hd..(head + 1) * hd;
                let rotate = |x: &Array2<f64>| {
                    let mut out = Array2::zeros((n, hd));
                    for (idx, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                        row.assign(&rotations[idx].dot(&x.slice(s![idx, cols.clone()])));
                    }
                    out
                };
                let qh = rotate(&q);
                let kh = rotate(&k);
                let mut logits = qh.dot(&kh.t()) / (hd as f64).sqrt();
                for mut row in logits.rows_mut() {
                    for (l, &allowed) in row.iter_mut().zip(key_allowed) {
                        if !allowed {
                            *l = f64::NEG_INFINITY;
                        }
                    }
                    softmax_in_place(row.as_slice_mut().expect("owned row"));
                }
                mixed
                    .slice_mut(s![.., cols.clone()])
                    .assign(&logits.dot(&v.slice(s![.., cols])));
            }
            h = h + block.wo.forward(&mixed);
            h = h.clone() + self.mlp(block, &h);
        }
        let tokens = h.select(Axis(0), &keep);
        let positions = keep.iter().map(|&i| GridPos::new(i / cols, i % cols)).collect();
        Ok(TokenFeatures { tokens, positions })
    }

    /// Concatenates each complete `M×M` cell of features (members in raster
    /// order) and projects it with the merge MLP.
    pub fn merge_project(&self, features: &TokenFeatures) -> Result<ProjectedTokens> {
        let m = self.config.merge_size;
        let d = self.config.d_model;
        if features.tokens.nrows() != features.positions.len() || features.tokens.ncols() != d {
            return Err(Error::shape("features do not match encoder width"));
        }
        let mut cells: BTreeMap<GridPos, Vec<Option<usize>>> = BTreeMap::new();
        for (idx, pos) in features.positions.iter().enumerate() {
            let cell = GridPos::new(pos.row / m, pos.col / m);
            let slot = (pos.row % m) * m + pos.col % m;
            let members = cells.entry(cell).or_insert_with(|| vec![None; m * m]);
            if members[slot].replace(idx).is_some() {
                return Err(Error::validation(format!(
                    "duplicate feature at ({}, {})",
                    pos.row, pos.col
                )));
            }
        }
        let mut input = Array2::zeros((cells.len(), d * m * m));
        for (row, (cell, members)) in cells.iter().enumerate() {
            for (slot, member) in members.iter().enumerate() {
                let idx = member.ok_or_else(|| {
                    Error::validation(format!(
                        "merge cell ({}, {}) is incomplete; masks must keep whole {m}x{m} cells",
                        cell.row, cell.col
                    ))
                })?;
                input
                    .slice_mut(s![row, slot * d..(slot + 1) * d])
                    .assign(&features.tokens.row(idx));
            }
        }
        let hidden = self.weights.merge_fc1.forward(&input).mapv(gelu);
        let tokens = self.weights.merge_fc2.forward(&hidden);
        Ok(ProjectedTokens {
            tokens,
            cells: cells.into_keys().collect(),
        })
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        denom += *v;
    }
    for v in row.iter_mut() {
        *v /= denom;
    }
}

/// Largest relative element error, `|a − b| / max(|b|, floor)`.
pub fn max_relative_error(a: &Array2<f64>, b: &Array2<f64>, floor: f64) -> f64 {
    assert_eq!(a.dim(), b.dim(), "shape mismatch in comparison");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}
