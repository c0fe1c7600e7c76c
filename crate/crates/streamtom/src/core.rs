//! Domain types, configuration, and the numeric primitives shared by the
//! rest of the crate.
//!
//! Everything here is an immutable value object: safe to share across
//! threads, cheap to clone, validated once by [`validate_frame`] (the single
//! validation authority for incoming frames).

use crate::error::{Error, Result};

/// Norms below this are treated as degenerate; cosine similarity returns 0,
/// so an all-zero token is never classified as unchanged content.
pub const DEGENERATE_NORM_EPS: f64 = 1e-12;

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                what: "matrix data length",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    what: "matrix row length",
                    expected: cols,
                    got: rows[i].len(),
                });
            }
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Stream-wide configuration: frame geometry, kv geometry, and the
/// compression knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    /// Tokens produced per frame before reduction (`N`).
    pub tokens_per_frame: usize,
    /// Width of each token feature vector.
    pub feature_dim: usize,
    /// Number of kv heads.
    pub kv_heads: usize,
    /// Per-head kv channel width.
    pub head_dim: usize,
    /// Frames per second of the source stream.
    pub frame_rate: f32,
    /// Cosine threshold separating unchanged from new content; strict
    /// `similarity > threshold` marks a token static.
    pub similarity_threshold: f32,
    /// Retained tokens per frame (`G`), the fixed group size.
    pub frame_budget: usize,
    /// Groups retrieved per query (`k`).
    pub retrieval_top_k: usize,
    /// Upper bound on active retained tokens per query (`k * G` must fit).
    pub total_token_budget: usize,
    /// Stored code width in bits, 2 or 4.
    pub quant_bits: u8,
    /// Bytes per full-precision scalar in the modeled backend (2 = fp16).
    pub dtype_bytes: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            tokens_per_frame: 196,
            feature_dim: 64,
            kv_heads: 4,
            head_dim: 128,
            frame_rate: 0.5,
            similarity_threshold: 0.9,
            frame_budget: 50,
            retrieval_top_k: 240,
            total_token_budget: 12_000,
            quant_bits: 4,
            dtype_bytes: 2,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidConfig(msg));
        if self.tokens_per_frame == 0 {
            return err("tokens_per_frame must be positive".into());
        }
        if self.feature_dim == 0 {
            return err("feature_dim must be positive".into());
        }
        if self.kv_heads == 0 || self.head_dim == 0 {
            return err("kv_heads and head_dim must be positive".into());
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return err(format!("frame_rate must be positive, got {}", self.frame_rate));
        }
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return err(format!(
                "similarity_threshold must lie in [0, 1], got {}",
                self.similarity_threshold
            ));
        }
        if self.frame_budget == 0 || self.frame_budget > self.tokens_per_frame {
            return err(format!(
                "frame_budget must satisfy 1 <= {} <= tokens_per_frame {}",
                self.frame_budget, self.tokens_per_frame
            ));
        }
        if self.retrieval_top_k == 0 {
            return err("retrieval_top_k must be positive".into());
        }
        if self.retrieval_top_k * self.frame_budget > self.total_token_budget {
            return err(format!(
                "retrieval_top_k * frame_budget = {} exceeds total_token_budget {}",
                self.retrieval_top_k * self.frame_budget,
                self.total_token_budget
            ));
        }
        if self.quant_bits != 2 && self.quant_bits != 4 {
            return err(format!("quant_bits must be 2 or 4, got {}", self.quant_bits));
        }
        if self.dtype_bytes == 0 {
            return err("dtype_bytes must be positive".into());
        }
        Ok(())
    }

    /// Flattened kv width per token (`kv_heads * head_dim`).
    pub fn kv_width(&self) -> usize {
        self.kv_heads * self.head_dim
    }
}

/// One frame's tokens: an `N x d` feature matrix plus per-token saliency
/// in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTokens {
    pub frame_index: u64,
    pub features: Matrix,
    pub saliency: Vec<f32>,
}

impl FrameTokens {
    pub fn new(frame_index: u64, features: Matrix, saliency: Vec<f32>) -> Self {
        Self {
            frame_index,
            features,
            saliency,
        }
    }
}

/// Where a retained token came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenOrigin {
    /// Arithmetic mean of these source token indices (a static cluster).
    MergedStatic(Vec<usize>),
    /// Copied verbatim from this source token index (a dynamic pick).
    SelectedDynamic(usize),
}

/// Exactly `frame_budget` tokens surviving reduction for one frame,
/// dynamic picks first (ascending source index), then merged static
/// clusters (ascending center index).
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedGroup {
    pub frame_index: u64,
    pub tokens: Matrix,
    pub origins: Vec<TokenOrigin>,
}

/// Key/value tensors for one stored group, laid out `[head][token][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KvGroup {
    frame_index: u64,
    heads: usize,
    tokens: usize,
    head_dim: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
}

impl KvGroup {
    pub fn new(
        frame_index: u64,
        heads: usize,
        tokens: usize,
        head_dim: usize,
        keys: Vec<f32>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let expected = heads * tokens * head_dim;
        if keys.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "kv group keys length",
                expected,
                got: keys.len(),
            });
        }
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "kv group values length",
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            frame_index,
            heads,
            tokens,
            head_dim,
            keys,
            values,
        })
    }

    #[inline]
    fn idx(&self, head: usize, token: usize, channel: usize) -> usize {
        (head * self.tokens + token) * self.head_dim + channel
    }

    #[inline]
    pub fn key(&self, head: usize, token: usize, channel: usize) -> f32 {
        self.keys[self.idx(head, token, channel)]
    }

    #[inline]
    pub fn value(&self, head: usize, token: usize, channel: usize) -> f32 {
        self.values[self.idx(head, token, channel)]
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Cosine similarity, clamped to `[-1, 1]` against rounding.
///
/// Accumulates in f64 with a fixed left-to-right order so results are
/// identical between the parallel and sequential builds. If either norm is
/// degenerate (< 1e-12) the result is 0: absent content reads as maximally
/// dissimilar and is therefore never classified static.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut norm_a = 0.0f64;
    let mut norm_b = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let x = *x as f64;
        let y = *y as f64;
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    let norm_a = norm_a.sqrt();
    let norm_b = norm_b.sqrt();
    if norm_a < DEGENERATE_NORM_EPS || norm_b < DEGENERATE_NORM_EPS {
        return 0.0;
    }
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0) as f32
}

/// Check a frame against the configured geometry: exact `N x d` features,
/// `N` saliency entries in `[0, 1]`, no non-finite values.
///
/// Every module accepts exactly the frames this function accepts.
pub fn validate_frame(frame: &FrameTokens, cfg: &StreamConfig) -> Result<()> {
    if frame.features.rows() != cfg.tokens_per_frame {
        return Err(Error::ShapeMismatch {
            what: "frame feature rows",
            expected: cfg.tokens_per_frame,
            got: frame.features.rows(),
        });
    }
    if frame.features.cols() != cfg.feature_dim {
        return Err(Error::ShapeMismatch {
            what: "frame feature cols",
            expected: cfg.feature_dim,
            got: frame.features.cols(),
        });
    }
    if frame.saliency.len() != cfg.tokens_per_frame {
        return Err(Error::ShapeMismatch {
            what: "frame saliency length",
            expected: cfg.tokens_per_frame,
            got: frame.saliency.len(),
        });
    }
    for i in 0..frame.features.rows() {
        for (j, v) in frame.features.row(i).iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    what: "frame features",
                    row: i,
                    col: j,
                });
            }
        }
    }
    for (i, &s) in frame.saliency.iter().enumerate() {
        if !(s.is_finite() && (0.0..=1.0).contains(&s)) {
            return Err(Error::SaliencyOutOfRange { index: i, value: s });
        }
    }
    Ok(())
}
