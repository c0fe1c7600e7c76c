//! The two-stage composition: per-frame reduction feeds a seeded linear kv
//! projection, whose output is quantized and appended to the memory store;
//! per-query retrieval assembles the bounded active kv.
//!
//! The projector stands in for a model's kv projections so every structural
//! property is testable without inference; it is deterministic from its
//! seed by construction. Only reduced groups ever reach the store — the
//! types make it impossible to append raw frames.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core::{FrameTokens, KvGroup, Matrix, RetainedGroup, StreamConfig};
use crate::ctr::{self, CtrState};
use crate::error::{Error, Result};
use crate::oqm::{dequantize_group, ActiveKv, MemoryStore, PrefixKv};
use crate::par;

/// Deterministic linear maps from token features to per-head keys and
/// values.
///
/// Weights are generated from raw seeded integer output (no float
/// distributions), so the same seed yields bit-identical projections on
/// every platform.
#[derive(Debug, Clone)]
pub struct KvProjector {
    seed: u64,
    feature_dim: usize,
    heads: usize,
    head_dim: usize,
    // row-major (heads * head_dim) x feature_dim
    key_weights: Vec<f32>,
    value_weights: Vec<f32>,
}

impl KvProjector {
    pub fn new(seed: u64, feature_dim: usize, heads: usize, head_dim: usize) -> Self {
        let rows = heads * head_dim;
        let count = rows * feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (feature_dim as f32).sqrt();
        let mut draw = |n: usize| -> Vec<f32> {
            (0..n)
                .map(|_| {
                    // top 24 bits -> [0, 1) exactly, then center and scale
                    let unit = (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32;
                    (2.0 * unit - 1.0) * scale
                })
                .collect()
        };
        let key_weights = draw(count);
        let value_weights = draw(count);
        Self {
            seed,
            feature_dim,
            heads,
            head_dim,
            key_weights,
            value_weights,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Project a retained group's tokens to kv tensors.
    pub fn project(&self, tokens: &Matrix, frame_index: u64) -> Result<KvGroup> {
        if tokens.cols() != self.feature_dim {
            return Err(Error::ShapeMismatch {
                what: "projector input width",
                expected: self.feature_dim,
                got: tokens.cols(),
            });
        }
        let group = tokens.rows();
        let width = self.heads * self.head_dim;
        let apply = |weights: &[f32]| -> Vec<f32> {
            let per_out: Vec<Vec<f32>> = par::map_range(width, |row| {
                let w = &weights[row * self.feature_dim..(row + 1) * self.feature_dim];
                (0..group)
                    .map(|j| {
                        let mut acc = 0.0f64;
                        for (x, y) in tokens.row(j).iter().zip(w.iter()) {
                            acc += *x as f64 * *y as f64;
                        }
                        acc as f32
                    })
                    .collect()
            });
            // reorder (row-of-width, token) -> [head][token][channel]
            let mut out = vec![0.0f32; width * group];
            for (row, col) in per_out.iter().enumerate() {
                let (h, c) = (row / self.head_dim, row % self.head_dim);
                for (j, v) in col.iter().enumerate() {
                    out[(h * group + j) * self.head_dim + c] = *v;
                }
            }
            out
        };
        KvGroup::new(
            frame_index,
            self.heads,
            group,
            self.head_dim,
            apply(&self.key_weights),
            apply(&self.value_weights),
        )
    }

    /// Deterministic full-precision prefix kv (system/instruction tokens)
    /// derived from this projector's seed.
    pub fn synthesize_prefix(&self, tokens: usize) -> PrefixKv {
        let count = self.heads * tokens * self.head_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(0x5157_u64));
        let mut draw = |n: usize| -> Vec<f32> {
            (0..n)
                .map(|_| {
                    let unit = (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32;
                    2.0 * unit - 1.0
                })
                .collect()
        };
        let keys = draw(count);
        let values = draw(count);
        PrefixKv::new(self.heads, self.head_dim, tokens, keys, values)
            .expect("constructed with matching shape")
    }
}

/// Per-frame ingest report.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameReport {
    pub frame_index: u64,
    pub static_count: usize,
    pub dynamic_count: usize,
    pub static_budget: usize,
    pub dynamic_budget: usize,
    pub bytes_appended: u64,
    /// Max elementwise error between the appended group and its
    /// reconstruction.
    pub roundtrip_max_err: f32,
}

/// Per-query report.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryReport {
    /// Retrieved group indices, best match first.
    pub retrieved: Vec<usize>,
    pub active_retained_tokens: usize,
    pub active_total_tokens: usize,
    pub dequantized_bytes: u64,
}

/// Streaming state: reduction carry-over, the quantized store, and the
/// frame counter (always equal to the number of stored groups).
#[derive(Debug)]
pub struct Pipeline {
    config: StreamConfig,
    ctr_state: CtrState,
    store: MemoryStore,
    frames_ingested: u64,
}

impl Pipeline {
    pub fn new(config: StreamConfig, prefix: Option<PrefixKv>) -> Result<Self> {
        config.validate()?;
        let store = MemoryStore::new(
            config.kv_heads,
            config.frame_budget,
            config.head_dim,
            config.quant_bits,
            prefix,
        )?;
        Ok(Self {
            config,
            ctr_state: CtrState::new(),
            store,
            frames_ingested: 0,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn frames_ingested(&self) -> u64 {
        self.frames_ingested
    }

    /// Reduce, project, quantize, append. Frames must arrive in stream
    /// order; the outcome depends only on the stream prefix, the config,
    /// and the projector seed.
    pub fn ingest_frame(&mut self, frame: &FrameTokens, projector: &KvProjector) -> Result<FrameReport> {
        if projector.feature_dim() != self.config.feature_dim
            || projector.heads() != self.config.kv_heads
            || projector.head_dim() != self.config.head_dim
        {
            return Err(Error::ShapeMismatch {
                what: "projector geometry",
                expected: self.config.feature_dim * self.config.kv_width(),
                got: projector.feature_dim() * projector.heads() * projector.head_dim(),
            });
        }
        // validate before taking the state so a rejected frame leaves the
        // stream position untouched
        crate::core::validate_frame(frame, &self.config)?;
        let state = std::mem::take(&mut self.ctr_state);
        let (group, next_state, stats) = ctr::reduce_frame_with_stats(frame, state, &self.config)?;
        self.ctr_state = next_state;
        let kv = self.project_group(&group, projector)?;
        let bytes_appended = self.store.append(&kv)?;
        let stored = self.store.groups().last().expect("just appended");
        let reconstructed = dequantize_group(stored)?;
        let mut roundtrip_max_err = 0.0f32;
        for (a, b) in kv.keys().iter().zip(reconstructed.keys()) {
            roundtrip_max_err = roundtrip_max_err.max((a - b).abs());
        }
        for (a, b) in kv.values().iter().zip(reconstructed.values()) {
            roundtrip_max_err = roundtrip_max_err.max((a - b).abs());
        }
        self.frames_ingested += 1;
        debug_assert_eq!(self.frames_ingested as usize, self.store.len());
        Ok(FrameReport {
            frame_index: frame.frame_index,
            static_count: stats.static_count,
            dynamic_count: stats.dynamic_count,
            static_budget: stats.static_budget,
            dynamic_budget: stats.dynamic_budget,
            bytes_appended,
            roundtrip_max_err,
        })
    }

    fn project_group(&self, group: &RetainedGroup, projector: &KvProjector) -> Result<KvGroup> {
        projector.project(&group.tokens, group.frame_index)
    }

    /// Ingest a batch of frames in order. Batching is a driver convenience;
    /// stored bytes are identical for any batch split.
    pub fn ingest_frames(
        &mut self,
        frames: &[FrameTokens],
        projector: &KvProjector,
    ) -> Result<Vec<FrameReport>> {
        frames
            .iter()
            .map(|f| self.ingest_frame(f, projector))
            .collect()
    }

    /// Retrieve the configured top-k groups for `query` and dequantize only
    /// those.
    pub fn answer_query(&self, query: &[f32]) -> Result<(ActiveKv<'_>, QueryReport)> {
        let retrieved = self.store.retrieve(query, self.config.retrieval_top_k)?;
        let active = self.store.assemble_active(&retrieved)?;
        let dequantized_bytes = active
            .groups
            .iter()
            .map(|g| 4 * (g.keys().len() + g.values().len()) as u64)
            .sum();
        let report = QueryReport {
            retrieved: retrieved.clone(),
            active_retained_tokens: active.retained_tokens(),
            active_total_tokens: active.total_tokens(),
            dequantized_bytes,
        };
        Ok((active, report))
    }
}
