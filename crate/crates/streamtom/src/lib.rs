//! Streaming token compression with bounded memory.
//!
//! Incoming frames of `N` feature tokens are reduced to a fixed per-frame
//! budget of `G` tokens by a strictly causal two-frame selector ([`ctr`]),
//! projected to key/value tensors, and stored as low-bit quantized groups
//! with full-precision retrieval keys ([`oqm`]). Queries retrieve at most
//! `k` groups by rep-key cosine similarity and dequantize only those, so
//! the active working set stays bounded no matter how long the stream
//! runs.
//!
//! The crate also ships closed-form memory/compute models
//! ([`accounting`]), a synthetic stream generator with brute-force oracles
//! ([`harness`]), and the on-disk stream and snapshot formats
//! ([`stream_file`], [`oqm::snapshot`]).
//!
//! Data-parallel inner loops (per-token similarity, clustering distances,
//! per-channel quantization, retrieval scans) run on rayon when the
//! `parallel` feature is enabled (the default); without it the same code
//! paths run sequentially and produce identical bytes.

pub mod accounting;
pub mod core;
pub mod ctr;
pub mod error;
pub mod harness;
pub mod oqm;
pub(crate) mod par;
pub mod pipeline;
pub mod stream_file;

pub use crate::core::{
    cosine_similarity, validate_frame, FrameTokens, KvGroup, Matrix, RetainedGroup, StreamConfig,
    TokenOrigin,
};
pub use error::{Error, Result};
pub use par::set_worker_threads;
