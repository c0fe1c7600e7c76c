//! Closed-form memory and compute models for the uncompressed and
//! compressed pipelines: kv-cache growth rate, horizon footprints,
//! compression ratios, retention percentages, and the prefill FLOP proxy.
//!
//! These model a full transformer stack (`layers` enters here and nowhere
//! else); the in-process pipeline stores a single kv space.

/// Backend parameter bundle. Defaults describe a 7B-class video LLM:
/// 28 layers, 196 tokens/frame, 4 kv heads of width 128, fp16, 0.5 fps,
/// with a 50-token frame budget at 4 bits and a 1800-frame (one hour)
/// horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub layers: u32,
    pub tokens_per_frame: u32,
    pub kv_heads: u32,
    pub head_dim: u32,
    pub dtype_bytes: u32,
    pub frame_rate: f64,
    pub frame_budget: u32,
    pub quant_bits: u32,
    pub horizon_frames: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            layers: 28,
            tokens_per_frame: 196,
            kv_heads: 4,
            head_dim: 128,
            dtype_bytes: 2,
            frame_rate: 0.5,
            frame_budget: 50,
            quant_bits: 4,
            horizon_frames: 1800,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0
            || self.tokens_per_frame == 0
            || self.kv_heads == 0
            || self.head_dim == 0
            || self.dtype_bytes == 0
            || self.frame_budget == 0
        {
            return Err("all cost model counts must be positive".into());
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(format!("frame rate must be positive, got {}", self.frame_rate));
        }
        if self.quant_bits != 2 && self.quant_bits != 4 {
            return Err(format!("quant bits must be 2 or 4, got {}", self.quant_bits));
        }
        if self.frame_budget > self.tokens_per_frame {
            return Err(format!(
                "frame budget {} exceeds tokens per frame {}",
                self.frame_budget, self.tokens_per_frame
            ));
        }
        Ok(())
    }

    /// kv width per token: heads times per-head channels.
    pub fn kv_width(&self) -> u64 {
        self.kv_heads as u64 * self.head_dim as u64
    }

    /// Uncompressed kv-cache growth: `2 * L * N * width * dtype_bytes * fps`
    /// bytes per second (keys and values, every layer, every frame).
    pub fn growth_rate_bytes_per_sec(&self) -> f64 {
        2.0 * self.layers as f64
            * self.tokens_per_frame as f64
            * self.kv_width() as f64
            * self.dtype_bytes as f64
            * self.frame_rate
    }

    /// Uncompressed footprint after `seconds` of streaming.
    pub fn horizon_footprint_bytes(&self, seconds: f64) -> f64 {
        self.growth_rate_bytes_per_sec() * seconds
    }

    /// Footprint after `seconds` with the frame budget and low-bit storage
    /// applied.
    pub fn compressed_horizon_footprint_bytes(&self, seconds: f64) -> f64 {
        self.horizon_footprint_bytes(seconds) / self.compression_ratio()
    }

    /// Combined compression of this model's configuration against its own
    /// full-token, full-precision baseline.
    pub fn compression_ratio(&self) -> f64 {
        compression_ratio(
            self.tokens_per_frame,
            self.frame_budget,
            self.dtype_bytes * 8,
            self.quant_bits,
        )
    }

    /// Seconds covered by the configured horizon.
    pub fn horizon_seconds(&self) -> f64 {
        self.horizon_frames as f64 / self.frame_rate
    }
}

/// `(N / G) * (fp_bits / b)`: token reduction times bit-width reduction.
pub fn compression_ratio(tokens_per_frame: u32, frame_budget: u32, fp_bits: u32, bits: u32) -> f64 {
    (tokens_per_frame as f64 / frame_budget as f64) * (fp_bits as f64 / bits as f64)
}

/// Stored bits as a percentage of the full-token, full-precision baseline,
/// rounded to one decimal: `100 * (G * b) / (N * fp_bits)`.
pub fn retention_percent(frame_budget: u32, bits: u32, tokens_per_frame: u32, fp_bits: u32) -> f64 {
    let raw = 100.0 * (frame_budget as f64 * bits as f64)
        / (tokens_per_frame as f64 * fp_bits as f64);
    round1(raw)
}

/// FLOP-proxy speedup of the pre-model stack: tokens entering it drop from
/// `N` to `G` per frame, so cost scales down by `N / G`. A proxy only;
/// wall-clock prefill speedups on a real model stack come out lower.
pub fn prefill_cost_ratio(tokens_per_frame: u32, frame_budget: u32) -> f64 {
    tokens_per_frame as f64 / frame_budget as f64
}

/// Render bytes as binary gigabytes (2^30), rounded to one decimal.
pub fn binary_gb(bytes: f64) -> f64 {
    round1(bytes / (1u64 << 30) as f64)
}

/// Render bytes as decimal gigabytes (10^9), rounded to one decimal.
pub fn decimal_gb(bytes: f64) -> f64 {
    round1(bytes / 1e9)
}

/// Packed key+value code bytes for one stored group.
pub fn packed_kv_code_bytes(heads: u64, frame_budget: u64, head_dim: u64, bits: u64) -> u64 {
    2 * (heads * frame_budget * head_dim * bits).div_ceil(8)
}

/// Per-group overhead the code-byte ratio ignores: scale/offset pairs for
/// keys and values plus the rep key, all stored as 4-byte reals.
pub fn group_overhead_bytes(heads: u64, head_dim: u64) -> u64 {
    let width = heads * head_dim;
    4 * (4 * width) + 4 * width
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}
