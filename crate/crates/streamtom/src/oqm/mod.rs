//! Online quantized memory: group-aligned low-bit quantization, packed
//! append-only storage, representative-key retrieval, and bounded
//! active-kv reconstruction.
//!
//! Each incoming kv group is quantized independently per (head, channel):
//! offset = channel minimum over the group's tokens, scale = range divided
//! by `2^bits - 1`, codes rounded half-away-from-zero and clamped. A
//! full-precision representative key (per-head token mean of the
//! pre-quantization keys, heads concatenated) is stored next to the codes
//! so retrieval never touches packed data. Groups are immutable once
//! appended; a query retrieves the top-k groups by rep-key cosine and
//! dequantizes only those, so the active set stays at `k * G` retained
//! tokens regardless of stream length.

pub mod pack;
pub mod snapshot;

use crate::core::{cosine_similarity, KvGroup};
use crate::error::{Error, Result};
use crate::par;

/// Per-(head, channel) scale and offset for one stored tensor, laid out
/// `[head][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantParams {
    pub scales: Vec<f32>,
    pub offsets: Vec<f32>,
    pub bits: u8,
}

/// One quantized group: packed key/value codes, their parameters, and the
/// full-precision representative key.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGroup {
    pub frame_index: u64,
    heads: usize,
    tokens: usize,
    head_dim: usize,
    pub key_codes: Vec<u8>,
    pub value_codes: Vec<u8>,
    pub key_params: QuantParams,
    pub value_params: QuantParams,
    /// Per-head token mean of the pre-quantization keys, heads concatenated
    /// to length `heads * head_dim`. Never recomputed from reconstructed
    /// values.
    pub rep_key: Vec<f32>,
}

impl QuantizedGroup {
    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Bytes this group contributes to the store ledger: packed codes,
    /// quantization parameters, and the rep key (4 bytes per stored real).
    pub fn ledger_bytes(&self) -> u64 {
        let params = self.key_params.scales.len()
            + self.key_params.offsets.len()
            + self.value_params.scales.len()
            + self.value_params.offsets.len();
        (self.key_codes.len() + self.value_codes.len() + 4 * params + 4 * self.rep_key.len()) as u64
    }
}

/// Full-precision system prefix (instructions/task tokens), laid out like a
/// kv group with an arbitrary token count.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixKv {
    heads: usize,
    head_dim: usize,
    tokens: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
}

impl PrefixKv {
    pub fn new(
        heads: usize,
        head_dim: usize,
        tokens: usize,
        keys: Vec<f32>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let expected = heads * tokens * head_dim;
        if keys.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "prefix keys length",
                expected,
                got: keys.len(),
            });
        }
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "prefix values length",
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            heads,
            head_dim,
            tokens,
            keys,
            values,
        })
    }

    pub fn empty(heads: usize, head_dim: usize) -> Self {
        Self {
            heads,
            head_dim,
            tokens: 0,
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Full-precision footprint at 4 bytes per stored real.
    pub fn ledger_bytes(&self) -> u64 {
        4 * (self.keys.len() + self.values.len()) as u64
    }
}

/// Append-only quantized memory plus the full-precision system prefix.
///
/// One exclusive appender at a time (`&mut self`); any number of readers
/// may retrieve and assemble between appends. Groups are never mutated
/// after append.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    heads: usize,
    frame_budget: usize,
    head_dim: usize,
    bits: u8,
    prefix: PrefixKv,
    groups: Vec<QuantizedGroup>,
    ledger_bytes: u64,
}

impl MemoryStore {
    pub fn new(
        heads: usize,
        frame_budget: usize,
        head_dim: usize,
        bits: u8,
        prefix: Option<PrefixKv>,
    ) -> Result<Self> {
        if bits != 2 && bits != 4 {
            return Err(Error::InvalidConfig(format!(
                "quant bits must be 2 or 4, got {bits}"
            )));
        }
        if heads == 0 || frame_budget == 0 || head_dim == 0 {
            return Err(Error::InvalidConfig(
                "store dimensions must be positive".into(),
            ));
        }
        let prefix = prefix.unwrap_or_else(|| PrefixKv::empty(heads, head_dim));
        if prefix.heads != heads || prefix.head_dim != head_dim {
            return Err(Error::ShapeMismatch {
                what: "prefix head geometry",
                expected: heads * head_dim,
                got: prefix.heads * prefix.head_dim,
            });
        }
        let ledger_bytes = prefix.ledger_bytes();
        Ok(Self {
            heads,
            frame_budget,
            head_dim,
            bits,
            prefix,
            groups: Vec::new(),
            ledger_bytes,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn frame_budget(&self) -> usize {
        self.frame_budget
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn prefix(&self) -> &PrefixKv {
        &self.prefix
    }

    pub fn groups(&self) -> &[QuantizedGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Running byte total: packed codes + parameters + rep keys + prefix.
    pub fn ledger_bytes(&self) -> u64 {
        self.ledger_bytes
    }

    /// Quantize and append one group; returns the bytes added to the ledger.
    pub fn append(&mut self, kv: &KvGroup) -> Result<u64> {
        if kv.heads() != self.heads || kv.head_dim() != self.head_dim {
            return Err(Error::ShapeMismatch {
                what: "kv group head geometry",
                expected: self.heads * self.head_dim,
                got: kv.heads() * kv.head_dim(),
            });
        }
        if kv.tokens() != self.frame_budget {
            return Err(Error::ShapeMismatch {
                what: "kv group token count",
                expected: self.frame_budget,
                got: kv.tokens(),
            });
        }
        let group = quantize_group(kv, self.bits)?;
        let added = group.ledger_bytes();
        self.groups.push(group);
        self.ledger_bytes += added;
        Ok(added)
    }

    /// Indices of the `min(k, len)` groups with the highest rep-key cosine
    /// similarity to `query`, best first. Ties go to the earlier frame.
    /// Similarity is computed in full precision against stored rep keys
    /// only; nothing is dequantized.
    pub fn retrieve(&self, query: &[f32], k: usize) -> Result<Vec<usize>> {
        if self.groups.is_empty() {
            return Err(Error::EmptyStore);
        }
        let width = self.heads * self.head_dim;
        if query.len() != width {
            return Err(Error::ShapeMismatch {
                what: "query length",
                expected: width,
                got: query.len(),
            });
        }
        if let Some(col) = query.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                what: "query",
                row: 0,
                col,
            });
        }
        let sims: Vec<f32> = par::map_range(self.groups.len(), |i| {
            cosine_similarity(query, &self.groups[i].rep_key)
        });
        let mut ranked: Vec<usize> = (0..self.groups.len()).collect();
        ranked.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
        ranked.truncate(k.min(self.groups.len()));
        Ok(ranked)
    }

    /// Dequantize exactly the selected groups, in frame order, alongside the
    /// full-precision prefix.
    pub fn assemble_active(&self, selected: &[usize]) -> Result<ActiveKv<'_>> {
        for &i in selected {
            if i >= self.groups.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.groups.len(),
                });
            }
        }
        let mut order = selected.to_vec();
        order.sort_unstable();
        order.dedup();
        let groups = par::map_range(order.len(), |i| dequantize_group(&self.groups[order[i]]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(ActiveKv {
            prefix: &self.prefix,
            groups,
        })
    }
}

/// The bounded working set for one query: the system prefix plus at most
/// `k` dequantized groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveKv<'a> {
    pub prefix: &'a PrefixKv,
    pub groups: Vec<KvGroup>,
}

impl ActiveKv<'_> {
    /// Retained (non-prefix) tokens in the active set.
    pub fn retained_tokens(&self) -> usize {
        self.groups.iter().map(KvGroup::tokens).sum()
    }

    pub fn total_tokens(&self) -> usize {
        self.retained_tokens() + self.prefix.tokens()
    }
}

/// Quantize one kv group at `bits` ∈ {2, 4}.
///
/// Zero-range channels (max == min over the group's tokens) store scale 0
/// and all-zero codes, so constant channels reconstruct exactly.
pub fn quantize_group(kv: &KvGroup, bits: u8) -> Result<QuantizedGroup> {
    debug_assert!(bits == 2 || bits == 4);
    for h in 0..kv.heads() {
        for j in 0..kv.tokens() {
            for c in 0..kv.head_dim() {
                if !kv.key(h, j, c).is_finite() || !kv.value(h, j, c).is_finite() {
                    return Err(Error::NonFiniteInput {
                        head: h,
                        token: j,
                        channel: c,
                    });
                }
            }
        }
    }

    let (key_params, key_codes) =
        quantize_tensor(kv.keys(), kv.heads(), kv.tokens(), kv.head_dim(), bits);
    let (value_params, value_codes) =
        quantize_tensor(kv.values(), kv.heads(), kv.tokens(), kv.head_dim(), bits);

    // rep key per (head, channel): mean of the pre-quantization keys
    let dim = kv.head_dim();
    let tokens = kv.tokens();
    let rep_key: Vec<f32> = par::map_range(kv.heads() * dim, |ch| {
        let (h, c) = (ch / dim, ch % dim);
        let mut sum = 0.0f64;
        for j in 0..tokens {
            sum += kv.key(h, j, c) as f64;
        }
        (sum / tokens as f64) as f32
    });

    Ok(QuantizedGroup {
        frame_index: kv.frame_index(),
        heads: kv.heads(),
        tokens: kv.tokens(),
        head_dim: kv.head_dim(),
        key_codes,
        value_codes,
        key_params,
        value_params,
        rep_key,
    })
}

/// Code layout: one run of `tokens` codes per (head, channel), channels in
/// `[head][channel]` order, token-major within each run; runs concatenated
/// and packed as a single bitstream.
fn quantize_tensor(
    data: &[f32],
    heads: usize,
    tokens: usize,
    dim: usize,
    bits: u8,
) -> (QuantParams, Vec<u8>) {
    let levels = ((1u16 << bits) - 1) as f32;
    let channels = heads * dim;
    let per_channel: Vec<(f32, f32, Vec<u8>)> = par::map_range(channels, |ch| {
        let (h, c) = (ch / dim, ch % dim);
        let at = |j: usize| data[(h * tokens + j) * dim + c];
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for j in 0..tokens {
            lo = lo.min(at(j));
            hi = hi.max(at(j));
        }
        if hi <= lo {
            return (0.0, lo, vec![0u8; tokens]);
        }
        let scale = (hi - lo) / levels;
        let codes = (0..tokens)
            .map(|j| ((at(j) - lo) / scale).round().clamp(0.0, levels) as u8)
            .collect();
        (scale, lo, codes)
    });

    let mut scales = Vec::with_capacity(channels);
    let mut offsets = Vec::with_capacity(channels);
    let mut codes = Vec::with_capacity(channels * tokens);
    for (scale, offset, channel_codes) in per_channel {
        scales.push(scale);
        offsets.push(offset);
        codes.extend(channel_codes);
    }
    (
        QuantParams {
            scales,
            offsets,
            bits,
        },
        pack::pack_codes(&codes, bits),
    )
}

/// Reconstruct a kv group: `offset + scale * code` per channel. Exact
/// inverse on lattice values and on zero-range channels.
pub fn dequantize_group(group: &QuantizedGroup) -> Result<KvGroup> {
    let keys = dequantize_tensor(
        &group.key_codes,
        &group.key_params,
        group.heads,
        group.tokens,
        group.head_dim,
    )?;
    let values = dequantize_tensor(
        &group.value_codes,
        &group.value_params,
        group.heads,
        group.tokens,
        group.head_dim,
    )?;
    KvGroup::new(
        group.frame_index,
        group.heads,
        group.tokens,
        group.head_dim,
        keys,
        values,
    )
}

fn dequantize_tensor(
    packed: &[u8],
    params: &QuantParams,
    heads: usize,
    tokens: usize,
    dim: usize,
) -> Result<Vec<f32>> {
    let count = heads * tokens * dim;
    let codes = pack::unpack_codes(packed, count, params.bits)?;
    let mut out = vec![0.0f32; count];
    for ch in 0..heads * dim {
        let (h, c) = (ch / dim, ch % dim);
        let scale = params.scales[ch];
        let offset = params.offsets[ch];
        for j in 0..tokens {
            out[(h * tokens + j) * dim + c] = offset + scale * codes[ch * tokens + j] as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kv_from_fn(
        frame_index: u64,
        heads: usize,
        tokens: usize,
        dim: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> KvGroup {
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for h in 0..heads {
            for j in 0..tokens {
                for c in 0..dim {
                    keys.push(f(h, j, c));
                    values.push(-f(h, j, c));
                }
            }
        }
        KvGroup::new(frame_index, heads, tokens, dim, keys, values).unwrap()
    }

    #[test]
    fn lattice_channel_round_trips_exactly() {
        // token values {0, 5, 10, 15} on one channel at 4 bits: scale 1, offset 0
        let kv = kv_from_fn(0, 1, 4, 1, |_, j, _| (j * 5) as f32);
        let q = quantize_group(&kv, 4).unwrap();
        assert_eq!(q.key_params.scales[0], 1.0);
        assert_eq!(q.key_params.offsets[0], 0.0);
        let codes = pack::unpack_codes(&q.key_codes, 4, 4).unwrap();
        assert_eq!(codes, vec![0, 5, 10, 15]);
        let back = dequantize_group(&q).unwrap();
        assert_eq!(back.keys(), kv.keys());
        assert_eq!(back.values(), kv.values());
    }

    #[test]
    fn constant_channel_reconstructs_exactly() {
        let kv = kv_from_fn(0, 2, 5, 3, |_, _, _| 2.75);
        let q = quantize_group(&kv, 4).unwrap();
        assert!(q.key_params.scales.iter().all(|&s| s == 0.0));
        assert!(q.key_params.offsets.iter().all(|&m| m == 2.75));
        let back = dequantize_group(&q).unwrap();
        assert_eq!(back.keys(), kv.keys());
    }

    #[test]
    fn random_tensor_obeys_half_scale_bound() {
        // scalar re-derivation of min/max/round per channel, independent of
        // the vectorized path
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (heads, tokens, dim) = (2, 4, 3);
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for _ in 0..heads * tokens * dim {
            keys.push(rng.gen_range(-3.0f32..3.0));
            values.push(rng.gen_range(-3.0f32..3.0));
        }
        let kv = KvGroup::new(0, heads, tokens, dim, keys, values).unwrap();
        let q = quantize_group(&kv, 4).unwrap();
        let back = dequantize_group(&q).unwrap();
        for h in 0..heads {
            for c in 0..dim {
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                for j in 0..tokens {
                    lo = lo.min(kv.key(h, j, c));
                    hi = hi.max(kv.key(h, j, c));
                }
                let scale = (hi - lo) / 15.0;
                assert!((q.key_params.scales[h * dim + c] - scale).abs() <= 1e-7);
                assert_eq!(q.key_params.offsets[h * dim + c], lo);
                for j in 0..tokens {
                    let err = (back.key(h, j, c) - kv.key(h, j, c)).abs();
                    assert!(err <= scale / 2.0 + 1e-6, "err {err} > s/2 {}", scale / 2.0);
                }
            }
        }
    }

    #[test]
    fn quantize_rejects_non_finite() {
        let mut keys = vec![0.0f32; 8];
        keys[5] = f32::INFINITY;
        let kv = KvGroup::new(0, 2, 2, 2, keys, vec![0.0; 8]).unwrap();
        assert!(matches!(
            quantize_group(&kv, 4),
            Err(Error::NonFiniteInput { head: 1, token: 0, channel: 1 })
        ));
    }

    #[test]
    fn rep_key_is_token_mean_of_keys() {
        let kv = kv_from_fn(0, 2, 4, 2, |h, j, c| (h * 100 + j * 10 + c) as f32);
        let q = quantize_group(&kv, 4).unwrap();
        // head 0, channel 0: tokens 0,10,20,30 -> mean 15
        assert_eq!(q.rep_key[0], 15.0);
        // head 1, channel 1: 101,111,121,131 -> mean 116
        assert_eq!(q.rep_key[3], 116.0);
        assert_eq!(q.rep_key.len(), 4);
    }

    #[test]
    fn append_grows_store_and_ledger_linearly() {
        let mut store = MemoryStore::new(2, 3, 4, 4, None).unwrap();
        assert_eq!(store.len(), 0);
        let kv = kv_from_fn(0, 2, 3, 4, |h, j, c| (h + j + c) as f32 * 0.5);
        let first = store.append(&kv).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.ledger_bytes(), first);
        for t in 1..7 {
            let kv = kv_from_fn(t as u64, 2, 3, 4, |h, j, c| (h * t + j + c) as f32 * 0.3);
            let added = store.append(&kv).unwrap();
            assert_eq!(added, first, "fixed geometry means fixed per-group bytes");
        }
        assert_eq!(store.len(), 7);
        assert_eq!(store.ledger_bytes(), 7 * first);
    }

    #[test]
    fn per_group_packed_bytes_match_bit_arithmetic() {
        // H=4, G=50, d_h=128 at 4 bits: 2 * (4*50*128*4/8) = 25,600 bytes
        let kv = kv_from_fn(0, 4, 50, 128, |h, j, c| ((h * 31 + j * 7 + c) % 13) as f32);
        let q = quantize_group(&kv, 4).unwrap();
        assert_eq!(q.key_codes.len() + q.value_codes.len(), 25_600);
    }

    #[test]
    fn append_leaves_existing_groups_untouched() {
        let mut store = MemoryStore::new(1, 2, 2, 4, None).unwrap();
        for t in 0..3 {
            let kv = kv_from_fn(t, 1, 2, 2, |_, j, c| (t as usize + j * 2 + c) as f32);
            store.append(&kv).unwrap();
        }
        let before: Vec<QuantizedGroup> = store.groups().to_vec();
        let kv = kv_from_fn(3, 1, 2, 2, |_, j, c| (j + c) as f32 * 9.0);
        store.append(&kv).unwrap();
        assert_eq!(&store.groups()[..3], &before[..]);
    }

    #[test]
    fn retrieve_self_key_ranks_first() {
        let mut store = MemoryStore::new(1, 2, 3, 4, None).unwrap();
        for t in 0..10u64 {
            let kv = kv_from_fn(t, 1, 2, 3, |_, j, c| ((t as usize * 7 + j * 3 + c * 5) % 11) as f32 - 5.0);
            store.append(&kv).unwrap();
        }
        let target = store.groups()[7].rep_key.clone();
        let ranked = store.retrieve(&target, 1).unwrap();
        assert_eq!(ranked, vec![7]);
    }

    #[test]
    fn retrieve_with_large_k_returns_everything() {
        let mut store = MemoryStore::new(1, 2, 2, 4, None).unwrap();
        for t in 0..5u64 {
            let kv = kv_from_fn(t, 1, 2, 2, |_, j, c| (t as usize + j + c) as f32);
            store.append(&kv).unwrap();
        }
        let ranked = store.retrieve(&[1.0, 0.5], 100).unwrap();
        let mut sorted = ranked.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn retrieval_ties_prefer_earlier_frames() {
        let mut store = MemoryStore::new(1, 2, 2, 4, None).unwrap();
        let same = |_: usize, j: usize, c: usize| (j * 2 + c) as f32 + 1.0;
        for t in 0..4u64 {
            store.append(&kv_from_fn(t, 1, 2, 2, same)).unwrap();
        }
        let q = store.groups()[0].rep_key.clone();
        assert_eq!(store.retrieve(&q, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn retrieve_on_empty_store_errors() {
        let store = MemoryStore::new(1, 2, 2, 4, None).unwrap();
        assert!(matches!(store.retrieve(&[0.0; 4], 1), Err(Error::EmptyStore)));
    }

    #[test]
    fn assemble_empty_selection_is_prefix_only() {
        let prefix = PrefixKv::new(1, 2, 3, vec![0.5; 6], vec![0.25; 6]).unwrap();
        let mut store = MemoryStore::new(1, 2, 2, 4, Some(prefix)).unwrap();
        store
            .append(&kv_from_fn(0, 1, 2, 2, |_, j, c| (j + c) as f32))
            .unwrap();
        let active = store.assemble_active(&[]).unwrap();
        assert!(active.groups.is_empty());
        assert_eq!(active.retained_tokens(), 0);
        assert_eq!(active.total_tokens(), 3);
    }

    #[test]
    fn assemble_round_trips_lattice_group() {
        let mut store = MemoryStore::new(1, 4, 1, 4, None).unwrap();
        let kv = kv_from_fn(0, 1, 4, 1, |_, j, _| (j * 5) as f32);
        store.append(&kv).unwrap();
        let active = store.assemble_active(&[0]).unwrap();
        assert_eq!(active.groups[0], kv);
    }

    #[test]
    fn assemble_rejects_bad_index() {
        let mut store = MemoryStore::new(1, 2, 2, 4, None).unwrap();
        store
            .append(&kv_from_fn(0, 1, 2, 2, |_, j, c| (j + c) as f32))
            .unwrap();
        assert!(matches!(
            store.assemble_active(&[3]),
            Err(Error::IndexOutOfRange { index: 3, len: 1 })
        ));
    }

    #[test]
    fn prefix_bytes_seed_the_ledger() {
        let prefix = PrefixKv::new(2, 3, 4, vec![0.0; 24], vec![0.0; 24]).unwrap();
        let store = MemoryStore::new(2, 5, 3, 4, Some(prefix)).unwrap();
        assert_eq!(store.ledger_bytes(), 4 * 48);
    }
}
