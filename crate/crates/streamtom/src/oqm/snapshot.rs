//! "OQM1" memory snapshot format.
//!
//! All integers and reals are little-endian; reals are 4-byte regardless of
//! in-memory width. Layout:
//!
//! | field                | size                              |
//! |----------------------|-----------------------------------|
//! | magic `OQM1`         | 4                                 |
//! | version (= 1)        | u32                               |
//! | kv heads H           | u32                               |
//! | frame budget G       | u32                               |
//! | head dim d_h         | u32                               |
//! | quant bits b         | u32                               |
//! | group count T        | u64                               |
//! | prefix tokens P      | u64                               |
//! | prefix keys          | H*P*d_h f32                       |
//! | prefix values        | H*P*d_h f32                       |
//! | per group (T times)  | see below                         |
//!
//! Per group: frame index (u64), key scales then offsets (H*d_h f32 each),
//! value scales then offsets, rep key (H*d_h f32), packed key codes, packed
//! value codes (`ceil(H*G*d_h*b/8)` bytes each). Round-trips bit-exactly.

use std::io::{Read, Write};

use super::pack::packed_len;
use super::{MemoryStore, PrefixKv, QuantParams, QuantizedGroup};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OQM1";
pub const VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(store: &MemoryStore, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_u32(w, store.heads() as u32)?;
    write_u32(w, store.frame_budget() as u32)?;
    write_u32(w, store.head_dim() as u32)?;
    write_u32(w, store.bits() as u32)?;
    write_u64(w, store.len() as u64)?;
    write_u64(w, store.prefix().tokens() as u64)?;
    write_f32s(w, store.prefix().keys())?;
    write_f32s(w, store.prefix().values())?;
    for group in store.groups() {
        write_u64(w, group.frame_index)?;
        write_f32s(w, &group.key_params.scales)?;
        write_f32s(w, &group.key_params.offsets)?;
        write_f32s(w, &group.value_params.scales)?;
        write_f32s(w, &group.value_params.offsets)?;
        write_f32s(w, &group.rep_key)?;
        w.write_all(&group.key_codes)?;
        w.write_all(&group.value_codes)?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(r: &mut R) -> Result<MemoryStore> {
    let fmt = "OQM1";
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format {
            format: fmt,
            field: "magic",
            detail: format!("expected {MAGIC:?}, got {magic:?}"),
        });
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format {
            format: fmt,
            field: "version",
            detail: format!("expected {VERSION}, got {version}"),
        });
    }
    let heads = read_dim(r, fmt, "kv_heads")?;
    let frame_budget = read_dim(r, fmt, "frame_budget")?;
    let head_dim = read_dim(r, fmt, "head_dim")?;
    let bits = read_u32(r)?;
    if bits != 2 && bits != 4 {
        return Err(Error::Format {
            format: fmt,
            field: "quant_bits",
            detail: format!("expected 2 or 4, got {bits}"),
        });
    }
    let bits = bits as u8;
    let group_count = read_u64(r)?;
    let prefix_tokens = read_u64(r)?;

    let width = heads * head_dim;
    let prefix_count = usize::try_from(prefix_tokens)
        .ok()
        .and_then(|p| width.checked_mul(p))
        .ok_or(Error::Format {
            format: fmt,
            field: "prefix_tokens",
            detail: format!("prefix of {prefix_tokens} tokens overflows addressable size"),
        })?;
    let prefix_tokens = prefix_tokens as usize;
    let prefix_keys = read_f32s(r, prefix_count)?;
    let prefix_values = read_f32s(r, prefix_count)?;
    let prefix = PrefixKv::new(heads, head_dim, prefix_tokens, prefix_keys, prefix_values)?;

    let code_bytes = packed_len(heads * frame_budget * head_dim, bits);
    let mut store = MemoryStore::new(heads, frame_budget, head_dim, bits, Some(prefix))?;
    for _ in 0..group_count {
        let frame_index = read_u64(r)?;
        let key_params = QuantParams {
            scales: read_f32s(r, width)?,
            offsets: read_f32s(r, width)?,
            bits,
        };
        let value_params = QuantParams {
            scales: read_f32s(r, width)?,
            offsets: read_f32s(r, width)?,
            bits,
        };
        let rep_key = read_f32s(r, width)?;
        let mut key_codes = vec![0u8; code_bytes];
        r.read_exact(&mut key_codes)?;
        let mut value_codes = vec![0u8; code_bytes];
        r.read_exact(&mut value_codes)?;
        store.push_raw(QuantizedGroup {
            frame_index,
            heads,
            tokens: frame_budget,
            head_dim,
            key_codes,
            value_codes,
            key_params,
            value_params,
            rep_key,
        });
    }

    let mut trailing = [0u8; 1];
    match r.read(&mut trailing)? {
        0 => Ok(store),
        _ => Err(Error::Format {
            format: fmt,
            field: "payload length",
            detail: "trailing bytes after final group".into(),
        }),
    }
}

impl MemoryStore {
    /// Append an already-quantized group read back from a snapshot.
    fn push_raw(&mut self, group: QuantizedGroup) {
        self.ledger_bytes += group.ledger_bytes();
        self.groups.push(group);
    }
}

fn read_dim<R: Read>(r: &mut R, fmt: &'static str, field: &'static str) -> Result<usize> {
    let v = read_u32(r)?;
    if v == 0 {
        return Err(Error::Format {
            format: fmt,
            field,
            detail: "must be positive".into(),
        });
    }
    Ok(v as usize)
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f32>> {
    let byte_len = count.checked_mul(4).ok_or_else(|| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("real array of {count} elements overflows addressable size"),
        )
    })?;
    let mut bytes = vec![0u8; byte_len];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
