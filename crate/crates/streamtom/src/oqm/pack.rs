//! Nibble/crumb codec: fixed-width low-bit codes packed into bytes,
//! little-end-first within each byte.
//!
//! Code `p` lives in byte `p / (8/b)` at bit offset `(p % (8/b)) * b`, so at
//! 4 bits the first code of a byte occupies the low nibble. The final byte
//! is zero-padded in its high bits.

use crate::error::{Error, Result};

/// Packed byte length for `count` codes of `bits` width.
pub fn packed_len(count: usize, bits: u8) -> usize {
    (count * bits as usize).div_ceil(8)
}

/// Pack codes (each `< 2^bits`) into bytes.
pub fn pack_codes(codes: &[u8], bits: u8) -> Vec<u8> {
    debug_assert!(bits == 2 || bits == 4);
    let per_byte = 8 / bits as usize;
    let mut out = vec![0u8; packed_len(codes.len(), bits)];
    for (p, &code) in codes.iter().enumerate() {
        debug_assert!(code < (1 << bits));
        out[p / per_byte] |= code << ((p % per_byte) as u8 * bits);
    }
    out
}

/// Unpack exactly `count` codes; the buffer length must match exactly.
pub fn unpack_codes(bytes: &[u8], count: usize, bits: u8) -> Result<Vec<u8>> {
    debug_assert!(bits == 2 || bits == 4);
    let expected = packed_len(count, bits);
    if bytes.len() != expected {
        return Err(Error::CorruptPackedLength {
            expected,
            got: bytes.len(),
        });
    }
    let per_byte = 8 / bits as usize;
    let mask = (1u16 << bits) as u8 - 1;
    Ok((0..count)
        .map(|p| (bytes[p / per_byte] >> ((p % per_byte) as u8 * bits)) & mask)
        .collect())
}
