//! "TOKS" binary stream format.
//!
//! All integers and reals little-endian, 4-byte reals on disk. Layout:
//!
//! | field            | size                                    |
//! |------------------|-----------------------------------------|
//! | magic `TOKS`     | 4                                       |
//! | version (= 1)    | u32                                     |
//! | tokens/frame N   | u32                                     |
//! | feature dim d    | u32                                     |
//! | frame count T    | u64                                     |
//! | fps              | f32                                     |
//! | flags            | u32 (bit 0: saliency present)           |
//! | per frame        | N*d f32 row-major, then N f32 if flagged|
//!
//! Header counts must match the payload exactly; a header-only file with
//! T = 0 is valid.

use std::io::{Read, Write};

use crate::core::{FrameTokens, Matrix};
use crate::ctr::compute_saliency_chunked;
use crate::error::{Error, Result};
use crate::oqm::snapshot::{read_f32s, read_u32, read_u64, write_f32s, write_u32, write_u64};
use crate::par;

pub const MAGIC: &[u8; 4] = b"TOKS";
pub const VERSION: u32 = 1;
const FLAG_SALIENCY: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamFileHeader {
    pub version: u32,
    pub tokens_per_frame: u32,
    pub feature_dim: u32,
    pub frames: u64,
    pub fps: f32,
    pub has_saliency: bool,
}

/// One frame as stored on disk; saliency is optional at this layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredFrame {
    pub features: Matrix,
    pub saliency: Option<Vec<f32>>,
}

/// Write frames that carry saliency (the saliency flag is set).
pub fn write_frames<W: Write>(w: &mut W, fps: f32, frames: &[FrameTokens]) -> Result<()> {
    let stored: Vec<StoredFrame> = frames
        .iter()
        .map(|f| StoredFrame {
            features: f.features.clone(),
            saliency: Some(f.saliency.clone()),
        })
        .collect();
    let (n, d) = match frames.first() {
        Some(f) => (f.features.rows(), f.features.cols()),
        None => (1, 1),
    };
    write_stored(w, fps, n, d, &stored)
}

/// Write raw frames; all must agree on geometry and saliency presence.
pub fn write_stored<W: Write>(
    w: &mut W,
    fps: f32,
    tokens_per_frame: usize,
    feature_dim: usize,
    frames: &[StoredFrame],
) -> Result<()> {
    let has_saliency = frames.first().is_none_or(|f| f.saliency.is_some());
    for f in frames {
        if f.features.rows() != tokens_per_frame {
            return Err(Error::ShapeMismatch {
                what: "stream frame rows",
                expected: tokens_per_frame,
                got: f.features.rows(),
            });
        }
        if f.features.cols() != feature_dim {
            return Err(Error::ShapeMismatch {
                what: "stream frame cols",
                expected: feature_dim,
                got: f.features.cols(),
            });
        }
        if f.saliency.is_some() != has_saliency {
            return Err(Error::InvalidConfig(
                "all frames must agree on saliency presence".into(),
            ));
        }
    }
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_u32(w, tokens_per_frame as u32)?;
    write_u32(w, feature_dim as u32)?;
    write_u64(w, frames.len() as u64)?;
    w.write_all(&fps.to_le_bytes())?;
    write_u32(w, if has_saliency { FLAG_SALIENCY } else { 0 })?;
    for f in frames {
        write_f32s(w, f.features.data())?;
        if let Some(s) = &f.saliency {
            write_f32s(w, s)?;
        }
    }
    Ok(())
}

pub fn read_stream<R: Read>(r: &mut R) -> Result<(StreamFileHeader, Vec<StoredFrame>)> {
    let fmt = "TOKS";
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
    let tokens_per_frame = read_u32(r)?;
    let feature_dim = read_u32(r)?;
    if tokens_per_frame == 0 {
        return Err(Error::Format {
            format: fmt,
            field: "tokens_per_frame",
            detail: "must be positive".into(),
        });
    }
    if feature_dim == 0 {
        return Err(Error::Format {
            format: fmt,
            field: "feature_dim",
            detail: "must be positive".into(),
        });
    }
    let frames = read_u64(r)?;
    let mut fps_bytes = [0u8; 4];
    r.read_exact(&mut fps_bytes)?;
    let fps = f32::from_le_bytes(fps_bytes);
    let flags = read_u32(r)?;
    if flags & !FLAG_SALIENCY != 0 {
        return Err(Error::Format {
            format: fmt,
            field: "flags",
            detail: format!("unknown flag bits in {flags:#x}"),
        });
    }
    let has_saliency = flags & FLAG_SALIENCY != 0;

    let n = tokens_per_frame as usize;
    let d = feature_dim as usize;
    let cells = n.checked_mul(d).ok_or(Error::Format {
        format: fmt,
        field: "feature_dim",
        detail: format!("{n} x {d} frame overflows addressable size"),
    })?;
    let mut out = Vec::new();
    for _ in 0..frames {
        let features = Matrix::new(n, d, read_f32s(r, cells)?)?;
        let saliency = if has_saliency {
            Some(read_f32s(r, n)?)
        } else {
            None
        };
        out.push(StoredFrame { features, saliency });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format {
            format: fmt,
            field: "payload length",
            detail: "trailing bytes after final frame".into(),
        });
    }
    Ok((
        StreamFileHeader {
            version,
            tokens_per_frame,
            feature_dim,
            frames,
            fps,
            has_saliency,
        },
        out,
    ))
}

/// Turn stored frames into pipeline inputs, computing saliency (chunked,
/// then min-max normalized) for frames that don't carry it. Frames are
/// independent, so this runs data-parallel.
pub fn materialize_frames(stored: Vec<StoredFrame>, saliency_chunk: usize) -> Vec<FrameTokens> {
    let out: Vec<FrameTokens> = par::map_range(stored.len(), |t| {
        let frame = &stored[t];
        let saliency = match &frame.saliency {
            Some(s) => s.clone(),
            None => compute_saliency_chunked(&frame.features, saliency_chunk),
        };
        FrameTokens::new(t as u64, frame.features.clone(), saliency)
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_frames(n: usize, d: usize, count: usize) -> Vec<FrameTokens> {
        (0..count)
            .map(|t| {
                let rows: Vec<Vec<f32>> = (0..n)
                    .map(|i| (0..d).map(|j| ((t * 31 + i * 7 + j) % 13) as f32 * 0.25 - 1.0).collect())
                    .collect();
                FrameTokens::new(
                    t as u64,
                    Matrix::from_rows(&rows).unwrap(),
                    (0..n).map(|i| (i % 10) as f32 / 10.0).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn round_trip_is_identity() {
        let frames = sample_frames(6, 4, 5);
        let mut bytes = Vec::new();
        write_frames(&mut bytes, 0.5, &frames).unwrap();
        let (header, stored) = read_stream(&mut bytes.as_slice()).unwrap();
        assert_eq!(header.frames, 5);
        assert_eq!(header.tokens_per_frame, 6);
        assert!(header.has_saliency);
        let back = materialize_frames(stored, 8);
        assert_eq!(back, frames);
        let mut again = Vec::new();
        write_frames(&mut again, 0.5, &back).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn header_only_file_is_valid() {
        let mut bytes = Vec::new();
        write_stored(&mut bytes, 1.0, 4, 3, &[]).unwrap();
        let (header, stored) = read_stream(&mut bytes.as_slice()).unwrap();
        assert_eq!(header.frames, 0);
        assert!(stored.is_empty());
    }

    #[test]
    fn missing_saliency_is_computed_on_materialize() {
        let frames = sample_frames(6, 4, 2);
        let stored: Vec<StoredFrame> = frames
            .iter()
            .map(|f| StoredFrame {
                features: f.features.clone(),
                saliency: None,
            })
            .collect();
        let mut bytes = Vec::new();
        write_stored(&mut bytes, 0.5, 6, 4, &stored).unwrap();
        let (header, read_back) = read_stream(&mut bytes.as_slice()).unwrap();
        assert!(!header.has_saliency);
        let tokens = materialize_frames(read_back, 3);
        for f in &tokens {
            assert_eq!(f.saliency.len(), 6);
            assert!(f.saliency.iter().all(|s| (0.0..=1.0).contains(s)));
        }
    }

    #[test]
    fn bad_magic_is_named() {
        let mut bytes = Vec::new();
        write_frames(&mut bytes, 0.5, &sample_frames(2, 2, 1)).unwrap();
        bytes[2] = b'!';
        match read_stream(&mut bytes.as_slice()) {
            Err(Error::Format { field: "magic", .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = Vec::new();
        write_frames(&mut bytes, 0.5, &sample_frames(2, 2, 3)).unwrap();
        bytes.truncate(bytes.len() - 1);
        assert!(read_stream(&mut bytes.as_slice()).is_err());
        let mut extended = Vec::new();
        write_frames(&mut extended, 0.5, &sample_frames(2, 2, 3)).unwrap();
        extended.push(7);
        match read_stream(&mut extended.as_slice()) {
            Err(Error::Format { field: "payload length", .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }
}
