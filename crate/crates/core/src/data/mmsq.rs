//! Sequence dataset container.
//!
//! ```text
//! header  "MMSQ" | version u16 | count u32 | frames u16 | height u16 | width u16 | channels u16
//! record  label u8 | kind u8 | square_row u16 | square_col u16 | frames x channels x height x width bytes
//! ```
//!
//! Integers are little-endian. `label` is 0 normal / 1 corrupted; `kind` is
//! 0 none / 1 temporal / 2 spatial / 3 both; square coordinates are 0xFFFF
//! when no square was painted.

use std::path::Path;

use super::{CorruptionKind, CorruptionMeta, Label, LabeledSequence};
use crate::error::{Error, Result};
use crate::frame::{Frame, Sequence};

pub const MMSQ_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"MMSQ";
const HEADER_LEN: usize = 4 + 2 + 4 + 2 * 4;
const NO_SQUARE: u16 = u16::MAX;

fn fail(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format { what: "MMSQ", offset, reason: reason.into() }
}

/// Encodes a dataset. `dims` = `(frames, channels, height, width)` is
/// required so that empty datasets still record their geometry.
pub fn write_dataset(seqs: &[LabeledSequence], dims: (usize, usize, usize, usize)) -> Result<Vec<u8>> {
    let (t, c, h, w) = dims;
    if [t, c, h, w].iter().any(|&d| d == 0 || d > u16::MAX as usize) {
        return Err(Error::InvalidArgument(format!("dataset dims {dims:?} out of range")));
    }
    let frame_bytes = c * h * w;
    let mut out = Vec::with_capacity(HEADER_LEN + seqs.len() * (6 + t * frame_bytes));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MMSQ_VERSION.to_le_bytes());
    out.extend_from_slice(&(seqs.len() as u32).to_le_bytes());
    for d in [t, h, w, c] {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    for (i, s) in seqs.iter().enumerate() {
        if s.sequence.len() != t || s.sequence.dims() != (c, h, w) {
            return Err(Error::Shape(format!(
                "sequence {i} is {} frames of {:?}, dataset is {t} frames of {:?}",
                s.sequence.len(),
                s.sequence.dims(),
                (c, h, w)
            )));
        }
        out.push(match s.label {
            Label::Normal => 0,
            Label::Corrupted => 1,
        });
        let (kind, square) = match s.corruption {
            None => (0u8, None),
            Some(CorruptionMeta { kind, square }) => (
                match kind {
                    CorruptionKind::Temporal => 1,
                    CorruptionKind::Spatial => 2,
                    CorruptionKind::Both => 3,
                },
                square,
            ),
        };
        out.push(kind);
        let (r, col) = square.map(|(r, c)| (r as u16, c as u16)).unwrap_or((NO_SQUARE, NO_SQUARE));
        out.extend_from_slice(&r.to_le_bytes());
        out.extend_from_slice(&col.to_le_bytes());
        for f in s.sequence.frames() {
            out.extend_from_slice(f.values());
        }
    }
    Ok(out)
}

/// Decodes a dataset; returns the sequences and `(frames, channels, height, width)`.
pub fn read_dataset(bytes: &[u8]) -> Result<(Vec<LabeledSequence>, (usize, usize, usize, usize))> {
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(0, "bad magic, expected \"MMSQ\""));
    }
    let u16_at = |at: usize| u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
    let version = u16_at(4) as u16;
    if version != MMSQ_VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let (t, h, w, c) = (u16_at(10), u16_at(12), u16_at(14), u16_at(16));
    if t < 2 || h == 0 || w == 0 || c == 0 {
        return Err(fail(10, format!("invalid dims frames={t} height={h} width={w} channels={c}")));
    }
    let frame_bytes = c * h * w;
    let record = 6 + t * frame_bytes;
    let expected = HEADER_LEN + count * record;
    if bytes.len() != expected {
        let complete = (bytes.len().saturating_sub(HEADER_LEN)) / record;
        return Err(fail(
            HEADER_LEN + complete.min(count) * record,
            format!("header declares {count} sequences ({expected} bytes), file has {} bytes", bytes.len()),
        ));
    }
    let mut seqs = Vec::with_capacity(count);
    for i in 0..count {
        let at = HEADER_LEN + i * record;
        let label = match bytes[at] {
            0 => Label::Normal,
            1 => Label::Corrupted,
            other => return Err(fail(at, format!("bad label byte {other}"))),
        };
        let kind = match bytes[at + 1] {
            0 => None,
            1 => Some(CorruptionKind::Temporal),
            2 => Some(CorruptionKind::Spatial),
            3 => Some(CorruptionKind::Both),
            other => return Err(fail(at + 1, format!("bad corruption kind {other}"))),
        };
        let (r, col) = (u16_at(at + 2), u16_at(at + 4));
        let square = if r == NO_SQUARE as usize { None } else { Some((r, col)) };
        let corruption = kind.map(|kind| CorruptionMeta { kind, square });
        if (label == Label::Normal) != corruption.is_none() {
            return Err(fail(at, "label and corruption metadata disagree"));
        }
        let frames = bytes[at + 6..at + record]
            .chunks_exact(frame_bytes)
            .map(|px| Frame::new(h, w, c, px.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        seqs.push(LabeledSequence { sequence: Sequence::new(frames)?, label, corruption });
    }
    Ok((seqs, (t, c, h, w)))
}

pub fn save_dataset(path: impl AsRef<Path>, seqs: &[LabeledSequence], dims: (usize, usize, usize, usize)) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_dataset(seqs, dims)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Vec<LabeledSequence>, (usize, usize, usize, usize))> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_test_set, synthetic_glyphs, CorruptionMode, MovingConfig};
    use crate::exec::Exec;
    use proptest::prelude::*;

    const DESK_DIMS: (usize, usize, usize, usize) = (20, 1, 32, 32);

    #[test]
    fn empty_dataset_round_trips() {
        let bytes = write_dataset(&[], DESK_DIMS).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        let (seqs, dims) = read_dataset(&bytes).unwrap();
        assert!(seqs.is_empty());
        assert_eq!(dims, DESK_DIMS);
    }

    #[test]
    fn truncated_and_corrupt_headers_are_rejected() {
        let set = build_test_set(&synthetic_glyphs(), &MovingConfig::desk(), 1, 1, CorruptionMode::Both, 2, Exec::Sequential).unwrap();
        let bytes = write_dataset(&set, DESK_DIMS).unwrap();
        assert!(read_dataset(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_dataset(&bytes[..5]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset(&bad), Err(Error::Format { offset: 0, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_is_bit_identical(seed in any::<u64>(), n in 0usize..3, m in 0usize..3) {
            let set = build_test_set(&synthetic_glyphs(), &MovingConfig::desk(), n, m, CorruptionMode::Mixed, seed, Exec::Sequential).unwrap();
            let bytes = write_dataset(&set, DESK_DIMS).unwrap();
            let (back, dims) = read_dataset(&bytes).unwrap();
            prop_assert_eq!(dims, DESK_DIMS);
            prop_assert_eq!(&back, &set);
            prop_assert_eq!(write_dataset(&back, dims).unwrap(), bytes);
        }
    }
}
