//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "IVADCKPT"
//! version      u32
//! precision    u8       32 or 64
//! reserved     3 bytes  zero
//! hyper        12 x u32 height width channels hidden context_len bins kernel
//!                       encoder_layers decoder_layers decoder_width meta_hidden variant
//! count        u32
//! directory    count x { name_len u16, name utf-8, rank u8, dims rank x u32, offset u64 }
//! data_len     u64
//! data         raw little-endian floats of the declared precision
//! ```
//!
//! Offsets are relative to the start of the data block.

use std::path::Path;

use super::{Hyper, ModelParameters, Variant};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"IVADCKPT";

const HYPER_FIELDS: [&str; 12] = [
    "height",
    "width",
    "channels",
    "hidden",
    "context_len",
    "bins",
    "kernel",
    "encoder_layers",
    "decoder_layers",
    "decoder_width",
    "meta_hidden",
    "variant",
];

fn bad(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Checkpoint { field: field.into(), reason: reason.into() }
}

pub fn write_checkpoint<T: Scalar>(params: &ModelParameters<T>) -> Vec<u8> {
    let h = params.hyper();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(T::PRECISION.code());
    out.extend_from_slice(&[0; 3]);
    let hyper_values = [
        h.height,
        h.width,
        h.channels,
        h.hidden,
        h.context_len,
        h.bins,
        h.kernel,
        h.encoder_layers,
        h.decoder_layers,
        h.decoder_width,
        h.meta_hidden,
        h.variant.code() as usize,
    ];
    for v in hyper_values {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let width = T::PRECISION.bytes();
    let mut offset = 0u64;
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += (t.numel() * width) as u64;
    }
    out.extend_from_slice(&offset.to_le_bytes());
    for (_, t) in params.iter() {
        for &v in t.values() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(bad(
                field,
                format!("truncated at byte {}: need {n} bytes, {} left", self.pos, self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}

/// Reads the hyperparameters and precision without decoding the tensors.
pub fn peek_checkpoint(bytes: &[u8]) -> Result<(Hyper, Precision)> {
    let mut cur = Cursor { bytes, pos: 0 };
    read_header(&mut cur)
}

fn read_header(cur: &mut Cursor<'_>) -> Result<(Hyper, Precision)> {
    if cur.take(8, "magic")? != MAGIC {
        return Err(bad("magic", "not a checkpoint file"));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(bad("version", format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let code = cur.u8("precision")?;
    let precision = Precision::from_code(code).ok_or_else(|| bad("precision", format!("unknown code {code}")))?;
    cur.take(3, "reserved")?;
    let mut v = [0usize; 12];
    for (slot, name) in v.iter_mut().zip(HYPER_FIELDS) {
        *slot = cur.u32(&format!("hyper.{name}"))? as usize;
    }
    let variant = Variant::from_code(v[11] as u32).ok_or_else(|| bad("hyper.variant", format!("unknown code {}", v[11])))?;
    let hyper = Hyper {
        height: v[0],
        width: v[1],
        channels: v[2],
        hidden: v[3],
        context_len: v[4],
        bins: v[5],
        kernel: v[6],
        encoder_layers: v[7],
        decoder_layers: v[8],
        decoder_width: v[9],
        meta_hidden: v[10],
        variant,
    };
    hyper.validate().map_err(|e| bad("hyper", e.to_string()))?;
    Ok((hyper, precision))
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ModelParameters<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let (hyper, precision) = read_header(&mut cur)?;
    if precision != T::PRECISION {
        return Err(Error::Precision { expected: T::PRECISION.to_string(), found: precision.to_string() });
    }
    let count = cur.u32("tensor_count")? as usize;
    let mut directory = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let field = format!("directory[{i}]");
        let len = cur.u16(&field)? as usize;
        let name = std::str::from_utf8(cur.take(len, &field)?)
            .map_err(|_| bad(&field, "name is not utf-8"))?
            .to_string();
        let rank = cur.u8(&name)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32(&name)? as usize);
        }
        let offset = cur.u64(&name)? as usize;
        directory.push((name, shape, offset));
    }
    let data_len = cur.u64("data_len")? as usize;
    let data = cur.take(data_len, "data")?;
    if cur.pos != bytes.len() {
        return Err(bad("data", format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let width = precision.bytes();
    let mut expected_offset = 0;
    let mut tensors = Vec::with_capacity(directory.len());
    for (name, shape, offset) in directory {
        let numel: usize = shape.iter().product();
        if offset != expected_offset {
            return Err(bad(&name, format!("offset {offset} does not follow previous tensor ({expected_offset})")));
        }
        let end = offset + numel * width;
        if end > data.len() {
            return Err(bad(&name, format!("extends past the data block ({end} > {})", data.len())));
        }
        let values = data[offset..end].chunks_exact(width).map(T::read_le).collect();
        expected_offset = end;
        tensors.push((name, Tensor::new(&shape, values)?));
    }
    if expected_offset != data.len() {
        return Err(bad("data_len", format!("declares {} bytes but tensors use {expected_offset}", data.len())));
    }
    ModelParameters::from_tensors(hyper, tensors)
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParameters<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelParameters<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny() -> Hyper {
        Hyper { height: 6, width: 5, hidden: 3, context_len: 2, bins: 8, decoder_width: 4, meta_hidden: 5, ..Hyper::default() }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let p = ModelParameters::<f32>::init(&tiny(), &mut seeded(4)).unwrap();
        let bytes = write_checkpoint(&p);
        let q = read_checkpoint::<f32>(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(bytes, write_checkpoint(&q));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let p = ModelParameters::<f32>::init(&tiny(), &mut seeded(4)).unwrap();
        let bytes = write_checkpoint(&p);
        for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(read_checkpoint::<f32>(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn precision_mismatch_is_rejected() {
        let p = ModelParameters::<f64>::init(&tiny(), &mut seeded(4)).unwrap();
        let err = read_checkpoint::<f32>(&write_checkpoint(&p)).unwrap_err();
        assert!(matches!(err, Error::Precision { .. }), "{err}");
        assert!(err.to_string().contains("64-bit"));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let p = ModelParameters::<f32>::init(&tiny(), &mut seeded(4)).unwrap();
        let mut bytes = write_checkpoint(&p);
        bytes[8] = 9;
        let err = read_checkpoint::<f32>(&bytes).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn shape_directory_mismatch_names_the_tensor() {
        let p = ModelParameters::<f32>::init(&tiny(), &mut seeded(4)).unwrap();
        let mut bytes = write_checkpoint(&p);
        // hyper.hidden lives at 8 + 4 + 4 + 3 * 4; the directory then disagrees with it.
        let at = 8 + 4 + 4 + 3 * 4;
        bytes[at..at + 4].copy_from_slice(&4u32.to_le_bytes());
        let err = read_checkpoint::<f32>(&bytes).unwrap_err().to_string();
        assert!(err.contains("encoder.0.weight"), "{err}");
    }
}
