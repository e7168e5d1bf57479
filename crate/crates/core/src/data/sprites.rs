//! Digit sprites: IDX ingestion and the procedural fallback glyphs.

use std::path::Path;

use crate::error::{Error, Result};

pub const SPRITE_SIDE: usize = 28;
const IDX3_UBYTE_MAGIC: u32 = 0x0000_0803;

/// A 28x28 digit image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sprite {
    pixels: Vec<u8>,
    /// Digit class when known.
    pub label: Option<u8>,
}

impl Sprite {
    pub fn new(pixels: Vec<u8>, label: Option<u8>) -> Result<Self> {
        if pixels.len() != SPRITE_SIDE * SPRITE_SIDE {
            return Err(Error::Shape(format!(
                "sprite needs {} pixels, got {}",
                SPRITE_SIDE * SPRITE_SIDE,
                pixels.len()
            )));
        }
        Ok(Self { pixels, label })
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Box-filtered copy at `1 / factor` resolution.
    pub fn patch(&self, factor: usize) -> Result<Patch> {
        if factor == 0 || SPRITE_SIDE % factor != 0 {
            return Err(Error::InvalidArgument(format!("sprite scale {factor} must divide {SPRITE_SIDE}")));
        }
        let side = SPRITE_SIDE / factor;
        let area = (factor * factor) as u32;
        let mut pixels = vec![0u8; side * side];
        for r in 0..side {
            for c in 0..side {
                let mut acc = 0u32;
                for dr in 0..factor {
                    for dc in 0..factor {
                        acc += self.pixels[(r * factor + dr) * SPRITE_SIDE + c * factor + dc] as u32;
                    }
                }
                pixels[r * side + c] = ((acc + area / 2) / area) as u8;
            }
        }
        Ok(Patch { side, pixels })
    }
}

/// Square image actually drawn into frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub side: usize,
    pub pixels: Vec<u8>,
}

/// Parses an IDX3 unsigned-byte image container of 28x28 images.
pub fn parse_idx(bytes: &[u8]) -> Result<Vec<Sprite>> {
    let fail = |offset: usize, reason: String| Error::Format { what: "IDX", offset, reason };
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| fail(at, format!("header truncated ({} bytes)", bytes.len())))
    };
    let magic = word(0)?;
    if magic != IDX3_UBYTE_MAGIC {
        return Err(fail(0, format!("bad magic {magic:#010x}, expected {IDX3_UBYTE_MAGIC:#010x}")));
    }
    let count = word(4)? as usize;
    let rows = word(8)? as usize;
    let cols = word(12)? as usize;
    if rows != SPRITE_SIDE || cols != SPRITE_SIDE {
        return Err(fail(8, format!("images are {rows}x{cols}, expected {SPRITE_SIDE}x{SPRITE_SIDE}")));
    }
    let stride = rows * cols;
    let need = 16 + count * stride;
    if bytes.len() < need {
        let complete = (bytes.len() - 16) / stride;
        return Err(fail(16 + complete * stride, format!("truncated: header declares {count} images, {complete} complete")));
    }
    bytes[16..need]
        .chunks_exact(stride)
        .map(|px| Sprite::new(px.to_vec(), None))
        .collect()
}

pub fn load_sprites(path: impl AsRef<Path>) -> Result<Vec<Sprite>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// Encodes sprites as an IDX3 unsigned-byte container.
pub fn write_idx(sprites: &[Sprite]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + sprites.len() * SPRITE_SIDE * SPRITE_SIDE);
    for word in [IDX3_UBYTE_MAGIC, sprites.len() as u32, SPRITE_SIDE as u32, SPRITE_SIDE as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for s in sprites {
        out.extend_from_slice(&s.pixels);
    }
    out
}

// Seven-segment layout inside the 28x28 box, as (col, row) endpoints.
const LEFT: f64 = 7.5;
const RIGHT: f64 = 20.5;
const TOP: f64 = 4.5;
const MID: f64 = 14.0;
const BOTTOM: f64 = 23.5;

const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((LEFT, TOP), (RIGHT, TOP)),       // a
    ((RIGHT, TOP), (RIGHT, MID)),      // b
    ((RIGHT, MID), (RIGHT, BOTTOM)),   // c
    ((LEFT, BOTTOM), (RIGHT, BOTTOM)), // d
    ((LEFT, MID), (LEFT, BOTTOM)),     // e
    ((LEFT, TOP), (LEFT, MID)),        // f
    ((LEFT, MID), (RIGHT, MID)),       // g
];

// Segment masks in abcdefg bit order (bit 0 = a).
const DIGITS: [u8; 10] = [
    0b011_1111, // 0
    0b000_0110, // 1
    0b101_1011, // 2
    0b100_1111, // 3
    0b110_0110, // 4
    0b110_1101, // 5
    0b111_1101, // 6
    0b000_0111, // 7
    0b111_1111, // 8
    0b110_1111, // 9
];

const STROKE_RADIUS: f64 = 2.5;

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Ten anti-aliased seven-segment digit glyphs, one per class.
///
/// Used when no MNIST file is supplied.
pub fn synthetic_glyphs() -> Vec<Sprite> {
    DIGITS
        .iter()
        .enumerate()
        .map(|(label, &bits)| {
            let mut pixels = vec![0u8; SPRITE_SIDE * SPRITE_SIDE];
            for r in 0..SPRITE_SIDE {
                for c in 0..SPRITE_SIDE {
                    let p = (c as f64 + 0.5, r as f64 + 0.5);
                    let d = SEGMENTS
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| bits >> i & 1 == 1)
                        .map(|(_, (a, b))| segment_distance(p, *a, *b))
                        .fold(f64::INFINITY, f64::min);
                    let v = (STROKE_RADIUS + 0.5 - d).clamp(0.0, 1.0);
                    pixels[r * SPRITE_SIDE + c] = (v * 255.0).round() as u8;
                }
            }
            Sprite { pixels, label: Some(label as u8) }
        })
        .collect()
}
