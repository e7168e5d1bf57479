//! Temporal and spatial corruption injectors.

use rand::Rng;

use super::moving::{generate_sequence, pick_sprites, MovingConfig};
use super::sprites::Sprite;
use super::{CorruptionKind, CorruptionMeta, Label, LabeledSequence};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{derive, seeded};

/// Side of the black square painted by [`corrupt_spatial`].
pub const SQUARE_SIDE: usize = 3;
/// Minimum intensity of a pixel eligible as the square's center.
pub const LIT_THRESHOLD: u8 = 128;

/// Which corruptions the corrupted part of a test set carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum CorruptionMode {
    /// Temporal swap followed by a spatial square, on every corrupted sequence.
    #[default]
    Both,
    TemporalOnly,
    SpatialOnly,
    /// Alternates temporal-only and spatial-only by index.
    Mixed,
}

impl CorruptionMode {
    pub fn name(self) -> &'static str {
        match self {
            CorruptionMode::Both => "both",
            CorruptionMode::TemporalOnly => "temporal",
            CorruptionMode::SpatialOnly => "spatial",
            CorruptionMode::Mixed => "mixed",
        }
    }
}

impl std::fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(CorruptionMode::Both),
            "temporal" => Ok(CorruptionMode::TemporalOnly),
            "spatial" => Ok(CorruptionMode::SpatialOnly),
            "mixed" => Ok(CorruptionMode::Mixed),
            other => Err(Error::InvalidArgument(format!("unknown corruption mode `{other}`"))),
        }
    }
}

fn merge(prev: Option<CorruptionMeta>, kind: CorruptionKind, square: Option<(usize, usize)>) -> CorruptionMeta {
    match prev {
        None => CorruptionMeta { kind, square },
        Some(p) => {
            let temporal = p.kind.has_temporal() || kind.has_temporal();
            let spatial = p.kind.has_spatial() || kind.has_spatial();
            let kind = match (temporal, spatial) {
                (true, true) => CorruptionKind::Both,
                (true, false) => CorruptionKind::Temporal,
                _ => CorruptionKind::Spatial,
            };
            CorruptionMeta { kind, square: square.or(p.square) }
        }
    }
}

/// Replaces the last frame with a copy of the first.
pub fn corrupt_temporal(mut seq: LabeledSequence) -> LabeledSequence {
    let frames = seq.sequence.frames_mut();
    let first = frames[0].clone();
    *frames.last_mut().expect("sequence has >= 2 frames") = first;
    seq.label = Label::Corrupted;
    seq.corruption = Some(merge(seq.corruption, CorruptionKind::Temporal, None));
    seq
}

/// Paints a 3x3 black square on the last frame, centered on a uniformly
/// chosen pixel of intensity >= 128. Squares at the border are clipped.
pub fn corrupt_spatial<R: Rng + ?Sized>(mut seq: LabeledSequence, rng: &mut R) -> Result<LabeledSequence> {
    let last = seq.sequence.last();
    let (channels, h, w) = last.dims();
    let lit: Vec<(usize, usize)> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .filter(|&(i, j)| (0..channels).any(|c| last.get(c, i, j) >= LIT_THRESHOLD))
        .collect();
    if lit.is_empty() {
        return Err(Error::Contract(format!("last frame has no pixel with intensity >= {LIT_THRESHOLD}")));
    }
    let (ci, cj) = lit[rng.gen_range(0..lit.len())];
    let frame = seq.sequence.frames_mut().last_mut().expect("non-empty");
    let half = SQUARE_SIDE / 2;
    for i in ci.saturating_sub(half)..=(ci + half).min(h - 1) {
        for j in cj.saturating_sub(half)..=(cj + half).min(w - 1) {
            for c in 0..channels {
                frame.set(c, i, j, 0);
            }
        }
    }
    seq.label = Label::Corrupted;
    seq.corruption = Some(merge(seq.corruption, CorruptionKind::Spatial, Some((ci, cj))));
    Ok(seq)
}

const STREAM_TEST_NORMAL: u64 = 0x5445_5354_4e;
const STREAM_TEST_CORRUPT: u64 = 0x5445_5354_43;
const STREAM_PAIRS: u64 = 0x5041_4952;
const MAX_ATTEMPTS: u64 = 64;

fn corrupted_one(sprites: &[Sprite], config: &MovingConfig, kind: CorruptionKind, seed: u64) -> Result<LabeledSequence> {
    let mut last_err = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seeded(derive(seed, attempt, 0));
        let chosen = pick_sprites(sprites, config.digits, &mut rng);
        let mut seq = generate_sequence(&chosen, config, &mut rng)?;
        if kind.has_temporal() {
            seq = corrupt_temporal(seq);
        }
        if kind.has_spatial() {
            match corrupt_spatial(seq, &mut rng) {
                Ok(s) => seq = s,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            }
        }
        return Ok(seq);
    }
    Err(last_err.unwrap_or_else(|| Error::Contract("could not build a corrupted sequence".into())))
}

/// `n_normal` normal sequences followed by `n_corrupted` corrupted ones.
/// Fully determined by `seed`.
pub fn build_test_set(
    sprites: &[Sprite],
    config: &MovingConfig,
    n_normal: usize,
    n_corrupted: usize,
    mode: CorruptionMode,
    seed: u64,
    exec: Exec,
) -> Result<Vec<LabeledSequence>> {
    config.validate()?;
    if sprites.is_empty() && n_normal + n_corrupted > 0 {
        return Err(Error::InvalidArgument("no sprites to draw from".into()));
    }
    let mut out = exec.map_range(n_normal, |i| {
        let mut rng = seeded(derive(seed, STREAM_TEST_NORMAL, i as u64));
        let chosen = pick_sprites(sprites, config.digits, &mut rng);
        generate_sequence(&chosen, config, &mut rng)
    });
    out.extend(exec.map_range(n_corrupted, |i| {
        let kind = match mode {
            CorruptionMode::Both => CorruptionKind::Both,
            CorruptionMode::TemporalOnly => CorruptionKind::Temporal,
            CorruptionMode::SpatialOnly => CorruptionKind::Spatial,
            CorruptionMode::Mixed if i % 2 == 0 => CorruptionKind::Temporal,
            CorruptionMode::Mixed => CorruptionKind::Spatial,
        };
        corrupted_one(sprites, config, kind, derive(seed, STREAM_TEST_CORRUPT, i as u64))
    }));
    out.into_iter().collect()
}

/// `(twin, corrupted)` pairs: a normal sequence and the same sequence with
/// only a spatial corruption applied.
pub fn spatial_pairs(
    sprites: &[Sprite],
    config: &MovingConfig,
    n: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<(LabeledSequence, LabeledSequence)>> {
    exec.map_range(n, |i| {
        let mut last_err = None;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = seeded(derive(derive(seed, STREAM_PAIRS, i as u64), attempt, 0));
            let chosen = pick_sprites(sprites, config.digits, &mut rng);
            let twin = generate_sequence(&chosen, config, &mut rng)?;
            match corrupt_spatial(twin.clone(), &mut rng) {
                Ok(c) => return Ok((twin, c)),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sprites::synthetic_glyphs;
    use crate::frame::{Frame, Sequence};

    fn moving(seed: u64) -> LabeledSequence {
        let g = synthetic_glyphs();
        generate_sequence(&g[3..5], &MovingConfig::default(), &mut seeded(seed)).unwrap()
    }

    #[test]
    fn temporal_copies_first_frame_only() {
        let s = moving(1);
        let c = corrupt_temporal(s.clone());
        let (a, b) = (s.sequence.frames(), c.sequence.frames());
        assert_eq!(b[19], a[0]);
        assert_eq!(&b[..19], &a[..19]);
        assert_eq!(c.label, Label::Corrupted);
        assert_eq!(c.corruption.unwrap().kind, CorruptionKind::Temporal);
    }

    #[test]
    fn temporal_on_static_sequence_only_relabels() {
        let cfg = MovingConfig { speed: (0.0, 0.0), ..MovingConfig::default() };
        let s = generate_sequence(&synthetic_glyphs()[..2], &cfg, &mut seeded(2)).unwrap();
        let c = corrupt_temporal(s.clone());
        assert_eq!(c.sequence, s.sequence);
        assert_eq!(c.label, Label::Corrupted);
    }

    #[test]
    fn spatial_rejects_black_frame() {
        let frames = vec![Frame::blank(8, 8, 1); 3];
        let s = LabeledSequence { sequence: Sequence::new(frames).unwrap(), label: Label::Normal, corruption: None };
        assert!(matches!(corrupt_spatial(s, &mut seeded(0)), Err(Error::Contract(_))));
    }

    #[test]
    fn spatial_square_is_black_and_local() {
        for seed in 0..1000u64 {
            let s = moving(seed % 17);
            let mut rng = seeded(seed);
            let c = corrupt_spatial(s.clone(), &mut rng).unwrap();
            let (ci, cj) = c.corruption.unwrap().square.unwrap();
            let before = s.sequence.last();
            let after = c.sequence.last();
            assert!(before.get(0, ci, cj) >= LIT_THRESHOLD, "seed {seed}");
            let mut changed = 0;
            for i in 0..64usize {
                for j in 0..64usize {
                    let inside = i.abs_diff(ci) <= 1 && j.abs_diff(cj) <= 1;
                    if inside {
                        assert_eq!(after.get(0, i, j), 0);
                    }
                    if after.get(0, i, j) != before.get(0, i, j) {
                        assert!(inside);
                        changed += 1;
                    }
                }
            }
            assert!(changed <= 9);
            assert_eq!(&c.sequence.frames()[..19], &s.sequence.frames()[..19]);
        }
    }

    #[test]
    fn test_set_counts_kinds_and_determinism() {
        let g = synthetic_glyphs();
        let cfg = MovingConfig::desk();
        assert!(build_test_set(&g, &cfg, 0, 0, CorruptionMode::Both, 1, Exec::Sequential).unwrap().is_empty());
        let a = build_test_set(&g, &cfg, 5, 5, CorruptionMode::Both, 9, Exec::Sequential).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a[..5].iter().all(|s| s.label == Label::Normal && s.corruption.is_none()));
        for s in &a[5..] {
            let meta = s.corruption.unwrap();
            assert_eq!(meta.kind, CorruptionKind::Both);
            assert!(meta.square.is_some());
            assert_eq!(s.label, Label::Corrupted);
        }
        let b = build_test_set(&g, &cfg, 5, 5, CorruptionMode::Both, 9, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let mixed = build_test_set(&g, &cfg, 0, 4, CorruptionMode::Mixed, 9, Exec::Sequential).unwrap();
        let kinds: Vec<_> = mixed.iter().map(|s| s.corruption.unwrap().kind).collect();
        assert_eq!(kinds, [CorruptionKind::Temporal, CorruptionKind::Spatial, CorruptionKind::Temporal, CorruptionKind::Spatial]);
    }

    #[test]
    fn pairs_differ_only_in_the_square() {
        let pairs = spatial_pairs(&synthetic_glyphs(), &MovingConfig::desk(), 5, 3, Exec::Sequential).unwrap();
        for (twin, c) in pairs {
            assert_eq!(twin.label, Label::Normal);
            assert_eq!(&twin.sequence.frames()[..19], &c.sequence.frames()[..19]);
            assert_eq!(c.corruption.unwrap().kind, CorruptionKind::Spatial);
        }
    }
}
