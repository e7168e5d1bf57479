//! Moving-MNIST style data: sprites, sequence simulation, corruption
//! injectors and the sequence dataset file format.

mod corrupt;
mod mmsq;
mod moving;
mod sprites;

pub use corrupt::{
    build_test_set, corrupt_spatial, corrupt_temporal, spatial_pairs, CorruptionMode, LIT_THRESHOLD, SQUARE_SIDE,
};
pub use mmsq::{load_dataset, read_dataset, save_dataset, write_dataset, MMSQ_VERSION};
pub use moving::{generate_normal_set, generate_sequence, MovingConfig, Trajectory};
pub use sprites::{load_sprites, parse_idx, synthetic_glyphs, write_idx, Patch, Sprite, SPRITE_SIDE};

use crate::frame::Sequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Corrupted,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Corrupted => "corrupted",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CorruptionKind {
    Temporal,
    Spatial,
    Both,
}

impl CorruptionKind {
    pub fn has_temporal(self) -> bool {
        matches!(self, CorruptionKind::Temporal | CorruptionKind::Both)
    }

    pub fn has_spatial(self) -> bool {
        matches!(self, CorruptionKind::Spatial | CorruptionKind::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CorruptionMeta {
    pub kind: CorruptionKind,
    /// Center `(row, col)` of the painted square, when a spatial corruption was applied.
    pub square: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabeledSequence {
    pub sequence: Sequence,
    pub label: Label,
    pub corruption: Option<CorruptionMeta>,
}
