//! Shifted-lattice occlusion masks and masked frames.
//!
//! A mask reveals the pixels `(i, j)` with `i ≡ shift_row (mod period_rows)`
//! and `j ≡ shift_col (mod period_cols)`; everything else is occluded. With
//! the default periods `(4, 5)` roughly 95% of a frame is hidden.

use rand::Rng;

use crate::error::{Error, Result};
use crate::frame::Frame;

pub const DEFAULT_PERIODS: (usize, usize) = (4, 5);

/// Value written into occluded pixels.
pub const FILL_VALUE: u8 = 0;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    period_rows: usize,
    period_cols: usize,
    shift_row: usize,
    shift_col: usize,
    visible: Vec<bool>,
}

impl Mask {
    /// Lattice mask with explicit shifts.
    pub fn lattice(
        height: usize,
        width: usize,
        period_rows: usize,
        period_cols: usize,
        shift_row: usize,
        shift_col: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("mask dims {height}x{width} must be positive")));
        }
        if period_rows == 0 || period_cols == 0 {
            return Err(Error::InvalidArgument("mask periods must be at least 1".into()));
        }
        if period_rows > height || period_cols > width {
            return Err(Error::InvalidArgument(format!(
                "mask periods ({period_rows},{period_cols}) exceed frame {height}x{width}"
            )));
        }
        if shift_row >= period_rows || shift_col >= period_cols {
            return Err(Error::InvalidArgument(format!(
                "shifts ({shift_row},{shift_col}) must be below periods ({period_rows},{period_cols})"
            )));
        }
        let visible = (0..height)
            .flat_map(|i| (0..width).map(move |j| i % period_rows == shift_row && j % period_cols == shift_col))
            .collect();
        Ok(Self { height, width, period_rows, period_cols, shift_row, shift_col, visible })
    }

    /// Every pixel visible.
    pub fn full(height: usize, width: usize) -> Self {
        Self::lattice(height, width, 1, 1, 0, 0).expect("unit periods always fit")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn periods(&self) -> (usize, usize) {
        (self.period_rows, self.period_cols)
    }

    pub fn shifts(&self) -> (usize, usize) {
        (self.shift_row, self.shift_col)
    }

    pub fn is_visible(&self, row: usize, col: usize) -> bool {
        self.visible[row * self.width + col]
    }

    /// Row-major visibility grid.
    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        1.0 - self.visible_count() as f64 / (self.height * self.width) as f64
    }
}

/// Lattice mask with shifts drawn uniformly from `[0, period)`.
pub fn grid_mask<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    period_rows: usize,
    period_cols: usize,
    rng: &mut R,
) -> Result<Mask> {
    if period_rows == 0 || period_cols == 0 || period_rows > height || period_cols > width {
        return Err(Error::InvalidArgument(format!(
            "mask periods ({period_rows},{period_cols}) invalid for frame {height}x{width}"
        )));
    }
    let shift_row = rng.gen_range(0..period_rows);
    let shift_col = rng.gen_range(0..period_cols);
    Mask::lattice(height, width, period_rows, period_cols, shift_row, shift_col)
}

/// A frame with its occluded pixels replaced by [`FILL_VALUE`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedFrame {
    frame: Frame,
    mask: Mask,
}

impl MaskedFrame {
    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }
}

pub fn apply_mask(frame: &Frame, mask: &Mask) -> Result<MaskedFrame> {
    if frame.height() != mask.height || frame.width() != mask.width {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match frame {}x{}",
            mask.height,
            mask.width,
            frame.height(),
            frame.width()
        )));
    }
    let mut out = frame.clone();
    let hw = mask.height * mask.width;
    for plane in out.values_mut().chunks_exact_mut(hw) {
        for (v, vis) in plane.iter_mut().zip(&mask.visible) {
            if !vis {
                *v = FILL_VALUE;
            }
        }
    }
    Ok(MaskedFrame { frame: out, mask: mask.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn lattice_counts_on_64x64() {
        let m = Mask::lattice(64, 64, 4, 5, 0, 0).unwrap();
        assert_eq!(m.visible_count(), 16 * 13);
        assert!((m.masked_fraction() - (1.0 - 208.0 / 4096.0)).abs() < 1e-15);

        let m = Mask::lattice(64, 64, 4, 5, 0, 4).unwrap();
        assert_eq!(m.visible_count(), 16 * 12);
        assert!((m.masked_fraction() - (1.0 - 192.0 / 4096.0)).abs() < 1e-15);
    }

    #[test]
    fn unit_periods_reveal_everything() {
        let m = Mask::lattice(4, 4, 1, 1, 0, 0).unwrap();
        assert_eq!(m.masked_fraction(), 0.0);
        assert_eq!(m, Mask::full(4, 4));
    }

    #[test]
    fn oversized_period_is_rejected() {
        let mut rng = seeded(1);
        assert!(grid_mask(4, 4, 5, 1, &mut rng).is_err());
        assert!(grid_mask(4, 4, 1, 0, &mut rng).is_err());
    }

    #[test]
    fn zero_frame_stays_zero() {
        let f = Frame::blank(8, 8, 1);
        let m = grid_mask(8, 8, 4, 5, &mut seeded(3)).unwrap();
        assert_eq!(apply_mask(&f, &m).unwrap().frame(), &f);
    }

    #[test]
    fn full_mask_is_identity() {
        let values: Vec<u8> = (0..2 * 6 * 7).map(|i| (i * 37 % 256) as u8).collect();
        let f = Frame::new(6, 7, 2, values).unwrap();
        assert_eq!(apply_mask(&f, &Mask::full(6, 7)).unwrap().frame(), &f);
    }

    #[test]
    fn constant_frame_keeps_only_visible_entries() {
        let f = Frame::new(64, 64, 1, vec![128; 4096]).unwrap();
        let m = Mask::lattice(64, 64, 4, 5, 0, 0).unwrap();
        let masked = apply_mask(&f, &m).unwrap();
        let lit = masked.frame().values().iter().filter(|v| **v == 128).count();
        let zero = masked.frame().values().iter().filter(|v| **v == 0).count();
        assert_eq!((lit, zero), (208, 4096 - 208));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let f = Frame::blank(8, 8, 1);
        let m = Mask::full(8, 7);
        assert!(apply_mask(&f, &m).is_err());
    }

    proptest! {
        #[test]
        fn default_fraction_is_one_of_two_lattice_counts(seed in any::<u64>()) {
            let m = grid_mask(64, 64, 4, 5, &mut seeded(seed)).unwrap();
            let f = m.masked_fraction();
            prop_assert!(f == 1.0 - 208.0 / 4096.0 || f == 1.0 - 192.0 / 4096.0);
        }

        #[test]
        fn visibility_is_periodic(seed in any::<u64>(), pr in 1usize..8, pc in 1usize..8) {
            let m = grid_mask(24, 24, pr, pc, &mut seeded(seed)).unwrap();
            let (sr, sc) = m.shifts();
            for i in 0..24 {
                for j in 0..24 {
                    prop_assert_eq!(m.is_visible(i, j), i % pr == sr && j % pc == sc);
                    if i + pr < 24 {
                        prop_assert_eq!(m.is_visible(i, j), m.is_visible(i + pr, j));
                    }
                    if j + pc < 24 {
                        prop_assert_eq!(m.is_visible(i, j), m.is_visible(i, j + pc));
                    }
                }
            }
        }

        #[test]
        fn masking_keeps_visible_pixels(seed in any::<u64>(), values in proptest::collection::vec(any::<u8>(), 3 * 10 * 12)) {
            let f = Frame::new(10, 12, 3, values).unwrap();
            let m = grid_mask(10, 12, 3, 4, &mut seeded(seed)).unwrap();
            let masked = apply_mask(&f, &m).unwrap();
            for c in 0..3 {
                for i in 0..10 {
                    for j in 0..12 {
                        let expect = if m.is_visible(i, j) { f.get(c, i, j) } else { FILL_VALUE };
                        prop_assert_eq!(masked.frame().get(c, i, j), expect);
                    }
                }
            }
        }
    }
}
