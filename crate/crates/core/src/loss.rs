//! Per-pixel negative log-likelihood of a frame under the predicted
//! categorical distributions, and the frame-level anomaly score.
//!
//! The loss of frame `X` is `-sum_{i,j,c} log y[i,j,c][X[i,j,c]]`, with pixels
//! treated as independent given the masked frame and the context.

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::masking::Mask;
use crate::model::PredictionGrid;
use crate::tensor::{Scalar, Tape, Var};

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which pixels contribute to a score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Scope {
    All,
    #[default]
    MaskedOnly,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::MaskedOnly => "masked",
        }
    }

    fn includes(self, visible: bool) -> bool {
        match self {
            Scope::All => true,
            Scope::MaskedOnly => !visible,
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Scope::All),
            "masked" | "masked_only" | "masked-only" => Ok(Scope::MaskedOnly),
            other => Err(Error::InvalidArgument(format!("unknown scope `{other}` (use all|masked)"))),
        }
    }
}

/// Per-pixel NLL summed over channels, row-major `H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossMap {
    height: usize,
    width: usize,
    nll: Vec<f64>,
}

impl LossMap {
    pub fn new(height: usize, width: usize, nll: Vec<f64>) -> Result<Self> {
        if nll.len() != height * width {
            return Err(Error::Shape(format!("loss map {height}x{width} needs {} entries, got {}", height * width, nll.len())));
        }
        Ok(Self { height, width, nll })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.nll
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.nll[row * self.width + col]
    }

    /// Entrywise mean of several maps of equal size.
    pub fn mean_of(maps: &[LossMap]) -> Result<LossMap> {
        let first = maps.first().ok_or_else(|| Error::InvalidArgument("no loss maps to average".into()))?;
        let mut acc = vec![0.0; first.nll.len()];
        for m in maps {
            if (m.height, m.width) != (first.height, first.width) {
                return Err(Error::Shape("loss maps differ in size".into()));
            }
            for (a, v) in acc.iter_mut().zip(&m.nll) {
                *a += v;
            }
        }
        let n = maps.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        LossMap::new(first.height, first.width, acc)
    }
}

/// Frame-level aggregate of the NLL terms selected by `scope`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnomalyScore {
    pub total_nll: f64,
    pub mean_nll: f64,
    /// Number of pixel-channel terms in `total_nll`.
    pub pixels_counted: usize,
    pub scope: Scope,
}

/// Bin of an 8-bit intensity: `floor(value * bins / 256)`.
pub fn quantize_intensity(value: u32, bins: usize) -> Result<usize> {
    if value > 255 {
        return Err(Error::InvalidArgument(format!("intensity {value} outside [0, 255]")));
    }
    if bins < 2 || bins > 256 {
        return Err(Error::InvalidArgument(format!("bin count {bins} outside [2, 256]")));
    }
    Ok(value as usize * bins / 256)
}

/// Bin of a unit-range intensity: `floor(value * bins)`, with 1.0 in the top bin.
pub fn quantize_unit(value: f64, bins: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidArgument(format!("intensity {value} outside [0, 1]")));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("bin count {bins} must be >= 2")));
    }
    Ok(((value * bins as f64).floor() as usize).min(bins - 1))
}

fn check(pred_dims: (usize, usize, usize), truth: &Frame, mask: &Mask) -> Result<()> {
    let (h, w, c) = pred_dims;
    if truth.dims() != (c, h, w) {
        return Err(Error::Shape(format!(
            "prediction is {h}x{w}x{c} (H,W,C) but frame is {:?} (C,H,W)",
            truth.dims()
        )));
    }
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::Shape(format!("mask {}x{} does not match prediction {h}x{w}", mask.height(), mask.width())));
    }
    Ok(())
}

/// Loss map over every pixel plus the score restricted to `scope`.
pub fn frame_nll<T: Scalar>(
    pred: &PredictionGrid<T>,
    truth: &Frame,
    mask: &Mask,
    scope: Scope,
) -> Result<(LossMap, AnomalyScore)> {
    let (h, w, c, k) = (pred.height(), pred.width(), pred.channels(), pred.bins());
    check((h, w, c), truth, mask)?;
    let mut nll = vec![0.0; h * w];
    let mut total = 0.0;
    let mut counted = 0;
    for i in 0..h {
        for j in 0..w {
            let mut pixel = 0.0;
            for ch in 0..c {
                let bin = quantize_intensity(truth.get(ch, i, j) as u32, k)?;
                let p = pred.distribution(i, j, ch)[bin].to_f64_lossy();
                pixel -= p.max(PROB_FLOOR).ln();
            }
            nll[i * w + j] = pixel;
            if scope.includes(mask.is_visible(i, j)) {
                total += pixel;
                counted += c;
            }
        }
    }
    if counted == 0 {
        return Err(Error::Contract(format!("scope `{scope}` selects no pixels under this mask")));
    }
    let map = LossMap::new(h, w, nll)?;
    Ok((map, AnomalyScore { total_nll: total, mean_nll: total / counted as f64, pixels_counted: counted, scope }))
}

/// Sum of NLL terms selected by `scope` as a differentiable scalar on the
/// tape, together with the number of terms.
///
/// `probs` must be the `[H, W, C, K]` output of the model's forward pass.
pub fn nll_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    probs: Var,
    truth: &Frame,
    mask: &Mask,
    scope: Scope,
) -> Result<(Var, usize)> {
    let (h, w, c, k) = match *tape.shape(probs) {
        [h, w, c, k] => (h, w, c, k),
        ref other => return Err(Error::Shape(format!("expected [H,W,C,K] probabilities, got {other:?}"))),
    };
    check((h, w, c), truth, mask)?;
    let mut picks = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            if !scope.includes(mask.is_visible(i, j)) {
                continue;
            }
            for ch in 0..c {
                let bin = quantize_intensity(truth.get(ch, i, j) as u32, k)?;
                picks.push(((i * w + j) * c + ch) * k + bin);
            }
        }
    }
    if picks.is_empty() {
        return Err(Error::Contract(format!("scope `{scope}` selects no pixels under this mask")));
    }
    let n = picks.len();
    let total = tape.nll_select(probs, picks, T::of(PROB_FLOOR))?;
    Ok((total, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn uniform(h: usize, w: usize, c: usize, k: usize) -> PredictionGrid<f64> {
        PredictionGrid::new(h, w, c, k, vec![1.0 / k as f64; h * w * c * k]).unwrap()
    }

    #[test]
    fn uniform_prediction_gives_log_bins() {
        let values: Vec<u8> = (0..4096).map(|i| (i * 7 % 256) as u8).collect();
        let truth = Frame::new(64, 64, 1, values).unwrap();
        let (map, score) = frame_nll(&uniform(64, 64, 1, 256), &truth, &Mask::full(64, 64), Scope::All).unwrap();
        assert!((score.mean_nll - 256f64.ln()).abs() < 1e-12);
        assert!((score.total_nll - 4096.0 * 256f64.ln()).abs() < 1e-8);
        assert!((score.total_nll - 22713.1).abs() < 0.1);
        assert_eq!(score.pixels_counted, 4096);
        assert_eq!(map.values().iter().sum::<f64>(), score.total_nll);
    }

    #[test]
    fn certain_prediction_gives_zero() {
        let truth = Frame::new(2, 3, 1, vec![0, 255, 17, 128, 64, 3]).unwrap();
        let k = 32;
        let mut probs = vec![0.0; 6 * k];
        for (p, &v) in truth.values().iter().enumerate() {
            probs[p * k + v as usize * k / 256] = 1.0;
        }
        let pred = PredictionGrid::new(2, 3, 1, k, probs).unwrap();
        let (_, score) = frame_nll(&pred, &truth, &Mask::full(2, 3), Scope::All).unwrap();
        assert_eq!(score.total_nll, 0.0);
    }

    #[test]
    fn hand_computed_two_by_two() {
        // K = 4, bins of 64 intensities each.
        let truth = Frame::new(2, 2, 1, vec![0, 100, 200, 255]).unwrap(); // bins 0, 1, 3, 3
        let probs = vec![
            0.5, 0.2, 0.2, 0.1, //
            0.1, 0.6, 0.2, 0.1, //
            0.25, 0.25, 0.25, 0.25, //
            0.0, 0.0, 0.3, 0.7,
        ];
        let pred = PredictionGrid::new(2, 2, 1, 4, probs).unwrap();
        let expected = -(0.5f64.ln() + 0.6f64.ln() + 0.25f64.ln() + 0.7f64.ln());
        let (map, score) = frame_nll(&pred, &truth, &Mask::full(2, 2), Scope::All).unwrap();
        assert!((score.total_nll - expected).abs() < 1e-12);
        assert!((map.get(1, 0) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn masked_scope_counts_only_hidden_pixels() {
        let truth = Frame::blank(8, 10, 1);
        let mask = Mask::lattice(8, 10, 4, 5, 1, 2).unwrap();
        let (map, score) = frame_nll(&uniform(8, 10, 1, 8), &truth, &mask, Scope::MaskedOnly).unwrap();
        assert_eq!(score.pixels_counted, 80 - mask.visible_count());
        let hidden: f64 = (0..8)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .filter(|&(i, j)| !mask.is_visible(i, j))
            .map(|(i, j)| map.get(i, j))
            .sum();
        assert!((hidden - score.total_nll).abs() < 1e-12);
        assert!(frame_nll(&uniform(8, 10, 1, 8), &truth, &Mask::full(8, 10), Scope::MaskedOnly).is_err());
    }

    #[test]
    fn zero_probability_is_clamped() {
        let truth = Frame::new(1, 1, 1, vec![255]).unwrap();
        let pred = PredictionGrid::new(1, 1, 1, 2, vec![1.0, 0.0]).unwrap();
        let (_, score) = frame_nll(&pred, &truth, &Mask::full(1, 1), Scope::All).unwrap();
        assert!(score.total_nll.is_finite());
        assert!((score.total_nll + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn lowering_true_probability_raises_loss() {
        let truth = Frame::new(1, 2, 1, vec![10, 250]).unwrap();
        let make = |p: f64| PredictionGrid::new(1, 2, 1, 2, vec![p, 1.0 - p, 0.3, 0.7]).unwrap();
        let mask = Mask::full(1, 2);
        let a = frame_nll(&make(0.9), &truth, &mask, Scope::All).unwrap().1.total_nll;
        let b = frame_nll(&make(0.8), &truth, &mask, Scope::All).unwrap().1.total_nll;
        assert!(b > a);
    }

    #[test]
    fn quantization_edges_and_balance() {
        assert_eq!(quantize_intensity(0, 256).unwrap(), 0);
        assert_eq!(quantize_intensity(255, 32).unwrap(), 31);
        assert!(quantize_intensity(256, 32).is_err());
        let mut counts = [0usize; 32];
        for v in 0..256 {
            counts[quantize_intensity(v, 32).unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| c == 8));
        assert_eq!(quantize_unit(1.0, 32).unwrap(), 31);
        assert_eq!(quantize_unit(0.0, 32).unwrap(), 0);
        assert!(quantize_unit(1.5, 32).is_err());
    }

    #[test]
    fn tape_loss_matches_frame_nll() {
        let truth = Frame::new(2, 2, 1, vec![0, 100, 200, 255]).unwrap();
        let probs = vec![0.5, 0.2, 0.2, 0.1, 0.1, 0.6, 0.2, 0.1, 0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.3, 0.7];
        let pred = PredictionGrid::new(2, 2, 1, 4, probs.clone()).unwrap();
        let mask = Mask::lattice(2, 2, 2, 2, 0, 1).unwrap();
        for scope in [Scope::All, Scope::MaskedOnly] {
            let (_, score) = frame_nll(&pred, &truth, &mask, scope).unwrap();
            let mut tape = Tape::new();
            let p = tape.leaf(&Tensor::new(&[2, 2, 1, 4], probs.clone()).unwrap());
            let (total, n) = nll_on_tape(&mut tape, p, &truth, &mask, scope).unwrap();
            assert_eq!(n, score.pixels_counted);
            assert!((tape.value(total)[0] - score.total_nll).abs() < 1e-12);
        }
    }
}
