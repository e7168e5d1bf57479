//! Scoring labeled test sets, Equal Error Rate, and loss-map export.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::data::{Label, LabeledSequence, SQUARE_SIDE};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::loss::{frame_nll, AnomalyScore, LossMap, Scope};
use crate::masking::{apply_mask, grid_mask, DEFAULT_PERIODS};
use crate::model::ModelParameters;
use crate::rng::{derive, seeded};
use crate::tensor::Scalar;

const STREAM_EVAL_MASK: u64 = 0x4556_414c;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub scope: Scope,
    /// Seed of the evaluation masks; identical for every sequence.
    pub mask_seed: u64,
    /// Number of masks averaged per frame.
    pub masks: usize,
    pub mask_periods: (usize, usize),
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { scope: Scope::MaskedOnly, mask_seed: 0, masks: 1, mask_periods: DEFAULT_PERIODS, exec: Exec::Parallel }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSequence {
    /// Index of the sequence in the scored dataset.
    pub id: usize,
    pub label: Label,
    pub score: AnomalyScore,
    pub loss_map: LossMap,
    /// Center of the spatial corruption square, if any.
    pub square: Option<(usize, usize)>,
}

impl ScoredSequence {
    /// Tab-separated: id, label, mean NLL, total NLL.
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.id, self.label.name(), self.score.mean_nll, self.score.total_nll)
    }
}

pub fn write_scores<W: Write>(scored: &[ScoredSequence], mut out: W) -> std::io::Result<()> {
    for s in scored {
        writeln!(out, "{}", s.to_line())?;
    }
    Ok(())
}

/// Scores the last frame of every sequence from the `context_len` frames
/// before it, under the same evaluation mask(s) for every sequence.
pub fn score_dataset<T: Scalar>(
    params: &ModelParameters<T>,
    dataset: &[LabeledSequence],
    config: &EvalConfig,
) -> Result<Vec<ScoredSequence>> {
    let hyper = params.hyper();
    if config.masks == 0 {
        return Err(Error::InvalidArgument("at least one evaluation mask is needed".into()));
    }
    let want = (hyper.channels, hyper.height, hyper.width);
    for (i, s) in dataset.iter().enumerate() {
        if s.sequence.dims() != want {
            return Err(Error::Shape(format!(
                "sequence {i} has dims {:?} but the model expects {want:?}",
                s.sequence.dims()
            )));
        }
        if s.sequence.len() < hyper.context_len + 1 {
            return Err(Error::Shape(format!(
                "sequence {i} has {} frames, scoring needs {}",
                s.sequence.len(),
                hyper.context_len + 1
            )));
        }
    }
    let masks = (0..config.masks)
        .map(|m| {
            let mut rng = seeded(derive(config.mask_seed, STREAM_EVAL_MASK, m as u64));
            grid_mask(hyper.height, hyper.width, config.mask_periods.0, config.mask_periods.1, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    config
        .exec
        .map(dataset, |id, seq| {
            let frames = seq.sequence.frames();
            let t = frames.len() - 1;
            let context = &frames[t - hyper.context_len..t];
            let target = &frames[t];
            let mut maps = Vec::with_capacity(masks.len());
            let (mut total, mut mean, mut counted) = (0.0, 0.0, 0);
            for mask in &masks {
                let pred = params.predict(context, &apply_mask(target, mask)?)?;
                let (map, score) = frame_nll(&pred, target, mask, config.scope)?;
                maps.push(map);
                total += score.total_nll;
                mean += score.mean_nll;
                counted += score.pixels_counted;
            }
            let n = masks.len() as f64;
            let score = AnomalyScore {
                total_nll: total / n,
                mean_nll: mean / n,
                pixels_counted: counted / masks.len(),
                scope: config.scope,
            };
            let loss_map = if maps.len() == 1 { maps.pop().expect("one map") } else { LossMap::mean_of(&maps)? };
            Ok(ScoredSequence { id, label: seq.label, score, loss_map, square: seq.corruption.and_then(|c| c.square) })
        })
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub threshold_at_eer: f64,
    pub n_normal: usize,
    pub n_corrupted: usize,
    pub scope: Option<Scope>,
    pub checkpoint_id: String,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "eer\t{}", self.eer)?;
        writeln!(f, "one_minus_eer\t{}", 1.0 - self.eer)?;
        writeln!(f, "threshold_at_eer\t{}", self.threshold_at_eer)?;
        writeln!(f, "n_normal\t{}", self.n_normal)?;
        writeln!(f, "n_corrupted\t{}", self.n_corrupted)?;
        writeln!(f, "scope\t{}", self.scope.map_or("unspecified", Scope::name))?;
        writeln!(f, "checkpoint\t{}", self.checkpoint_id)
    }
}

/// Error rates of the rule "corrupted iff score >= threshold".
fn rates(sorted_normal: &[f64], sorted_corrupted: &[f64], threshold: f64) -> (f64, f64) {
    let flagged = sorted_normal.len() - sorted_normal.partition_point(|&s| s < threshold);
    let missed = sorted_corrupted.partition_point(|&s| s < threshold);
    (flagged as f64 / sorted_normal.len() as f64, missed as f64 / sorted_corrupted.len() as f64)
}

/// Equal Error Rate of `(label, score)` pairs, higher scores meaning more
/// anomalous.
///
/// Candidate thresholds are -inf, the midpoints between adjacent distinct
/// scores, and +inf. Scanning upward, FPR - FNR falls from 1 to -1. The
/// lowest candidate where it is exactly 0 gives the EER directly; otherwise
/// the EER and threshold are linearly interpolated between the two
/// candidates bracketing the sign change (infinite ends are replaced by the
/// extreme scores for the threshold). Scope and checkpoint id are left for
/// the caller to fill in.
pub fn compute_eer(scores: &[(Label, f64)]) -> Result<EvalReport> {
    if let Some((_, s)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("score {s} is not finite")));
    }
    let mut normal: Vec<f64> = scores.iter().filter(|(l, _)| *l == Label::Normal).map(|&(_, s)| s).collect();
    let mut corrupted: Vec<f64> = scores.iter().filter(|(l, _)| *l == Label::Corrupted).map(|&(_, s)| s).collect();
    if normal.is_empty() || corrupted.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "EER needs both classes, got {} normal and {} corrupted",
            normal.len(),
            corrupted.len()
        )));
    }
    normal.sort_by(f64::total_cmp);
    corrupted.sort_by(f64::total_cmp);
    let mut all: Vec<f64> = scores.iter().map(|&(_, s)| s).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();

    let mut candidates = Vec::with_capacity(all.len() + 1);
    candidates.push(f64::NEG_INFINITY);
    candidates.extend(all.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    candidates.push(f64::INFINITY);
    let finite = |t: f64| t.clamp(all[0], all[all.len() - 1]);

    let report = |eer: f64, threshold: f64| EvalReport {
        eer,
        threshold_at_eer: threshold,
        n_normal: normal.len(),
        n_corrupted: corrupted.len(),
        scope: None,
        checkpoint_id: String::new(),
    };
    let (mut prev_t, mut prev) = (candidates[0], rates(&normal, &corrupted, candidates[0]));
    for &t in &candidates[1..] {
        let (fpr, fnr) = rates(&normal, &corrupted, t);
        let d = fpr - fnr;
        if d == 0.0 {
            return Ok(report(fpr, finite(t)));
        }
        if d < 0.0 {
            let da = prev.0 - prev.1;
            let alpha = da / (da - d);
            let (ea, eb) = ((prev.0 + prev.1) / 2.0, (fpr + fnr) / 2.0);
            let (ta, tb) = (finite(prev_t), finite(t));
            return Ok(report(ea + alpha * (eb - ea), ta + alpha * (tb - ta)));
        }
        prev_t = t;
        prev = (fpr, fnr);
    }
    unreachable!("FPR - FNR reaches -1 at +inf")
}

/// [`compute_eer`] over scored sequences, recording their common scope.
pub fn report_for(scored: &[ScoredSequence], checkpoint_id: &str) -> Result<EvalReport> {
    let scope = scored.first().map(|s| s.score.scope);
    if scored.iter().any(|s| Some(s.score.scope) != scope) {
        return Err(Error::Contract("scored sequences mix loss scopes".into()));
    }
    let mut report = compute_eer(&scored.iter().map(|s| (s.label, s.score.mean_nll)).collect::<Vec<_>>())?;
    report.scope = scope;
    report.checkpoint_id = checkpoint_id.to_string();
    Ok(report)
}

/// Stable identifier of a checkpoint: FNV-1a 64 of its bytes, in hex.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// 8-bit binary graymap of `map`, min-max normalized; constant maps are all zero.
pub fn encode_p5(map: &LossMap) -> Result<Vec<u8>> {
    let values = map.values();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("loss map has non-finite entries".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    let span = hi - lo;
    out.extend(values.iter().map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 }));
    Ok(out)
}

pub fn export_loss_map(map: &LossMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_p5(map)?).map_err(|e| Error::io(path, e))
}

/// Mean loss inside the clipped 3x3 corruption square of `scored`, divided
/// by the mean over the same pixels of `twin`.
pub fn localization_check(scored: &ScoredSequence, twin: &ScoredSequence) -> Result<f64> {
    let (ci, cj) = scored
        .square
        .ok_or_else(|| Error::Contract(format!("sequence {} carries no spatial corruption", scored.id)))?;
    let (h, w) = (scored.loss_map.height(), scored.loss_map.width());
    if (twin.loss_map.height(), twin.loss_map.width()) != (h, w) || ci >= h || cj >= w {
        return Err(Error::Shape("twin loss map or square center does not match".into()));
    }
    let half = SQUARE_SIDE / 2;
    let (mut a, mut b) = (0.0, 0.0);
    for i in ci.saturating_sub(half)..=(ci + half).min(h - 1) {
        for j in cj.saturating_sub(half)..=(cj + half).min(w - 1) {
            a += scored.loss_map.get(i, j);
            b += twin.loss_map.get(i, j);
        }
    }
    if b <= 0.0 {
        return Err(Error::Contract("twin loss over the square is zero; ratio undefined".into()));
    }
    Ok(a / b)
}
